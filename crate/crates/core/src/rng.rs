//! Counter-based random streams.
//!
//! A stream is a ChaCha keystream whose key is a SHA-256 digest of the base
//! seed and a stable key (a digest of a serializable description such as a
//! simulation cell), and whose 64-bit stream id is the replication index.
//! Any replication can therefore be regenerated in isolation, in any order,
//! on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Random source handed to every generator.
pub type RandomStream = ChaCha12Rng;

/// 32-byte identifier of a family of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey([u8; 32]);

impl StreamKey {
    /// Digest of a domain tag and the JSON encoding of `value`.
    pub fn of<S: Serialize + ?Sized>(domain: &str, value: &S) -> Self {
        let json = serde_json::to_vec(value).expect("stream key values serialize to JSON");
        let mut hasher = Sha256::new();
        hasher.update((domain.len() as u64).to_le_bytes());
        hasher.update(domain.as_bytes());
        hasher.update(&json);
        Self(hasher.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Stream for replication `index` under `base_seed`.
    pub fn stream(&self, base_seed: u64, index: u64) -> RandomStream {
        let mut hasher = Sha256::new();
        hasher.update(b"hdiv/stream/v1");
        hasher.update(base_seed.to_le_bytes());
        hasher.update(self.0);
        let mut rng = ChaCha12Rng::from_seed(hasher.finalize().into());
        rng.set_stream(index);
        rng
    }
}
