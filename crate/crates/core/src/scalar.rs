//! Scalar abstraction shared by the linear-algebra and statistic layers.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by every generic kernel in this crate (`f32`, `f64`).
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Converts an `f64` literal into `Self`.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal must be representable")
    }

    /// Lossy conversion to `f64`, used for probabilities and reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon as `f64`.
    fn epsilon_f64() -> f64 {
        Self::default_epsilon().as_f64()
    }
}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(<f64 as Real>::lit(0.25), 0.25);
        assert_eq!(<f32 as Real>::lit(0.25), 0.25f32);
        assert_eq!(2.5f32.as_f64(), 2.5);
        assert!(<f32 as Real>::epsilon_f64() > <f64 as Real>::epsilon_f64());
    }
}
