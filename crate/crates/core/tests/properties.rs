use approx::relative_eq;
use hdiv::dgp::{delta_from_h, h_from_delta, pop_trace_sigma2, InstrumentDesign};
use hdiv::montecarlo::noncentrality;
use hdiv::{
    eigen_quadratic, eigen_summary, gram_summary, q_statistic, sym_sqrt, trace_sigma2_hat, Alternative, Dataset,
    Hypothesis, InstrumentMatrix,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn matrix(n: usize, k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, n * k).prop_map(move |v| DMatrix::from_vec(n, k, v))
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0f64..3.0, n).prop_map(DVector::from_vec)
}

/// (y, x, Z) with N in 3..=12 and K in 1..=15.
fn dataset() -> impl Strategy<Value = (DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    (3usize..=12, 1usize..=15).prop_flat_map(|(n, k)| (vector(n), vector(n), matrix(n, k)))
}

/// Orthogonal matrix from the QR factor of a random square matrix.
fn orthogonal(k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(k, k).prop_filter_map("well conditioned", |m| {
        let qr = m.qr();
        let r = qr.r();
        let min = r.diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        (min > 1e-3).then(|| qr.q())
    })
}

fn feasible(y: &DVector<f64>, x: &DVector<f64>, z: DMatrix<f64>, beta0: f64) -> Option<f64> {
    let data = Dataset::new(y.clone(), x.clone(), InstrumentMatrix::new(z).ok()?).ok()?;
    let hyp = Hypothesis::new(beta0, Alternative::Greater, 0.05).ok()?;
    q_statistic(&data, &hyp, None).ok().map(|o| o.statistic)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn scale_invariance((y, x, z) in dataset(), c in prop_oneof![-50.0f64..-0.02, 0.02f64..50.0]) {
        if let Some(base) = feasible(&y, &x, z.clone(), 0.7) {
            let scaled = feasible(&(&y * c), &(&x * c), z, 0.7).unwrap();
            prop_assert!(rel_close(base, scaled, 1e-10), "{base} vs {scaled}");
        }
    }

    #[test]
    fn rotation_invariance(
        (y, x, z, o) in (3usize..=10, 1usize..=8)
            .prop_flat_map(|(n, k)| (vector(n), vector(n), matrix(n, k), orthogonal(k)))
    ) {
        if let Some(base) = feasible(&y, &x, z.clone(), -1.0) {
            let rotated = feasible(&y, &x, &z * &o, -1.0).unwrap();
            prop_assert!(rel_close(base, rotated, 1e-8), "{base} vs {rotated}");
        }
    }

    #[test]
    fn permutation_invariance((y, x, z) in dataset(), seed in any::<u64>()) {
        let n = y.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        if let Some(base) = feasible(&y, &x, z.clone(), 0.0) {
            let py = DVector::from_fn(n, |i, _| y[perm[i]]);
            let px = DVector::from_fn(n, |i, _| x[perm[i]]);
            let pz = DMatrix::from_fn(n, z.ncols(), |i, j| z[(perm[i], j)]);
            let g = gram_summary(&InstrumentMatrix::new(z.clone()).unwrap());
            let pg = gram_summary(&InstrumentMatrix::new(pz.clone()).unwrap());
            for i in 0..n {
                prop_assert_eq!(pg.row_norms_sq[i], g.row_norms_sq[perm[i]]);
            }
            let permuted = feasible(&py, &px, pz, 0.0).unwrap();
            prop_assert!(rel_close(base, permuted, 1e-10), "{base} vs {permuted}");
        }
    }

    #[test]
    fn eigen_path_equals_fast_path((y, _x, z) in dataset()) {
        let n = y.len() as f64;
        prop_assume!(y.norm() > 1e-6);
        let ybar = y.normalize();
        let zm = InstrumentMatrix::new(z.clone()).unwrap();
        let slow = eigen_quadratic(&zm, &ybar).unwrap();
        let fast = zm.cross(&ybar).norm_squared() / n;
        prop_assert!(relative_eq!(slow, fast, max_relative = 1e-8, epsilon = 1e-12));
    }

    #[test]
    fn eigen_summary_invariants((_y, _x, z) in dataset()) {
        let zm = InstrumentMatrix::new(z).unwrap();
        let e = eigen_summary(&zm).unwrap();
        let g = gram_summary(&zm);
        prop_assert_eq!(e.eigenvalues.len(), zm.n().min(zm.k()));
        prop_assert!(e.eigenvalues.iter().all(|&l| l >= 0.0));
        prop_assert!(e.eigenvalues.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let gram = e.left_vectors.transpose() * &e.left_vectors;
        let eye = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
        prop_assert!((gram - eye).amax() < 1e-8);
        prop_assert!(rel_close(e.eigenvalues.sum(), g.trace_sbar, 1e-8));
    }

    #[test]
    fn gram_summary_rotation_and_bounds(
        (z, o) in (2usize..=10, 1usize..=8).prop_flat_map(|(n, k)| (matrix(n, k), orthogonal(k)))
    ) {
        let g = gram_summary(&InstrumentMatrix::new(z.clone()).unwrap());
        let r = gram_summary(&InstrumentMatrix::new(&z * o).unwrap());
        prop_assert!(rel_close(g.trace_sbar, r.trace_sbar, 1e-10));
        prop_assert!(rel_close(g.frob_sq_cross, r.frob_sq_cross, 1e-10));
        for (a, b) in g.row_norms_sq.iter().zip(r.row_norms_sq.iter()) {
            prop_assert!(rel_close(*a, *b, 1e-10));
        }
        prop_assert_eq!(g.trace_sbar, g.row_norms_sq.sum() / z.nrows() as f64);
        prop_assert!(g.frob_sq_cross >= g.sum_row_norms_fourth() * (1.0 - 1e-12));
    }

    #[test]
    fn trace_estimate_matches_pairs(z in (2usize..=50, 1usize..=6).prop_flat_map(|(n, k)| matrix(n, k))) {
        let n = z.nrows();
        let mut brute = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    brute += z.row(i).dot(&z.row(j)).powi(2);
                }
            }
        }
        brute /= (n * (n - 1)) as f64;
        match trace_sigma2_hat(&InstrumentMatrix::new(z).unwrap()) {
            Ok(t) => prop_assert!(rel_close(t, brute, 1e-10), "{t} vs {brute}"),
            Err(_) => prop_assert!(brute < 1e-10),
        }
    }

    #[test]
    fn sym_sqrt_squares_back(m in (1usize..=12).prop_flat_map(|k| matrix(k, k))) {
        let sigma = &m * m.transpose();
        let r = sym_sqrt(&sigma).unwrap();
        prop_assert!((&r - r.transpose()).amax() < 1e-12 * sigma.amax().max(1.0));
        let err = (&r * &r - &sigma).norm() / sigma.norm().max(1e-300);
        prop_assert!(err < 1e-10, "{err}");
        let eig = nalgebra::SymmetricEigen::new(r.clone());
        prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * sigma.amax().max(1.0).sqrt()));
    }

    #[test]
    fn pop_trace_matches_brute(k in 3usize..=200, rho in 0.0f64..0.95, f in prop::array::uniform3(0.1f64..8.0)) {
        let d = InstrumentDesign { toeplitz_rho: rho, factor_norms_sq: Some(f), ..Default::default() };
        let lambda = d.loading_matrix(k).unwrap();
        let cov = &lambda * lambda.transpose() + d.toeplitz(k);
        let brute = (&cov * &cov).trace();
        prop_assert!(rel_close(pop_trace_sigma2(&d, k).unwrap(), brute, 1e-10));
    }

    #[test]
    fn delta_round_trip_and_monotone(h in 0.0f64..10.0, dh in 0.001f64..5.0, t in 0.1f64..1e5, n in 1usize..5000) {
        let d = delta_from_h(h, t, n);
        prop_assert!(rel_close(h_from_delta(d, t, n), h, 1e-12));
        prop_assert!(delta_from_h(h + dh, t, n) > d);
    }

    #[test]
    fn noncentrality_joint_rotation(
        (z, o, pi, v, eps) in (3usize..=10, 1usize..=8).prop_flat_map(|(n, k)| {
            (matrix(n, k), orthogonal(k), vector(k), vector(n), vector(n))
        }),
        h in 0.0f64..5.0,
    ) {
        prop_assume!(eps.norm() > 1e-3);
        let base = noncentrality(&pi, &v, &eps, &InstrumentMatrix::new(z.clone()).unwrap(), h, 3.0).unwrap();
        let rotated = noncentrality(&(o.transpose() * &pi), &v, &eps, &InstrumentMatrix::new(&z * &o).unwrap(), h, 3.0).unwrap();
        prop_assert!(relative_eq!(base.value, rotated.value, max_relative = 1e-8, epsilon = 1e-9));
        prop_assert_eq!(base.value, base.terms.iter().sum::<f64>());
    }
}
