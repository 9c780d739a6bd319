//! Squared-exponential kernel and factored covariance matrices.
//!
//! The kernel carries a single inverse-lengthscale parameter and no
//! amplitude: the overall scale of the process is handled elsewhere, so
//! `k(x, x) == 1` always. All downstream likelihood code works through
//! [`CovMatrix`], which owns a Cholesky factorization and never forms an
//! explicit inverse.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// `exp(-theta/2 * sum_d (a_d - b_d)^2)`.
pub fn rbf_kernel(a: &DVector<f64>, b: &DVector<f64>, theta: f64) -> f64 {
    let mut sq = 0.0;
    for (ad, bd) in a.iter().zip(b.iter()) {
        let d = ad - bd;
        sq += d * d;
    }
    (-0.5 * theta * sq).exp()
}

/// Kernel cross-covariance block between two point sets (rows index `xs`,
/// columns index `zs`). No noise term is added.
pub fn kernel_cross(xs: &[DVector<f64>], zs: &[DVector<f64>], theta: f64) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), zs.len(), |i, j| rbf_kernel(&xs[i], &zs[j], theta))
}

/// Relative jitter ladder: multiples of the mean diagonal tried in order
/// when a factorization fails on the bare matrix.
const JITTER_LADDER: [f64; 7] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Factor a symmetric positive-definite matrix, escalating through the
/// jitter ladder if needed. Returns the factorization, its log-determinant,
/// and the absolute jitter that was added to the diagonal.
pub(crate) fn cholesky_with_jitter(mat: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64, f64)> {
    let n = mat.nrows();
    let mean_diag = mat.diagonal().sum() / n as f64;
    let mut attempted = Vec::new();
    for level in std::iter::once(0.0).chain(JITTER_LADDER.iter().map(|&r| r * mean_diag)) {
        let candidate = if level == 0.0 {
            mat.clone()
        } else {
            let mut m = mat.clone();
            for i in 0..n {
                m[(i, i)] += level;
            }
            m
        };
        if let Some(chol) = Cholesky::new(candidate) {
            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            if log_det.is_finite() {
                return Ok((chol, log_det, level));
            }
        }
        attempted.push(level);
    }
    Err(Error::Factorization { attempted })
}

/// A factored training covariance: kernel matrix plus `noise` on the
/// diagonal (plus any jitter the ladder had to add).
pub struct CovMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    jitter: f64,
}

impl CovMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Absolute jitter added to the diagonal (0 when the bare matrix factored).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// The factored matrix, including noise and jitter.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `K^{-1} rhs` for a vector right-hand side.
    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(rhs.len())?;
        Ok(self.chol.solve(rhs))
    }

    /// `K^{-1} Rhs` for a matrix right-hand side.
    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len(rhs.nrows())?;
        Ok(self.chol.solve(rhs))
    }

    /// `y^T K^{-1} y`, computed as `|L^{-1} y|^2` so it is nonnegative by
    /// construction.
    pub fn quad_form(&self, y: &DVector<f64>) -> Result<f64> {
        self.check_len(y.len())?;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(y)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        Ok(z.norm_squared())
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.n() {
            return Err(Error::DimensionMismatch {
                context: "covariance solve",
                expected: self.n(),
                got,
            });
        }
        Ok(())
    }
}

/// Build and factor the training covariance for `xs`:
/// `K[i][j] = k(x_i, x_j) + noise * 1[i == j]`.
pub fn build_cov(xs: &[DVector<f64>], theta: f64, noise: f64) -> Result<CovMatrix> {
    if xs.is_empty() {
        return Err(Error::invalid("covariance over an empty point set"));
    }
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::invalid(format!(
            "kernel parameter must be positive and finite, got {theta}"
        )));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::invalid(format!(
            "noise must be nonnegative and finite, got {noise}"
        )));
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "covariance inputs",
            expected: dim,
            got: bad.len(),
        });
    }
    let n = xs.len();
    let mut mat = DMatrix::from_fn(n, n, |i, j| {
        if i <= j {
            rbf_kernel(&xs[i], &xs[j], theta)
        } else {
            0.0
        }
    });
    // Mirror the upper triangle so symmetry is exact by construction.
    for i in 0..n {
        for j in 0..i {
            mat[(i, j)] = mat[(j, i)];
        }
        mat[(i, i)] += noise;
    }
    let (chol, log_det, jitter) = cholesky_with_jitter(&mat)?;
    if jitter > 0.0 {
        for i in 0..n {
            mat[(i, i)] += jitter;
        }
    }
    Ok(CovMatrix {
        matrix: mat,
        chol,
        log_det,
        jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn v(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)))
            .collect()
    }

    #[test]
    fn kernel_at_zero_distance_is_one() {
        let x = v(&[0.3, -1.2]);
        assert_eq!(rbf_kernel(&x, &x, 2.7), 1.0);
    }

    #[test]
    fn kernel_unit_distance_unit_theta() {
        let a = v(&[0.0]);
        let b = v(&[1.0]);
        assert_relative_eq!(rbf_kernel(&a, &b, 1.0), (-0.5f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn kernel_decays_with_theta() {
        let a = v(&[0.0]);
        let b = v(&[1.5]);
        let mut prev = 1.0;
        for theta in [0.1, 1.0, 10.0, 100.0] {
            let k = rbf_kernel(&a, &b, theta);
            assert!(k < prev && k > 0.0);
            prev = k;
        }
    }

    #[test]
    fn cov_for_duplicate_inputs_with_noise() {
        // Two identical inputs: kernel block is all ones, noise on diagonal.
        let xs = vec![v(&[0.7]), v(&[0.7])];
        let cov = build_cov(&xs, 1.3, 0.5).unwrap();
        let m = cov.matrix();
        assert_abs_diff_eq!(m[(0, 0)], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 1)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 0)], 1.0, epsilon = 1e-15);
        // det = 1.5^2 - 1 = 1.25
        assert_relative_eq!(cov.log_det(), 1.25f64.ln(), max_relative = 1e-12);
        assert_eq!(cov.jitter(), 0.0);
    }

    #[test]
    fn single_point_no_noise() {
        let cov = build_cov(&[v(&[0.0])], 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(cov.matrix()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cov.log_det(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn identity_solve_round_trip() {
        // Distant points, zero noise: K ~ I, so solve(y) ~ y.
        let xs = vec![v(&[0.0]), v(&[100.0]), v(&[200.0])];
        let cov = build_cov(&xs, 1.0, 0.0).unwrap();
        let y = v(&[1.0, -2.0, 3.0]);
        let s = cov.solve_vec(&y).unwrap();
        assert_relative_eq!(s, y, max_relative = 1e-10);
        assert_abs_diff_eq!(cov.log_det(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn solve_matches_dense_inverse_oracle() {
        let xs = random_points(6, 2, 5);
        let cov = build_cov(&xs, 0.8, 0.3).unwrap();
        let y = DVector::from_fn(6, |i, _| (i as f64 * 0.77).sin());
        let inv = cov.matrix().clone().try_inverse().unwrap();
        let oracle = &inv * &y;
        assert_relative_eq!(cov.solve_vec(&y).unwrap(), oracle, max_relative = 1e-10);
        let quad_oracle = y.dot(&oracle);
        assert_relative_eq!(cov.quad_form(&y).unwrap(), quad_oracle, max_relative = 1e-10);
        let det_oracle = cov.matrix().determinant().ln();
        assert_relative_eq!(cov.log_det(), det_oracle, max_relative = 1e-10);
    }

    #[test]
    fn jitter_ladder_rescues_singular_gram_matrix() {
        // Duplicate points with zero noise give a singular kernel block.
        let xs = vec![v(&[1.0]), v(&[1.0]), v(&[2.0])];
        let cov = build_cov(&xs, 1.0, 0.0).unwrap();
        assert!(cov.jitter() > 0.0);
        // The reported log-det must include the jitter actually added.
        let det_oracle = cov.matrix().determinant().ln();
        assert_relative_eq!(cov.log_det(), det_oracle, max_relative = 1e-8);
    }

    #[test]
    fn hopeless_matrix_reports_attempted_jitters() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        match cholesky_with_jitter(&m) {
            Err(Error::Factorization { attempted }) => {
                assert_eq!(attempted.len(), 1 + JITTER_LADDER.len());
                assert_eq!(attempted[0], 0.0);
            }
            other => panic!("expected factorization failure, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_cov(&[], 1.0, 0.0).is_err());
        assert!(build_cov(&[v(&[0.0])], -1.0, 0.0).is_err());
        assert!(build_cov(&[v(&[0.0])], 1.0, -0.1).is_err());
        assert!(build_cov(&[v(&[0.0]), v(&[0.0, 1.0])], 1.0, 0.1).is_err());
    }

    #[test]
    fn log_det_monotone_in_noise() {
        let xs = random_points(5, 1, 9);
        let mut prev = f64::NEG_INFINITY;
        for noise in [0.01, 0.1, 0.5, 1.0, 5.0] {
            let ld = build_cov(&xs, 1.0, noise).unwrap().log_det();
            assert!(ld > prev);
            prev = ld;
        }
    }

    proptest! {
        #[test]
        fn kernel_symmetric_and_bounded(
            a in proptest::collection::vec(-5.0f64..5.0, 1..4),
            b in proptest::collection::vec(-5.0f64..5.0, 1..4),
            theta in 0.01f64..20.0,
        ) {
            prop_assume!(a.len() == b.len());
            let (av, bv) = (v(&a), v(&b));
            let k1 = rbf_kernel(&av, &bv, theta);
            let k2 = rbf_kernel(&bv, &av, theta);
            prop_assert_eq!(k1, k2);
            // Positive in exact arithmetic; may underflow to 0 for far
            // points at large theta.
            prop_assert!((0.0..=1.0).contains(&k1));
            prop_assert_eq!(rbf_kernel(&av, &av, theta), 1.0);
        }

        #[test]
        fn cov_symmetric_and_quad_nonnegative(
            seed in 0u64..1000,
            n in 1usize..8,
            theta in 0.05f64..10.0,
            noise in 0.0f64..2.0,
        ) {
            let xs = random_points(n, 1, seed);
            let cov = build_cov(&xs, theta, noise).unwrap();
            let m = cov.matrix();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(m[(i, j)], m[(j, i)]);
                }
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let y = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            prop_assert!(cov.quad_form(&y).unwrap() >= 0.0);
            let zero = DVector::zeros(n);
            prop_assert_eq!(cov.quad_form(&zero).unwrap(), 0.0);
        }
    }
}
