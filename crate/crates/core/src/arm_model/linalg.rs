//! Thin SVD by one-sided Jacobi rotations and the damped inverse built on it.
//!
//! The iterative bidiagonal SVD shipped with nalgebra 0.35 loses the
//! factorization on exactly rank-deficient inputs (`U Σ Vᵀ ≠ A`), which is
//! precisely the singular-arm case the damped inverse must handle, so the
//! decomposition is done here with Hestenes' method instead.

use nalgebra::{DMatrix, DVector};

/// Singular values at or below this are treated as zero when no damping is applied.
pub const SINGULAR_CUTOFF: f64 = 1e-10;

const MAX_SWEEPS: usize = 80;

/// `A = U diag(σ) Vᵀ` with `U` m×k, `V` n×k, `k = min(m, n)`.
#[derive(Debug, Clone)]
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn new(a: &DMatrix<f64>) -> Svd {
        let (m, n) = a.shape();
        if m >= n {
            let (u, s, v) = jacobi_tall(a.clone());
            Svd {
                u,
                singular_values: s,
                v,
            }
        } else {
            let (u, s, v) = jacobi_tall(a.transpose());
            Svd {
                u: v,
                singular_values: s,
                v: u,
            }
        }
    }
}

/// One-sided Jacobi on a tall matrix (m ≥ n): orthogonalize the columns of
/// `W = A V`, then `σ_j = ‖w_j‖` and `u_j = w_j / σ_j`.
fn jacobi_tall(mut w: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (m, n) = w.shape();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (wp, wq) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s = DVector::zeros(n);
    let mut u = DMatrix::zeros(m, n);
    for j in 0..n {
        let norm = w.column(j).norm();
        s[j] = norm;
        if norm > 0.0 {
            u.set_column(j, &(w.column(j) / norm));
        }
    }
    (u, s, v)
}

fn inverse_gain(sigma: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        if sigma > SINGULAR_CUTOFF {
            1.0 / sigma
        } else {
            0.0
        }
    } else {
        sigma / (sigma * sigma + lambda * lambda)
    }
}

/// Singular values of `a`, unordered.
pub(crate) fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    Svd::new(a).singular_values
}

/// Damped least-squares inverse `Aᵀ(AAᵀ + λ²I)⁻¹` of an arbitrary matrix,
/// computed from its SVD with each singular value σ mapped to σ/(σ² + λ²).
/// At λ = 0 this is the Moore–Penrose pseudoinverse with singular values
/// below [`SINGULAR_CUTOFF`] dropped.
pub fn pseudoinverse(a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    debug_assert!(lambda >= 0.0);
    let (rows, cols) = a.shape();
    let mut out = DMatrix::zeros(cols, rows);
    if rows == 0 || cols == 0 {
        return out;
    }
    let svd = Svd::new(a);
    for (j, sigma) in svd.singular_values.iter().enumerate() {
        let g = inverse_gain(*sigma, lambda);
        if g == 0.0 {
            continue;
        }
        // out += g · v_j u_jᵀ
        out.ger(g, &svd.v.column(j), &svd.u.column(j), 1.0);
    }
    out
}

/// `J⁺_λ` for a 6×N Jacobian: an N×6 matrix.
pub fn damped_pseudoinverse(j: &super::Jacobian, lambda: f64) -> DMatrix<f64> {
    pseudoinverse(&j.matrix, lambda)
}

/// `max_σ σ/(σ² + λ²)` over the singular values of `a`: the operator-norm
/// bound of its damped inverse.
pub fn dls_gain_bound(a: &DMatrix<f64>, lambda: f64) -> f64 {
    singular_values(a)
        .iter()
        .map(|s| inverse_gain(*s, lambda))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn low_rank(m: usize, n: usize, rank: usize, seed: &[f64]) -> DMatrix<f64> {
        let l = DMatrix::from_fn(m, rank, |i, j| seed[(i * 7 + j * 3) % seed.len()]);
        let r = DMatrix::from_fn(rank, n, |i, j| seed[(i * 5 + j * 11 + 1) % seed.len()]);
        l * r
    }

    #[test]
    fn identity_block_inverts_to_identity() {
        let a = DMatrix::<f64>::identity(6, 6);
        let p = pseudoinverse(&a, 0.0);
        assert!((p - DMatrix::<f64>::identity(6, 6)).norm() < 1e-14);
    }

    #[test]
    fn unit_singular_value_with_unit_damping_halves() {
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let p = pseudoinverse(&a, 1.0);
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_matrix_maps_to_zero() {
        let a = DMatrix::<f64>::zeros(6, 7);
        let p = pseudoinverse(&a, 0.01);
        assert_eq!(p.shape(), (7, 6));
        assert_eq!(p.norm(), 0.0);
        assert_eq!(pseudoinverse(&a, 0.0).norm(), 0.0);
    }

    #[test]
    fn matches_normal_equation_form_on_rank_two_input() {
        // sin(a + b·j) rows span a two-dimensional space.
        let a = DMatrix::from_fn(6, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
        let lambda = 0.05;
        let direct = a.transpose()
            * (&a * a.transpose() + DMatrix::<f64>::identity(6, 6) * lambda * lambda)
                .try_inverse()
                .unwrap();
        let d = (pseudoinverse(&a, lambda) - &direct).norm();
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn rank_deficient_undamped_drops_null_directions() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pseudoinverse(&a, 0.0);
        let expected = DMatrix::from_element(2, 2, 0.25);
        assert!((p - expected).norm() < 1e-14);
    }

    proptest! {
        #[test]
        fn svd_reconstructs_low_rank_matrices(
            rank in 1usize..=6,
            seed in proptest::collection::vec(-1.0f64..1.0, 13),
            wide in any::<bool>(),
        ) {
            let a = if wide { low_rank(6, 7, rank, &seed) } else { low_rank(7, 6, rank, &seed) };
            let svd = Svd::new(&a);
            let recon = &svd.u * DMatrix::from_diagonal(&svd.singular_values) * svd.v.transpose();
            prop_assert!((recon - &a).norm() < 1e-12 * a.norm().max(1.0));
        }

        #[test]
        fn penrose_conditions_hold_undamped(
            rank in 1usize..=6,
            seed in proptest::collection::vec(-1.0f64..1.0, 13),
        ) {
            let a = low_rank(6, 7, rank, &seed);
            prop_assume!(a.norm() > 1e-3);
            let p = pseudoinverse(&a, 0.0);
            let scale = a.norm().max(1.0);
            prop_assert!((&a * &p * &a - &a).norm() < 1e-9 * scale);
            let pap = &p * &a * &p - &p;
            prop_assert!(pap.norm() < 1e-6 * p.norm().max(1.0));
            let ap = &a * &p;
            prop_assert!((&ap - ap.transpose()).norm() < 1e-8);
        }
    }
}
