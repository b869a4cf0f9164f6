//! Least-squares projection onto global monomial features, the conditional
//! expectation inside the backward scheme.
//!
//! The design matrix is assembled once per time step and reused for every
//! target at that step. Coefficients come from the eigendecomposition of the
//! Gram matrix with small eigenvalues truncated, so rank-deficient designs
//! (a constant forward state collapses every monomial column) fall back to
//! the minimum-norm solution, which fits the sample mean.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Number of monomials in `dim` variables of total degree at most `degree`.
pub fn basis_dimension(dim: usize, degree: usize) -> usize {
    // C(dim + degree, degree)
    let mut num = 1usize;
    let mut den = 1usize;
    for k in 1..=degree {
        num *= dim + k;
        den *= k;
    }
    num / den
}

fn push_exponents(
    dim: usize,
    degree_left: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if current.len() == dim {
        out.push(current.clone());
        return;
    }
    for e in 0..=degree_left {
        current.push(e);
        push_exponents(dim, degree_left - e, current, out);
        current.pop();
    }
}

/// All exponent vectors with total degree at most `degree`, in a fixed order.
fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(basis_dimension(dim, degree));
    push_exponents(dim, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|e| (e.iter().sum::<usize>(), e.clone()));
    out
}

/// Relative eigenvalue cutoff for the effective rank of the Gram matrix.
const RANK_CUTOFF: f64 = 1e-12;

/// A factored design matrix ready to fit many targets.
pub struct RegressionPlan {
    design: DMatrix<f64>,
    /// Maps a target vector to coefficients: `(A^T A)^+ A^T`.
    solve_map: DMatrix<f64>,
    rows: usize,
}

impl RegressionPlan {
    /// Builds monomial features of `features` (shape `[m, dim]`) up to the
    /// given total degree and factors the normal system.
    pub fn new(features: ArrayView2<'_, f64>, degree: usize) -> Result<Self> {
        let m = features.shape()[0];
        let dim = features.shape()[1];
        let k = basis_dimension(dim, degree);
        if m < 10 * k {
            return Err(Error::Precondition(format!(
                "regression needs at least {} samples for basis dimension {k}, got {m}",
                10 * k
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step: 0,
                message: "non-finite regression features".into(),
            });
        }
        let exponents = monomial_exponents(dim, degree);
        let mut design = DMatrix::<f64>::zeros(m, k);
        for r in 0..m {
            for (c, exps) in exponents.iter().enumerate() {
                let mut v = 1.0;
                for (coord, &e) in exps.iter().enumerate() {
                    for _ in 0..e {
                        v *= features[[r, coord]];
                    }
                }
                design[(r, c)] = v;
            }
        }
        let gram = design.transpose() * &design;
        let eigen = SymmetricEigen::new(gram);
        let lambda_max = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        if !(lambda_max > 0.0) || !lambda_max.is_finite() {
            return Err(Error::Numeric {
                step: 0,
                message: "degenerate regression design".into(),
            });
        }
        let mut inv = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            let lambda = eigen.eigenvalues[j];
            if lambda > lambda_max * RANK_CUTOFF {
                inv[(j, j)] = 1.0 / lambda;
            }
        }
        let pinv_gram = &eigen.eigenvectors * inv * eigen.eigenvectors.transpose();
        let solve_map = pinv_gram * design.transpose();
        Ok(Self {
            design,
            solve_map,
            rows: m,
        })
    }

    /// Least-squares coefficients and fitted values for one target vector.
    pub fn fit(&self, targets: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if targets.len() != self.rows {
            return Err(Error::Precondition(format!(
                "target length {} does not match {} samples",
                targets.len(),
                self.rows
            )));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step: 0,
                message: "non-finite regression targets".into(),
            });
        }
        let rhs = DVector::from_column_slice(targets);
        let coeffs = &self.solve_map * rhs;
        let fitted = &self.design * &coeffs;
        Ok((
            coeffs.iter().cloned().collect(),
            fitted.iter().cloned().collect(),
        ))
    }
}

/// One-shot least-squares fit of `targets` on monomials of `features`.
pub fn regress_conditional(
    features: ArrayView2<'_, f64>,
    targets: &[f64],
    degree: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    RegressionPlan::new(features, degree)?.fit(targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_dimensions() {
        assert_eq!(basis_dimension(1, 2), 3);
        assert_eq!(basis_dimension(2, 2), 6);
        assert_eq!(basis_dimension(3, 1), 4);
        assert_eq!(basis_dimension(1, 0), 1);
    }

    #[test]
    fn constants_are_reproduced_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let features = Array2::from_shape_fn((64, 1), |_| rng.random_range(-1.0..1.0));
        let targets = vec![3.7; 64];
        let (_, fitted) = regress_conditional(features.view(), &targets, 2).unwrap();
        for v in fitted {
            assert!((v - 3.7).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_target_is_in_the_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let features = Array2::from_shape_fn((128, 1), |_| rng.random_range(-1.0..1.0));
        let targets: Vec<f64> = features.column(0).iter().map(|x| x * x).collect();
        let (_, fitted) = regress_conditional(features.view(), &targets, 2).unwrap();
        for (f, t) in fitted.iter().zip(targets.iter()) {
            assert!((f - t).abs() < 1e-10);
        }
    }

    /// Independent route: solve the normal equations by LU factorization.
    fn normal_equations_fit(features: &Array2<f64>, targets: &[f64], degree: usize) -> Vec<f64> {
        let m = features.shape()[0];
        let exps = monomial_exponents(features.shape()[1], degree);
        let k = exps.len();
        let mut design = DMatrix::<f64>::zeros(m, k);
        for r in 0..m {
            for (c, e) in exps.iter().enumerate() {
                let mut v = 1.0;
                for (coord, &p) in e.iter().enumerate() {
                    v *= features[[r, coord]].powi(p as i32);
                }
                design[(r, c)] = v;
            }
        }
        let gram = design.transpose() * &design;
        let moment = design.transpose() * DVector::from_column_slice(targets);
        let beta = gram.lu().solve(&moment).expect("full-rank oracle system");
        (design * beta).iter().cloned().collect()
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let features = Array2::from_shape_fn((256, 2), |_| rng.random_range(-1.0..1.0));
        let targets: Vec<f64> = (0..256).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, fitted) = regress_conditional(features.view(), &targets, 2).unwrap();
        let oracle = normal_equations_fit(&features, &targets, 2);
        for (a, b) in fitted.iter().zip(oracle.iter()) {
            let scale = b.abs().max(1.0);
            assert!((a - b).abs() / scale < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_features_fit_the_mean() {
        // Rank-one designs must reproduce constants for any feature value;
        // sweep a grid because dense-SVD routes have failed at isolated
        // values here.
        for step in 0..=64 {
            let c = step as f64 / 64.0;
            let features = Array2::from_elem((40, 1), c);
            let targets: Vec<f64> = (0..40).map(|i| i as f64).collect();
            let mean = targets.iter().sum::<f64>() / 40.0;
            let (_, fitted) = regress_conditional(features.view(), &targets, 2).unwrap();
            for v in fitted {
                assert!((v - mean).abs() < 1e-10, "c={c}: {v} vs {mean}");
            }
        }
    }

    #[test]
    fn minimum_norm_coefficients_for_rank_deficient_designs() {
        // Columns [1, c, c^2] are parallel; the minimum-norm solution spreads
        // the mean along the column weights.
        let c = 0.5f64;
        let features = Array2::from_elem((40, 1), c);
        let targets = vec![2.0; 40];
        let (coeffs, _) = regress_conditional(features.view(), &targets, 2).unwrap();
        // beta = A^+ y: direction (1, c, c^2) scaled to fit the mean.
        let scale = 2.0 / (1.0 + c * c + c * c * c * c);
        let expected = [scale, scale * c, scale * c * c];
        for (got, want) in coeffs.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn non_finite_inputs_are_numeric_errors() {
        let features = Array2::from_elem((40, 1), 0.5);
        let mut targets = vec![1.0; 40];
        targets[7] = f64::NAN;
        assert!(matches!(
            regress_conditional(features.view(), &targets, 1),
            Err(Error::Numeric { .. })
        ));
        let mut bad = Array2::from_elem((40, 1), 0.5);
        bad[[3, 0]] = f64::INFINITY;
        assert!(matches!(
            regress_conditional(bad.view(), &[1.0; 40], 1),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn sample_budget_precondition() {
        let features = Array2::from_elem((20, 1), 0.5);
        // degree 2 in one variable needs 30 samples.
        assert!(matches!(
            regress_conditional(features.view(), &[0.0; 20], 2),
            Err(Error::Precondition(_))
        ));
    }
}
