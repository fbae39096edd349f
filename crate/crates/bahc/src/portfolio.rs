//! Global minimum-variance portfolios (long-short and long-only) and
//! realized-risk evaluation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{eigendecompose, CovarianceMatrix, SymmetricMatrix};

/// Budget-normalized portfolio weights: components sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    w: DVector<f64>,
}

impl PortfolioWeights {
    /// Requires the components to sum to one within `1e-10`.
    pub fn new(w: DVector<f64>) -> Result<Self> {
        let sum: f64 = w.sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self { w })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn as_slice(&self) -> &[f64] {
        self.w.as_slice()
    }

    /// True when no component is meaningfully negative.
    pub fn is_long_only(&self) -> bool {
        self.w.iter().all(|&x| x >= -1e-12)
    }
}

/// Unique minimizer of `w' Sigma w` under `sum(w) = 1`, short positions
/// allowed: `w = Sigma^-1 1 / (1' Sigma^-1 1)`.
///
/// Fails with [`Error::SingularCovariance`] when the smallest eigenvalue is
/// at most `n * eps * lambda_max`; raw sample matrices in the
/// high-dimensional regime land here and must be filtered first.
pub fn min_variance_long_short(cov: &CovarianceMatrix) -> Result<PortfolioWeights> {
    let eig = eigendecompose(cov.as_sym())?;
    let n = cov.dim();
    let lambda = eig.eigenvalues();
    let lambda_max = lambda[0].abs().max(lambda[n - 1].abs());
    let threshold = n as f64 * f64::EPSILON * lambda_max;
    if lambda[n - 1] <= threshold {
        return Err(Error::SingularCovariance {
            condition: if lambda[n - 1].abs() > 0.0 {
                lambda_max / lambda[n - 1].abs()
            } else {
                f64::INFINITY
            },
        });
    }

    // Sigma^-1 1 through the eigenbasis.
    let u = eig.eigenvectors();
    let proj = u.transpose() * DVector::from_element(n, 1.0);
    let scaled = DVector::from_fn(n, |i, _| proj[i] / lambda[i]);
    let x = u * scaled;
    let total = x.sum();
    PortfolioWeights::new(x / total)
}

/// Long-only global minimum-variance portfolio: minimizes `w' Sigma w` under
/// `sum(w) = 1`, `w >= 0`.
///
/// Active-set iteration on the support, warm-started from the clipped
/// long-short solution, capped at `10 n` iterations. On success the returned
/// weights satisfy the KKT conditions: active gradients agree with the
/// common multiplier to `1e-8` relative, inactive gradients are not below it.
pub fn min_variance_long_only(cov: &CovarianceMatrix) -> Result<PortfolioWeights> {
    let n = cov.dim();
    let sigma = cov.values();
    let cap = 10 * n;

    // Warm start: clip the long-short solution to the simplex; fall back to
    // uniform when it is unavailable or degenerate.
    let mut w = match min_variance_long_short(cov) {
        Ok(ls) => {
            let mut v = ls.weights().clone();
            v.iter_mut().for_each(|x| *x = x.max(0.0));
            let s = v.sum();
            if s > 1e-12 {
                v / s
            } else {
                DVector::from_element(n, 1.0 / n as f64)
            }
        }
        Err(_) => DVector::from_element(n, 1.0 / n as f64),
    };
    let mut support: Vec<usize> = (0..n).filter(|&i| w[i] > 1e-12).collect();
    if support.is_empty() {
        support = (0..n).collect();
        w = DVector::from_element(n, 1.0 / n as f64);
    }

    let scale = sigma.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let gradient_tol = 1e-10 * scale;

    for _ in 0..cap {
        let candidate = match solve_restricted(sigma, &support) {
            Some(c) => c,
            None => {
                return Err(Error::QpNonConvergence {
                    kkt_residual: kkt_residual(sigma, &w),
                    best_weights: w.as_slice().to_vec(),
                })
            }
        };

        let negative = support
            .iter()
            .enumerate()
            .filter(|&(k, _)| candidate[k] < -1e-14)
            .map(|(k, &i)| (k, i))
            .collect::<Vec<_>>();

        if negative.is_empty() {
            // Feasible on the support: adopt and test global optimality.
            let mut next = DVector::zeros(n);
            for (k, &i) in support.iter().enumerate() {
                next[i] = candidate[k].max(0.0);
            }
            w = &next / next.sum();

            let grad = 2.0 * (sigma * &w);
            let multiplier =
                support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
            let violator = (0..n)
                .filter(|i| !support.contains(i))
                .map(|i| (i, grad[i] - multiplier))
                .filter(|&(_, v)| v < -gradient_tol)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match violator {
                Some((i, _)) => support.push(i),
                None => return PortfolioWeights::new(w),
            }
        } else {
            // Step from the current feasible point toward the candidate until
            // the first support weight hits zero, then drop it.
            let mut alpha = 1.0f64;
            let mut drop_idx = None;
            for &(k, i) in &negative {
                let denom = w[i] - candidate[k];
                if denom > 0.0 {
                    let a = w[i] / denom;
                    if a < alpha {
                        alpha = a;
                        drop_idx = Some(i);
                    }
                }
            }
            let mut next = w.clone();
            for (k, &i) in support.iter().enumerate() {
                next[i] = (1.0 - alpha) * w[i] + alpha * candidate[k];
            }
            if let Some(d) = drop_idx {
                next[d] = 0.0;
            }
            let total = next.sum();
            w = next / total;
            support.retain(|&i| w[i] > 1e-14);
            if support.is_empty() {
                return Err(Error::QpNonConvergence {
                    kkt_residual: kkt_residual(sigma, &w),
                    best_weights: w.as_slice().to_vec(),
                });
            }
        }
    }

    Err(Error::QpNonConvergence {
        kkt_residual: kkt_residual(sigma, &w),
        best_weights: w.as_slice().to_vec(),
    })
}

/// Minimizer of the equality-constrained restriction of the problem to
/// `support`: solves `Sigma_S y = 1` through the eigenbasis (near-null
/// directions discarded) and normalizes. `None` when the restricted system
/// is effectively zero.
fn solve_restricted(sigma: &DMatrix<f64>, support: &[usize]) -> Option<DVector<f64>> {
    let k = support.len();
    if k == 1 {
        return Some(DVector::from_element(1, 1.0));
    }
    let mut sub = DMatrix::zeros(k, k);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            sub[(a, b)] = sigma[(i, j)];
        }
    }
    crate::matrix::mirror_lower(&mut sub);
    let eig = eigendecompose(&SymmetricMatrix::from_exact(sub)).ok()?;
    let lambda = eig.eigenvalues();
    let cutoff = k as f64 * f64::EPSILON * lambda[0].abs().max(f64::MIN_POSITIVE);
    let u = eig.eigenvectors();
    let proj = u.transpose() * DVector::from_element(k, 1.0);
    let scaled = DVector::from_fn(k, |i, _| {
        if lambda[i] > cutoff {
            proj[i] / lambda[i]
        } else {
            0.0
        }
    });
    let y = u * scaled;
    let total = y.sum();
    if total.abs() < 1e-300 {
        return None;
    }
    Some(y / total)
}

/// Max violation of the long-only KKT conditions at `w` (stationarity over
/// the support and nonnegativity of the reduced gradients), relative to the
/// gradient scale.
pub fn kkt_residual(sigma: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let n = w.len();
    let grad = 2.0 * (sigma * w);
    let active: Vec<usize> = (0..n).filter(|&i| w[i] > 1e-12).collect();
    if active.is_empty() {
        return f64::INFINITY;
    }
    let multiplier = active.iter().map(|&i| grad[i]).sum::<f64>() / active.len() as f64;
    let scale = grad.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut res: f64 = 0.0;
    for i in 0..n {
        if w[i] > 1e-12 {
            res = res.max((grad[i] - multiplier).abs() / scale);
        } else {
            res = res.max((multiplier - grad[i]).max(0.0) / scale);
        }
    }
    res
}

/// Realized (out-of-sample) portfolio risk `sqrt(w' Sigma_out w)`.
pub fn realized_risk(w: &PortfolioWeights, cov_out: &CovarianceMatrix) -> Result<f64> {
    if w.len() != cov_out.dim() {
        return Err(Error::InvalidInput(format!(
            "{} weights against a {}x{} covariance",
            w.len(),
            cov_out.dim(),
            cov_out.dim()
        )));
    }
    let q = (w.weights().transpose() * cov_out.values() * w.weights())[(0, 0)];
    // PSD within tolerance can leave a tiny negative quadratic form.
    Ok(q.max(0.0).sqrt())
}
