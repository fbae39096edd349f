//! Comparison filters: raw sample estimators, the plain cluster filter,
//! Ledoit-Wolf linear shrinkage toward the scaled identity, and
//! cross-validated eigenvalue shrinkage.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::bootstrap::{bahc_filter, BootstrapSpec};
use crate::error::{Error, Result};
use crate::hierclust::hcal_filter;
use crate::matrix::{
    eigendecompose, reassemble, renormalize_correlation, sample_correlation, sample_covariance,
    CorrelationMatrix, CovarianceMatrix, ReturnsMatrix, SymmetricMatrix,
};
use crate::seeding::{self, stream};

/// A covariance/correlation filtering method with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMethod {
    /// Unfiltered sample estimators.
    Sample,
    /// Average-linkage cluster filter on the sample correlation.
    Hcal,
    /// Bootstrapped-average cluster filter.
    Bahc { m: usize, seed: u64 },
    /// Linear shrinkage toward the scaled identity.
    LedoitWolf,
    /// Cross-validated eigenvalue shrinkage in the full-sample eigenbasis.
    Cv { folds: usize, seed: u64 },
}

impl FilterMethod {
    /// Short method tag used in records and CLI arguments.
    pub fn tag(&self) -> &'static str {
        match self {
            FilterMethod::Sample => "sample",
            FilterMethod::Hcal => "hcal",
            FilterMethod::Bahc { .. } => "bahc",
            FilterMethod::LedoitWolf => "lw",
            FilterMethod::Cv { .. } => "cv",
        }
    }

    /// Parses a tag, attaching the given parameters where the method needs them.
    pub fn from_tag(tag: &str, m: usize, seed: u64, folds: usize) -> Result<Self> {
        match tag {
            "sample" => Ok(FilterMethod::Sample),
            "hcal" => Ok(FilterMethod::Hcal),
            "bahc" => Ok(FilterMethod::Bahc { m, seed }),
            "lw" => Ok(FilterMethod::LedoitWolf),
            "cv" => Ok(FilterMethod::Cv { folds, seed }),
            other => Err(Error::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for FilterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Ledoit-Wolf estimate together with the shrinkage intensity used.
#[derive(Debug, Clone)]
pub struct LwEstimate {
    pub covariance: CovarianceMatrix,
    /// Shrinkage intensity `delta` in `[0, 1]`; 0 keeps the sample estimator,
    /// 1 yields the scaled identity.
    pub shrinkage: f64,
}

/// Linear shrinkage toward the scaled identity `mu I` with the analytic
/// optimal intensity: `Sigma = (1 - delta) S + delta mu I`.
pub fn lw_shrink(r: &ReturnsMatrix) -> LwEstimate {
    let x = r.data();
    let (n, t) = (x.nrows(), x.ncols());
    let sample = sample_covariance(r);
    let s = sample.values();

    let mu = s.trace() / n as f64;

    // d^2 = |S - mu I|^2 under the trace norm |A|^2 = tr(A A^T) / n.
    let mut d2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { mu } else { 0.0 };
            d2 += (s[(i, j)] - target) * (s[(i, j)] - target);
        }
    }
    d2 /= n as f64;

    // b^2 estimates the dispersion of the per-observation outer products
    // around S, capped at d^2.
    let mut centered = x.clone();
    for i in 0..n {
        let mean = x.row(i).sum() / t as f64;
        for h in 0..t {
            centered[(i, h)] -= mean;
        }
    }
    let mut b2_raw = 0.0;
    for k in 0..t {
        let col = centered.column(k);
        let mut dev = 0.0;
        for i in 0..n {
            for j in 0..n {
                let e = col[i] * col[j] - s[(i, j)];
                dev += e * e;
            }
        }
        b2_raw += dev / n as f64;
    }
    b2_raw /= (t * t) as f64;
    let b2 = b2_raw.min(d2);

    let delta = if d2 > 0.0 { (b2 / d2).clamp(0.0, 1.0) } else { 0.0 };

    let mut out = s * (1.0 - delta);
    for i in 0..n {
        out[(i, i)] += delta * mu;
    }
    let covariance = CovarianceMatrix::new(SymmetricMatrix::from_exact(out))
        .expect("shrinkage keeps the diagonal nonnegative");
    LwEstimate {
        covariance,
        shrinkage: delta,
    }
}

/// Cross-validated eigenvalue shrinkage: eigenvectors come from the full
/// sample; each eigenvalue is replaced by the average held-out quadratic form
/// of the corresponding per-fold training eigenvector.
///
/// Rows are demeaned once over the full window; fold moment matrices are
/// plain second moments of the demeaned columns, so leave-one-out folds are
/// well defined. Folds are contiguous blocks of a seeded shuffle of the
/// columns. Nonnegative by construction; eigenvalues are floored at
/// `1e-12 * mean(z)` to keep the output invertible.
pub fn cv_eigenvalue_shrink(r: &ReturnsMatrix, folds: usize, seed: u64) -> Result<CovarianceMatrix> {
    let x = r.data();
    let (n, t) = (x.nrows(), x.ncols());
    if folds < 2 || folds > t {
        return Err(Error::InsufficientData(format!(
            "fold count {folds} outside 2..={t}"
        )));
    }

    let mut centered = x.clone();
    for i in 0..n {
        let mean = x.row(i).sum() / t as f64;
        for h in 0..t {
            centered[(i, h)] -= mean;
        }
    }

    // Seeded shuffle, then contiguous blocks.
    let mut order: Vec<usize> = (0..t).collect();
    let mut rng = seeding::rng_for(seed, &[stream::CV_FOLDS]);
    for i in (1..t).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        order.swap(i, j);
    }
    let base = t / folds;
    let extra = t % folds;

    let second_moment = |cols: &[usize]| -> DMatrix<f64> {
        let mut s = DMatrix::zeros(n, n);
        for &k in cols {
            let col = centered.column(k);
            for i in 0..n {
                for j in 0..=i {
                    s[(i, j)] += col[i] * col[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..=i {
                s[(i, j)] /= cols.len() as f64;
                s[(j, i)] = s[(i, j)];
            }
        }
        s
    };

    let mut z: DVector<f64> = DVector::zeros(n);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let test: Vec<usize> = order[start..start + len].to_vec();
        let train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + len..])
            .copied()
            .collect();
        start += len;

        let s_train = SymmetricMatrix::from_exact(second_moment(&train));
        let s_test = second_moment(&test);
        let eig_train = eigendecompose(&s_train)?;
        let u = eig_train.eigenvectors();
        for i in 0..n {
            let ui = u.column(i);
            z[i] += (ui.transpose() * &s_test * ui)[(0, 0)] / folds as f64;
        }
    }

    let mean_z: f64 = z.sum() / n as f64;
    let floor = 1e-12 * mean_z.max(f64::MIN_POSITIVE);
    for v in z.iter_mut() {
        *v = v.max(floor);
    }

    let full = SymmetricMatrix::from_exact(second_moment(&(0..t).collect::<Vec<_>>()));
    let eig_full = eigendecompose(&full)?;
    CovarianceMatrix::new(reassemble(eig_full.eigenvectors(), &z))
}

/// Applies a filtering method to a returns window, yielding the covariance
/// estimate and its correlation counterpart.
pub fn apply_filter(
    method: &FilterMethod,
    r: &ReturnsMatrix,
) -> Result<(CovarianceMatrix, CorrelationMatrix)> {
    match method {
        FilterMethod::Sample => Ok((sample_covariance(r), sample_correlation(r)?)),
        FilterMethod::Hcal => {
            let corr = hcal_filter(&sample_correlation(r)?);
            let cov = scale_by_volatilities(&corr, &sample_covariance(r))?;
            Ok((cov, corr))
        }
        FilterMethod::Bahc { m, seed } => {
            let (corr, cov) = bahc_filter(r, &BootstrapSpec::new(*m, *seed)?)?;
            Ok((cov, corr))
        }
        FilterMethod::LedoitWolf => {
            let est = lw_shrink(r);
            let corr = renormalize_correlation(est.covariance.as_sym())?;
            Ok((est.covariance, corr))
        }
        FilterMethod::Cv { folds, seed } => {
            let cov = cv_eigenvalue_shrink(r, *folds, *seed)?;
            let corr = renormalize_correlation(cov.as_sym())?;
            Ok((cov, corr))
        }
    }
}

/// `sigma_ij = c_ij sqrt(sigma_ii sigma_jj)` with the given correlation and
/// the variances of `reference`.
fn scale_by_volatilities(
    corr: &CorrelationMatrix,
    reference: &CovarianceMatrix,
) -> Result<CovarianceMatrix> {
    let n = corr.dim();
    let scale: Vec<f64> = (0..n).map(|i| reference.values()[(i, i)].sqrt()).collect();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = reference.values()[(i, i)];
        for j in 0..i {
            let v = corr.values()[(i, j)] * scale[i] * scale[j];
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    CovarianceMatrix::new(SymmetricMatrix::from_exact(out))
}
