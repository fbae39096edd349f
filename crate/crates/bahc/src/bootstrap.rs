//! Feature-wise bootstrap resampling and the bootstrapped-average filtered
//! correlation and covariance estimators.
//!
//! A bootstrap copy `b` of an `n x t` returns matrix keeps all rows and
//! redraws the `t` column indices with replacement; the same index vector is
//! applied to every row, preserving cross-sectional dependence. Each copy is
//! filtered with the average-linkage cluster filter and the `m` filtered
//! matrices are averaged.
//!
//! Index vectors are drawn from `ChaCha8` keyed by `(seed, b, retry)` (see
//! [`crate::seeding`]), so each bootstrap depends only on the spec and its
//! own index: draws are order-independent, parallelizable and identical
//! across platforms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hierclust::hcal_filter;
use crate::matrix::{
    correlation_from_covariance, mirror_lower, sample_covariance, CorrelationMatrix,
    CovarianceMatrix, ReturnsMatrix, SymmetricMatrix,
};
use crate::seeding::{self, stream};

/// Redraw budget for bootstraps that produce a zero-variance row.
const MAX_REDRAWS: usize = 100;

/// Number of bootstraps and master seed for the filtered estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapSpec {
    m: usize,
    seed: u64,
}

impl BootstrapSpec {
    /// Requires `m >= 1`.
    pub fn new(m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("bootstrap count m must be >= 1".into()));
        }
        Ok(Self { m, seed })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// The column index vector for bootstrap `b` (1-based), redraw `attempt`.
///
/// Depends only on `(seed, b, attempt, t)`.
pub fn bootstrap_indices(seed: u64, b: usize, attempt: usize, t: usize) -> Vec<usize> {
    let mut rng = seeding::rng_for(seed, &[stream::BOOTSTRAP, b as u64, attempt as u64]);
    (0..t).map(|_| rng.random_range(0..t as u64) as usize).collect()
}

/// Feature-wise bootstrap copy `b` of `r` (first draw, no degeneracy retry).
pub fn bootstrap_columns(
    r: &ReturnsMatrix,
    spec: &BootstrapSpec,
    b: usize,
) -> Result<ReturnsMatrix> {
    if b == 0 || b > spec.m {
        return Err(Error::InvalidInput(format!(
            "bootstrap index {b} outside 1..={}",
            spec.m
        )));
    }
    let idx = bootstrap_indices(spec.seed, b, 0, r.n_features());
    Ok(resample(r, &idx))
}

fn resample(r: &ReturnsMatrix, idx: &[usize]) -> ReturnsMatrix {
    let x = r.data();
    let data = DMatrix::from_fn(x.nrows(), idx.len(), |i, j| x[(i, idx[j])]);
    ReturnsMatrix::with_labels(data, r.labels().to_vec())
        .expect("resampled copy keeps the source shape")
}

/// BAHC-filtered correlation matrix: the average over `m` bootstraps of the
/// cluster-filtered correlation of each copy. Unit diagonal,
/// positive-semidefinite, deterministic given the spec.
pub fn bahc_correlation(r: &ReturnsMatrix, spec: &BootstrapSpec) -> Result<CorrelationMatrix> {
    Ok(bahc_filter(r, spec)?.0)
}

/// BAHC-filtered covariance matrix: each bootstrap's filtered correlation is
/// rescaled by that copy's sample volatilities before averaging. Shares its
/// bootstrap draws with [`bahc_correlation`] under the same spec.
pub fn bahc_covariance(r: &ReturnsMatrix, spec: &BootstrapSpec) -> Result<CovarianceMatrix> {
    Ok(bahc_filter(r, spec)?.1)
}

/// Both BAHC-filtered estimators from one pass over the bootstrap draws.
pub fn bahc_filter(
    r: &ReturnsMatrix,
    spec: &BootstrapSpec,
) -> Result<(CorrelationMatrix, CovarianceMatrix)> {
    let per_bootstrap: Vec<(DMatrix<f64>, DVector<f64>)> = (1..=spec.m)
        .into_par_iter()
        .map(|b| filtered_bootstrap(r, spec.seed, b))
        .collect::<Result<_>>()?;
    average_filtered(per_bootstrap)
}

/// Test and diagnostics hook: a single bootstrap with the identity index
/// vector, i.e. the cluster filter applied to the plain sample estimators.
#[doc(hidden)]
pub fn bahc_filter_identity(r: &ReturnsMatrix) -> Result<(CorrelationMatrix, CovarianceMatrix)> {
    let identity: Vec<usize> = (0..r.n_features()).collect();
    let filtered = filter_copy(&resample(r, &identity))
        .ok_or(Error::ZeroVariance { row: 0 })?;
    average_filtered(vec![filtered])
}

/// Filters one bootstrap copy, redrawing with fresh sub-seeds while the copy
/// has a zero-variance row.
fn filtered_bootstrap(
    r: &ReturnsMatrix,
    seed: u64,
    b: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    for attempt in 0..=MAX_REDRAWS {
        let idx = bootstrap_indices(seed, b, attempt, r.n_features());
        if let Some(out) = filter_copy(&resample(r, &idx)) {
            return Ok(out);
        }
    }
    Err(Error::DegenerateBootstrap {
        bootstrap: b,
        attempts: MAX_REDRAWS,
    })
}

/// `None` when the copy is degenerate (some row constant).
fn filter_copy(copy: &ReturnsMatrix) -> Option<(DMatrix<f64>, DVector<f64>)> {
    if (0..copy.n_objects()).any(|i| copy.row_is_constant(i)) {
        return None;
    }
    let cov = sample_covariance(copy);
    let variances = cov.variances();
    if variances.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let corr = correlation_from_covariance(&cov).ok()?;
    let filtered = hcal_filter(&corr);
    Some((filtered.values().clone(), variances))
}

fn average_filtered(
    per_bootstrap: Vec<(DMatrix<f64>, DVector<f64>)>,
) -> Result<(CorrelationMatrix, CovarianceMatrix)> {
    let m = per_bootstrap.len();
    let n = per_bootstrap[0].0.nrows();

    let corr_terms: Vec<&DMatrix<f64>> = per_bootstrap.iter().map(|(c, _)| c).collect();
    let mut corr_avg = pairwise_sum(&corr_terms) / m as f64;
    for i in 0..n {
        corr_avg[(i, i)] = 1.0;
    }
    mirror_lower(&mut corr_avg);

    let cov_terms: Vec<DMatrix<f64>> = per_bootstrap
        .iter()
        .map(|(c, v)| {
            let scale: Vec<f64> = v.iter().map(|x| x.sqrt()).collect();
            let mut s = DMatrix::zeros(n, n);
            for i in 0..n {
                s[(i, i)] = v[i];
                for j in 0..i {
                    let x = c[(i, j)] * scale[i] * scale[j];
                    s[(i, j)] = x;
                    s[(j, i)] = x;
                }
            }
            s
        })
        .collect();
    let cov_refs: Vec<&DMatrix<f64>> = cov_terms.iter().collect();
    let mut cov_avg = pairwise_sum(&cov_refs) / m as f64;
    mirror_lower(&mut cov_avg);

    Ok((
        CorrelationMatrix::new(SymmetricMatrix::from_exact(corr_avg))?,
        CovarianceMatrix::new(SymmetricMatrix::from_exact(cov_avg))?,
    ))
}

/// Pairwise (cascade) summation in fixed index order, so the result does not
/// depend on how the terms were produced.
fn pairwise_sum(mats: &[&DMatrix<f64>]) -> DMatrix<f64> {
    fn go(mats: &[&DMatrix<f64>]) -> DMatrix<f64> {
        match mats.len() {
            1 => mats[0].clone(),
            2 => mats[0] + mats[1],
            len => {
                let mid = len / 2;
                go(&mats[..mid]) + go(&mats[mid..])
            }
        }
    }
    go(mats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{min_eigenvalue, sample_correlation};
    use crate::seeding;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn random_returns(n: usize, t: usize, seed: u64) -> ReturnsMatrix {
        let mut rng = seeding::rng_for(seed, &[42]);
        ReturnsMatrix::new(DMatrix::from_fn(n, t, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    /// Correlated Gaussian returns with block ground truth: within-block `a`,
    /// cross-block `b`, two equal blocks.
    fn two_block_returns(n: usize, t: usize, a: f64, b: f64, seed: u64) -> (ReturnsMatrix, DMatrix<f64>) {
        let mut c_true = DMatrix::from_element(n, n, b);
        for i in 0..n {
            for j in 0..n {
                if (i < n / 2) == (j < n / 2) {
                    c_true[(i, j)] = a;
                }
            }
            c_true[(i, i)] = 1.0;
        }
        let chol = nalgebra::Cholesky::new(c_true.clone()).unwrap();
        let mut rng = seeding::rng_for(seed, &[43]);
        let g = DMatrix::from_fn(n, t, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let data = chol.l() * g;
        (ReturnsMatrix::new(data).unwrap(), c_true)
    }

    #[test]
    fn indices_depend_only_on_seed_bootstrap_and_t() {
        let a = bootstrap_indices(9, 3, 0, 20);
        let b = bootstrap_indices(9, 3, 0, 20);
        assert_eq!(a, b);
        assert_ne!(a, bootstrap_indices(9, 4, 0, 20));
        assert_ne!(a, bootstrap_indices(10, 3, 0, 20));
        assert!(a.iter().all(|&i| i < 20));
    }

    #[test]
    fn single_column_draw_is_the_identity() {
        assert_eq!(bootstrap_indices(5, 1, 0, 1), vec![0]);
    }

    #[test]
    fn bootstrap_columns_is_deterministic_and_column_preserving() {
        let r = random_returns(3, 12, 1);
        let spec = BootstrapSpec::new(4, 77).unwrap();
        let a = bootstrap_columns(&r, &spec, 2).unwrap();
        let b = bootstrap_columns(&r, &spec, 2).unwrap();
        assert_eq!(a.data(), b.data());
        // Every column of the copy is a column of the source.
        for j in 0..a.n_features() {
            let col = a.data().column(j);
            assert!((0..r.n_features()).any(|k| r.data().column(k) == col));
        }
        assert!(matches!(
            bootstrap_columns(&r, &spec, 5),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn column_frequencies_are_uniform() {
        // Chi-square goodness of fit over 10,000 index vectors of length t.
        let t = 8usize;
        let mut counts = vec![0f64; t];
        for b in 1..=10_000usize {
            for idx in bootstrap_indices(123, b, 0, t) {
                counts[idx] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        let expected = total / t as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c - expected) * (c - expected) / expected)
            .sum();
        let crit = ChiSquared::new((t - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(stat < crit, "chi-square {stat:.2} >= {crit:.2}");
    }

    #[test]
    fn identity_bootstrap_matches_direct_hcal() {
        let r = random_returns(5, 18, 3);
        let (corr, cov) = bahc_filter_identity(&r).unwrap();

        let direct = hcal_filter(&sample_correlation(&r).unwrap());
        assert_eq!(corr.values(), direct.values());

        let sample = sample_covariance(&r);
        for i in 0..5 {
            for j in 0..5 {
                let expected = direct.values()[(i, j)]
                    * (sample.values()[(i, i)] * sample.values()[(j, j)]).sqrt();
                assert_abs_diff_eq!(cov.values()[(i, j)], expected, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn filtered_estimators_are_deterministic() {
        let r = random_returns(6, 15, 4);
        let spec = BootstrapSpec::new(12, 50).unwrap();
        let (c1, s1) = bahc_filter(&r, &spec).unwrap();
        let (c2, s2) = bahc_filter(&r, &spec).unwrap();
        assert_eq!(c1.values(), c2.values());
        assert_eq!(s1.values(), s2.values());
    }

    #[test]
    fn unit_diagonal_and_psd() {
        // t comfortably above n keeps all merge heights below one, inside
        // the regime where the filtered matrices are PSD by construction.
        let (r, _) = two_block_returns(7, 60, 0.5, 0.15, 5);
        let spec = BootstrapSpec::new(25, 8).unwrap();
        let (corr, cov) = bahc_filter(&r, &spec).unwrap();
        for i in 0..7 {
            assert_eq!(corr.values()[(i, i)], 1.0);
        }
        assert!(min_eigenvalue(corr.as_sym()).unwrap() >= -corr.as_sym().psd_tolerance());
        assert!(min_eigenvalue(cov.as_sym()).unwrap() >= -cov.as_sym().psd_tolerance());
    }

    #[test]
    fn recovers_block_ground_truth() {
        let (a, b) = (0.7, 0.2);
        let (r, c_true) = two_block_returns(6, 4000, a, b, 21);
        let spec = BootstrapSpec::new(100, 9).unwrap();
        let corr = bahc_correlation(&r, &spec).unwrap();

        let c_true = CorrelationMatrix::new(SymmetricMatrix::new(c_true).unwrap()).unwrap();
        let target = hcal_filter(&c_true);
        for i in 0..6 {
            for j in 0..6 {
                assert!(
                    (corr.values()[(i, j)] - target.values()[(i, j)]).abs() < 0.05,
                    "entry ({i}, {j}): {} vs {}",
                    corr.values()[(i, j)],
                    target.values()[(i, j)]
                );
            }
        }
    }

    #[test]
    fn covariance_diagonal_averages_bootstrap_variances() {
        let r = random_returns(4, 9, 6);
        let m = 16;
        let spec = BootstrapSpec::new(m, 33).unwrap();
        let cov = bahc_covariance(&r, &spec).unwrap();

        // Independent loop: rebuild each accepted draw and average row variances.
        let t = r.n_features();
        let mut expected = vec![0.0; 4];
        for b in 1..=m {
            let mut attempt = 0;
            let idx = loop {
                let idx = bootstrap_indices(33, b, attempt, t);
                let copy = resample(&r, &idx);
                if (0..4).all(|i| !copy.row_is_constant(i)) {
                    break idx;
                }
                attempt += 1;
            };
            for i in 0..4 {
                let vals: Vec<f64> = idx.iter().map(|&h| r.data()[(i, h)]).collect();
                let mean = vals.iter().sum::<f64>() / t as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
                expected[i] += var / m as f64;
            }
        }
        for i in 0..4 {
            assert_abs_diff_eq!(cov.values()[(i, i)], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_draws_are_redrawn() {
        // Row 0 takes a single distinct value in 3 of 4 columns: many draws
        // produce a constant row and must be silently replaced.
        let data = DMatrix::from_row_slice(2, 4, &[5.0, 5.0, 5.0, 7.0, 0.1, -0.2, 0.3, 0.4]);
        let r = ReturnsMatrix::new(data).unwrap();
        let spec = BootstrapSpec::new(40, 2).unwrap();
        let (corr, _) = bahc_filter(&r, &spec).unwrap();
        assert!(corr.values()[(0, 1)].is_finite());
        // Some first draws must indeed have been degenerate for this data.
        let degenerate_first_draws = (1..=40)
            .filter(|&b| {
                let idx = bootstrap_indices(2, b, 0, 4);
                idx.iter().all(|&h| r.data()[(0, h)] == 5.0)
            })
            .count();
        assert!(degenerate_first_draws > 0);
    }

    #[test]
    fn constant_row_exhausts_redraws() {
        let data = DMatrix::from_row_slice(2, 5, &[1.0, 1.0, 1.0, 1.0, 1.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        let r = ReturnsMatrix::new(data).unwrap();
        let spec = BootstrapSpec::new(2, 3).unwrap();
        assert!(matches!(
            bahc_filter(&r, &spec),
            Err(Error::DegenerateBootstrap { .. })
        ));
    }

    #[test]
    fn estimator_variance_decays_as_one_over_m() {
        let r = random_returns(6, 12, 7);
        let ms = [8usize, 32, 128];
        let seeds = 32u64;
        let mut points = Vec::new();
        for &m in &ms {
            // Entrywise variance across independent seeds, averaged over the
            // strict lower triangle.
            let samples: Vec<CorrelationMatrix> = (0..seeds)
                .map(|s| {
                    bahc_correlation(&r, &BootstrapSpec::new(m, 1000 + s).unwrap()).unwrap()
                })
                .collect();
            let mut var_sum = 0.0;
            let mut count = 0;
            for i in 0..6 {
                for j in 0..i {
                    let vals: Vec<f64> = samples.iter().map(|c| c.values()[(i, j)]).collect();
                    let mean = vals.iter().sum::<f64>() / seeds as f64;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / (seeds - 1) as f64;
                    var_sum += var;
                    count += 1;
                }
            }
            points.push(((m as f64).ln(), (var_sum / count as f64).ln()));
        }
        let slope = regression_slope(&points);
        assert!(
            (slope + 1.0).abs() <= 0.2,
            "variance decay slope {slope:.3}, expected -1 +/- 0.2"
        );
    }

    fn regression_slope(points: &[(f64, f64)]) -> f64 {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    }
}
