//! Experiment engine: price ingestion, windowed simulations, synthetic data
//! with a planted nested-block correlation, per-method metric evaluation and
//! aggregation.
//!
//! One simulation draws an in-sample window of `t_in` return observations
//! followed immediately by `t_out` out-of-sample observations, picks
//! `n_assets` complete assets at random, filters the in-sample window with
//! each configured method and scores it against the out-of-sample estimates.
//! Simulations are independent and run in parallel; all randomness is keyed
//! by `(seed, sim_id)`, so results do not depend on the thread count.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::baselines::{apply_filter, FilterMethod};
use crate::error::{Error, Result};
use crate::matrix::{
    eigendecompose, frobenius_corr, frobenius_cov, sample_correlation, sample_covariance,
    CorrelationMatrix, CovarianceMatrix, ReturnsMatrix, SymmetricMatrix,
};
use crate::portfolio::{min_variance_long_only, min_variance_long_short, realized_risk};
use crate::seeding::{self, stream, sub_seed};
use crate::spectral::{eigenvector_stability, oracle, residues, StabilityMode};

/// Prices of `n` assets over `T + 1` ordered dates. Missing observations are
/// stored as NaN; present prices must be strictly positive.
#[derive(Debug, Clone)]
pub struct PriceSeries {
    dates: Vec<String>,
    tickers: Vec<String>,
    prices: DMatrix<f64>,
}

impl PriceSeries {
    /// `prices` is `n x (T+1)`, row per ticker, column per date. Dates must be
    /// strictly increasing; present prices strictly positive.
    pub fn new(dates: Vec<String>, tickers: Vec<String>, prices: DMatrix<f64>) -> Result<Self> {
        if prices.nrows() != tickers.len() || prices.ncols() != dates.len() {
            return Err(Error::InvalidInput(format!(
                "{} tickers x {} dates does not match a {}x{} price matrix",
                tickers.len(),
                dates.len(),
                prices.nrows(),
                prices.ncols()
            )));
        }
        if dates.len() < 2 {
            return Err(Error::InvalidInput("need at least two dates".into()));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("dates must be strictly increasing".into()));
        }
        for i in 0..prices.nrows() {
            for k in 0..prices.ncols() {
                let v = prices[(i, k)];
                if !v.is_nan() && v <= 0.0 {
                    return Err(Error::NonpositivePrice {
                        asset: i,
                        column: k,
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            dates,
            tickers,
            prices,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.prices.nrows()
    }

    /// Number of return observations, one fewer than dates.
    pub fn n_returns(&self) -> usize {
        self.dates.len() - 1
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    fn asset_complete(&self, asset: usize, first_col: usize, last_col: usize) -> bool {
        (first_col..=last_col).all(|k| self.prices[(asset, k)].is_finite())
    }
}

/// Metrics the harness can evaluate per simulation and method. Lower is
/// better for every one of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    RealizedRiskLs,
    RealizedRiskLo,
    FrobCorr,
    FrobCov,
    OracleStabilityCorr,
    OracleStabilityCov,
    EpsHi,
    EpsLow,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::RealizedRiskLs,
        Metric::RealizedRiskLo,
        Metric::FrobCorr,
        Metric::FrobCov,
        Metric::OracleStabilityCorr,
        Metric::OracleStabilityCov,
        Metric::EpsHi,
        Metric::EpsLow,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::RealizedRiskLs => "realized_risk_ls",
            Metric::RealizedRiskLo => "realized_risk_lo",
            Metric::FrobCorr => "frob_corr",
            Metric::FrobCov => "frob_cov",
            Metric::OracleStabilityCorr => "oracle_stability_corr",
            Metric::OracleStabilityCov => "oracle_stability_cov",
            Metric::EpsHi => "eps_hi",
            Metric::EpsLow => "eps_low",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Metric::ALL
            .iter()
            .copied()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown metric '{name}'")))
    }
}

/// Full configuration of one windowed experiment.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    /// Calibration window length in return observations.
    pub t_in: usize,
    /// Test window length; 42 mirrors roughly two trading months.
    pub t_out: usize,
    /// Assets drawn per simulation.
    pub n_assets: usize,
    /// Number of independent simulations.
    pub n_sims: usize,
    /// Master seed; every simulation derives its own stream from it.
    pub seed: u64,
    pub methods: Vec<FilterMethod>,
    pub metrics: Vec<Metric>,
    /// When set, the first out-of-sample date must be at or after this label.
    pub earliest_out_start: Option<String>,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_in < 2 || self.t_out < 2 {
            return Err(Error::InvalidInput(format!(
                "window lengths must be >= 2, got t_in={} t_out={}",
                self.t_in, self.t_out
            )));
        }
        if self.n_assets < 2 {
            return Err(Error::InvalidInput("n_assets must be >= 2".into()));
        }
        if self.n_sims == 0 {
            return Err(Error::InvalidInput("n_sims must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("method list is empty".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidInput("metric list is empty".into()));
        }
        Ok(())
    }
}

/// One scored quantity: a simulation, a method, a metric, a value or NA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub sim_id: u64,
    pub window_start: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub method: String,
    pub metric: String,
    /// `None` records an explicit NA (method or metric failed on this window).
    pub value: Option<f64>,
}

/// Returns `r_k = p_k / p_{k-1} - 1` for a complete price series.
pub fn prices_to_returns(p: &PriceSeries) -> Result<ReturnsMatrix> {
    let n = p.n_assets();
    let t = p.n_returns();
    let prices = p.prices();
    for i in 0..n {
        for k in 0..=t {
            if !prices[(i, k)].is_finite() {
                return Err(Error::InvalidInput(format!(
                    "missing price for asset {i} at column {k}; select complete assets first"
                )));
            }
        }
    }
    let data = DMatrix::from_fn(n, t, |i, k| prices[(i, k + 1)] / prices[(i, k)] - 1.0);
    ReturnsMatrix::with_labels(data, p.tickers().to_vec())
}

/// An in/out window pair drawn by [`sample_window`].
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub r_in: ReturnsMatrix,
    pub r_out: ReturnsMatrix,
    /// Index of the first in-sample return observation.
    pub window_start: usize,
    /// Source rows of the selected assets.
    pub asset_indices: Vec<usize>,
}

/// Draws the calibration/test windows for one simulation: a uniformly random
/// admissible start day and a uniform selection of `n_assets` assets with
/// complete data over both windows. Deterministic per `(seed, sim_id)`.
pub fn sample_window(p: &PriceSeries, spec: &SimulationSpec, sim_id: u64) -> Result<WindowSample> {
    let total = spec.t_in + spec.t_out;
    let t_available = p.n_returns();
    if t_available < total {
        return Err(Error::InsufficientData(format!(
            "{t_available} return observations for a window of {total}"
        )));
    }

    // Return observation k spans price columns k..k+1 and is realized on
    // dates[k + 1]; the first out-of-sample observation of a window starting
    // at s is realized on dates[s + t_in + 1].
    let min_start = match &spec.earliest_out_start {
        None => 0,
        Some(earliest) => {
            let found = (0..=t_available - total)
                .find(|&s| p.dates()[s + spec.t_in + 1].as_str() >= earliest.as_str());
            match found {
                Some(s) => s,
                None => {
                    return Err(Error::InsufficientData(format!(
                        "no admissible window with out-of-sample start >= {earliest}"
                    )))
                }
            }
        }
    };
    let n_starts = t_available - total - min_start + 1;

    let mut rng = seeding::rng_for(spec.seed, &[stream::WINDOW, sim_id]);
    let start = min_start + rng.random_range(0..n_starts as u64) as usize;

    // Assets with complete prices over both windows (price columns
    // start..=start+total).
    let complete: Vec<usize> = (0..p.n_assets())
        .filter(|&a| p.asset_complete(a, start, start + total))
        .collect();
    if complete.len() < spec.n_assets {
        return Err(Error::InsufficientData(format!(
            "{} complete assets at window {start}, need {}",
            complete.len(),
            spec.n_assets
        )));
    }

    // Uniform selection without replacement (partial Fisher-Yates).
    let mut pool = complete;
    for i in 0..spec.n_assets {
        let j = i + rng.random_range(0..(pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut selected: Vec<usize> = pool[..spec.n_assets].to_vec();
    selected.sort_unstable();

    let slice_returns = |first_ret: usize, len: usize| -> Result<ReturnsMatrix> {
        let data = DMatrix::from_fn(spec.n_assets, len, |i, k| {
            let a = selected[i];
            let col = first_ret + k;
            p.prices()[(a, col + 1)] / p.prices()[(a, col)] - 1.0
        });
        let labels = selected.iter().map(|&a| p.tickers()[a].clone()).collect();
        ReturnsMatrix::with_labels(data, labels)
    };

    Ok(WindowSample {
        r_in: slice_returns(start, spec.t_in)?,
        r_out: slice_returns(start + spec.t_in, spec.t_out)?,
        window_start: start,
        asset_indices: selected,
    })
}

/// Gaussian returns with an exact nested-block population correlation.
///
/// The hierarchy is a balanced binary tree with `depth` levels:
/// `rho_levels[0]` is the correlation inside the deepest blocks and each
/// coarser level takes the next (strictly smaller) entry, down to
/// `rho_levels[depth-1]` between the two halves of the whole set. Returns the
/// sampled returns together with the planted correlation matrix.
pub fn synth_hierarchical(
    n: usize,
    t: usize,
    depth: usize,
    rho_levels: &[f64],
    seed: u64,
) -> Result<(ReturnsMatrix, CorrelationMatrix)> {
    if n < 2 || t < 2 {
        return Err(Error::InvalidInput(format!(
            "synthetic data needs n >= 2 and t >= 2, got n={n} t={t}"
        )));
    }
    if depth == 0 || rho_levels.len() != depth {
        return Err(Error::InvalidInput(format!(
            "depth {depth} requires exactly {depth} correlation levels, got {}",
            rho_levels.len()
        )));
    }
    for w in rho_levels.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::InvalidInput(
                "correlation levels must be strictly decreasing".into(),
            ));
        }
    }
    if rho_levels.iter().any(|&r| !(0.0..1.0).contains(&r)) {
        return Err(Error::InvalidInput(
            "correlation levels must lie in [0, 1)".into(),
        ));
    }
    if n < 1 << (depth - 1) {
        return Err(Error::InvalidInput(format!(
            "n={n} too small for {} leaf blocks",
            1 << (depth - 1)
        )));
    }

    let mut c = DMatrix::zeros(n, n);
    fill_blocks(&mut c, 0, n, depth - 1, rho_levels);
    for i in 0..n {
        c[(i, i)] = 1.0;
    }
    let c_true = CorrelationMatrix::new(SymmetricMatrix::from_exact(c))?;

    let chol = nalgebra::Cholesky::new(c_true.values().clone()).ok_or_else(|| {
        Error::InvalidInput("planted correlation matrix is not positive definite".into())
    })?;
    let mut rng = seeding::rng_for(seed, &[stream::SYNTH]);
    let mut g = DMatrix::zeros(n, t);
    for j in 0..t {
        for i in 0..n {
            g[(i, j)] = rng.sample(rand_distr::StandardNormal);
        }
    }
    let data = chol.l() * g;
    Ok((ReturnsMatrix::new(data)?, c_true))
}

/// Writes `rho_levels[level]` into every pair of `[lo, hi)`, then splits the
/// range into balanced halves and recurses with the next (larger) level.
fn fill_blocks(c: &mut DMatrix<f64>, lo: usize, hi: usize, level: usize, rho_levels: &[f64]) {
    let rho = rho_levels[level];
    for i in lo..hi {
        for j in lo..i {
            c[(i, j)] = rho;
            c[(j, i)] = rho;
        }
    }
    if level == 0 || hi - lo < 2 {
        return;
    }
    let mid = lo + (hi - lo).div_ceil(2);
    fill_blocks(c, lo, mid, level - 1, rho_levels);
    fill_blocks(c, mid, hi, level - 1, rho_levels);
}

/// Data source for [`run_experiment`].
#[derive(Debug, Clone)]
pub enum ExperimentData {
    /// Real price history; windows are drawn by [`sample_window`].
    Prices(PriceSeries),
    /// Fresh synthetic returns per simulation, `n_assets x (t_in + t_out)`.
    Synthetic(SynthConfig),
}

/// Shape of the planted hierarchy for synthetic experiments.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub depth: usize,
    pub rho_levels: Vec<f64>,
}

/// Runs the full experiment: every simulation scores every configured method
/// on every configured metric. Failures at the method or metric level are
/// recorded as explicit NA records, never dropped, so the output always holds
/// exactly `n_sims * |methods| * |metrics|` records, ordered by simulation.
pub fn run_experiment(spec: &SimulationSpec, data: &ExperimentData) -> Result<Vec<ExperimentRecord>> {
    spec.validate()?;
    let per_sim: Vec<Vec<ExperimentRecord>> = (0..spec.n_sims as u64)
        .into_par_iter()
        .map(|sim_id| simulate_one(spec, data, sim_id))
        .collect::<Result<_>>()?;
    Ok(per_sim.into_iter().flatten().collect())
}

fn simulate_one(
    spec: &SimulationSpec,
    data: &ExperimentData,
    sim_id: u64,
) -> Result<Vec<ExperimentRecord>> {
    let (r_in, r_out, window_start) = match data {
        ExperimentData::Prices(p) => {
            let w = sample_window(p, spec, sim_id)?;
            (w.r_in, w.r_out, w.window_start)
        }
        ExperimentData::Synthetic(cfg) => {
            let (r, _) = synth_hierarchical(
                spec.n_assets,
                spec.t_in + spec.t_out,
                cfg.depth,
                &cfg.rho_levels,
                sub_seed(spec.seed, &[stream::SYNTH, sim_id]),
            )?;
            let x = r.data();
            let r_in = ReturnsMatrix::with_labels(
                x.columns(0, spec.t_in).into_owned(),
                r.labels().to_vec(),
            )?;
            let r_out = ReturnsMatrix::with_labels(
                x.columns(spec.t_in, spec.t_out).into_owned(),
                r.labels().to_vec(),
            )?;
            (r_in, r_out, 0)
        }
    };

    let methods: Vec<FilterMethod> = spec
        .methods
        .iter()
        .map(|m| per_sim_method(m, sim_id))
        .collect();
    let mut records = evaluate_window(&r_in, &r_out, &methods, &spec.metrics);
    for (record, original) in records
        .iter_mut()
        .zip(spec.methods.iter().flat_map(|m| {
            std::iter::repeat(m).take(spec.metrics.len())
        }))
    {
        record.sim_id = sim_id;
        record.window_start = window_start;
        record.method = original.tag().to_string();
    }
    Ok(records)
}

/// Scores every method on every metric for one fixed in/out window split.
/// Method- or metric-level failures appear as NA records.
pub fn evaluate_window(
    r_in: &ReturnsMatrix,
    r_out: &ReturnsMatrix,
    methods: &[FilterMethod],
    metrics: &[Metric],
) -> Vec<ExperimentRecord> {
    let sigma_out = sample_covariance(r_out);
    let c_out = sample_correlation(r_out).ok();

    let mut records = Vec::with_capacity(methods.len() * metrics.len());
    for method in methods {
        let filtered = apply_filter(method, r_in).ok();
        let scores = filtered
            .as_ref()
            .map(|(cov_f, corr_f)| score_method(cov_f, corr_f, &sigma_out, c_out.as_ref(), metrics));
        for (k, metric) in metrics.iter().enumerate() {
            let value = scores
                .as_ref()
                .and_then(|s| s[k])
                .filter(|v| v.is_finite());
            records.push(ExperimentRecord {
                sim_id: 0,
                window_start: 0,
                t_in: r_in.n_features(),
                t_out: r_out.n_features(),
                method: method.tag().to_string(),
                metric: metric.name().to_string(),
                value,
            });
        }
    }
    records
}

/// Re-keys seeded methods on the simulation id, so each window uses
/// independent draws while records stay deterministic.
fn per_sim_method(method: &FilterMethod, sim_id: u64) -> FilterMethod {
    match *method {
        FilterMethod::Bahc { m, seed } => FilterMethod::Bahc {
            m,
            seed: sub_seed(seed, &[stream::BOOTSTRAP, sim_id]),
        },
        FilterMethod::Cv { folds, seed } => FilterMethod::Cv {
            folds,
            seed: sub_seed(seed, &[stream::CV_FOLDS, sim_id]),
        },
        other => other,
    }
}

fn score_method(
    cov_f: &CovarianceMatrix,
    corr_f: &CorrelationMatrix,
    sigma_out: &CovarianceMatrix,
    c_out: Option<&CorrelationMatrix>,
    metrics: &[Metric],
) -> Vec<Option<f64>> {
    let needs_corr_eig = metrics.iter().any(|m| {
        matches!(
            m,
            Metric::OracleStabilityCorr | Metric::EpsHi | Metric::EpsLow
        )
    });
    let eig_corr = if needs_corr_eig {
        eigendecompose(corr_f.as_sym()).ok()
    } else {
        None
    };
    let eig_cov = if metrics.contains(&Metric::OracleStabilityCov) {
        eigendecompose(cov_f.as_sym()).ok()
    } else {
        None
    };
    let oracle_z = match (&eig_corr, c_out) {
        (Some(e), Some(c)) => oracle(e, c.as_sym()).ok().map(|o| o.oracle_eigenvalues),
        _ => None,
    };

    metrics
        .iter()
        .map(|metric| match metric {
            Metric::RealizedRiskLs => min_variance_long_short(cov_f)
                .ok()
                .and_then(|w| realized_risk(&w, sigma_out).ok()),
            Metric::RealizedRiskLo => min_variance_long_only(cov_f)
                .ok()
                .and_then(|w| realized_risk(&w, sigma_out).ok()),
            Metric::FrobCorr => c_out
                .and_then(|c| c.as_sym().diff(corr_f.as_sym()).ok())
                .map(|d| frobenius_corr(&d)),
            Metric::FrobCov => sigma_out
                .as_sym()
                .diff(cov_f.as_sym())
                .ok()
                .map(|d| frobenius_cov(&d)),
            Metric::OracleStabilityCorr => match (&eig_corr, c_out) {
                (Some(e), Some(c)) => {
                    eigenvector_stability(e, c.as_sym(), StabilityMode::Correlation).ok()
                }
                _ => None,
            },
            Metric::OracleStabilityCov => eig_cov.as_ref().and_then(|e| {
                eigenvector_stability(e, sigma_out.as_sym(), StabilityMode::Covariance).ok()
            }),
            Metric::EpsHi => match (&eig_corr, &oracle_z) {
                (Some(e), Some(z)) => residues(e.eigenvalues().as_slice(), z.as_slice())
                    .ok()
                    .map(|r| r.eps_hi),
                _ => None,
            },
            Metric::EpsLow => match (&eig_corr, &oracle_z) {
                (Some(e), Some(z)) => residues(e.eigenvalues().as_slice(), z.as_slice())
                    .ok()
                    .and_then(|r| r.eps_low.ok()),
                _ => None,
            },
        })
        .collect()
}

/// Aggregate of one `(t_in, method, metric)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub t_in: usize,
    pub method: String,
    pub metric: String,
    /// Simulations with a value.
    pub count: usize,
    /// Simulations recorded as NA.
    pub na_count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Fraction of simulations (both values present) where the BAHC value is
    /// strictly smaller than this method's. `None` when BAHC was not run.
    pub bahc_win_fraction: Option<f64>,
}

/// Aggregates records into per-`(t_in, method, metric)` rows, sorted by key.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    type Key = (usize, String, String);
    let mut groups: BTreeMap<Key, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.t_in, r.method.clone(), r.metric.clone()))
            .or_default()
            .push(r);
    }

    // BAHC values per (t_in, metric, sim) for win fractions.
    let mut bahc: BTreeMap<(usize, String, u64), f64> = BTreeMap::new();
    for r in records {
        if r.method == "bahc" {
            if let Some(v) = r.value {
                bahc.insert((r.t_in, r.metric.clone(), r.sim_id), v);
            }
        }
    }
    let bahc_present = records.iter().any(|r| r.method == "bahc");

    groups
        .into_iter()
        .map(|((t_in, method, metric), rows)| {
            let mut values: Vec<f64> = rows.iter().filter_map(|r| r.value).collect();
            let count = values.len();
            let na_count = rows.len() - count;
            let mean = if count > 0 {
                Some(values.iter().sum::<f64>() / count as f64)
            } else {
                None
            };
            let median = if count > 0 {
                values.sort_by(f64::total_cmp);
                Some(if count % 2 == 1 {
                    values[count / 2]
                } else {
                    0.5 * (values[count / 2 - 1] + values[count / 2])
                })
            } else {
                None
            };
            let bahc_win_fraction = if bahc_present {
                let mut wins = 0usize;
                let mut comparable = 0usize;
                for r in &rows {
                    if let (Some(v), Some(b)) = (
                        r.value,
                        bahc.get(&(t_in, metric.clone(), r.sim_id)).copied(),
                    ) {
                        comparable += 1;
                        if b < v {
                            wins += 1;
                        }
                    }
                }
                if comparable > 0 {
                    Some(wins as f64 / comparable as f64)
                } else {
                    None
                }
            } else {
                None
            };
            SummaryRow {
                t_in,
                method,
                metric,
                count,
                na_count,
                mean,
                median,
                bahc_win_fraction,
            }
        })
        .collect()
}
