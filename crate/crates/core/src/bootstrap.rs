//! Block bootstrap resampling, full-refit replicate forecasts, percentile
//! intervals and coverage diagnostics.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};
use crate::models::{fit, FittedModel, ModelSpec, TrainingSet};
use crate::rng::{stream, Domain, IndexDraw};
use crate::stats::{quantile_sorted, sorted};

/// Quantile rule used for every interval: linear interpolation between
/// order statistics at position `(B - 1) q` (Hyndman-Fan type 7).
pub const QUANTILE_CONVENTION: &str = "linear interpolation, h = (B-1)q (type 7)";

/// Default block length `ceil(n^(1/3))`.
pub fn default_block_length(n: usize) -> usize {
    ((n as f64).cbrt().ceil() as usize).max(1)
}

/// Output row indices plus the output positions where blocks start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResamplePlan {
    pub indices: Vec<usize>,
    pub block_starts: Vec<usize>,
}

impl ResamplePlan {
    pub fn mean_block_length(&self) -> f64 {
        self.indices.len() as f64 / self.block_starts.len() as f64
    }
}

/// Moving-block indices: `ceil(n/L)` blocks starting uniformly in
/// `[0, n-L]`, concatenated and truncated to `n`.
pub fn moving_block_indices(n: usize, l: usize, rng: &mut impl IndexDraw) -> Result<ResamplePlan> {
    if n == 0 {
        return Err(NowcastError::EmptyInput("rows"));
    }
    if l == 0 || l > n {
        return Err(NowcastError::InvalidBootstrap(format!(
            "block length {l} outside [1, {n}]"
        )));
    }
    let mut indices = Vec::with_capacity(n);
    let mut block_starts = Vec::new();
    while indices.len() < n {
        let start = rng.uniform_index(n - l + 1);
        block_starts.push(indices.len());
        indices.extend((start..start + l).take(n - indices.len()));
    }
    Ok(ResamplePlan {
        indices,
        block_starts,
    })
}

/// Stationary bootstrap indices: restart at a uniform index with
/// probability `p`, else continue circularly.
pub fn stationary_indices(n: usize, p: f64, rng: &mut impl IndexDraw) -> Result<ResamplePlan> {
    if n == 0 {
        return Err(NowcastError::EmptyInput("rows"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(NowcastError::InvalidBootstrap(format!(
            "restart probability {p} outside (0, 1]"
        )));
    }
    let mut indices = Vec::with_capacity(n);
    let mut block_starts = Vec::new();
    for t in 0..n {
        // p = 1 draws nothing but the restart index, matching L = 1 moving blocks
        let restart = t == 0 || p >= 1.0 || rng.unit() < p;
        let i = if restart {
            block_starts.push(t);
            rng.uniform_index(n)
        } else {
            (indices[t - 1] + 1) % n
        };
        indices.push(i);
    }
    Ok(ResamplePlan {
        indices,
        block_starts,
    })
}

pub fn moving_block_resample<T: Clone>(
    rows: &[T],
    l: usize,
    rng: &mut impl IndexDraw,
) -> Result<Vec<T>> {
    let plan = moving_block_indices(rows.len(), l, rng)?;
    Ok(plan.indices.iter().map(|&i| rows[i].clone()).collect())
}

pub fn stationary_resample<T: Clone>(
    rows: &[T],
    p: f64,
    rng: &mut impl IndexDraw,
) -> Result<Vec<T>> {
    let plan = stationary_indices(rows.len(), p, rng)?;
    Ok(plan.indices.iter().map(|&i| rows[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Fixed block length; `None` means `ceil(n^(1/3))`.
    MovingBlock { block_length: Option<usize> },
    /// Restart probability; `None` means `1 / ceil(n^(1/3))`.
    Stationary { p: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleUnit {
    #[default]
    ObservedRowVectors,
    Residuals,
}

/// What a replicate forecast represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// Refit forecast plus one draw from the refit's in-sample residuals,
    /// so the interval covers the outcome, not just the estimate.
    #[default]
    Predictive,
    /// Refit forecast only (parameter uncertainty).
    Estimation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockBootstrapConfig {
    pub scheme: Scheme,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub unit: ResampleUnit,
    #[serde(default)]
    pub interval: IntervalKind,
}

impl BlockBootstrapConfig {
    pub fn moving_block(block_length: Option<usize>, replicates: usize, seed: u64) -> Self {
        Self {
            scheme: Scheme::MovingBlock { block_length },
            replicates,
            seed,
            unit: ResampleUnit::ObservedRowVectors,
            interval: IntervalKind::Predictive,
        }
    }

    pub fn with_interval(mut self, kind: IntervalKind) -> Self {
        self.interval = kind;
        self
    }

    pub fn with_unit(mut self, unit: ResampleUnit) -> Self {
        self.unit = unit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(NowcastError::InvalidBootstrap(
                "replicates must be >= 1".into(),
            ));
        }
        match self.scheme {
            Scheme::MovingBlock {
                block_length: Some(0),
            } => Err(NowcastError::InvalidBootstrap(
                "block length must be >= 1".into(),
            )),
            Scheme::Stationary { p: Some(p) } if !(p > 0.0 && p <= 1.0) => Err(
                NowcastError::InvalidBootstrap(format!("restart probability {p} outside (0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    /// Block length (or expected length) used on `n` rows.
    pub fn resolved_length(&self, n: usize) -> f64 {
        match self.scheme {
            Scheme::MovingBlock { block_length } => {
                block_length.unwrap_or_else(|| default_block_length(n)) as f64
            }
            Scheme::Stationary { p } => 1.0 / p.unwrap_or(1.0 / default_block_length(n) as f64),
        }
    }

    pub fn indices(&self, n: usize, rng: &mut impl IndexDraw) -> Result<ResamplePlan> {
        match self.scheme {
            Scheme::MovingBlock { block_length } => moving_block_indices(
                n,
                block_length.unwrap_or_else(|| default_block_length(n)),
                rng,
            ),
            Scheme::Stationary { p } => {
                stationary_indices(n, p.unwrap_or(1.0 / default_block_length(n) as f64), rng)
            }
        }
    }
}

/// Seed handed to the model refit of replicate `b`.
pub fn replicate_seed(seed: u64, b: usize) -> u64 {
    use rand::RngCore;
    stream(seed, Domain::Init, b as u64 + 1).next_u64()
}

/// Training rows for replicate `b`.
pub fn replicate_training_set(
    spec: &ModelSpec,
    ts: &TrainingSet,
    point: Option<&FittedModel>,
    cfg: &BlockBootstrapConfig,
    b: usize,
) -> Result<TrainingSet> {
    let mut rng = stream(cfg.seed, Domain::Resample, b as u64);
    let plan = cfg.indices(ts.len(), &mut rng)?;
    match cfg.unit {
        ResampleUnit::ObservedRowVectors => Ok(ts.select(&plan.indices)),
        ResampleUnit::Residuals => {
            let owned;
            let model = match point {
                Some(m) => m,
                None => {
                    owned = fit(spec, ts)?;
                    &owned
                }
            };
            let fitted = model.fitted_values();
            let resid: Vec<f64> = ts.y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
            let y = fitted
                .iter()
                .zip(&plan.indices)
                .map(|(f, &i)| f + resid[i])
                .collect();
            Ok(ts.with_targets(y))
        }
    }
}

/// Replicate forecast from a refit model under `cfg.interval`.
pub fn replicate_forecast(model: &FittedModel, cfg: &BlockBootstrapConfig, b: usize) -> f64 {
    let point = model.nowcast();
    match cfg.interval {
        IntervalKind::Estimation => point,
        IntervalKind::Predictive => {
            let fitted = model.fitted_values();
            let resid: Vec<f64> = model
                .train_y
                .iter()
                .zip(&fitted)
                .map(|(a, f)| a - f)
                .collect();
            if resid.is_empty() {
                return point;
            }
            let m = resid.iter().sum::<f64>() / resid.len() as f64;
            let mut rng = stream(cfg.seed, Domain::Innovation, b as u64);
            point + resid[rng.uniform_index(resid.len())] - m
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSet<T> {
    /// `(replicate index, value)` in index order.
    pub values: Vec<(usize, T)>,
    pub failures: Vec<ReplicateFailure>,
    pub block_length: f64,
}

/// Refits `spec` on every replicate and maps each refit through `f`.
/// Failed replicates are recorded; more than 10% failures is an error.
pub fn run_replicates<T, F>(
    spec: &ModelSpec,
    ts: &TrainingSet,
    cfg: &BlockBootstrapConfig,
    f: F,
) -> Result<ReplicateSet<T>>
where
    T: Send,
    F: Fn(&FittedModel, usize) -> Result<T> + Sync,
{
    cfg.validate()?;
    if ts.is_empty() {
        return Err(NowcastError::EmptyInput("training rows"));
    }
    let point = match cfg.unit {
        ResampleUnit::Residuals => Some(fit(spec, ts)?),
        ResampleUnit::ObservedRowVectors => None,
    };
    let results: Vec<Result<T>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let rts = replicate_training_set(spec, ts, point.as_ref(), cfg, b)?;
            let rspec = spec.clone().with_seed(replicate_seed(spec.seed, b));
            let model = fit(&rspec, &rts)?;
            f(&model, b)
        })
        .collect();
    let mut values = Vec::new();
    let mut failures = Vec::new();
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => values.push((b, v)),
            Err(e) => {
                log::warn!("bootstrap replicate {b} of {} failed: {e}", spec.id);
                failures.push(ReplicateFailure {
                    index: b,
                    reason: e.to_string(),
                });
            }
        }
    }
    if failures.len() * 10 > cfg.replicates {
        return Err(NowcastError::ReplicateFailures {
            failed: failures.len(),
            total: cfg.replicates,
        });
    }
    Ok(ReplicateSet {
        values,
        failures,
        block_length: cfg.resolved_length(ts.len()),
    })
}

/// Replicate forecasts (length `B` minus excluded failures).
pub fn bootstrap_forecast(
    spec: &ModelSpec,
    ts: &TrainingSet,
    cfg: &BlockBootstrapConfig,
) -> Result<ReplicateSet<f64>> {
    run_replicates(spec, ts, cfg, |m, b| Ok(replicate_forecast(m, cfg, b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub origin: Option<NaiveDate>,
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
    pub point: f64,
    /// `(q, value)` at q = 0.05, 0.10, ..., 0.95.
    pub quantiles: Vec<(f64, f64)>,
    pub replicates: usize,
    pub quantile_convention: String,
}

impl PredictionInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

pub fn percentile_interval(
    replicates: &[f64],
    alpha: f64,
    point: f64,
) -> Result<PredictionInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(NowcastError::InvalidBootstrap(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    if replicates.is_empty() || (alpha <= 0.10 && replicates.len() < 20) {
        return Err(NowcastError::InsufficientReplicates {
            required: 20,
            alpha,
            got: replicates.len(),
        });
    }
    let s = sorted(replicates);
    let quantiles = (1..20).map(|k| {
        let q = k as f64 / 20.0;
        (q, quantile_sorted(&s, q))
    });
    Ok(PredictionInterval {
        origin: None,
        alpha,
        lower: quantile_sorted(&s, alpha / 2.0),
        upper: quantile_sorted(&s, 1.0 - alpha / 2.0),
        point,
        quantiles: quantiles.collect(),
        replicates: s.len(),
        quantile_convention: QUANTILE_CONVENTION.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub window: (NaiveDate, NaiveDate),
    pub nominal: f64,
    pub empirical: f64,
    pub resolved: usize,
    pub mean_width: f64,
    pub width_series: Vec<(NaiveDate, f64)>,
    /// `(point - lower) / (upper - point)`; `None` when the upper arm is 0.
    pub asymmetry: Vec<(NaiveDate, Option<f64>)>,
}

/// Hit rate of `actuals` (aligned with `intervals`; `None` = unresolved).
pub fn coverage_report(
    intervals: &[PredictionInterval],
    actuals: &[Option<f64>],
) -> Result<CoverageReport> {
    if intervals.len() != actuals.len() {
        return Err(NowcastError::ShapeMismatch(
            "one actual per interval".into(),
        ));
    }
    let resolved: Vec<(&PredictionInterval, f64)> = intervals
        .iter()
        .zip(actuals)
        .filter_map(|(i, a)| a.map(|a| (i, a)))
        .collect();
    if resolved.is_empty() {
        return Err(NowcastError::EmptyInput("resolved origins"));
    }
    let date = |i: &PredictionInterval| i.origin.unwrap_or(NaiveDate::MIN);
    let hits = resolved.iter().filter(|(i, a)| i.contains(*a)).count();
    let widths: Vec<(NaiveDate, f64)> =
        resolved.iter().map(|(i, _)| (date(i), i.width())).collect();
    Ok(CoverageReport {
        window: (date(resolved[0].0), date(resolved[resolved.len() - 1].0)),
        nominal: 1.0 - resolved[0].0.alpha,
        empirical: hits as f64 / resolved.len() as f64,
        resolved: resolved.len(),
        mean_width: widths.iter().map(|w| w.1).sum::<f64>() / widths.len() as f64,
        asymmetry: resolved
            .iter()
            .map(|(i, _)| {
                let up = i.upper - i.point;
                (date(i), (up != 0.0).then(|| (i.point - i.lower) / up))
            })
            .collect(),
        width_series: widths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub block_length: usize,
    pub mean_width: f64,
    pub coverage: Option<f64>,
    /// Width differs from a neighbouring length's by more than 25%.
    pub flagged: bool,
}

/// Threshold on `max/min` of adjacent widths before a row is flagged.
pub const SWEEP_WIDTH_RATIO: f64 = 1.25;

/// Summarizes per-length results, flagging both rows of any adjacent pair
/// whose widths disagree by more than 25%.
pub fn sweep_table(rows: Vec<(usize, f64, Option<f64>)>) -> Vec<SweepRow> {
    let mut out: Vec<SweepRow> = rows
        .into_iter()
        .map(|(l, w, c)| SweepRow {
            block_length: l,
            mean_width: w,
            coverage: c,
            flagged: false,
        })
        .collect();
    for i in 1..out.len() {
        let (a, b) = (out[i - 1].mean_width, out[i].mean_width);
        let (lo, hi) = (a.min(b), a.max(b));
        let disagree = if lo <= 0.0 {
            hi > 0.0
        } else {
            hi / lo > SWEEP_WIDTH_RATIO
        };
        if disagree {
            out[i - 1].flagged = true;
            out[i].flagged = true;
        }
    }
    out
}

/// Interval width and coverage per block length over a set of backtest
/// origins, each given as its training rows and realized outcome. Lengths
/// longer than the shortest training set are dropped; no length is picked.
/// A stationary `cfg` is swept through `p = 1 / L`.
pub fn block_length_sweep(
    spec: &ModelSpec,
    origins: &[(TrainingSet, Option<f64>)],
    lengths: &[usize],
    cfg: &BlockBootstrapConfig,
    alpha: f64,
) -> Result<Vec<SweepRow>> {
    let n_min = origins
        .iter()
        .map(|(ts, _)| ts.len())
        .min()
        .ok_or(NowcastError::EmptyInput("sweep origins"))?;
    let admissible: Vec<usize> = lengths
        .iter()
        .copied()
        .filter(|&l| l >= 1 && l <= n_min)
        .collect();
    if admissible.is_empty() {
        return Err(NowcastError::InvalidBootstrap(format!(
            "no block length in {lengths:?} fits {n_min} rows"
        )));
    }
    let mut rows = Vec::with_capacity(admissible.len());
    for l in admissible {
        let mut c = *cfg;
        c.scheme = match cfg.scheme {
            Scheme::MovingBlock { .. } => Scheme::MovingBlock {
                block_length: Some(l),
            },
            Scheme::Stationary { .. } => Scheme::Stationary {
                p: Some(1.0 / l as f64),
            },
        };
        let mut intervals = Vec::with_capacity(origins.len());
        let mut outcomes = Vec::with_capacity(origins.len());
        for (ts, actual) in origins {
            let point = fit(spec, ts)?.nowcast();
            let reps = bootstrap_forecast(spec, ts, &c)?;
            let values: Vec<f64> = reps.values.iter().map(|v| v.1).collect();
            intervals.push(percentile_interval(&values, alpha, point)?);
            outcomes.push(*actual);
        }
        let mean_width =
            intervals.iter().map(PredictionInterval::width).sum::<f64>() / intervals.len() as f64;
        let coverage = coverage_report(&intervals, &outcomes)
            .ok()
            .map(|r| r.empirical);
        rows.push((l, mean_width, coverage));
    }
    Ok(sweep_table(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::ScriptedDraws;

    #[test]
    fn scripted_moving_block() {
        let mut d = ScriptedDraws::new(vec![1, 0], vec![]);
        let rows = moving_block_resample(&[1, 2, 3, 4], 2, &mut d).unwrap();
        assert_eq!(rows, vec![2, 3, 1, 2]);
    }

    #[test]
    fn full_length_block_is_identity() {
        let mut rng = stream(3, Domain::Resample, 0);
        let rows: Vec<i32> = (0..17).collect();
        assert_eq!(moving_block_resample(&rows, 17, &mut rng).unwrap(), rows);
    }

    #[test]
    fn circular_wrap() {
        // start at the last index, continue (unit 0.9 >= p), wraps to 0
        let mut d = ScriptedDraws::new(vec![3], vec![0.9]);
        let p = stationary_indices(4, 0.5, &mut d).unwrap();
        assert_eq!(p.indices, vec![3, 0, 1, 2]);
    }

    #[test]
    fn unit_restart_probability_matches_iid_blocks() {
        let a = stationary_indices(50, 1.0, &mut stream(5, Domain::Resample, 2)).unwrap();
        let b = moving_block_indices(50, 1, &mut stream(5, Domain::Resample, 2)).unwrap();
        assert_eq!(a.indices, b.indices);
    }

    #[test]
    fn interval_linear_convention() {
        let r: Vec<f64> = (1..=100).map(f64::from).collect();
        let i = percentile_interval(&r, 0.10, 50.0).unwrap();
        assert!((i.lower - 5.95).abs() < 1e-12);
        assert!((i.upper - 95.05).abs() < 1e-12);
        let c = percentile_interval(&[2.0; 30], 0.1, 2.0).unwrap();
        assert_eq!((c.lower, c.upper), (2.0, 2.0));
        assert!(matches!(
            percentile_interval(&[1.0; 19], 0.1, 1.0),
            Err(NowcastError::InsufficientReplicates { .. })
        ));
    }

    #[test]
    fn sweep_flags() {
        let t = sweep_table(vec![(4, 1.0, None), (5, 1.1, None), (6, 1.2, None)]);
        assert!(t.iter().all(|r| !r.flagged));
        let t = sweep_table(vec![(1, 1.0, None), (40, 0.0, None)]);
        assert!(t.iter().all(|r| r.flagged));
    }
}
