//! Walk-forward evaluation: per-origin refits on point-in-time designs,
//! realized losses, benchmark domination and the leakage audit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};
use crate::models::{fit, FittedModel, ModelSpec, TrainingSet};
use crate::period::Period;
use crate::vintage::{design_at, target_values, DesignMatrix, ObservationLog, Recipe, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Expanding,
    /// Keep only the most recent `n` training rows.
    Rolling(usize),
}

impl Window {
    pub fn apply(self, ts: &TrainingSet) -> TrainingSet {
        match self {
            Window::Expanding => ts.clone(),
            Window::Rolling(n) => ts.tail(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFunction {
    Sqerr,
    Abserr,
}

impl LossFunction {
    pub fn eval(self, error: f64) -> f64 {
        match self {
            LossFunction::Sqerr => error * error,
            LossFunction::Abserr => error.abs(),
        }
    }
}

/// Which release of the target counts as the realized outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActualsVintage {
    First,
    #[default]
    Latest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPlan {
    pub recipe: Recipe,
    pub origins: Vec<NaiveDate>,
    pub window: Window,
    pub portfolio: Vec<ModelSpec>,
    pub benchmark_ids: Vec<String>,
    pub loss_functions: Vec<LossFunction>,
}

impl EvaluationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.origins.is_empty() {
            return Err(NowcastError::InvalidPlan("no origins".into()));
        }
        if self.origins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NowcastError::InvalidPlan(
                "origins must be strictly increasing".into(),
            ));
        }
        if self.portfolio.is_empty() {
            return Err(NowcastError::InvalidPlan("empty portfolio".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.portfolio {
            if !ids.insert(s.id.as_str()) {
                return Err(NowcastError::InvalidPlan(format!(
                    "duplicate model id {:?}",
                    s.id
                )));
            }
            if let Window::Rolling(n) = self.window {
                if n < s.min_rows() {
                    return Err(NowcastError::InvalidPlan(format!(
                        "rolling length {n} below the {} rows {} needs",
                        s.min_rows(),
                        s.id
                    )));
                }
            }
        }
        for b in &self.benchmark_ids {
            if !ids.contains(b.as_str()) {
                return Err(NowcastError::InvalidPlan(format!(
                    "benchmark {b:?} is not in the portfolio"
                )));
            }
        }
        self.recipe.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub origin: NaiveDate,
    pub model_id: String,
    pub target_period: Period,
    pub forecast: f64,
    pub training_rows: usize,
    pub training_window: (Period, Period),
}

/// An origin (and model, when the design itself was fine) that produced
/// no forecast, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub origin: NaiveDate,
    pub model_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WalkForward {
    pub records: Vec<ForecastRecord>,
    pub skips: Vec<Skip>,
}

impl WalkForward {
    pub fn record(&self, origin: NaiveDate, model_id: &str) -> Option<&ForecastRecord> {
        self.records
            .iter()
            .find(|r| r.origin == origin && r.model_id == model_id)
    }
}

/// Design at `origin` and the windowed training rows for `spec`.
pub fn training_set_at(
    log: &ObservationLog,
    recipe: &Recipe,
    window: Window,
    spec: &ModelSpec,
    origin: NaiveDate,
) -> Result<(DesignMatrix, TrainingSet)> {
    let design = design_at(log, recipe, origin)?;
    let ts = window.apply(&TrainingSet::from_design(spec, &design)?);
    Ok((design, ts))
}

/// Fits `spec` on the windowed design rows.
pub fn fit_on(design: &DesignMatrix, window: Window, spec: &ModelSpec) -> Result<FittedModel> {
    fit(
        spec,
        &window.apply(&TrainingSet::from_design(spec, design)?),
    )
}

pub fn run_walk_forward(plan: &EvaluationPlan, log: &ObservationLog) -> Result<WalkForward> {
    plan.validate()?;
    let per_origin: Vec<(Vec<ForecastRecord>, Vec<Skip>)> = plan
        .origins
        .par_iter()
        .map(|&origin| {
            let design = match design_at(log, &plan.recipe, origin) {
                Ok(d) => d,
                Err(e) => {
                    let skip = Skip {
                        origin,
                        model_id: None,
                        reason: e.to_string(),
                    };
                    return (Vec::new(), vec![skip]);
                }
            };
            let mut records = Vec::new();
            let mut skips = Vec::new();
            for spec in &plan.portfolio {
                match fit_on(&design, plan.window, spec) {
                    Ok(m) => records.push(ForecastRecord {
                        origin,
                        model_id: spec.id.clone(),
                        target_period: m.nowcast_period,
                        forecast: m.nowcast(),
                        training_rows: m.train_y.len(),
                        training_window: m.training_window,
                    }),
                    Err(e) => skips.push(Skip {
                        origin,
                        model_id: Some(spec.id.clone()),
                        reason: e.to_string(),
                    }),
                }
            }
            (records, skips)
        })
        .collect();
    let mut out = WalkForward::default();
    for (r, s) in per_origin {
        out.records.extend(r);
        out.skips.extend(s);
    }
    Ok(out)
}

/// Realized target values. `as_of` caps the vintage used (defaults to the
/// whole log); `First` takes each quarter's value from the earliest
/// vintage in which it can be computed.
pub fn actuals(
    log: &ObservationLog,
    recipe: &Recipe,
    vintage: ActualsVintage,
    as_of: Option<NaiveDate>,
) -> Result<BTreeMap<Period, f64>> {
    let last = log.latest_publication().ok_or(NowcastError::EmptyLog)?;
    let cap = as_of.map_or(last, |d| d.min(last));
    match vintage {
        ActualsVintage::Latest => target_values(&log.snapshot_at(cap)?, recipe),
        ActualsVintage::First => {
            let mut out = BTreeMap::new();
            for date in log
                .publication_dates(&recipe.target.series)
                .into_iter()
                .filter(|d| *d <= cap)
            {
                let Ok(snap) = log.snapshot_at(date) else {
                    continue;
                };
                let Ok(values) = target_values(&snap, recipe) else {
                    continue;
                };
                for (p, v) in values {
                    out.entry(p).or_insert(v);
                }
            }
            Ok(out)
        }
    }
}

pub fn rmsfe(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub fn mafe(errors: &[f64]) -> f64 {
    errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub rmsfe: f64,
    pub mafe: f64,
    pub n: usize,
}

/// Model x origin forecast errors for origins whose outcome is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub models: Vec<String>,
    pub origins: Vec<NaiveDate>,
    pub target_periods: Vec<Period>,
    pub actuals: Vec<f64>,
    /// `forecasts[m][o]`; `None` where the model skipped that origin.
    pub forecasts: Vec<Vec<Option<f64>>>,
}

impl LossTable {
    pub fn error(&self, m: usize, o: usize) -> Option<f64> {
        self.forecasts[m][o].map(|f| self.actuals[o] - f)
    }

    pub fn losses(&self, m: usize, loss: LossFunction) -> Vec<Option<f64>> {
        (0..self.origins.len())
            .map(|o| self.error(m, o).map(|e| loss.eval(e)))
            .collect()
    }

    pub fn model_index(&self, id: &str) -> Option<usize> {
        self.models.iter().position(|m| m == id)
    }

    pub fn summary(&self) -> BTreeMap<String, LossSummary> {
        self.models
            .iter()
            .enumerate()
            .filter_map(|(m, id)| {
                let errors: Vec<f64> = (0..self.origins.len())
                    .filter_map(|o| self.error(m, o))
                    .collect();
                (!errors.is_empty()).then(|| {
                    (
                        id.clone(),
                        LossSummary {
                            rmsfe: rmsfe(&errors),
                            mafe: mafe(&errors),
                            n: errors.len(),
                        },
                    )
                })
            })
            .collect()
    }

    /// Origins where every model has a loss, and the origin x model matrix.
    pub fn common_losses(&self, loss: LossFunction) -> (Vec<NaiveDate>, Vec<Vec<f64>>) {
        let mut origins = Vec::new();
        let mut rows = Vec::new();
        for o in 0..self.origins.len() {
            let row: Option<Vec<f64>> = (0..self.models.len())
                .map(|m| self.error(m, o).map(|e| loss.eval(e)))
                .collect();
            if let Some(r) = row {
                origins.push(self.origins[o]);
                rows.push(r);
            }
        }
        (origins, rows)
    }

    /// Restriction to the origins up to and including `origin`.
    pub fn up_to(&self, origin: NaiveDate) -> LossTable {
        let keep = self.origins.iter().take_while(|o| **o <= origin).count();
        LossTable {
            models: self.models.clone(),
            origins: self.origins[..keep].to_vec(),
            target_periods: self.target_periods[..keep].to_vec(),
            actuals: self.actuals[..keep].to_vec(),
            forecasts: self.forecasts.iter().map(|f| f[..keep].to_vec()).collect(),
        }
    }

    /// CSV with one row per resolved (model, origin).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "model",
            "origin",
            "target_period",
            "forecast",
            "actual",
            "sqerr",
            "abserr",
        ])?;
        for (m, id) in self.models.iter().enumerate() {
            for o in 0..self.origins.len() {
                if let (Some(f), Some(e)) = (self.forecasts[m][o], self.error(m, o)) {
                    wr.write_record([
                        id.clone(),
                        self.origins[o].to_string(),
                        self.target_periods[o].to_string(),
                        f.to_string(),
                        self.actuals[o].to_string(),
                        (e * e).to_string(),
                        e.abs().to_string(),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Joins forecast records with realized actuals. Model order follows the
/// first appearance in `records`; origins are sorted.
pub fn compute_losses(
    records: &[ForecastRecord],
    actuals: &BTreeMap<Period, f64>,
) -> Result<LossTable> {
    let mut models: Vec<String> = Vec::new();
    for r in records {
        if !models.contains(&r.model_id) {
            models.push(r.model_id.clone());
        }
    }
    let mut by_origin: BTreeMap<NaiveDate, (Period, f64)> = BTreeMap::new();
    for r in records {
        if let Some(a) = actuals.get(&r.target_period) {
            by_origin.insert(r.origin, (r.target_period, *a));
        }
    }
    if by_origin.is_empty() {
        return Err(NowcastError::NoOverlap);
    }
    let origins: Vec<NaiveDate> = by_origin.keys().copied().collect();
    let mut forecasts = vec![vec![None; origins.len()]; models.len()];
    for r in records {
        if let (Ok(o), Some(m)) = (
            origins.binary_search(&r.origin),
            models.iter().position(|m| *m == r.model_id),
        ) {
            forecasts[m][o] = Some(r.forecast);
        }
    }
    Ok(LossTable {
        models,
        target_periods: by_origin.values().map(|v| v.0).collect(),
        actuals: by_origin.values().map(|v| v.1).collect(),
        origins,
        forecasts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterFlag {
    Retained,
    Flagged,
}

/// Flags models whose RMSFE and MAFE both exceed `(1 + margin)` times the
/// best benchmark's. Benchmarks are always retained.
pub fn benchmark_filter(
    table: &LossTable,
    benchmark_ids: &[String],
    margin: f64,
) -> Result<BTreeMap<String, FilterFlag>> {
    if !(margin >= 0.0) {
        return Err(NowcastError::InvalidPlan(format!(
            "margin must be >= 0, got {margin}"
        )));
    }
    let summary = table.summary();
    if summary.is_empty() {
        return Err(NowcastError::EmptyTable);
    }
    let bench: Vec<&LossSummary> = benchmark_ids
        .iter()
        .filter_map(|b| summary.get(b))
        .collect();
    if bench.is_empty() {
        return Err(NowcastError::MissingBenchmark);
    }
    let best_rmsfe = bench.iter().map(|s| s.rmsfe).fold(f64::INFINITY, f64::min);
    let best_mafe = bench.iter().map(|s| s.mafe).fold(f64::INFINITY, f64::min);
    Ok(summary
        .iter()
        .map(|(id, s)| {
            let flagged = !benchmark_ids.contains(id)
                && s.rmsfe > (1.0 + margin) * best_rmsfe
                && s.mafe > (1.0 + margin) * best_mafe;
            (
                id.clone(),
                if flagged {
                    FilterFlag::Flagged
                } else {
                    FilterFlag::Retained
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LeakageVerdict {
    pub origins_checked: Vec<NaiveDate>,
    pub violations: Vec<Violation>,
    /// Origins whose design could not be built (nothing to audit there).
    pub unbuildable: Vec<(NaiveDate, String)>,
}

impl LeakageVerdict {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// Distinct offending features.
    pub fn features(&self) -> Vec<String> {
        let s: BTreeSet<&str> = self.violations.iter().map(|v| v.feature.as_str()).collect();
        s.into_iter().map(String::from).collect()
    }
}

/// Rebuilds every origin's design and walks its provenance.
pub fn leakage_audit(plan: &EvaluationPlan, log: &ObservationLog) -> LeakageVerdict {
    let results: Vec<(NaiveDate, Result<Vec<Violation>>)> = plan
        .origins
        .par_iter()
        .map(|&o| (o, design_at(log, &plan.recipe, o).map(|d| d.audit())))
        .collect();
    let mut v = LeakageVerdict::default();
    for (o, r) in results {
        match r {
            Ok(viol) => {
                v.origins_checked.push(o);
                v.violations.extend(viol);
            }
            Err(e) => v.unbuildable.push((o, e.to_string())),
        }
    }
    v
}
