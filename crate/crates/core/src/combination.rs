//! Model Confidence Set on out-of-sample losses and forecast averaging.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{default_block_length, moving_block_indices};
use crate::error::{NowcastError, Result};
use crate::rng::{stream, Domain};
use crate::walk_forward::{LossFunction, LossTable};

pub const MCS_STATISTIC: &str = "T_R range statistic, bootstrap-studentized";
pub const MIN_MCS_ORIGINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsConfig {
    pub replicates: usize,
    /// Moving-block length on loss rows; `ceil(T^(1/3))` when unset.
    pub block_length: Option<usize>,
    pub seed: u64,
    pub loss: LossFunction,
    /// Rolling-window MCS. Not implemented; any value is rejected.
    pub rolling: Option<usize>,
}

impl Default for McsConfig {
    fn default() -> Self {
        Self {
            replicates: 999,
            block_length: None,
            seed: 0,
            loss: LossFunction::Sqerr,
            rolling: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfidenceSet {
    pub survivors: Vec<String>,
    /// Eliminated models with their monotonized MCS p-values.
    pub elimination_order: Vec<(String, f64)>,
    /// p-value of the final, non-rejected test (1 with one survivor).
    pub survivor_p_value: f64,
    pub level: f64,
    pub statistic: String,
    pub block_length: usize,
    pub replicates: usize,
    pub seed: u64,
    pub origins: usize,
}

/// Iterative elimination at level `alpha` over the origins where every
/// model has a loss.
pub fn mcs(table: &LossTable, alpha: f64, cfg: &McsConfig) -> Result<ModelConfidenceSet> {
    if let Some(w) = cfg.rolling {
        return Err(NowcastError::Unsupported(format!(
            "rolling-window MCS (window {w}) is not implemented; run on the full evaluation sample"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(NowcastError::InvalidBootstrap(format!(
            "MCS level {alpha} outside (0, 1)"
        )));
    }
    if cfg.replicates == 0 {
        return Err(NowcastError::InvalidBootstrap(
            "MCS needs at least one replicate".into(),
        ));
    }
    let m = table.models.len();
    if m == 0 {
        return Err(NowcastError::EmptyTable);
    }
    let (origins, rows) = table.common_losses(cfg.loss);
    let t = rows.len();
    if t < MIN_MCS_ORIGINS {
        return Err(NowcastError::InsufficientData(format!(
            "MCS needs at least {MIN_MCS_ORIGINS} common origins, got {t}"
        )));
    }
    let l = cfg.block_length.unwrap_or_else(|| default_block_length(t));
    let means = column_means(&rows, (0..t).collect::<Vec<_>>().as_slice(), m);
    let boot: Vec<Vec<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let plan = moving_block_indices(t, l, &mut stream(cfg.seed, Domain::Mcs, b as u64))?;
            Ok(column_means(&rows, &plan.indices, m))
        })
        .collect::<Result<_>>()?;

    let mut alive: Vec<usize> = (0..m).collect();
    let mut elimination_order = Vec::new();
    let mut running_p: f64 = 0.0;
    let mut survivor_p_value = 1.0;
    while alive.len() > 1 {
        let (stat, worst, null) = range_test(&alive, &means, &boot);
        let raw = null.iter().filter(|&&s| s >= stat).count() as f64 / null.len() as f64;
        let p = if stat == 0.0 { 1.0 } else { raw };
        running_p = running_p.max(p);
        if running_p >= alpha {
            survivor_p_value = running_p;
            break;
        }
        elimination_order.push((table.models[worst].clone(), running_p));
        alive.retain(|&i| i != worst);
    }
    log::info!(
        "MCS over {} models on {} origins ({} to {}): eliminated {:?}",
        m,
        t,
        origins[0],
        origins[t - 1],
        elimination_order
    );
    Ok(ModelConfidenceSet {
        survivors: alive.iter().map(|&i| table.models[i].clone()).collect(),
        elimination_order,
        survivor_p_value,
        level: alpha,
        statistic: MCS_STATISTIC.to_string(),
        block_length: l,
        replicates: cfg.replicates,
        seed: cfg.seed,
        origins: t,
    })
}

fn column_means(rows: &[Vec<f64>], idx: &[usize], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for &r in idx {
        for (o, v) in out.iter_mut().zip(&rows[r]) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= idx.len() as f64);
    out
}

/// `(T_R, model to eliminate, bootstrap null of T_R)` for the live set.
fn range_test(alive: &[usize], means: &[f64], boot: &[Vec<f64>]) -> (f64, usize, Vec<f64>) {
    let nb = boot.len() as f64;
    let mut stat = 0.0f64;
    let mut null = vec![0.0f64; boot.len()];
    let mut worst = alive[0];
    let mut worst_score = f64::NEG_INFINITY;
    for &i in alive {
        let mut score = f64::NEG_INFINITY;
        for &j in alive {
            if i == j {
                continue;
            }
            let d = means[i] - means[j];
            let var = boot.iter().map(|b| (b[i] - b[j] - d).powi(2)).sum::<f64>() / nb;
            let tij = if var > 0.0 {
                d / var.sqrt()
            } else if d == 0.0 {
                0.0
            } else {
                d.signum() * f64::INFINITY
            };
            score = score.max(tij);
            stat = stat.max(tij.abs());
            if var > 0.0 {
                let sd = var.sqrt();
                for (n, b) in null.iter_mut().zip(boot) {
                    *n = n.max(((b[i] - b[j]) - d).abs() / sd);
                }
            }
        }
        if score > worst_score {
            worst_score = score;
            worst = i;
        }
    }
    (stat, worst, null)
}

pub fn write_mcs_csv<W: Write>(w: W, set: &ModelConfidenceSet) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["model", "status", "step", "p_value"])?;
    for (k, (id, p)) in set.elimination_order.iter().enumerate() {
        wr.write_record([
            id.as_str(),
            "eliminated",
            &(k + 1).to_string(),
            &p.to_string(),
        ])?;
    }
    for id in &set.survivors {
        wr.write_record([
            id.as_str(),
            "survivor",
            "",
            &set.survivor_p_value.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightScheme {
    Equal,
    InverseCumulative,
    Exponential { eta: f64 },
}

impl WeightScheme {
    pub fn as_str(&self) -> String {
        match self {
            WeightScheme::Equal => "equal".into(),
            WeightScheme::InverseCumulative => "inverse_cumulative".into(),
            WeightScheme::Exponential { eta } => format!("exponential(eta={eta})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationWeights {
    pub scheme: WeightScheme,
    pub as_of: Option<NaiveDate>,
    pub models: Vec<String>,
    pub weights: Vec<f64>,
    /// Set when a fallback to equal weights was applied.
    pub note: Option<String>,
}

impl CombinationWeights {
    pub fn weight(&self, id: &str) -> Option<f64> {
        self.models
            .iter()
            .position(|m| m == id)
            .map(|i| self.weights[i])
    }
}

fn equal(models: &[String]) -> Vec<f64> {
    vec![1.0 / models.len() as f64; models.len()]
}

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

/// Weights from cumulative losses over the origins where every model has
/// a loss. No realized losses gives equal weights.
pub fn combination_weights(
    table: &LossTable,
    scheme: WeightScheme,
    loss: LossFunction,
) -> Result<CombinationWeights> {
    if table.models.is_empty() {
        return Err(NowcastError::EmptyTable);
    }
    if let WeightScheme::Exponential { eta } = scheme {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(NowcastError::InvalidSpec(format!(
                "exponential weighting needs finite eta >= 0, got {eta}"
            )));
        }
    }
    let (_, rows) = table.common_losses(loss);
    let cum: Vec<f64> = (0..table.models.len())
        .map(|i| rows.iter().map(|r| r[i]).sum())
        .collect();
    if cum.iter().any(|c| !c.is_finite()) {
        return Err(NowcastError::InvalidSpec(
            "cumulative losses must be finite".into(),
        ));
    }
    let mut note = None;
    let weights = if rows.is_empty() {
        note = Some("no realized losses; equal weights".to_string());
        equal(&table.models)
    } else {
        match scheme {
            WeightScheme::Equal => equal(&table.models),
            WeightScheme::InverseCumulative => {
                if cum.iter().all(|&c| c > 0.0) {
                    normalized(cum.iter().map(|c| 1.0 / c).collect())
                } else {
                    log::info!("inverse-cumulative weights: a cumulative loss is zero, falling back to equal");
                    note = Some("zero cumulative loss; equal weights".to_string());
                    equal(&table.models)
                }
            }
            WeightScheme::Exponential { eta } => {
                let min = cum.iter().copied().fold(f64::INFINITY, f64::min);
                normalized(cum.iter().map(|c| (-eta * (c - min)).exp()).collect())
            }
        }
    };
    Ok(CombinationWeights {
        scheme,
        as_of: table.origins.last().copied(),
        models: table.models.clone(),
        weights,
        note,
    })
}

/// Weighted mean of member forecasts, `(model id, forecast)` pairs.
pub fn combine_forecasts(forecasts: &[(String, f64)], weights: &CombinationWeights) -> Result<f64> {
    let mut ids: Vec<&str> = forecasts.iter().map(|f| f.0.as_str()).collect();
    let mut wids: Vec<&str> = weights.models.iter().map(String::as_str).collect();
    ids.sort_unstable();
    wids.sort_unstable();
    if ids != wids {
        return Err(NowcastError::IdMismatch(format!(
            "forecasts for {ids:?}, weights for {wids:?}"
        )));
    }
    if forecasts.is_empty() {
        return Err(NowcastError::EmptyInput("forecasts"));
    }
    let combined: f64 = forecasts
        .iter()
        .map(|(id, f)| weights.weight(id).unwrap() * f)
        .sum();
    let lo = forecasts.iter().map(|f| f.1).fold(f64::INFINITY, f64::min);
    let hi = forecasts
        .iter()
        .map(|f| f.1)
        .fold(f64::NEG_INFINITY, f64::max);
    // rounding can push a convex combination a hair past its members
    Ok(combined.clamp(lo, hi))
}

/// Sub-table with only the listed models, in the given order.
pub fn restrict_models(table: &LossTable, ids: &[String]) -> Result<LossTable> {
    let idx: Vec<usize> = ids
        .iter()
        .map(|id| {
            table
                .model_index(id)
                .ok_or_else(|| NowcastError::IdMismatch(format!("unknown model {id:?}")))
        })
        .collect::<Result<_>>()?;
    Ok(LossTable {
        models: ids.to_vec(),
        origins: table.origins.clone(),
        target_periods: table.target_periods.clone(),
        actuals: table.actuals.clone(),
        forecasts: idx.iter().map(|&i| table.forecasts[i].clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTrajectory {
    pub points: Vec<CombinationWeights>,
    /// `sum |w_t - w_{t-1}|` for each step after the first.
    pub turnover: Vec<f64>,
    pub total_turnover: f64,
}

/// Weights at each origin using only the loss rows of earlier origins.
pub fn weight_trajectory(
    table: &LossTable,
    scheme: WeightScheme,
    loss: LossFunction,
) -> Result<WeightTrajectory> {
    if table.origins.len() < 2 {
        return Err(NowcastError::InsufficientData(format!(
            "weight trajectory needs at least 2 origins, got {}",
            table.origins.len()
        )));
    }
    let mut points = Vec::with_capacity(table.origins.len());
    for (k, &origin) in table.origins.iter().enumerate() {
        let before = LossTable {
            models: table.models.clone(),
            origins: table.origins[..k].to_vec(),
            target_periods: table.target_periods[..k].to_vec(),
            actuals: table.actuals[..k].to_vec(),
            forecasts: table.forecasts.iter().map(|f| f[..k].to_vec()).collect(),
        };
        let mut w = combination_weights(&before, scheme, loss)?;
        w.as_of = Some(origin);
        points.push(w);
    }
    let turnover: Vec<f64> = points
        .windows(2)
        .map(|p| {
            p[0].weights
                .iter()
                .zip(&p[1].weights)
                .map(|(a, b)| (a - b).abs())
                .sum()
        })
        .collect();
    let total_turnover = turnover.iter().sum();
    Ok(WeightTrajectory {
        points,
        turnover,
        total_turnover,
    })
}

pub fn write_trajectory_csv<W: Write>(w: W, traj: &WeightTrajectory) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["origin", "scheme", "model", "weight", "turnover"])?;
    for (k, p) in traj.points.iter().enumerate() {
        let turn = if k == 0 {
            String::new()
        } else {
            traj.turnover[k - 1].to_string()
        };
        for (id, w) in p.models.iter().zip(&p.weights) {
            wr.write_record([
                p.as_of.map(|d| d.to_string()).unwrap_or_default(),
                p.scheme.as_str(),
                id.clone(),
                w.to_string(),
                turn.clone(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}
