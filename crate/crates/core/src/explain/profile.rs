use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_replicates, BlockBootstrapConfig};
use crate::error::{NowcastError, Result};
use crate::models::{FittedModel, ModelSpec, TrainingSet};
use crate::stats;

use super::{AttributionVector, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    /// First and last origin summarized, when origins are known.
    pub window: Option<(NaiveDate, NaiveDate)>,
    pub method: Method,
    pub feature_names: Vec<String>,
    pub central: Vec<f64>,
    pub band: Vec<(f64, f64)>,
    pub alpha: f64,
    /// Fraction of draws (origins or replicates) with a positive value.
    pub sign_share: Vec<f64>,
    pub mean_abs: Vec<f64>,
    pub iqr: Vec<f64>,
    pub draws: usize,
}

fn check_features(vectors: &[AttributionVector]) -> Result<()> {
    let first = &vectors[0];
    for v in vectors {
        if v.feature_names != first.feature_names {
            return Err(NowcastError::IdMismatch(format!(
                "feature sets differ: {:?} vs {:?}",
                first.feature_names, v.feature_names
            )));
        }
        if v.method != first.method {
            return Err(NowcastError::IdMismatch(format!(
                "methods differ: {} vs {}",
                first.method.as_str(),
                v.method.as_str()
            )));
        }
    }
    Ok(())
}

fn column(vectors: &[AttributionVector], j: usize) -> Vec<f64> {
    vectors.iter().map(|v| v.values[j]).collect()
}

fn window(vectors: &[AttributionVector]) -> Option<(NaiveDate, NaiveDate)> {
    let origins: Vec<NaiveDate> = vectors.iter().filter_map(|v| v.origin).collect();
    Some((*origins.iter().min()?, *origins.iter().max()?))
}

fn magnitude(method: Method, v: f64) -> f64 {
    // negative permutation importance is noise: floor it in the summary view
    if method == Method::Permutation {
        v.max(0.0)
    } else {
        v.abs()
    }
}

/// Summary across origins: median of |attribution| with an
/// `(alpha/2, 1 - alpha/2)` band over the same magnitudes.
pub fn profile_over_origins(
    vectors: &[AttributionVector],
    alpha: f64,
) -> Result<ImportanceProfile> {
    if vectors.is_empty() {
        return Err(NowcastError::EmptyInput("attribution vectors"));
    }
    check_features(vectors)?;
    let method = vectors[0].method;
    let p = vectors[0].feature_names.len();
    let mut prof = ImportanceProfile {
        window: window(vectors),
        method,
        feature_names: vectors[0].feature_names.clone(),
        central: Vec::with_capacity(p),
        band: Vec::with_capacity(p),
        alpha,
        sign_share: Vec::with_capacity(p),
        mean_abs: Vec::with_capacity(p),
        iqr: Vec::with_capacity(p),
        draws: vectors.len(),
    };
    for j in 0..p {
        let raw = column(vectors, j);
        let mags: Vec<f64> = raw.iter().map(|&v| magnitude(method, v)).collect();
        let sorted = stats::sorted(&mags);
        prof.central.push(stats::quantile_sorted(&sorted, 0.5));
        prof.band.push((
            stats::quantile_sorted(&sorted, alpha / 2.0),
            stats::quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        ));
        prof.sign_share
            .push(raw.iter().filter(|&&v| v > 0.0).count() as f64 / raw.len() as f64);
        prof.mean_abs.push(stats::mean(
            &raw.iter().map(|v| v.abs()).collect::<Vec<_>>(),
        ));
        prof.iqr.push(stats::iqr(&raw));
    }
    Ok(prof)
}

/// Recomputes attributions on every bootstrap refit. Central is the
/// replicate median of the signed value, band the type-7
/// `(alpha/2, 1 - alpha/2)` quantiles.
pub fn importance_bands<F>(
    spec: &ModelSpec,
    ts: &TrainingSet,
    cfg: &BlockBootstrapConfig,
    alpha: f64,
    attribute: F,
) -> Result<ImportanceProfile>
where
    F: Fn(&FittedModel) -> Result<AttributionVector> + Sync,
{
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(NowcastError::InvalidBootstrap(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    let reps = run_replicates(spec, ts, cfg, |m, _| attribute(m))?;
    let vectors: Vec<AttributionVector> = reps.values.into_iter().map(|(_, v)| v).collect();
    if vectors.is_empty() {
        return Err(NowcastError::EmptyInput("successful replicates"));
    }
    check_features(&vectors)?;
    let p = vectors[0].feature_names.len();
    let mut prof = ImportanceProfile {
        window: None,
        method: vectors[0].method,
        feature_names: vectors[0].feature_names.clone(),
        central: Vec::with_capacity(p),
        band: Vec::with_capacity(p),
        alpha,
        sign_share: Vec::with_capacity(p),
        mean_abs: Vec::with_capacity(p),
        iqr: Vec::with_capacity(p),
        draws: vectors.len(),
    };
    for j in 0..p {
        let sorted = stats::sorted(&column(&vectors, j));
        prof.central.push(stats::quantile_sorted(&sorted, 0.5));
        prof.band.push((
            stats::quantile_sorted(&sorted, alpha / 2.0),
            stats::quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        ));
        prof.sign_share
            .push(sorted.iter().filter(|&&v| v > 0.0).count() as f64 / sorted.len() as f64);
        prof.mean_abs.push(stats::mean(
            &sorted.iter().map(|v| v.abs()).collect::<Vec<_>>(),
        ));
        prof.iqr.push(stats::iqr(&sorted));
    }
    Ok(prof)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    fn contradicts(self, v: f64) -> bool {
        match self {
            Sign::Positive => v < 0.0,
            Sign::Negative => v > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConfig {
    /// Rank positions a feature may move between consecutive origins.
    pub rank_threshold: usize,
    pub top_k: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            rank_threshold: 3,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignCoherence {
    pub feature: String,
    pub prior: Sign,
    pub contradicting_share: f64,
    /// Contradicts the prior at more than half of the origins.
    pub inconsistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityFlag {
    pub feature: String,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    /// 1-based ranks by |attribution|, largest first.
    pub from_rank: usize,
    pub to_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub feature_names: Vec<String>,
    /// Spearman correlation of |attribution| between origin t-1 and t;
    /// `None` when one side is constant and the two differ.
    pub rank_correlations: Vec<Option<f64>>,
    pub mean_rank_correlation: Option<f64>,
    pub iqr: Vec<f64>,
    pub flags: Vec<InstabilityFlag>,
    pub sign_coherence: Vec<SignCoherence>,
}

impl StabilityReport {
    /// Features listed as contradicting their prior.
    pub fn inconsistent(&self) -> Vec<&str> {
        self.sign_coherence
            .iter()
            .filter(|c| c.inconsistent)
            .map(|c| c.feature.as_str())
            .collect()
    }
}

fn ranks_desc(mags: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mags.len()).collect();
    order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    let mut rank = vec![0; mags.len()];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r + 1;
    }
    rank
}

/// Rank correlation, dispersion, instability and sign checks over a
/// sequence of per-origin attributions (in origin order).
pub fn stability_report(
    vectors: &[AttributionVector],
    priors: &BTreeMap<String, Sign>,
    cfg: StabilityConfig,
) -> Result<StabilityReport> {
    if vectors.len() < 2 {
        return Err(NowcastError::InsufficientData(format!(
            "stability needs at least 2 origins, got {}",
            vectors.len()
        )));
    }
    check_features(vectors)?;
    let names = vectors[0].feature_names.clone();
    for f in priors.keys() {
        if !names.contains(f) {
            return Err(NowcastError::IdMismatch(format!(
                "prior for unknown feature {f:?}"
            )));
        }
    }
    let abs: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.values.iter().map(|x| x.abs()).collect())
        .collect();
    let mut rank_correlations = Vec::with_capacity(vectors.len() - 1);
    let mut flags = Vec::new();
    for t in 1..vectors.len() {
        let (a, b) = (&abs[t - 1], &abs[t]);
        let rho = if a == b {
            Some(1.0)
        } else {
            stats::spearman(a, b)
        };
        rank_correlations.push(rho);
        let same_data = matches!((&vectors[t - 1].data_digest, &vectors[t].data_digest), (Some(x), Some(y)) if x == y);
        if !same_data {
            continue;
        }
        let (ra, rb) = (ranks_desc(a), ranks_desc(b));
        for j in 0..names.len() {
            let in_top = ra[j] <= cfg.top_k || rb[j] <= cfg.top_k;
            if in_top && ra[j].abs_diff(rb[j]) > cfg.rank_threshold {
                flags.push(InstabilityFlag {
                    feature: names[j].clone(),
                    from: vectors[t - 1].origin,
                    to: vectors[t].origin,
                    from_rank: ra[j],
                    to_rank: rb[j],
                });
            }
        }
    }
    let known: Vec<f64> = rank_correlations.iter().flatten().copied().collect();
    let mean_rank_correlation = (!known.is_empty()).then(|| stats::mean(&known));
    let iqr = (0..names.len())
        .map(|j| stats::iqr(&column(vectors, j)))
        .collect();
    let sign_coherence = priors
        .iter()
        .map(|(f, &prior)| {
            let j = names.iter().position(|n| n == f).expect("checked above");
            let bad = vectors
                .iter()
                .filter(|v| prior.contradicts(v.values[j]))
                .count();
            let share = bad as f64 / vectors.len() as f64;
            SignCoherence {
                feature: f.clone(),
                prior,
                contradicting_share: share,
                inconsistent: share > 0.5,
            }
        })
        .collect();
    Ok(StabilityReport {
        feature_names: names,
        rank_correlations,
        mean_rank_correlation,
        iqr,
        flags,
        sign_coherence,
    })
}
