//! Leakage-guarded alignment of features with the quarterly target.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::digest::json_digest;
use crate::error::{NowcastError, Result};
use crate::period::{Frequency, Period};

use super::log::ObservationLog;
use super::recipe::{
    EconomicBlock, FeatureRecipe, RaggedEdgePolicy, Recipe, StandardizeScope, TargetRecipe,
};
use super::snapshot::Snapshot;
use super::transform::{
    aggregate_to_quarterly, transform_indexed, Aggregation, PartialQuarters, Transform, WindowStats,
};

/// One observation a design cell was computed from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObsRef {
    pub series_id: String,
    pub ref_period: Period,
    pub published_at: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub mean: f64,
    pub sd: f64,
    /// Row periods the statistics were computed over.
    pub periods: Vec<Period>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub source: String,
    pub aggregation: Aggregation,
    pub transforms: Vec<Transform>,
    pub block: EconomicBlock,
    pub lag: u32,
    /// Vintage date the source series was read from.
    pub vintage: NaiveDate,
    /// Nowcast-row value carried from the prior quarter.
    pub carried: bool,
    pub standardization: Option<StandardizationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedFeature {
    pub name: String,
    pub reason: String,
}

/// Features for the quarter being nowcast (the one after the last
/// published target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NowcastRow {
    pub period: Period,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// rows x features
    pub cells: Vec<Vec<Vec<ObsRef>>>,
    pub nowcast: Vec<Vec<ObsRef>>,
    pub target: Vec<Vec<ObsRef>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub origin: NaiveDate,
    pub target_series: String,
    pub target_periods: Vec<Period>,
    pub y: Vec<f64>,
    /// Row-major, `target_periods.len()` rows.
    pub x: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub feature_meta: Vec<FeatureMeta>,
    pub dropped: Vec<DroppedFeature>,
    pub nowcast: NowcastRow,
    /// Contiguous target history ending at the last published quarter.
    pub target_history: Vec<(Period, f64)>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    FuturePublication {
        series_id: String,
        ref_period: Period,
        published_at: NaiveDate,
    },
    StatsOutsideWindow {
        periods: Vec<Period>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub origin: NaiveDate,
    pub feature: String,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.iter().map(|r| r[j]).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.x
            .iter()
            .flatten()
            .chain(&self.nowcast.x)
            .any(|v| !v.is_finite())
    }

    /// Digest of everything except the origin date. Vintage dates are kept
    /// only as offsets from the origin.
    pub fn content_digest(&self) -> String {
        let mut c = self.clone();
        for m in &mut c.feature_meta {
            m.vintage = NaiveDate::MIN + (m.vintage - self.origin);
        }
        c.origin = NaiveDate::MIN;
        json_digest(&c)
    }

    /// Walks the provenance of every cell and every standardization window.
    pub fn audit(&self) -> Vec<Violation> {
        let mut out = BTreeSet::new();
        let mut check = |feature: &str, refs: &[ObsRef]| {
            for r in refs {
                if r.published_at > self.origin {
                    out.insert(Violation {
                        origin: self.origin,
                        feature: feature.to_string(),
                        kind: ViolationKind::FuturePublication {
                            series_id: r.series_id.clone(),
                            ref_period: r.ref_period,
                            published_at: r.published_at,
                        },
                    });
                }
            }
        };
        for refs in &self.provenance.target {
            check("target", refs);
        }
        for row in &self.provenance.cells {
            for (j, refs) in row.iter().enumerate() {
                check(&self.feature_names[j], refs);
            }
        }
        for (j, refs) in self.provenance.nowcast.iter().enumerate() {
            check(&self.feature_names[j], refs);
        }
        let training: BTreeSet<Period> = self.target_periods.iter().copied().collect();
        for meta in &self.feature_meta {
            if let Some(st) = &meta.standardization {
                let outside: Vec<Period> = st
                    .periods
                    .iter()
                    .filter(|p| !training.contains(p))
                    .copied()
                    .collect();
                if !outside.is_empty() {
                    out.insert(Violation {
                        origin: self.origin,
                        feature: meta.name.clone(),
                        kind: ViolationKind::StatsOutsideWindow { periods: outside },
                    });
                }
            }
        }
        out.into_iter().collect()
    }
}

type Sourced = BTreeMap<Period, (f64, Vec<Period>)>;

/// Quarterly view of one series with, per quarter, the source periods.
fn quarterly_series(
    snapshot: &Snapshot,
    series_id: &str,
    aggregation: Aggregation,
    partial: PartialQuarters,
) -> Result<Sourced> {
    let Some(raw) = snapshot.series(series_id) else {
        return Ok(BTreeMap::new());
    };
    match snapshot.frequency_of(series_id) {
        Some(Frequency::Monthly) => {
            let values: BTreeMap<Period, f64> = raw.iter().map(|(p, v)| (*p, v.value)).collect();
            if values.is_empty() {
                return Ok(BTreeMap::new());
            }
            let agg = aggregate_to_quarterly(&values, aggregation, partial)?;
            Ok(agg
                .into_iter()
                .map(|(q, v)| {
                    let src = q
                        .months()
                        .into_iter()
                        .filter(|m| raw.contains_key(m))
                        .collect();
                    (q, (v, src))
                })
                .collect())
        }
        _ => Ok(raw.iter().map(|(p, v)| (*p, (v.value, vec![*p]))).collect()),
    }
}

fn pointwise_chain(mut s: Sourced, chain: &[Transform]) -> Result<Sourced> {
    for &step in chain.iter().filter(|t| **t != Transform::Standardize) {
        s = transform_indexed(&s, step)?;
    }
    Ok(s)
}

fn refs(snapshot: &Snapshot, series_id: &str, periods: &[Period]) -> Vec<ObsRef> {
    let series = snapshot.series(series_id);
    periods
        .iter()
        .filter_map(|p| {
            series.and_then(|m| m.get(p)).map(|v| ObsRef {
                series_id: series_id.to_string(),
                ref_period: *p,
                published_at: v.published_at,
            })
        })
        .collect()
}

fn target_series(
    snapshot: &Snapshot,
    t: &TargetRecipe,
    partial: PartialQuarters,
) -> Result<Sourced> {
    if !snapshot.is_known(&t.series) {
        return Err(NowcastError::UnknownSeries(t.series.clone()));
    }
    let s = pointwise_chain(
        quarterly_series(snapshot, &t.series, t.aggregation, partial)?,
        &t.transforms,
    )?;
    if s.is_empty() {
        return Err(NowcastError::MissingTarget(t.series.clone()));
    }
    Ok(s)
}

/// Target values per quarter as computed from one snapshot.
pub fn target_values(snapshot: &Snapshot, recipe: &Recipe) -> Result<BTreeMap<Period, f64>> {
    Ok(
        target_series(snapshot, &recipe.target, recipe.partial_quarters)?
            .into_iter()
            .map(|(p, (v, _))| (p, v))
            .collect(),
    )
}

struct FeatureColumn<'a> {
    recipe: &'a FeatureRecipe,
    vintage: NaiveDate,
    values: Sourced,
    nowcast: (f64, Vec<Period>),
    carried: bool,
}

/// Builds the design from one snapshot. `origin` must equal its `as_of`.
/// Recipes with vintage offsets need [`design_at`].
pub fn assemble_design(
    snapshot: &Snapshot,
    recipe: &Recipe,
    origin: NaiveDate,
) -> Result<DesignMatrix> {
    if snapshot.as_of() != origin {
        return Err(NowcastError::InvalidRecipe(format!(
            "origin {origin} differs from snapshot date {}",
            snapshot.as_of()
        )));
    }
    if recipe.features.iter().any(|f| f.vintage_offset_days != 0) {
        return Err(NowcastError::InvalidRecipe(
            "vintage offsets need the observation log".into(),
        ));
    }
    let mut vintages = BTreeMap::new();
    vintages.insert(0, Some(snapshot.clone()));
    assemble(&vintages, recipe, origin)
}

/// Snapshot at `origin` (plus any offset vintages the recipe asks for),
/// then [`assemble_design`].
pub fn design_at(log: &ObservationLog, recipe: &Recipe, origin: NaiveDate) -> Result<DesignMatrix> {
    let mut vintages = BTreeMap::new();
    vintages.insert(0, Some(log.snapshot_at(origin)?));
    for f in &recipe.features {
        if f.vintage_offset_days != 0 && !vintages.contains_key(&f.vintage_offset_days) {
            let snap = log
                .snapshot_at(origin + Duration::days(f.vintage_offset_days))
                .ok();
            vintages.insert(f.vintage_offset_days, snap);
        }
    }
    assemble(&vintages, recipe, origin)
}

fn assemble(
    vintages: &BTreeMap<i64, Option<Snapshot>>,
    recipe: &Recipe,
    origin: NaiveDate,
) -> Result<DesignMatrix> {
    recipe.validate()?;
    let base = vintages[&0].as_ref().expect("origin snapshot");
    let target = target_series(base, &recipe.target, recipe.partial_quarters)?;
    let (&last_target, _) = target.iter().next_back().expect("non-empty target");
    let nowcast_period = last_target.next();

    let mut target_history = Vec::new();
    let mut p = last_target;
    while let Some((v, _)) = target.get(&p) {
        target_history.push((p, *v));
        p = p.prev();
    }
    target_history.reverse();

    let mut columns: Vec<FeatureColumn> = Vec::new();
    let mut dropped = Vec::new();
    for f in &recipe.features {
        let snap = vintages
            .get(&f.vintage_offset_days)
            .and_then(Option::as_ref);
        if !base.is_known(&f.series) {
            return Err(NowcastError::UnknownSeries(f.series.clone()));
        }
        let Some(snap) = snap else {
            dropped.push(DroppedFeature {
                name: f.name.clone(),
                reason: "no vintage at the requested offset".into(),
            });
            continue;
        };
        let q = quarterly_series(snap, &f.series, f.aggregation, recipe.partial_quarters)?;
        let s = pointwise_chain(q, &f.transforms)?;
        let shifted: Sourced = s
            .into_iter()
            .map(|(p, v)| (p.offset(f.lag as i64), v))
            .collect();
        let Some((&edge, _)) = shifted.iter().next_back() else {
            dropped.push(DroppedFeature {
                name: f.name.clone(),
                reason: "no observations at origin".into(),
            });
            continue;
        };
        let gap = edge.steps_to(nowcast_period);
        let carry = recipe.ragged_edge == RaggedEdgePolicy::CarryWithinQuarter;
        let (nowcast, carried) = match shifted.get(&nowcast_period) {
            Some(v) => (v.clone(), false),
            None if gap == 1 && carry => (shifted[&edge].clone(), true),
            None => {
                let reason = if gap > 0 {
                    format!(
                        "ragged edge: last value {edge} is {gap} quarters behind {nowcast_period}"
                    )
                } else {
                    format!("no value for {nowcast_period}")
                };
                dropped.push(DroppedFeature {
                    name: f.name.clone(),
                    reason,
                });
                continue;
            }
        };
        columns.push(FeatureColumn {
            recipe: f,
            vintage: snap.as_of(),
            values: shifted,
            nowcast,
            carried,
        });
    }

    let rows: Vec<Period> = target
        .keys()
        .filter(|t| columns.iter().all(|c| c.values.contains_key(t)))
        .copied()
        .collect();
    if rows.is_empty() {
        return Err(NowcastError::InsufficientData(
            "no quarter has the target and every feature".into(),
        ));
    }

    let mut feature_names = Vec::new();
    let mut feature_meta = Vec::new();
    let mut kept: Vec<(FeatureColumn, Option<WindowStats>)> = Vec::new();
    for c in columns {
        let mut stats = None;
        let mut record = None;
        if c.recipe.standardized() {
            let mut periods = rows.clone();
            if c.recipe.standardize_scope == StandardizeScope::FullSample {
                periods.push(nowcast_period);
            }
            let vals: Vec<f64> = periods
                .iter()
                .map(|p| {
                    if *p == nowcast_period {
                        c.nowcast.0
                    } else {
                        c.values[p].0
                    }
                })
                .collect();
            match WindowStats::from_values(&vals) {
                Ok(st) => {
                    record = Some(StandardizationRecord {
                        mean: st.mean,
                        sd: st.sd,
                        periods,
                    });
                    stats = Some(st);
                }
                Err(e) => {
                    dropped.push(DroppedFeature {
                        name: c.recipe.name.clone(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            }
        }
        feature_names.push(c.recipe.name.clone());
        feature_meta.push(FeatureMeta {
            name: c.recipe.name.clone(),
            source: c.recipe.series.clone(),
            aggregation: c.recipe.aggregation,
            transforms: c.recipe.transforms.clone(),
            block: c.recipe.block,
            lag: c.recipe.lag,
            vintage: c.vintage,
            carried: c.carried,
            standardization: record,
        });
        kept.push((c, stats));
    }

    let scale = |st: &Option<WindowStats>, v: f64| st.as_ref().map_or(v, |s| s.apply(v));
    let snapshot_for = |c: &FeatureColumn| {
        vintages[&c.recipe.vintage_offset_days]
            .as_ref()
            .expect("column built from this vintage")
    };

    let mut x = Vec::with_capacity(rows.len());
    let mut cells = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    let mut target_prov = Vec::with_capacity(rows.len());
    for t in &rows {
        let (yv, ysrc) = &target[t];
        y.push(*yv);
        target_prov.push(refs(base, &recipe.target.series, ysrc));
        let mut xr = Vec::with_capacity(kept.len());
        let mut cr = Vec::with_capacity(kept.len());
        for (c, st) in &kept {
            let (v, src) = &c.values[t];
            xr.push(scale(st, *v));
            cr.push(refs(snapshot_for(c), &c.recipe.series, src));
        }
        x.push(xr);
        cells.push(cr);
    }
    let nowcast_x = kept.iter().map(|(c, st)| scale(st, c.nowcast.0)).collect();
    let nowcast_prov = kept
        .iter()
        .map(|(c, _)| refs(snapshot_for(c), &c.recipe.series, &c.nowcast.1))
        .collect();

    Ok(DesignMatrix {
        origin,
        target_series: recipe.target.series.clone(),
        target_periods: rows,
        y,
        x,
        feature_names,
        feature_meta,
        dropped,
        nowcast: NowcastRow {
            period: nowcast_period,
            x: nowcast_x,
        },
        target_history,
        provenance: Provenance {
            cells,
            nowcast: nowcast_prov,
            target: target_prov,
        },
    })
}
