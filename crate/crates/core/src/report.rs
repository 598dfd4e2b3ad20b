//! Release packages: waterfall by economic block, fallback protocol,
//! dashboard indicators and the append-only audit trail.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{BlockBootstrapConfig, CoverageReport, PredictionInterval};
use crate::digest::json_digest;
use crate::error::{NowcastError, Result};
use crate::explain::{AttributionVector, ImportanceProfile, InstabilityFlag, StabilityReport};
use crate::models::{Family, FittedModel, ModelSpec, MODEL_FORMAT};
use crate::stats;
use crate::vintage::{DesignMatrix, EconomicBlock};
use crate::walk_forward::{LeakageVerdict, LossTable};

pub const RELEASE_FORMAT: &str = "nowcast-release/1";
pub const DEFAULT_TOP_K: usize = 10;

/// Block tag per design feature.
pub fn block_tags(design: &DesignMatrix) -> BTreeMap<String, EconomicBlock> {
    design
        .feature_meta
        .iter()
        .map(|m| (m.name.clone(), m.block))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallBar {
    pub block: EconomicBlock,
    pub contribution: f64,
    pub features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    pub base: f64,
    /// Non-empty blocks in canonical block order.
    pub bars: Vec<WaterfallBar>,
    pub residual: f64,
    pub point: f64,
}

impl Waterfall {
    pub fn total(&self) -> f64 {
        self.base + self.bars.iter().map(|b| b.contribution).sum::<f64>() + self.residual
    }
}

/// Residual `r` with `s + r == point` in floating point, not just in exact
/// arithmetic; a few ulp steps around `point - s` are enough in practice.
fn reconciling_residual(s: f64, point: f64) -> f64 {
    let mut r = point - s;
    for _ in 0..8 {
        let t = s + r;
        if t == point {
            break;
        }
        r = if t < point {
            r.next_up()
        } else {
            r.next_down()
        };
    }
    r
}

/// Sums an additive attribution into economic blocks. Untagged features
/// report under `other`.
pub fn waterfall_decomposition(
    attr: &AttributionVector,
    blocks: &BTreeMap<String, EconomicBlock>,
) -> Result<Waterfall> {
    if !attr.method.is_additive() {
        return Err(NowcastError::NonAdditive(attr.method.as_str().to_string()));
    }
    let (Some(base), Some(point)) = (attr.base_value, attr.prediction) else {
        return Err(NowcastError::IncompleteRelease(
            "additive attribution without base value or prediction".into(),
        ));
    };
    let bars: Vec<WaterfallBar> = EconomicBlock::ALL
        .iter()
        .filter_map(|&block| {
            let members: Vec<usize> = (0..attr.feature_names.len())
                .filter(|&j| {
                    blocks
                        .get(&attr.feature_names[j])
                        .copied()
                        .unwrap_or(EconomicBlock::Other)
                        == block
                })
                .collect();
            (!members.is_empty()).then(|| WaterfallBar {
                block,
                contribution: members.iter().map(|&j| attr.values[j]).sum(),
                features: members
                    .iter()
                    .map(|&j| attr.feature_names[j].clone())
                    .collect(),
            })
        })
        .collect();
    let residual = reconciling_residual(
        base + bars.iter().map(|b| b.contribution).sum::<f64>(),
        point,
    );
    Ok(Waterfall {
        base,
        bars,
        residual,
        point,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkForecast {
    pub model_id: String,
    pub point: f64,
}

/// Benchmark preference: AR(1) first, then random walk with drift.
pub fn pick_benchmark(candidates: &[(ModelSpec, f64)]) -> Option<BenchmarkForecast> {
    let ar1 = |s: &ModelSpec| s.family == Family::Ar && s.hp().usize_or("p", 1).ok() == Some(1);
    candidates
        .iter()
        .find(|(s, _)| ar1(s))
        .or_else(|| candidates.iter().find(|(s, _)| s.family == Family::RwDrift))
        .map(|(s, f)| BenchmarkForecast {
            model_id: s.id.clone(),
            point: *f,
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackOutcome {
    pub point: f64,
    pub low_confidence: bool,
    pub fallback_used: bool,
    pub fallback_model: Option<String>,
}

/// Reverts to the benchmark when the interval is strictly wider than
/// `tolerance` (target units).
pub fn fallback_check(
    interval: &PredictionInterval,
    tolerance: f64,
    benchmark: Option<&BenchmarkForecast>,
) -> Result<FallbackOutcome> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(NowcastError::InvalidTolerance(tolerance));
    }
    if interval.width() > tolerance {
        let b = benchmark.ok_or(NowcastError::MissingBenchmark)?;
        return Ok(FallbackOutcome {
            point: b.point,
            low_confidence: true,
            fallback_used: true,
            fallback_model: Some(b.model_id.clone()),
        });
    }
    Ok(FallbackOutcome {
        point: interval.point,
        low_confidence: false,
        fallback_used: false,
        fallback_model: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageIndicator {
    pub model_id: String,
    pub window: (NaiveDate, NaiveDate),
    pub nominal: f64,
    pub empirical: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityIndicator {
    pub model_id: String,
    pub rank_correlations: Vec<Option<f64>>,
    pub median_rank_correlation: Option<f64>,
    pub median_iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkDistance {
    pub model_id: String,
    pub benchmark_id: String,
    pub rmsfe_ratio: f64,
    pub mafe_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilitySignal {
    pub model_id: String,
    pub flag: InstabilityFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DashboardMetrics {
    /// Origin window of the loss table.
    pub window: (NaiveDate, NaiveDate),
    pub coverage: Vec<CoverageIndicator>,
    pub stability: Vec<StabilityIndicator>,
    pub benchmark_distance: Vec<BenchmarkDistance>,
    pub instability_signals: Vec<InstabilitySignal>,
    /// Features contradicting their sign prior, per model.
    pub sign_inconsistencies: Vec<(String, String)>,
}

fn overlaps(a: (NaiveDate, NaiveDate), b: (NaiveDate, NaiveDate)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// The four indicator groups over the loss table's origin window.
pub fn dashboard(
    table: &LossTable,
    benchmark_id: &str,
    coverage: &[(String, CoverageReport)],
    stability: &[(String, StabilityReport)],
) -> Result<DashboardMetrics> {
    let (Some(&first), Some(&last)) = (table.origins.first(), table.origins.last()) else {
        return Err(NowcastError::EmptyTable);
    };
    let window = (first, last);
    for (id, c) in coverage {
        if !overlaps(window, c.window) {
            return Err(NowcastError::DisjointWindows(format!(
                "coverage for {id} spans {} to {}, losses span {first} to {last}",
                c.window.0, c.window.1
            )));
        }
    }
    let summary = table.summary();
    let bench = summary.get(benchmark_id).ok_or_else(|| {
        NowcastError::IdMismatch(format!("benchmark {benchmark_id:?} has no resolved losses"))
    })?;
    let benchmark_distance = summary
        .iter()
        .filter(|(id, _)| id.as_str() != benchmark_id)
        .filter_map(|(id, s)| {
            let r = s.rmsfe / bench.rmsfe;
            let m = s.mafe / bench.mafe;
            (r.is_finite() && m.is_finite() && r > 0.0 && m > 0.0).then(|| BenchmarkDistance {
                model_id: id.clone(),
                benchmark_id: benchmark_id.to_string(),
                rmsfe_ratio: r,
                mafe_ratio: m,
            })
        })
        .collect();
    let coverage = coverage
        .iter()
        .map(|(id, c)| CoverageIndicator {
            model_id: id.clone(),
            window: c.window,
            nominal: c.nominal,
            empirical: c.empirical,
            mean_width: c.mean_width,
        })
        .collect();
    let mut instability_signals = Vec::new();
    let mut sign_inconsistencies = Vec::new();
    let stability = stability
        .iter()
        .map(|(id, s)| {
            instability_signals.extend(s.flags.iter().map(|f| InstabilitySignal {
                model_id: id.clone(),
                flag: f.clone(),
            }));
            sign_inconsistencies.extend(
                s.inconsistent()
                    .into_iter()
                    .map(|f| (id.clone(), f.to_string())),
            );
            let known: Vec<f64> = s.rank_correlations.iter().flatten().copied().collect();
            StabilityIndicator {
                model_id: id.clone(),
                rank_correlations: s.rank_correlations.clone(),
                median_rank_correlation: (!known.is_empty()).then(|| stats::median(&known)),
                median_iqr: if s.iqr.is_empty() {
                    0.0
                } else {
                    stats::median(&s.iqr)
                },
            }
        })
        .collect();
    Ok(DashboardMetrics {
        window,
        coverage,
        stability,
        benchmark_distance,
        instability_signals,
        sign_inconsistencies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    pub feature: String,
    pub block: EconomicBlock,
    pub value: f64,
    pub band: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseFlags {
    pub low_confidence: bool,
    pub fallback_used: bool,
    pub leakage_clean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseProvenance {
    pub model_id: String,
    /// Model format plus digest of the fitted parameters.
    pub model_version: String,
    pub config_hash: String,
    pub data_digest: String,
    pub bootstrap: BlockBootstrapConfig,
    pub attribution_method: String,
    pub fallback_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleasePackage {
    pub format: String,
    pub origin: NaiveDate,
    pub point: f64,
    /// The model's own point, kept when the fallback replaced it.
    pub model_point: f64,
    pub interval: PredictionInterval,
    pub waterfall: Waterfall,
    pub driver_table: Vec<Driver>,
    pub flags: ReleaseFlags,
    pub provenance: ReleaseProvenance,
}

impl ReleasePackage {
    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("package serializes")
    }

    /// Plain-text summary for the release note.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Nowcast release {} ({})",
            self.origin, self.provenance.model_id
        );
        let _ = writeln!(s, "config hash {}", self.provenance.config_hash);
        let _ = writeln!(s, "point       {:.4}", self.point);
        let _ = writeln!(
            s,
            "interval    [{:.4}, {:.4}] at {:.0}%",
            self.interval.lower,
            self.interval.upper,
            100.0 * (1.0 - self.interval.alpha)
        );
        if self.flags.fallback_used {
            let _ = writeln!(
                s,
                "LOW CONFIDENCE: interval wider than tolerance; point taken from {} (model point {:.4})",
                self.provenance.fallback_model.as_deref().unwrap_or("?"),
                self.model_point
            );
        }
        let _ = writeln!(s, "waterfall ({})", self.provenance.attribution_method);
        let _ = writeln!(s, "  base                 {:+.4}", self.waterfall.base);
        for b in &self.waterfall.bars {
            let _ = writeln!(s, "  {:<20} {:+.4}", b.block.as_str(), b.contribution);
        }
        let _ = writeln!(s, "  residual             {:+.4}", self.waterfall.residual);
        let _ = writeln!(s, "top drivers");
        for d in &self.driver_table {
            match d.band {
                Some((lo, hi)) => {
                    let _ = writeln!(
                        s,
                        "  {:<24} {:+.4}  [{:.4}, {:.4}]",
                        d.feature, d.value, lo, hi
                    );
                }
                None => {
                    let _ = writeln!(s, "  {:<24} {:+.4}", d.feature, d.value);
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// Logical timestamp: position in the audit stream.
    pub sequence: u64,
    pub actor: String,
    pub event: String,
    pub config_hash: String,
    pub data_digest: String,
    pub model_version: String,
    pub outputs_digest: String,
}

/// Append-only sequence of audit records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn append(
        &mut self,
        actor: &str,
        event: &str,
        config_hash: &str,
        data_digest: &str,
        model_version: &str,
        outputs_digest: &str,
    ) -> &AuditRecord {
        self.records.push(AuditRecord {
            sequence: self.records.len() as u64,
            actor: actor.to_string(),
            event: event.to_string(),
            config_hash: config_hash.to_string(),
            data_digest: data_digest.to_string(),
            model_version: model_version.to_string(),
            outputs_digest: outputs_digest.to_string(),
        });
        self.records.last().unwrap()
    }

    /// Reads a JSON-lines audit file; a missing file is an empty log.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path)?;
        let records: Vec<AuditRecord> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        for (k, r) in records.iter().enumerate() {
            if r.sequence != k as u64 {
                return Err(NowcastError::Parse(format!(
                    "audit sequence gap at record {k}"
                )));
            }
        }
        Ok(Self { records })
    }

    /// Appends records from `from` onward to a JSON-lines file.
    pub fn append_to(&self, path: &Path, from: usize) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        for r in &self.records[from..] {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    }
}

/// Version string of a fitted model: format and parameter digest.
pub fn model_version(model: &FittedModel) -> String {
    format!("{MODEL_FORMAT}:{}", &json_digest(&model.params)[..16])
}

pub struct ReleaseInputs<'a> {
    pub origin: NaiveDate,
    pub model: &'a FittedModel,
    pub interval: Option<&'a PredictionInterval>,
    pub attribution: Option<&'a AttributionVector>,
    pub bands: Option<&'a ImportanceProfile>,
    pub blocks: &'a BTreeMap<String, EconomicBlock>,
    pub leakage: Option<&'a LeakageVerdict>,
    pub tolerance: f64,
    pub benchmark: Option<&'a BenchmarkForecast>,
    pub bootstrap: &'a BlockBootstrapConfig,
    pub config_hash: &'a str,
    pub data_digest: &'a str,
    pub top_k: usize,
    pub actor: &'a str,
}

/// Checks, fallback, waterfall and driver table; appends the audit
/// record. Refuses on a missing or dirty leakage verdict.
pub fn assemble_release(
    inputs: &ReleaseInputs,
    audit: &mut AuditLog,
) -> Result<(ReleasePackage, AuditRecord)> {
    let verdict = inputs
        .leakage
        .ok_or_else(|| NowcastError::IncompleteRelease("leakage audit verdict missing".into()))?;
    if !verdict.is_clean() {
        return Err(NowcastError::LeakageRefused(verdict.features()));
    }
    let interval = inputs
        .interval
        .ok_or_else(|| NowcastError::IncompleteRelease("prediction interval missing".into()))?;
    let attr = inputs
        .attribution
        .ok_or_else(|| NowcastError::IncompleteRelease("attribution missing".into()))?;
    let waterfall = waterfall_decomposition(attr, inputs.blocks)?;
    let fb = fallback_check(interval, inputs.tolerance, inputs.benchmark)?;

    let mut order: Vec<usize> = (0..attr.values.len()).collect();
    order.sort_by(|&a, &b| {
        attr.values[b]
            .abs()
            .total_cmp(&attr.values[a].abs())
            .then(a.cmp(&b))
    });
    let driver_table = order
        .into_iter()
        .take(inputs.top_k)
        .map(|j| {
            let feature = attr.feature_names[j].clone();
            let band = inputs.bands.and_then(|p| {
                p.feature_names
                    .iter()
                    .position(|f| *f == feature)
                    .map(|k| p.band[k])
            });
            Driver {
                block: inputs
                    .blocks
                    .get(&feature)
                    .copied()
                    .unwrap_or(EconomicBlock::Other),
                feature,
                value: attr.values[j],
                band,
            }
        })
        .collect();
    let version = model_version(inputs.model);
    let pkg = ReleasePackage {
        format: RELEASE_FORMAT.to_string(),
        origin: inputs.origin,
        point: fb.point,
        model_point: interval.point,
        interval: interval.clone(),
        waterfall,
        driver_table,
        flags: ReleaseFlags {
            low_confidence: fb.low_confidence,
            fallback_used: fb.fallback_used,
            leakage_clean: true,
        },
        provenance: ReleaseProvenance {
            model_id: inputs.model.spec.id.clone(),
            model_version: version.clone(),
            config_hash: inputs.config_hash.to_string(),
            data_digest: inputs.data_digest.to_string(),
            bootstrap: inputs.bootstrap.clone(),
            attribution_method: attr.method.as_str().to_string(),
            fallback_model: fb.fallback_model,
        },
    };
    let record = audit
        .append(
            inputs.actor,
            &format!("release {}", inputs.origin),
            inputs.config_hash,
            inputs.data_digest,
            &version,
            &pkg.digest(),
        )
        .clone();
    Ok((pkg, record))
}
