//! Run configuration: one TOML file drives every command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Months, NaiveDate};
use nowcast_core::bootstrap::BlockBootstrapConfig;
use nowcast_core::combination::WeightScheme;
use nowcast_core::digest::json_digest;
use nowcast_core::explain::{Baseline, Sign};
use nowcast_core::models::ModelSpec;
use nowcast_core::vintage::Recipe;
use nowcast_core::walk_forward::{ActualsVintage, EvaluationPlan, LossFunction, Window};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub observations: PathBuf,
    /// Recipe file (TOML). When absent the inline `[recipe]` table is used.
    #[serde(default)]
    pub recipe: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Append-only audit trail; `<output_dir>/audit.jsonl` by default.
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginSchedule {
    pub first: NaiveDate,
    pub last: NaiveDate,
    #[serde(default = "default_step")]
    pub every_months: u32,
}

fn default_step() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default)]
    pub origins: Vec<NaiveDate>,
    #[serde(default)]
    pub origin_schedule: Option<OriginSchedule>,
    #[serde(default = "default_window")]
    pub window: Window,
    pub portfolio: Vec<ModelSpec>,
    #[serde(default)]
    pub benchmarks: Vec<String>,
    /// Relative margin of the benchmark filter.
    #[serde(default)]
    pub margin: f64,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossFunction>,
}

fn default_window() -> Window {
    Window::Expanding
}

fn default_losses() -> Vec<LossFunction> {
    vec![LossFunction::Sqerr, LossFunction::Abserr]
}

// flatten and deny_unknown_fields do not mix in serde
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSection {
    #[serde(flatten)]
    pub config: BlockBootstrapConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Models whose backtest intervals feed the coverage report; every
    /// portfolio member when empty.
    #[serde(default)]
    pub coverage_models: Vec<String>,
}

fn default_alpha() -> f64 {
    0.10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionChoice {
    /// TreeSHAP for trees, linear contributions for linear families,
    /// integrated gradients otherwise.
    #[default]
    Auto,
    TreeShap,
    LinearContribution,
    IntegratedGradients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainSection {
    #[serde(default)]
    pub method: AttributionChoice,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Bootstrap bands on the driver table.
    #[serde(default = "yes")]
    pub bands: bool,
    #[serde(default)]
    pub priors: BTreeMap<String, Sign>,
    #[serde(default = "default_rank_threshold")]
    pub rank_threshold: usize,
}

fn default_steps() -> usize {
    64
}

fn yes() -> bool {
    true
}

fn default_rank_threshold() -> usize {
    3
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            method: AttributionChoice::Auto,
            baseline: Baseline::default(),
            steps: default_steps(),
            bands: true,
            priors: BTreeMap::new(),
            rank_threshold: default_rank_threshold(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineOver {
    #[default]
    Survivors,
    Retained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McsSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_mcs_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub block_length: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mcs_loss")]
    pub loss: LossFunction,
    #[serde(default = "default_scheme")]
    pub weights: WeightScheme,
    #[serde(default)]
    pub combine_over: CombineOver,
}

fn default_mcs_replicates() -> usize {
    999
}

fn default_mcs_loss() -> LossFunction {
    LossFunction::Sqerr
}

fn default_scheme() -> WeightScheme {
    WeightScheme::InverseCumulative
}

impl Default for McsSection {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            replicates: default_mcs_replicates(),
            block_length: None,
            seed: 0,
            loss: default_mcs_loss(),
            weights: default_scheme(),
            combine_over: CombineOver::Survivors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportingSection {
    /// Portfolio member whose nowcast is released.
    pub model: String,
    /// Widest admissible interval, in target units. No default.
    pub tolerance: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub actuals_vintage: ActualsVintage,
    /// Vintage cap for realized actuals.
    #[serde(default)]
    pub evaluation_cutoff: Option<NaiveDate>,
}

fn default_top_k() -> usize {
    nowcast_core::report::DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeSection {
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub recipe: Option<Recipe>,
    pub plan: PlanConfig,
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default)]
    pub mcs: McsSection,
    pub reporting: ReportingSection,
    #[serde(default)]
    pub runtime: RuntimeSection,
}

/// Config after file references are resolved and checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub recipe: Recipe,
    pub origins: Vec<NaiveDate>,
    pub hash: String,
}

impl Resolved {
    pub fn plan(&self) -> EvaluationPlan {
        EvaluationPlan {
            recipe: self.recipe.clone(),
            origins: self.origins.clone(),
            window: self.config.plan.window,
            portfolio: self.config.plan.portfolio.clone(),
            benchmark_ids: self.config.plan.benchmarks.clone(),
            loss_functions: self.config.plan.losses.clone(),
        }
    }

    pub fn spec(&self, id: &str) -> Result<&ModelSpec, CliError> {
        self.config
            .plan
            .portfolio
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| CliError::validation(format!("model {id:?} is not in the portfolio")))
    }

    pub fn audit_path(&self) -> PathBuf {
        self.config
            .paths
            .audit_log
            .clone()
            .unwrap_or_else(|| self.config.paths.output_dir.join("audit.jsonl"))
    }
}

/// Environment variables that may override config values. Only paths and
/// the thread count are overridable.
pub const ENV_OBSERVATIONS: &str = "NOWCAST_OBSERVATIONS";
pub const ENV_OUTPUT_DIR: &str = "NOWCAST_OUTPUT_DIR";
pub const ENV_AUDIT_LOG: &str = "NOWCAST_AUDIT_LOG";
pub const ENV_THREADS: &str = "NOWCAST_THREADS";

fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn schedule(s: &OriginSchedule) -> Result<Vec<NaiveDate>, CliError> {
    if s.every_months == 0 || s.last < s.first {
        return Err(CliError::validation("origin_schedule needs every_months >= 1 and first <= last"));
    }
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let d = s
            .first
            .checked_add_months(Months::new(k * s.every_months))
            .ok_or_else(|| CliError::validation("origin schedule overflows the calendar"))?;
        if d > s.last {
            break;
        }
        out.push(d);
        k += 1;
    }
    Ok(out)
}

/// Hash of everything except paths and the thread count: the settings
/// that determine results.
pub fn config_hash(cfg: &RunConfig, recipe: &Recipe, origins: &[NaiveDate]) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        recipe: &'a Recipe,
        origins: &'a [NaiveDate],
        plan: &'a PlanConfig,
        bootstrap: &'a BootstrapSection,
        explain: &'a ExplainSection,
        mcs: &'a McsSection,
        reporting: &'a ReportingSection,
    }
    json_digest(&Hashed {
        recipe,
        origins,
        plan: &cfg.plan,
        bootstrap: &cfg.bootstrap,
        explain: &cfg.explain,
        mcs: &cfg.mcs,
        reporting: &cfg.reporting,
    })
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::validation(format!("config: {e}")))
}

/// Reads, applies environment overrides, resolves relative paths against
/// the config's directory and validates.
pub fn load(path: &Path) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = parse(&text)?;
    if let Ok(v) = std::env::var(ENV_OBSERVATIONS) {
        cfg.paths.observations = v.into();
    }
    if let Ok(v) = std::env::var(ENV_OUTPUT_DIR) {
        cfg.paths.output_dir = v.into();
    }
    if let Ok(v) = std::env::var(ENV_AUDIT_LOG) {
        cfg.paths.audit_log = Some(v.into());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.paths.observations = relative_to(base, &cfg.paths.observations);
    cfg.paths.output_dir = relative_to(base, &cfg.paths.output_dir);
    cfg.paths.recipe = cfg.paths.recipe.as_deref().map(|p| relative_to(base, p));
    cfg.paths.audit_log = cfg.paths.audit_log.as_deref().map(|p| relative_to(base, p));

    if !cfg.paths.observations.is_file() {
        return Err(CliError::validation(format!(
            "observation file {} does not exist",
            cfg.paths.observations.display()
        )));
    }
    let recipe = match (&cfg.paths.recipe, &cfg.recipe) {
        (Some(_), Some(_)) => return Err(CliError::validation("give either paths.recipe or [recipe], not both")),
        (Some(p), None) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::validation(format!("cannot read recipe {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::validation(format!("recipe: {e}")))?
        }
        (None, Some(r)) => r.clone(),
        (None, None) => return Err(CliError::validation("no recipe: set paths.recipe or add a [recipe] table")),
    };
    let mut origins = cfg.plan.origins.clone();
    if let Some(s) = &cfg.plan.origin_schedule {
        if !origins.is_empty() {
            return Err(CliError::validation("give either plan.origins or plan.origin_schedule, not both"));
        }
        origins = schedule(s)?;
    }
    validate(&cfg)?;
    let hash = config_hash(&cfg, &recipe, &origins);
    let resolved = Resolved {
        config: cfg,
        recipe,
        origins,
        hash,
    };
    resolved.plan().validate()?;
    resolved.spec(&resolved.config.reporting.model)?;
    Ok(resolved)
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let r = &cfg.reporting;
    if !(r.tolerance > 0.0 && r.tolerance.is_finite()) {
        return Err(CliError::validation(format!("reporting.tolerance must be > 0, got {}", r.tolerance)));
    }
    if r.top_k == 0 {
        return Err(CliError::validation("reporting.top_k must be >= 1"));
    }
    let a = cfg.bootstrap.alpha;
    if !(a > 0.0 && a < 1.0) {
        return Err(CliError::validation(format!("bootstrap.alpha {a} outside (0, 1)")));
    }
    cfg.bootstrap.config.validate()?;
    if !(cfg.mcs.alpha > 0.0 && cfg.mcs.alpha < 1.0) {
        return Err(CliError::validation(format!("mcs.alpha {} outside (0, 1)", cfg.mcs.alpha)));
    }
    if !(cfg.plan.margin >= 0.0 && cfg.plan.margin.is_finite()) {
        return Err(CliError::validation("plan.margin must be >= 0"));
    }
    if cfg.explain.steps < 16 {
        return Err(CliError::validation("explain.steps must be >= 16"));
    }
    if cfg.runtime.threads == Some(0) {
        return Err(CliError::validation("runtime.threads must be >= 1"));
    }
    let ids: Vec<&str> = cfg.plan.portfolio.iter().map(|s| s.id.as_str()).collect();
    for m in &cfg.bootstrap.coverage_models {
        if !ids.contains(&m.as_str()) {
            return Err(CliError::validation(format!("coverage model {m:?} is not in the portfolio")));
        }
    }
    Ok(())
}

/// Thread count: `NOWCAST_THREADS` over `runtime.threads`.
pub fn threads(cfg: Option<&RunConfig>) -> Result<Option<usize>, CliError> {
    match std::env::var(ENV_THREADS) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| CliError::validation(format!("{ENV_THREADS}={v:?} is not a positive integer"))),
        Err(_) => Ok(cfg.and_then(|c| c.runtime.threads)),
    }
}
