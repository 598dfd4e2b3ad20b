use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use nowcast_core::bootstrap::{bootstrap_forecast, coverage_report, percentile_interval, CoverageReport, PredictionInterval};
use nowcast_core::combination::{
    combination_weights, mcs, restrict_models, weight_trajectory, write_mcs_csv, write_trajectory_csv, McsConfig,
};
use nowcast_core::dgp::{apply_publication_lags, simulate, DgpSpec, PublicationScheme};
use nowcast_core::explain::{
    importance_bands, integrated_gradients, linear_contributions, stability_report, tree_shap, write_attributions_csv,
    AttributionVector, StabilityConfig,
};
use nowcast_core::models::{fit, Family, FittedModel, ModelSpec, TrainingSet};
use nowcast_core::report::{assemble_release, block_tags, dashboard, pick_benchmark, AuditLog, ReleaseInputs};
use nowcast_core::vintage::{ingest_csv, write_observations_csv, ObservationLog};
use nowcast_core::walk_forward::{
    actuals, benchmark_filter, compute_losses, leakage_audit, run_walk_forward, training_set_at, FilterFlag,
    LossTable, WalkForward,
};
use nowcast_core::NowcastError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::appendix;
use crate::config::{self, AttributionChoice, CombineOver, Resolved};
use crate::error::CliError;
use crate::output::{to_bytes, Outputs};

fn read_log(path: &Path) -> Result<ObservationLog, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(&format!("open {}", path.display()), e))?;
    let mut log = ObservationLog::new();
    let summary = ingest_csv(&mut log, file)?;
    if summary.invalid_count() > 0 {
        let first = summary.rejects.iter().find(|r| !matches!(r.reason, nowcast_core::vintage::RejectReason::Duplicate));
        return Err(CliError::validation(format!(
            "{} invalid rows in {} (first: row {} {})",
            summary.invalid_count(),
            path.display(),
            first.map_or(0, |r| r.index),
            first.map(|r| r.reason.label()).unwrap_or_default()
        )));
    }
    Ok(log)
}

#[derive(Serialize)]
struct RejectOut {
    index: usize,
    reason: String,
}

/// Validates `data` and, with a store, merges it into the store.
pub fn ingest(data: &Path, store: Option<&Path>) -> Result<serde_json::Value, CliError> {
    let mut log = match store {
        Some(p) if p.exists() => read_log(p)?,
        _ => ObservationLog::new(),
    };
    let before = log.len();
    let file = std::fs::File::open(data).map_err(|e| CliError::io(&format!("open {}", data.display()), e))?;
    let summary = ingest_csv(&mut log, file)?;
    if let Some(p) = store {
        let bytes = to_bytes(|b| write_observations_csv(b, &log.records()))?;
        std::fs::write(p, bytes).map_err(|e| CliError::io(&format!("write {}", p.display()), e))?;
    }
    let rejects: Vec<RejectOut> = summary
        .rejects
        .iter()
        .map(|r| RejectOut {
            index: r.index,
            reason: r.reason.label(),
        })
        .collect();
    Ok(json!({
        "command": "ingest",
        "inserts": summary.inserts,
        "revisions": summary.revisions,
        "rejects": rejects,
        "log_entries_before": before,
        "log_entries": log.len(),
        "log_digest": log.digest(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFile {
    #[serde(default = "default_target")]
    pub target: String,
    #[serde(default)]
    pub monthly_predictors: bool,
    pub dgp: DgpSpec,
    #[serde(default)]
    pub publication: PublicationScheme,
}

fn default_target() -> String {
    "gdp".to_string()
}

/// Draws a synthetic panel and writes it as an observation CSV, with the
/// ground truth next to it.
pub fn simulate_cmd(spec_path: &Path, out: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| CliError::validation(format!("cannot read spec {}: {e}", spec_path.display())))?;
    let spec: SimulationFile = toml::from_str(&text).map_err(|e| CliError::validation(format!("spec: {e}")))?;
    let sim = simulate(&spec.dgp)?;
    let obs = apply_publication_lags(&sim.to_panel(&spec.target, spec.monthly_predictors), &spec.publication)?;
    let bytes = to_bytes(|b| write_observations_csv(b, &obs))?;
    std::fs::write(out, &bytes).map_err(|e| CliError::io(&format!("write {}", out.display()), e))?;
    let truth_path = out.with_extension("truth.json");
    let truth = serde_json::to_string_pretty(&json!({
        "predictor_names": sim.predictor_names,
        "break_period": sim.break_period(),
        "truth": sim.truth,
    }))
    .expect("truth serializes");
    std::fs::write(&truth_path, truth).map_err(|e| CliError::io(&format!("write {}", truth_path.display()), e))?;
    Ok(json!({
        "command": "simulate",
        "observations": obs.len(),
        "out": out,
        "truth": truth_path,
        "digest": nowcast_core::digest::sha256_hex(&bytes),
    }))
}

fn attribute(model: &FittedModel, r: &Resolved) -> nowcast_core::Result<AttributionVector> {
    let e = &r.config.explain;
    let tree = matches!(model.family(), Family::RandomForest | Family::Gbdt);
    let choice = match e.method {
        AttributionChoice::Auto if tree => AttributionChoice::TreeShap,
        AttributionChoice::Auto if model.linear_params().is_some() => AttributionChoice::LinearContribution,
        AttributionChoice::Auto => AttributionChoice::IntegratedGradients,
        other => other,
    };
    match choice {
        AttributionChoice::TreeShap => tree_shap(model, &model.query),
        AttributionChoice::LinearContribution => linear_contributions(model, &model.query),
        _ => integrated_gradients(model, &model.query, &e.baseline, e.steps),
    }
}

fn interval(spec: &ModelSpec, ts: &TrainingSet, r: &Resolved, origin: NaiveDate) -> Result<PredictionInterval, CliError> {
    let b = &r.config.bootstrap;
    let point = fit(spec, ts)?.nowcast();
    let reps = bootstrap_forecast(spec, ts, &b.config)?;
    if !reps.failures.is_empty() {
        log::warn!("{}: {} of {} replicates failed at {origin}", spec.id, reps.failures.len(), b.config.replicates);
    }
    let values: Vec<f64> = reps.values.iter().map(|v| v.1).collect();
    let mut iv = percentile_interval(&values, b.alpha, point)?;
    iv.origin = Some(origin);
    Ok(iv)
}

struct Evaluation {
    wf: WalkForward,
    table: LossTable,
    flags: BTreeMap<String, FilterFlag>,
}

fn evaluate(r: &Resolved, log: &ObservationLog) -> Result<Evaluation, CliError> {
    let plan = r.plan();
    let wf = run_walk_forward(&plan, log)?;
    let rep = &r.config.reporting;
    let truth = actuals(log, &r.recipe, rep.actuals_vintage, rep.evaluation_cutoff)?;
    let table = compute_losses(&wf.records, &truth)?;
    let flags = if plan.benchmark_ids.is_empty() {
        table.models.iter().map(|m| (m.clone(), FilterFlag::Retained)).collect()
    } else {
        benchmark_filter(&table, &plan.benchmark_ids, r.config.plan.margin)?
    };
    Ok(Evaluation { wf, table, flags })
}

struct CoverageRun {
    model: String,
    rows: Vec<(PredictionInterval, Option<f64>)>,
    report: Option<CoverageReport>,
}

fn coverage_for(r: &Resolved, log: &ObservationLog, ev: &Evaluation, id: &str) -> Result<CoverageRun, CliError> {
    let spec = r.spec(id)?;
    let truth: BTreeMap<_, _> = ev
        .table
        .target_periods
        .iter()
        .zip(&ev.table.actuals)
        .map(|(p, a)| (*p, *a))
        .collect();
    let mut rows = Vec::new();
    for rec in ev.wf.records.iter().filter(|x| x.model_id == id) {
        let (_, ts) = training_set_at(log, &r.recipe, r.config.plan.window, spec, rec.origin)?;
        let iv = interval(spec, &ts, r, rec.origin)?;
        rows.push((iv, truth.get(&rec.target_period).copied()));
    }
    let (ivs, acts): (Vec<_>, Vec<_>) = rows.iter().cloned().unzip();
    let report = coverage_report(&ivs, &acts).ok();
    Ok(CoverageRun {
        model: id.to_string(),
        rows,
        report,
    })
}

fn forecasts_csv(wf: &WalkForward) -> Result<Vec<u8>, CliError> {
    to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["origin", "model", "target_period", "forecast", "training_rows", "window_start", "window_end"])?;
        for x in &wf.records {
            w.write_record([
                x.origin.to_string(),
                x.model_id.clone(),
                x.target_period.to_string(),
                x.forecast.to_string(),
                x.training_rows.to_string(),
                x.training_window.0.to_string(),
                x.training_window.1.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

fn skips_csv(wf: &WalkForward) -> Result<Vec<u8>, CliError> {
    to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["origin", "model", "reason"])?;
        for s in &wf.skips {
            w.write_record([s.origin.to_string(), s.model_id.clone().unwrap_or_default(), s.reason.clone()])?;
        }
        w.flush()?;
        Ok(())
    })
}

fn coverage_csv(runs: &[CoverageRun]) -> Result<Vec<u8>, CliError> {
    to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["model", "origin", "lower", "point", "upper", "actual", "covered"])?;
        for run in runs {
            for (iv, a) in &run.rows {
                w.write_record([
                    run.model.clone(),
                    iv.origin.map(|d| d.to_string()).unwrap_or_default(),
                    iv.lower.to_string(),
                    iv.point.to_string(),
                    iv.upper.to_string(),
                    a.map(|v| v.to_string()).unwrap_or_default(),
                    a.map(|v| iv.contains(v).to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })
}

fn summary_csv(ev: &Evaluation) -> Result<Vec<u8>, CliError> {
    to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["model", "rmsfe", "mafe", "origins", "filter"])?;
        for (id, s) in ev.table.summary() {
            let flag = match ev.flags.get(&id) {
                Some(FilterFlag::Flagged) => "flagged",
                _ => "retained",
            };
            w.write_record([id.clone(), s.rmsfe.to_string(), s.mafe.to_string(), s.n.to_string(), flag.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Walk-forward evaluation, coverage, model confidence set and weights.
pub fn backtest(config_path: &Path) -> Result<serde_json::Value, CliError> {
    let r = config::load(config_path)?;
    let log = read_log(&r.config.paths.observations)?;
    let ev = evaluate(&r, &log)?;
    let mut out = Outputs::create(&r.config.paths.output_dir, &r.hash)?;

    out.csv("forecasts.csv", forecasts_csv(&ev.wf)?)?;
    out.csv("skips.csv", skips_csv(&ev.wf)?)?;
    out.csv("losses.csv", to_bytes(|b| ev.table.write_csv(b))?)?;
    out.csv("summary.csv", summary_csv(&ev)?)?;

    let coverage_ids: Vec<String> = if r.config.bootstrap.coverage_models.is_empty() {
        r.config.plan.portfolio.iter().map(|s| s.id.clone()).collect()
    } else {
        r.config.bootstrap.coverage_models.clone()
    };
    let runs = coverage_ids
        .iter()
        .map(|id| coverage_for(&r, &log, &ev, id))
        .collect::<Result<Vec<_>, _>>()?;
    out.csv("coverage.csv", coverage_csv(&runs)?)?;

    let retained: Vec<String> = ev
        .table
        .models
        .iter()
        .filter(|m| ev.flags.get(*m) != Some(&FilterFlag::Flagged))
        .cloned()
        .collect();
    let m = &r.config.mcs;
    let mcs_cfg = McsConfig {
        replicates: m.replicates,
        block_length: m.block_length,
        seed: m.seed,
        loss: m.loss,
        rolling: None,
    };
    let retained_table = restrict_models(&ev.table, &retained)?;
    let (set, mcs_note) = match mcs(&retained_table, m.alpha, &mcs_cfg) {
        Ok(set) => (Some(set), None),
        Err(e @ (NowcastError::InsufficientData(_) | NowcastError::EmptyTable)) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    if let Some(set) = &set {
        out.csv("mcs.csv", to_bytes(|b| write_mcs_csv(b, set))?)?;
    }
    let members = match (m.combine_over, &set) {
        (CombineOver::Survivors, Some(set)) => set.survivors.clone(),
        _ => retained.clone(),
    };
    let member_table = restrict_models(&ev.table, &members)?;
    let weights = combination_weights(&member_table, m.weights, m.loss)?;
    if member_table.origins.len() >= 2 {
        let traj = weight_trajectory(&member_table, m.weights, m.loss)?;
        out.csv("weights.csv", to_bytes(|b| write_trajectory_csv(b, &traj))?)?;
    }

    let coverage: Vec<_> = runs
        .iter()
        .map(|c| json!({"model": c.model, "report": c.report}))
        .collect();
    out.json(
        "backtest.json",
        &json!({
            "data_digest": log.digest(),
            "origins": r.origins,
            "records": ev.wf.records.len(),
            "skips": ev.wf.skips.len(),
            "summary": ev.table.summary(),
            "filter": ev.flags,
            "coverage": coverage,
            "mcs": set,
            "mcs_note": mcs_note,
            "combination": weights,
        }),
    )?;
    out.text("appendix.txt", &appendix::render(&r, &log))?;
    let digest = out.finish("manifest.json")?;
    Ok(json!({
        "command": "backtest",
        "config_hash": r.hash,
        "outputs_digest": digest,
        "output_dir": r.config.paths.output_dir,
    }))
}

/// Release package for one origin. A dirty leakage verdict refuses the
/// release and writes nothing.
pub fn nowcast(config_path: &Path, origin: NaiveDate) -> Result<serde_json::Value, CliError> {
    let r = config::load(config_path)?;
    let log = read_log(&r.config.paths.observations)?;
    let rep = &r.config.reporting;
    let spec = r.spec(&rep.model)?.clone();

    let mut plan = r.plan();
    plan.origins = vec![origin];
    let verdict = leakage_audit(&plan, &log);

    let window = r.config.plan.window;
    let (design, ts) = training_set_at(&log, &r.recipe, window, &spec, origin)?;
    let model = fit(&spec, &ts)?;
    let iv = interval(&spec, &ts, &r, origin)?;
    let digest = design.content_digest();
    let attr = attribute(&model, &r)?.with_origin(origin).with_data_digest(digest.clone());
    let bands = if r.config.explain.bands {
        Some(importance_bands(&spec, &ts, &r.config.bootstrap.config, r.config.bootstrap.alpha, |m| attribute(m, &r))?)
    } else {
        None
    };
    let mut candidates = Vec::new();
    for id in &r.config.plan.benchmarks {
        let b = r.spec(id)?;
        let (_, bts) = training_set_at(&log, &r.recipe, window, b, origin)?;
        candidates.push((b.clone(), fit(b, &bts)?.nowcast()));
    }
    let benchmark = pick_benchmark(&candidates);
    let blocks = block_tags(&design);

    let audit_path = r.audit_path();
    let mut audit = AuditLog::load(&audit_path)?;
    let before = audit.records().len();
    let data_digest = log.digest();
    let inputs = ReleaseInputs {
        origin,
        model: &model,
        interval: Some(&iv),
        attribution: Some(&attr),
        bands: bands.as_ref(),
        blocks: &blocks,
        leakage: Some(&verdict),
        tolerance: rep.tolerance,
        benchmark: benchmark.as_ref(),
        bootstrap: &r.config.bootstrap.config,
        config_hash: &r.hash,
        data_digest: &data_digest,
        top_k: rep.top_k,
        actor: "nowcast-cli",
    };
    let (pkg, record) = assemble_release(&inputs, &mut audit)?;

    let mut out = Outputs::create(&r.config.paths.output_dir, &r.hash)?;
    let stem = format!("release_{origin}");
    out.json(&format!("{stem}.json"), &pkg)?;
    out.text(&format!("{stem}.txt"), &pkg.summary_text())?;
    out.csv(&format!("{stem}_attributions.csv"), to_bytes(|b| write_attributions_csv(b, std::slice::from_ref(&attr)))?)?;
    out.text("appendix.txt", &appendix::render(&r, &log))?;
    let outputs = out.finish(&format!("{stem}_manifest.json"))?;
    if let Some(dir) = audit_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io("create audit directory", e))?;
    }
    audit.append_to(&audit_path, before)?;
    Ok(json!({
        "command": "nowcast",
        "origin": origin,
        "config_hash": r.hash,
        "package_digest": record.outputs_digest,
        "outputs_digest": outputs,
        "point": pkg.point,
        "interval": [pkg.interval.lower, pkg.interval.upper],
        "low_confidence": pkg.flags.low_confidence,
        "fallback_used": pkg.flags.fallback_used,
    }))
}

/// Leakage verdict over every origin plus dashboard indicators for the
/// released model. Writes the report even when the verdict is dirty, then
/// fails with the refusal code.
pub fn audit(config_path: &Path) -> Result<serde_json::Value, CliError> {
    let r = config::load(config_path)?;
    let log = read_log(&r.config.paths.observations)?;
    let verdict = leakage_audit(&r.plan(), &log);
    let ev = evaluate(&r, &log)?;
    let id = r.config.reporting.model.clone();
    let bench = r
        .config
        .plan
        .benchmarks
        .first()
        .ok_or_else(|| CliError::validation("audit needs at least one benchmark in plan.benchmarks"))?
        .clone();

    let cov = coverage_for(&r, &log, &ev, &id)?;
    let spec = r.spec(&id)?;
    let mut vectors = Vec::new();
    for rec in ev.wf.records.iter().filter(|x| x.model_id == id) {
        let (design, ts) = training_set_at(&log, &r.recipe, r.config.plan.window, spec, rec.origin)?;
        let model = fit(spec, &ts)?;
        vectors.push(attribute(&model, &r)?.with_origin(rec.origin).with_data_digest(design.content_digest()));
    }
    let stab_cfg = StabilityConfig {
        rank_threshold: r.config.explain.rank_threshold,
        top_k: r.config.reporting.top_k,
    };
    let stability = match stability_report(&vectors, &r.config.explain.priors, stab_cfg) {
        Ok(s) => vec![(id.clone(), s)],
        Err(NowcastError::InsufficientData(msg)) => {
            log::warn!("stability skipped: {msg}");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    let coverage: Vec<_> = cov.report.iter().map(|c| (id.clone(), c.clone())).collect();
    let metrics = dashboard(&ev.table, &bench, &coverage, &stability)?;

    let mut out = Outputs::create(&r.config.paths.output_dir, &r.hash)?;
    out.json(
        "audit.json",
        &json!({
            "data_digest": log.digest(),
            "leakage_clean": verdict.is_clean(),
            "leakage": verdict,
            "dashboard": metrics,
        }),
    )?;
    let digest = out.finish("audit_manifest.json")?;
    if !verdict.is_clean() {
        return Err(CliError::leakage(verdict.features()));
    }
    Ok(json!({
        "command": "audit",
        "config_hash": r.hash,
        "leakage_clean": true,
        "outputs_digest": digest,
    }))
}
