//! Plain-text methodological appendix rendered from the run config and
//! the observation log.

use std::collections::BTreeMap;
use std::fmt::Write;

use nowcast_core::models::HyperValue;
use nowcast_core::vintage::ObservationLog;
use nowcast_core::walk_forward::Window;

use crate::config::Resolved;

fn median_i64(mut v: Vec<i64>) -> Option<i64> {
    v.sort_unstable();
    (!v.is_empty()).then(|| v[v.len() / 2])
}

pub fn render(r: &Resolved, log: &ObservationLog) -> String {
    let cfg = &r.config;
    let mut s = String::new();
    let _ = writeln!(s, "METHODOLOGICAL APPENDIX");
    let _ = writeln!(s, "config hash {}", r.hash);
    let _ = writeln!(s, "data digest {}", log.digest());

    let _ = writeln!(s, "\n1. Data sources and release calendar");
    let _ = writeln!(s, "observation log: {}", cfg.paths.observations.display());
    let mut lags: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    let mut revisions: BTreeMap<String, usize> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for o in log.records() {
        if seen.insert((o.series_id.clone(), o.ref_period)) {
            lags.entry(o.series_id.clone())
                .or_default()
                .push((o.published_at - o.ref_period.end_date()).num_days());
        } else {
            *revisions.entry(o.series_id.clone()).or_default() += 1;
        }
    }
    for id in log.series_ids() {
        let first = log.first_releases(id);
        let (Some(lo), Some(hi)) = (first.keys().next(), first.keys().last()) else {
            continue;
        };
        let freq = log.frequency_of(id).map(|f| f.to_string()).unwrap_or_default();
        let lag = median_i64(lags.remove(id).unwrap_or_default()).unwrap_or(0);
        let _ = writeln!(
            s,
            "  {id:<16} {freq:<10} {lo} to {hi}, median first-release lag {lag} days, {} revisions",
            revisions.get(id).copied().unwrap_or(0)
        );
    }

    let _ = writeln!(s, "\n2. Transformations");
    let t = &r.recipe.target;
    let _ = writeln!(s, "target {} ({:?}), transforms {:?}", t.series, t.aggregation, t.transforms);
    for f in &r.recipe.features {
        let _ = writeln!(
            s,
            "  {:<16} from {} ({:?}), transforms {:?}, lag {}, block {}, standardize {:?}{}",
            f.name,
            f.series,
            f.aggregation,
            f.transforms,
            f.lag,
            f.block,
            f.standardize_scope,
            if f.vintage_offset_days != 0 {
                format!(", vintage offset {} days", f.vintage_offset_days)
            } else {
                String::new()
            }
        );
    }
    let _ = writeln!(
        s,
        "partial quarters {:?}, ragged edge {:?}",
        r.recipe.partial_quarters, r.recipe.ragged_edge
    );

    let _ = writeln!(s, "\n3. Update rules");
    let (first, last) = (r.origins.first(), r.origins.last());
    if let (Some(a), Some(b)) = (first, last) {
        let _ = writeln!(s, "{} forecast origins from {a} to {b}", r.origins.len());
    }
    let window = match cfg.plan.window {
        Window::Expanding => "expanding".to_string(),
        Window::Rolling(n) => format!("rolling, last {n} quarters"),
    };
    let _ = writeln!(s, "estimation window {window}; every model is refitted at every origin on the vintage of that date");
    let _ = writeln!(
        s,
        "realized values: {:?} release{}",
        cfg.reporting.actuals_vintage,
        cfg.reporting
            .evaluation_cutoff
            .map(|d| format!(", vintages up to {d}"))
            .unwrap_or_default()
    );

    let _ = writeln!(s, "\n4. Model specifications");
    for m in &cfg.plan.portfolio {
        let hp: Vec<String> = m
            .hyperparams
            .0
            .iter()
            .map(|(k, v)| match v {
                HyperValue::Number(x) => format!("{k}={x}"),
                HyperValue::List(xs) => format!("{k}={xs:?}"),
                HyperValue::Text(t) => format!("{k}={t}"),
            })
            .collect();
        let _ = writeln!(s, "  {:<16} {:<14} seed {} {}", m.id, m.family.to_string(), m.seed, hp.join(" "));
    }
    let _ = writeln!(
        s,
        "benchmarks {:?}, filter margin {}, losses {:?}",
        cfg.plan.benchmarks, cfg.plan.margin, cfg.plan.losses
    );

    let _ = writeln!(s, "\n5. Uncertainty, attribution and selection");
    let b = &cfg.bootstrap;
    let _ = writeln!(
        s,
        "bootstrap {:?}, {} replicates, seed {}, unit {:?}, {:?} intervals at level {}",
        b.config.scheme,
        b.config.replicates,
        b.config.seed,
        b.config.unit,
        b.config.interval,
        1.0 - b.alpha
    );
    let e = &cfg.explain;
    let _ = writeln!(
        s,
        "attribution {:?}, baseline {:?}, {} steps, bands {}, rank-shift threshold {}",
        e.method, e.baseline, e.steps, e.bands, e.rank_threshold
    );
    let m = &cfg.mcs;
    let _ = writeln!(
        s,
        "model confidence set at alpha {} on {:?}, {} replicates, seed {}; weights {} over {:?}",
        m.alpha,
        m.loss,
        m.replicates,
        m.seed,
        m.weights.as_str(),
        m.combine_over
    );
    let _ = writeln!(
        s,
        "released model {}; fallback to the AR(1) benchmark (then random walk with drift) when the interval is wider than {}",
        cfg.reporting.model, cfg.reporting.tolerance
    );
    s
}
