//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use chrono::{Duration, NaiveDate};
use nowcast_core::dgp::{
    apply_publication_lags, simulate, ArParams, DgpKind, DgpSpec, PublicationScheme, Simulation,
};
use nowcast_core::models::TrainingSet;
use nowcast_core::vintage::{EconomicBlock, FeatureRecipe, ObservationLog, Recipe};
use nowcast_core::Period;

pub const TARGET: &str = "gdp";
/// Publication lag of every simulated series.
pub const LAG_DAYS: i64 = 30;

pub fn log_from(sim: &Simulation, monthly_predictors: bool) -> ObservationLog {
    let panel = sim.to_panel(TARGET, monthly_predictors);
    let scheme = PublicationScheme {
        default_lag_days: LAG_DAYS,
        ..Default::default()
    };
    let mut log = ObservationLog::new();
    let summary = log.ingest(apply_publication_lags(&panel, &scheme).unwrap());
    assert_eq!(summary.reject_count(), 0);
    log
}

pub fn ar1(phi: f64, sigma: f64, n: usize, seed: u64) -> Simulation {
    simulate(&DgpSpec::new(DgpKind::Ar1 { phi, sigma }, n, seed)).unwrap()
}

pub fn regime_break(
    n: usize,
    break_at: usize,
    phi: f64,
    sigma_pre: f64,
    sigma_post: f64,
    seed: u64,
) -> Simulation {
    let kind = DgpKind::RegimeBreak {
        break_at,
        pre: ArParams {
            phi,
            sigma: sigma_pre,
        },
        post: ArParams {
            phi,
            sigma: sigma_post,
        },
    };
    simulate(&DgpSpec::new(kind, n, seed)).unwrap()
}

pub fn sparse(p: usize, s: usize, beta: f64, sigma: f64, n: usize, seed: u64) -> Simulation {
    simulate(&DgpSpec::new(
        DgpKind::SparseLinear { p, s, beta, sigma },
        n,
        seed,
    ))
    .unwrap()
}

/// A date by which quarter `p` has been published but `p + 1` has not.
pub fn origin_after(p: Period) -> NaiveDate {
    p.end_date() + Duration::days(LAG_DAYS + 15)
}

/// Origins nowcasting the last `count` quarters of a simulation.
pub fn tail_origins(sim: &Simulation, count: usize) -> Vec<NaiveDate> {
    let periods = sim.periods();
    let n = periods.len();
    (n - 1 - count..n - 1)
        .map(|i| origin_after(periods[i]))
        .collect()
}

pub fn d(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

/// Target plus every simulated predictor as a same-named feature.
pub fn recipe_for(sim: &Simulation) -> Recipe {
    let mut r = Recipe::target_only(TARGET);
    let blocks = [
        EconomicBlock::DomesticDemand,
        EconomicBlock::LaborMarket,
        EconomicBlock::Prices,
    ];
    r.features = sim
        .predictor_names
        .iter()
        .enumerate()
        .map(|(j, n)| FeatureRecipe::new(n.clone(), n.clone()).with_block(blocks[j % blocks.len()]))
        .collect();
    r
}

/// A training set straight from arrays, bypassing the vintage store.
pub fn ts_from(x: Vec<Vec<f64>>, y: Vec<f64>) -> TrainingSet {
    let p = x[0].len();
    let start = Period::quarter(1990, 1).unwrap();
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    TrainingSet {
        periods: (0..y.len()).map(|i| start.offset(i as i64)).collect(),
        columns: names.clone(),
        input_names: names,
        history: y.clone(),
        query: x[x.len() - 1].clone(),
        nowcast_period: start.offset(y.len() as i64),
        x,
        y,
    }
}

/// `n` rows of `p` independent standard normals.
pub fn normal_rows(rng: &mut impl rand::Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..p)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect()
}
