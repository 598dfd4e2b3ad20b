//! Deterministic synthetic data-generating processes with publication
//! calendars, used by the property and acceptance tests.

use std::collections::BTreeMap;

use chrono::Duration;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};
use crate::period::{Frequency, Period};
use crate::rng::{stream, Domain};
use crate::vintage::SeriesObservation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArParams {
    pub phi: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpKind {
    Ar1 {
        phi: f64,
        sigma: f64,
    },
    SparseLinear {
        p: usize,
        s: usize,
        beta: f64,
        sigma: f64,
    },
    FactorPanel {
        factors: usize,
        series: usize,
        loading_sd: f64,
        idio_sd: f64,
        noise_sd: f64,
    },
    /// AR(1) whose parameters switch at row `break_at`.
    RegimeBreak {
        break_at: usize,
        pre: ArParams,
        post: ArParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(flatten)]
    pub kind: DgpKind,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start: Period,
    /// Student-t innovations with this many degrees of freedom, rescaled
    /// to unit variance. Off by default.
    #[serde(default)]
    pub heavy_tails_df: Option<f64>,
}

fn default_start() -> Period {
    Period::Quarter {
        year: 1970,
        quarter: 1,
    }
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            seed,
            start: default_start(),
            heavy_tails_df: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NowcastError::InvalidDgp(m.to_string()));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if self.start.frequency() != Frequency::Quarterly {
            return bad("start must be a quarter");
        }
        if let Some(df) = self.heavy_tails_df {
            if !(df > 2.0) {
                return bad("heavy-tail degrees of freedom must exceed 2");
            }
        }
        let ar_ok = |a: &ArParams| a.phi.abs() < 1.0 && a.sigma >= 0.0 && a.sigma.is_finite();
        match &self.kind {
            DgpKind::Ar1 { phi, sigma }
                if !ar_ok(&ArParams {
                    phi: *phi,
                    sigma: *sigma,
                }) =>
            {
                bad("ar1 needs |phi| < 1 and sigma >= 0")
            }
            DgpKind::SparseLinear { p, s, sigma, .. } if *s > *p || *p == 0 || *sigma < 0.0 => {
                bad("sparse_linear needs 0 < p, s <= p, sigma >= 0")
            }
            DgpKind::FactorPanel {
                factors, series, ..
            } if *factors == 0 || *series == 0 => {
                bad("factor_panel needs at least one factor and one series")
            }
            DgpKind::RegimeBreak {
                break_at,
                pre,
                post,
            } if *break_at >= self.n || !ar_ok(pre) || !ar_ok(post) => {
                bad("regime_break needs break_at < n and stationary parameter sets")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub coefficients: Option<Vec<f64>>,
    pub support: Vec<usize>,
    pub factors: Option<Vec<Vec<f64>>>,
    pub break_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub start: Period,
    pub target: Vec<f64>,
    /// n rows, one column per predictor.
    pub predictors: Vec<Vec<f64>>,
    pub predictor_names: Vec<String>,
    pub truth: GroundTruth,
}

impl Simulation {
    pub fn periods(&self) -> Vec<Period> {
        (0..self.target.len())
            .map(|i| self.start.offset(i as i64))
            .collect()
    }

    pub fn break_period(&self) -> Option<Period> {
        self.truth.break_index.map(|i| self.start.offset(i as i64))
    }
}

struct Innovations {
    rng: ChaCha8Rng,
    t: Option<StudentT<f64>>,
    scale: f64,
}

impl Innovations {
    fn new(seed: u64, df: Option<f64>) -> Self {
        let t = df.map(|d| StudentT::new(d).expect("validated df"));
        let scale = df.map_or(1.0, |d| ((d - 2.0) / d).sqrt());
        Self {
            rng: stream(seed, Domain::Simulation, 0),
            t,
            scale,
        }
    }

    fn draw(&mut self) -> f64 {
        match &self.t {
            Some(t) => t.sample(&mut self.rng) * self.scale,
            None => StandardNormal.sample(&mut self.rng),
        }
    }
}

fn ar_path(n: usize, params_at: impl Fn(usize) -> ArParams, eps: &mut Innovations) -> Vec<f64> {
    let mut y = Vec::with_capacity(n);
    let p0 = params_at(0);
    let sd0 = p0.sigma / (1.0 - p0.phi * p0.phi).sqrt();
    y.push(sd0 * eps.draw());
    for t in 1..n {
        let p = params_at(t);
        y.push(p.phi * y[t - 1] + p.sigma * eps.draw());
    }
    y
}

/// Draws the process. Identical specs give bit-identical output.
pub fn simulate(spec: &DgpSpec) -> Result<Simulation> {
    spec.validate()?;
    let n = spec.n;
    let mut eps = Innovations::new(spec.seed, spec.heavy_tails_df);
    let mut truth = GroundTruth::default();
    let (target, predictors, names) = match &spec.kind {
        DgpKind::Ar1 { phi, sigma } => {
            let p = ArParams {
                phi: *phi,
                sigma: *sigma,
            };
            (ar_path(n, |_| p, &mut eps), vec![Vec::new(); n], Vec::new())
        }
        DgpKind::RegimeBreak {
            break_at,
            pre,
            post,
        } => {
            truth.break_index = Some(*break_at);
            let b = *break_at;
            let (pre, post) = (*pre, *post);
            let y = ar_path(n, |t| if t < b { pre } else { post }, &mut eps);
            (y, vec![Vec::new(); n], Vec::new())
        }
        DgpKind::SparseLinear { p, s, beta, sigma } => {
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..*p).map(|_| eps.draw()).collect())
                .collect();
            let mut coef = vec![0.0; *p];
            let mut support: Vec<usize> = sample(&mut eps.rng, *p, *s).into_vec();
            support.sort_unstable();
            for &j in &support {
                let sign = if eps.rng.random::<bool>() { 1.0 } else { -1.0 };
                coef[j] = sign * beta;
            }
            let y = x
                .iter()
                .map(|row| {
                    row.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>() + sigma * eps.draw()
                })
                .collect();
            truth.coefficients = Some(coef);
            truth.support = support;
            let names = (0..*p).map(|j| format!("x{:03}", j + 1)).collect();
            (y, x, names)
        }
        DgpKind::FactorPanel {
            factors,
            series,
            loading_sd,
            idio_sd,
            noise_sd,
        } => {
            let loadings: Vec<Vec<f64>> = (0..*series)
                .map(|_| (0..*factors).map(|_| loading_sd * eps.draw()).collect())
                .collect();
            let mut f = vec![vec![0.0; *factors]; n];
            for t in 0..n {
                for k in 0..*factors {
                    let prev = if t > 0 { f[t - 1][k] } else { 0.0 };
                    f[t][k] = 0.5 * prev + eps.draw();
                }
            }
            let x = (0..n)
                .map(|t| {
                    loadings
                        .iter()
                        .map(|l| {
                            l.iter().zip(&f[t]).map(|(a, b)| a * b).sum::<f64>()
                                + idio_sd * eps.draw()
                        })
                        .collect()
                })
                .collect();
            let y = (0..n)
                .map(|t| f[t].iter().sum::<f64>() + noise_sd * eps.draw())
                .collect();
            truth.factors = Some(f);
            let names = (0..*series).map(|j| format!("s{:03}", j + 1)).collect();
            (y, x, names)
        }
    };
    Ok(Simulation {
        start: spec.start,
        target,
        predictors,
        predictor_names: names,
        truth,
    })
}

/// One series of a panel ready for publication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSeries {
    pub id: String,
    pub start: Period,
    pub values: Vec<f64>,
}

impl PanelSeries {
    pub fn periods(&self) -> impl Iterator<Item = (Period, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (self.start.offset(i as i64), *v))
    }
}

impl Simulation {
    /// Target plus predictors as series. Monthly predictors repeat each
    /// quarterly value over the quarter's three months, so mean
    /// aggregation recovers it.
    pub fn to_panel(&self, target_id: &str, monthly_predictors: bool) -> Vec<PanelSeries> {
        let mut out = vec![PanelSeries {
            id: target_id.to_string(),
            start: self.start,
            values: self.target.clone(),
        }];
        for (j, name) in self.predictor_names.iter().enumerate() {
            let col: Vec<f64> = self.predictors.iter().map(|r| r[j]).collect();
            if monthly_predictors {
                out.push(PanelSeries {
                    id: name.clone(),
                    start: self.start.months()[0],
                    values: col.iter().flat_map(|v| [*v, *v, *v]).collect(),
                });
            } else {
                out.push(PanelSeries {
                    id: name.clone(),
                    start: self.start,
                    values: col,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevisionScheme {
    /// Days after the first release.
    pub delay_days: i64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PublicationScheme {
    #[serde(default)]
    pub lags_days: BTreeMap<String, i64>,
    #[serde(default)]
    pub default_lag_days: i64,
    #[serde(default)]
    pub revision: Option<RevisionScheme>,
    #[serde(default)]
    pub seed: u64,
}

/// Publishes each value at period end plus its series lag; with a
/// revision scheme, a second release (value plus Gaussian noise) follows.
pub fn apply_publication_lags(
    panel: &[PanelSeries],
    scheme: &PublicationScheme,
) -> Result<Vec<SeriesObservation>> {
    let mut out = Vec::new();
    let mut rng = stream(scheme.seed, Domain::Revision, 0);
    for s in panel {
        let lag = scheme
            .lags_days
            .get(&s.id)
            .copied()
            .unwrap_or(scheme.default_lag_days);
        if lag < 0 {
            return Err(NowcastError::InvalidDgp(format!(
                "negative lag for {}",
                s.id
            )));
        }
        for (p, v) in s.periods() {
            let first = p.end_date() + Duration::days(lag);
            out.push(SeriesObservation::new(s.id.clone(), p, v, first));
            if let Some(r) = scheme.revision {
                let noise: f64 = StandardNormal.sample(&mut rng);
                out.push(SeriesObservation::new(
                    s.id.clone(),
                    p,
                    v + r.sd * noise,
                    first + Duration::days(r.delay_days.max(1)),
                ));
            }
        }
    }
    Ok(out)
}
