//! Candidate model families behind one fit/predict contract.
//!
//! [`fit`] turns a [`ModelSpec`] and a [`TrainingSet`] into an immutable
//! [`FittedModel`]. Fitting is a pure function of its inputs (randomness
//! comes from keyed streams), so repeated fits are bit-identical.

mod gru;
mod latent;
mod linear;
mod neural;
mod spec;
mod training;
mod tree;

pub use gru::{fit_gru, gru_loss_grad, GruConfig, GruParams};
pub use latent::{fit_pcr, fit_plsr, PcrParams, PlsParams};
pub use linear::{
    fit_ar, fit_elastic_net, fit_elastic_net_with, fit_ols, fit_random_walk, fit_ridge, kkt_gap,
    soft_threshold, ArParams, CdFit, LinearParams, RandomWalkParams, CD_KKT_TOLERANCE,
    CD_MAX_SWEEPS, CD_TOLERANCE,
};
pub use neural::{fit_mlp, mlp_loss_grad, Activation, MlpConfig, MlpParams};
pub use spec::{Family, HyperValue, Hyperparams, ModelSpec};
pub use training::TrainingSet;
pub use tree::{
    fit_boosted, fit_forest, grow_tree, BoostConfig, BoostedParams, ForestConfig, ForestParams,
    Split, Tree, TreeConfig, TreeNode,
};

use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};
use crate::period::Period;
use crate::vintage::DesignMatrix;

/// Tag written into every serialized model.
pub const MODEL_FORMAT: &str = "nowcast-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    RandomWalk(RandomWalkParams),
    Autoregressive(ArParams),
    Linear {
        params: LinearParams,
        /// Coordinate-descent sweeps and final KKT gap, when solved that way.
        sweeps: Option<usize>,
        kkt_gap: Option<f64>,
    },
    Pcr(PcrParams),
    Pls(PlsParams),
    Forest(ForestParams),
    Boosted(BoostedParams),
    Mlp(MlpParams),
    Gru(GruParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format: String,
    pub spec: ModelSpec,
    pub params: ModelParams,
    /// First and last target period of the training rows.
    pub training_window: (Period, Period),
    /// Design columns the model accepts, in order.
    pub feature_names: Vec<String>,
    /// Training-row standard deviation of each design column.
    pub feature_sd: Vec<f64>,
    pub target_stats: TargetStats,
    /// Final in-sample loss for iteratively trained families.
    pub train_loss: Option<f64>,
    pub nowcast_period: Period,
    /// Model input for the nowcast (design row, lag vector or window).
    pub query: Vec<f64>,
    /// Training inputs in model space, kept for in-sample diagnostics.
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<f64>,
    pub train_periods: Vec<Period>,
}

fn hp_tree(spec: &ModelSpec, default_depth: usize) -> Result<TreeConfig> {
    Ok(TreeConfig {
        max_depth: spec.hp().usize_or("depth", default_depth)?,
        min_leaf: spec.hp().usize_or("min_leaf", 1)?,
    })
}

/// Fits `spec` on the rows of `ts`.
pub fn fit(spec: &ModelSpec, ts: &TrainingSet) -> Result<FittedModel> {
    let h = spec.hp();
    if ts.len() < spec.min_rows() {
        return Err(NowcastError::InsufficientData(format!(
            "{} needs at least {} training rows, got {}",
            spec.id,
            spec.min_rows(),
            ts.len()
        )));
    }
    let (x, y) = (&ts.x, &ts.y);
    let p = ts.n_columns();
    let mut train_loss = None;
    let params = match spec.family {
        Family::Rw | Family::RwDrift => ModelParams::RandomWalk(fit_random_walk(
            &ts.history,
            y,
            spec.family == Family::RwDrift,
        )?),
        Family::Ar => ModelParams::Autoregressive(fit_ar(x, y, &ts.query)?),
        Family::Ols => ModelParams::Linear {
            params: fit_ols(x, y)?,
            sweeps: None,
            kkt_gap: None,
        },
        Family::Ridge => ModelParams::Linear {
            params: fit_ridge(x, y, spec.penalty()?.0)?,
            sweeps: None,
            kkt_gap: None,
        },
        Family::Lasso | Family::ElasticNet => {
            let (lambda, alpha) = spec.penalty()?;
            let cd = fit_elastic_net(x, y, lambda, alpha)?;
            ModelParams::Linear {
                params: cd.params,
                sweeps: Some(cd.sweeps),
                kkt_gap: Some(cd.kkt_gap),
            }
        }
        Family::Pcr => ModelParams::Pcr(fit_pcr(x, y, h.usize_or("k", 1)?)?),
        Family::Plsr => ModelParams::Pls(fit_plsr(x, y, h.usize_or("k", 1)?)?),
        Family::RandomForest => {
            let cfg = ForestConfig {
                trees: h.usize_or("trees", 100)?,
                tree: hp_tree(spec, 4)?,
                max_features: h.usize_or("max_features", p.div_ceil(3).max(1))?,
                bootstrap: h.f64_or("bootstrap", 1.0)? != 0.0,
            };
            ModelParams::Forest(fit_forest(x, y, cfg, spec.seed)?)
        }
        Family::Gbdt => {
            let cfg = BoostConfig {
                rounds: h.usize_or("trees", 100)?,
                tree: hp_tree(spec, 3)?,
                learning_rate: h.f64_or("learning_rate", 0.1)?,
                subsample: h.f64_or("subsample", 1.0)?,
            };
            let b = fit_boosted(x, y, cfg, spec.seed)?;
            train_loss = b.train_loss.last().copied();
            ModelParams::Boosted(b)
        }
        Family::Mlp => {
            let hidden = h.sizes_or("hidden", &[8])?;
            let cfg = MlpConfig {
                hidden: &hidden,
                activation: Activation::parse(&h.text_or("activation", "tanh")?)?,
                epochs: h.usize_or("epochs", 500)?,
                step_size: h.f64_or("step_size", 0.05)?,
                dropout: h.f64_or("dropout", 0.0)?,
            };
            let m = fit_mlp(x, y, cfg, spec.seed)?;
            train_loss = Some(m.train_loss);
            ModelParams::Mlp(m)
        }
        Family::Gru => {
            let cfg = GruConfig {
                hidden: h.usize_or("hidden", 4)?,
                seq_len: h.usize_or("seq_len", 4)?,
                epochs: h.usize_or("epochs", 300)?,
                step_size: h.f64_or("step_size", 0.05)?,
            };
            let g = fit_gru(x, y, ts.input_names.len(), cfg, spec.seed)?;
            train_loss = Some(g.train_loss);
            ModelParams::Gru(g)
        }
    };
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let variance = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let feature_sd = if spec.family.is_univariate() || spec.family == Family::Gru {
        vec![0.0; ts.input_names.len()]
    } else {
        ts.column_sd()
    };
    let training_window = match (ts.periods.first(), ts.periods.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => (ts.nowcast_period, ts.nowcast_period),
    };
    Ok(FittedModel {
        format: MODEL_FORMAT.to_string(),
        spec: spec.clone(),
        params,
        training_window,
        feature_names: ts.input_names.clone(),
        feature_sd,
        target_stats: TargetStats { mean, variance },
        train_loss,
        nowcast_period: ts.nowcast_period,
        query: ts.query.clone(),
        train_x: ts.x.clone(),
        train_y: ts.y.clone(),
        train_periods: ts.periods.clone(),
    })
}

/// Convenience: derive the training set from a design and fit.
pub fn fit_design(spec: &ModelSpec, d: &DesignMatrix) -> Result<FittedModel> {
    fit(spec, &TrainingSet::from_design(spec, d)?)
}

impl FittedModel {
    pub fn family(&self) -> Family {
        self.spec.family
    }

    /// Prediction for one model-space input: a design row for regression
    /// families, a flattened window for `gru`. Univariate families ignore
    /// the input and return their stored forecast.
    pub fn predict_input(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::RandomWalk(rw) => rw.last + rw.drift,
            ModelParams::Autoregressive(ar) => ar.forecast(),
            ModelParams::Linear { params, .. } => params.predict(x),
            ModelParams::Pcr(m) => m.linear.predict(x),
            ModelParams::Pls(m) => m.linear.predict(x),
            ModelParams::Forest(f) => f.predict(x),
            ModelParams::Boosted(b) => b.predict(x),
            ModelParams::Mlp(m) => m.predict(x),
            ModelParams::Gru(g) => g.predict(x),
        }
    }

    /// Width of the model-space input.
    pub fn input_width(&self) -> usize {
        match &self.params {
            ModelParams::Gru(g) => g.n_features * g.seq_len,
            _ => self.feature_names.len(),
        }
    }

    /// Prediction for a named input; names must match the fit-time columns.
    pub fn predict(&self, names: &[String], x: &[f64]) -> Result<f64> {
        if names != self.feature_names.as_slice() {
            return Err(NowcastError::ShapeMismatch(format!(
                "model {} expects columns {:?}, got {:?}",
                self.spec.id, self.feature_names, names
            )));
        }
        if x.len() != self.input_width() {
            return Err(NowcastError::ShapeMismatch(format!(
                "model {} expects {} inputs, got {}",
                self.spec.id,
                self.input_width(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NowcastError::ShapeMismatch("non-finite input".into()));
        }
        Ok(self.predict_input(x))
    }

    /// The one-quarter-ahead forecast at the fit origin.
    pub fn nowcast(&self) -> f64 {
        self.predict_input(&self.query)
    }

    /// Coefficients on the original design columns, where the family has them.
    pub fn linear_params(&self) -> Option<&LinearParams> {
        match &self.params {
            ModelParams::Linear { params, .. } => Some(params),
            ModelParams::Pcr(m) => Some(&m.linear),
            ModelParams::Pls(m) => Some(&m.linear),
            _ => None,
        }
    }

    /// In-sample fitted values on the training rows.
    pub fn fitted_values(&self) -> Vec<f64> {
        match &self.params {
            ModelParams::RandomWalk(rw) => self.train_y.iter().map(|_| rw.drift).collect(),
            ModelParams::Autoregressive(ar) => {
                self.train_x.iter().map(|r| ar.one_step(r)).collect()
            }
            _ => self.train_x.iter().map(|r| self.predict_input(r)).collect(),
        }
    }

    /// Columns of the model input belonging to each design feature.
    pub fn input_groups(&self) -> Vec<Vec<usize>> {
        let p = self.feature_names.len();
        match &self.params {
            ModelParams::Gru(g) => (0..p)
                .map(|j| (0..g.seq_len).map(|t| t * p + j).collect())
                .collect(),
            _ => (0..p).map(|j| vec![j]).collect(),
        }
    }

    /// Gradient of the prediction with respect to the model input, for
    /// differentiable families.
    pub fn input_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.params {
            ModelParams::Linear { params, .. } => Some(params.coefs.clone()),
            ModelParams::Pcr(m) => Some(m.linear.coefs.clone()),
            ModelParams::Pls(m) => Some(m.linear.coefs.clone()),
            ModelParams::Mlp(m) => Some(m.input_gradient(x)),
            ModelParams::Gru(g) => Some(g.input_gradient(x)),
            _ => None,
        }
    }

    /// Versioned JSON text for audit replay.
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let m: FittedModel = serde_json::from_str(s)?;
        if m.format != MODEL_FORMAT {
            return Err(NowcastError::Parse(format!(
                "unsupported model format {:?}",
                m.format
            )));
        }
        Ok(m)
    }
}
