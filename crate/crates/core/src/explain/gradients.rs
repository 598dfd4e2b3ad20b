use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};
use crate::models::FittedModel;
use crate::period::Period;
use crate::stats;

use super::{AttributionVector, Method};

/// Metadata label attached to zero baselines.
pub const NOT_INTERPRETABLE: &str = "not economically interpretable";

/// Reference input the integration path starts from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    Zeros,
    /// Per-column median of the training inputs.
    #[default]
    WindowMedian,
    /// Per-column mean of training inputs dated strictly before `before`.
    PreshockMean {
        before: Period,
    },
    /// Model-space input of full width.
    Explicit {
        values: Vec<f64>,
    },
}

impl Baseline {
    fn describe(&self) -> String {
        match self {
            Baseline::Zeros => format!("zeros ({NOT_INTERPRETABLE})"),
            Baseline::WindowMedian => "calibration-window median".into(),
            Baseline::PreshockMean { before } => format!("pre-shock mean before {before}"),
            Baseline::Explicit { values } => format!("explicit {values:?}"),
        }
    }

    /// The baseline as a model-space input for `model`.
    pub fn resolve(&self, model: &FittedModel) -> Result<Vec<f64>> {
        let w = model.input_width();
        let column = |rows: &[&Vec<f64>], j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
        match self {
            Baseline::Zeros => Ok(vec![0.0; w]),
            Baseline::WindowMedian => {
                let rows: Vec<&Vec<f64>> = model.train_x.iter().collect();
                if rows.is_empty() {
                    return Err(NowcastError::EmptyInput("training rows for baseline"));
                }
                Ok((0..w).map(|j| stats::median(&column(&rows, j))).collect())
            }
            Baseline::PreshockMean { before } => {
                let rows: Vec<&Vec<f64>> = model
                    .train_x
                    .iter()
                    .zip(&model.train_periods)
                    .filter(|(_, p)| *p < before)
                    .map(|(r, _)| r)
                    .collect();
                if rows.is_empty() {
                    return Err(NowcastError::InsufficientData(format!(
                        "no training rows before {before}"
                    )));
                }
                Ok((0..w).map(|j| stats::mean(&column(&rows, j))).collect())
            }
            Baseline::Explicit { values } => {
                if values.len() != w {
                    return Err(NowcastError::ShapeMismatch(format!(
                        "baseline has {} entries, model input has {w}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }
}

/// Midpoint-rule Integrated Gradients from `baseline` to `x`. For `gru`
/// the per-step attributions are summed into their design feature.
pub fn integrated_gradients(
    model: &FittedModel,
    x: &[f64],
    baseline: &Baseline,
    steps: usize,
) -> Result<AttributionVector> {
    if steps < 16 {
        return Err(NowcastError::InvalidSpec(format!(
            "integrated gradients needs >= 16 steps, got {steps}"
        )));
    }
    if model.input_gradient(x).is_none() {
        return Err(NowcastError::UnsupportedFamily {
            method: "integrated_gradients",
            family: model.family().to_string(),
        });
    }
    let w = model.input_width();
    if x.len() != w {
        return Err(NowcastError::ShapeMismatch(format!(
            "model input has {w} entries, got {}",
            x.len()
        )));
    }
    let b = baseline.resolve(model)?;
    let mut avg = vec![0.0; w];
    let mut point = vec![0.0; w];
    for k in 0..steps {
        let t = (k as f64 + 0.5) / steps as f64;
        for j in 0..w {
            point[j] = b[j] + t * (x[j] - b[j]);
        }
        let g = model.input_gradient(&point).expect("differentiable");
        for j in 0..w {
            avg[j] += g[j] / steps as f64;
        }
    }
    let raw: Vec<f64> = (0..w).map(|j| (x[j] - b[j]) * avg[j]).collect();
    let values: Vec<f64> = model
        .input_groups()
        .iter()
        .map(|cols| cols.iter().map(|&c| raw[c]).sum())
        .collect();
    let fx = model.predict_input(x);
    let fb = model.predict_input(&b);
    let residual = fx - fb - values.iter().sum::<f64>();
    let mut v = AttributionVector::new(
        &model.spec.id,
        Method::IntegratedGradients,
        model.feature_names.clone(),
        values,
    )
    .meta("baseline", baseline.describe())
    .meta("baseline_values", format!("{b:?}"))
    .meta("steps", steps)
    .meta("rule", "midpoint")
    .meta("completeness_residual", residual);
    v.base_value = Some(fb);
    v.prediction = Some(fx);
    Ok(v)
}
