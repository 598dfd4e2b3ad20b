use crate::error::{NowcastError, Result};
use crate::models::{FittedModel, ModelParams};
use crate::rng::{stream, Domain, IndexDraw};
use crate::walk_forward::LossFunction;

use super::{AttributionVector, Method};

fn unsupported(method: &'static str, model: &FittedModel) -> NowcastError {
    NowcastError::UnsupportedFamily {
        method,
        family: model.family().to_string(),
    }
}

/// Coefficient times training-window standard deviation of the feature.
pub fn coefficient_importance(model: &FittedModel) -> Result<AttributionVector> {
    let lp = model
        .linear_params()
        .ok_or_else(|| unsupported("coefficients", model))?;
    let values = lp
        .coefs
        .iter()
        .zip(&model.feature_sd)
        .map(|(b, s)| b * s)
        .collect();
    Ok(AttributionVector::new(
        &model.spec.id,
        Method::Coefficients,
        model.feature_names.clone(),
        values,
    )
    .meta("scale", "training-window standard deviation"))
}

/// Local additive split of a linear prediction: `beta_j (x_j - mean_j)`
/// around the base `intercept + beta' mean` (training-row means).
pub fn linear_contributions(model: &FittedModel, x: &[f64]) -> Result<AttributionVector> {
    let lp = model
        .linear_params()
        .ok_or_else(|| unsupported("linear_contribution", model))?;
    let n = model.train_x.len() as f64;
    let means: Vec<f64> = (0..lp.coefs.len())
        .map(|j| model.train_x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let values: Vec<f64> = lp
        .coefs
        .iter()
        .zip(x)
        .zip(&means)
        .map(|((b, xi), m)| b * (xi - m))
        .collect();
    let base = lp.intercept + lp.coefs.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let mut v = AttributionVector::new(
        &model.spec.id,
        Method::LinearContribution,
        model.feature_names.clone(),
        values,
    )
    .meta("baseline", "training mean");
    v.base_value = Some(base);
    v.prediction = Some(model.predict_input(x));
    Ok(v)
}

/// Variable importance in projection from the stored PLS weights.
pub fn vip_scores(model: &FittedModel) -> Result<AttributionVector> {
    let ModelParams::Pls(pls) = &model.params else {
        return Err(unsupported("vip", model));
    };
    let p = model.feature_names.len();
    let ss = pls.explained_target_ss();
    let total: f64 = ss.iter().sum();
    if !(total > 0.0) {
        return Err(NowcastError::Singular(
            "PLS components explain no target variance".into(),
        ));
    }
    let values = (0..p)
        .map(|j| {
            let acc: f64 = pls
                .weights
                .iter()
                .zip(&ss)
                .map(|(w, s)| {
                    let norm2: f64 = w.iter().map(|v| v * v).sum();
                    s * w[j] * w[j] / norm2
                })
                .sum();
            (p as f64 * acc / total).sqrt()
        })
        .collect();
    Ok(AttributionVector::new(
        &model.spec.id,
        Method::Vip,
        model.feature_names.clone(),
        values,
    )
    .meta("components", pls.weights.len()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationConfig {
    pub block_length: usize,
    pub repetitions: usize,
    pub loss: LossFunction,
    pub seed: u64,
}

/// Row order after shuffling consecutive blocks of length `l` (the last
/// block may be shorter); order inside each block is kept.
pub fn block_permutation(n: usize, l: usize, rng: &mut impl IndexDraw) -> Result<Vec<usize>> {
    if l == 0 || l > n {
        return Err(NowcastError::InvalidBootstrap(format!(
            "permutation block length {l} outside [1, {n}] evaluation rows"
        )));
    }
    let mut blocks: Vec<usize> = (0..n.div_ceil(l)).collect();
    for i in 0..blocks.len().saturating_sub(1) {
        let j = i + rng.uniform_index(blocks.len() - i);
        blocks.swap(i, j);
    }
    Ok(blocks
        .iter()
        .flat_map(|&b| b * l..((b + 1) * l).min(n))
        .collect())
}

/// Loss increase after block-shuffling each feature's evaluation column,
/// averaged over repetitions. Standard errors are over evaluation rows.
/// `x` holds model inputs (windows for `gru`), strictly out of sample.
pub fn block_permutation_importance(
    model: &FittedModel,
    x: &[Vec<f64>],
    y: &[f64],
    cfg: PermutationConfig,
) -> Result<AttributionVector> {
    let p = model.feature_names.len() as u64;
    block_permutation_importance_with(model, x, y, cfg, |r, j| {
        stream(cfg.seed, Domain::Permutation, r as u64 * p + j as u64)
    })
}

/// As [`block_permutation_importance`] with caller-supplied draws for
/// repetition `r` and feature `j`.
pub fn block_permutation_importance_with<D: IndexDraw>(
    model: &FittedModel,
    x: &[Vec<f64>],
    y: &[f64],
    cfg: PermutationConfig,
    mut draws: impl FnMut(usize, usize) -> D,
) -> Result<AttributionVector> {
    let n = y.len();
    if n == 0 || x.len() != n {
        return Err(NowcastError::EmptyInput("evaluation rows"));
    }
    if cfg.repetitions == 0 {
        return Err(NowcastError::InvalidBootstrap(
            "repetitions must be >= 1".into(),
        ));
    }
    let base: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(r, yi)| cfg.loss.eval(yi - model.predict_input(r)))
        .collect();
    let groups = model.input_groups();
    let mut values = Vec::with_capacity(groups.len());
    let mut ses = Vec::with_capacity(groups.len());
    for (j, cols) in groups.iter().enumerate() {
        let mut per_row = vec![0.0; n];
        for r in 0..cfg.repetitions {
            let perm = block_permutation(n, cfg.block_length, &mut draws(r, j))?;
            for i in 0..n {
                let mut row = x[i].clone();
                for &c in cols {
                    row[c] = x[perm[i]][c];
                }
                per_row[i] += (cfg.loss.eval(y[i] - model.predict_input(&row)) - base[i])
                    / cfg.repetitions as f64;
            }
        }
        let mean = per_row.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            (per_row.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64)
                .sqrt()
        } else {
            0.0
        };
        values.push(mean);
        ses.push(se);
    }
    let mut v = AttributionVector::new(
        &model.spec.id,
        Method::Permutation,
        model.feature_names.clone(),
        values,
    )
    .meta("scheme", "block shuffle of evaluation rows")
    .meta("block_length", cfg.block_length)
    .meta("repetitions", cfg.repetitions)
    .meta("loss", format!("{:?}", cfg.loss).to_lowercase())
    .meta("seed", cfg.seed)
    .meta("evaluation_rows", n);
    v.standard_errors = Some(ses);
    Ok(v)
}
