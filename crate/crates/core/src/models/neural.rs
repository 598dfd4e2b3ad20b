//! Multilayer perceptron trained by full-batch gradient descent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
    Relu,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            other => Err(NowcastError::InvalidSpec(format!(
                "unknown activation {other:?}"
            ))),
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn slope(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Standardizes the target so the network trains on unit scale.
pub(crate) fn target_scale(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    (m, if sd > 0.0 { sd } else { 1.0 })
}

pub(crate) fn glorot_init(theta: &mut [f64], seed: u64, blocks: &[(usize, usize, usize)]) {
    let mut rng = stream(seed, Domain::Init, 0);
    for &(offset, fan_in, fan_out) in blocks {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut theta[offset..offset + fan_in * fan_out] {
            *w = rng.random_range(-a..a);
        }
    }
}

/// Plain gradient descent; `step_fn(theta, epoch)` returns loss and gradient.
pub(crate) fn descend(
    theta: &mut [f64],
    epochs: usize,
    step: f64,
    mut loss_grad: impl FnMut(&[f64], usize) -> (f64, Vec<f64>),
) -> Result<()> {
    for epoch in 0..epochs {
        let (loss, grad) = loss_grad(theta, epoch);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(NowcastError::Divergence { epoch: epoch + 1 });
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= step * g;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// Layer widths from input to the scalar output.
    pub sizes: Vec<usize>,
    pub activation: Activation,
    /// Flat weights: per layer a row-major `out x in` matrix then `out` biases.
    pub weights: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
    /// Mean squared error on the standardized target after training.
    pub train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpConfig<'a> {
    pub hidden: &'a [usize],
    pub activation: Activation,
    pub epochs: usize,
    pub step_size: f64,
    pub dropout: f64,
}

fn layer_dims(sizes: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut off = 0;
    sizes
        .windows(2)
        .map(|w| {
            let d = (off, w[0], w[1]);
            off += w[0] * w[1] + w[1];
            d
        })
        .collect()
}

fn n_weights(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Per-row forward cache: layer inputs and pre-activations.
struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    out: f64,
}

fn forward(
    sizes: &[usize],
    act: Activation,
    theta: &[f64],
    x: &[f64],
    mask: Option<&[Vec<f64>]>,
) -> Trace {
    let dims = layer_dims(sizes);
    let last = dims.len() - 1;
    let mut a = x.to_vec();
    let mut inputs = Vec::with_capacity(dims.len());
    let mut pre = Vec::with_capacity(dims.len());
    for (l, &(off, fin, fout)) in dims.iter().enumerate() {
        let w = &theta[off..off + fin * fout];
        let b = &theta[off + fin * fout..off + fin * fout + fout];
        let z: Vec<f64> = (0..fout)
            .map(|o| {
                b[o] + w[o * fin..(o + 1) * fin]
                    .iter()
                    .zip(&a)
                    .map(|(p, q)| p * q)
                    .sum::<f64>()
            })
            .collect();
        inputs.push(std::mem::take(&mut a));
        a = if l == last {
            z.clone()
        } else {
            z.iter()
                .enumerate()
                .map(|(o, v)| act.apply(*v) * mask.map_or(1.0, |m| m[l][o]))
                .collect()
        };
        pre.push(z);
    }
    Trace {
        inputs,
        pre,
        out: a[0],
    }
}

/// Backpropagates `d_out` through one trace; accumulates parameter
/// gradients into `grad` when given and returns the input gradient.
fn backward(
    sizes: &[usize],
    act: Activation,
    theta: &[f64],
    trace: &Trace,
    mask: Option<&[Vec<f64>]>,
    d_out: f64,
    mut grad: Option<&mut [f64]>,
) -> Vec<f64> {
    let dims = layer_dims(sizes);
    let mut delta = vec![d_out];
    for l in (0..dims.len()).rev() {
        let (off, fin, fout) = dims[l];
        if let Some(g) = grad.as_deref_mut() {
            for o in 0..fout {
                for i in 0..fin {
                    g[off + o * fin + i] += delta[o] * trace.inputs[l][i];
                }
                g[off + fin * fout + o] += delta[o];
            }
        }
        let w = &theta[off..off + fin * fout];
        let mut da = vec![0.0; fin];
        for o in 0..fout {
            for i in 0..fin {
                da[i] += w[o * fin + i] * delta[o];
            }
        }
        if l == 0 {
            return da;
        }
        delta = da
            .iter()
            .enumerate()
            .map(|(i, d)| d * act.slope(trace.pre[l - 1][i]) * mask.map_or(1.0, |m| m[l - 1][i]))
            .collect();
    }
    unreachable!("network has at least one layer")
}

/// Mean squared error on `y` (already standardized) and its gradient.
pub fn mlp_loss_grad(
    sizes: &[usize],
    act: Activation,
    theta: &[f64],
    x: &[Vec<f64>],
    y: &[f64],
) -> (f64, Vec<f64>) {
    loss_grad_masked(sizes, act, theta, x, y, None)
}

fn loss_grad_masked(
    sizes: &[usize],
    act: Activation,
    theta: &[f64],
    x: &[Vec<f64>],
    y: &[f64],
    masks: Option<&[Vec<Vec<f64>>]>,
) -> (f64, Vec<f64>) {
    let n = y.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for (i, (row, yi)) in x.iter().zip(y).enumerate() {
        let mask = masks.map(|m| m[i].as_slice());
        let tr = forward(sizes, act, theta, row, mask);
        let e = tr.out - yi;
        loss += e * e / n;
        backward(sizes, act, theta, &tr, mask, 2.0 * e / n, Some(&mut grad));
    }
    (loss, grad)
}

pub fn fit_mlp(x: &[Vec<f64>], y: &[f64], cfg: MlpConfig<'_>, seed: u64) -> Result<MlpParams> {
    if cfg.epochs == 0 {
        return Err(NowcastError::InvalidSpec("epochs must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(NowcastError::InvalidSpec(format!(
            "dropout must lie in [0, 1), got {}",
            cfg.dropout
        )));
    }
    if cfg.hidden.contains(&0) {
        return Err(NowcastError::InvalidSpec(
            "hidden sizes must be >= 1".into(),
        ));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(NowcastError::InvalidSpec(
            "mlp inputs must be finite".into(),
        ));
    }
    let p = x.first().map_or(0, Vec::len);
    let mut sizes = vec![p];
    sizes.extend_from_slice(cfg.hidden);
    sizes.push(1);
    let (y_mean, y_scale) = target_scale(y);
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
    let mut theta = vec![0.0; n_weights(&sizes)];
    glorot_init(&mut theta, seed, &layer_dims(&sizes));
    let keep = 1.0 - cfg.dropout;
    let hidden = cfg.hidden.to_vec();
    descend(&mut theta, cfg.epochs, cfg.step_size, |th, epoch| {
        if cfg.dropout > 0.0 {
            let mut rng = stream(seed, Domain::Dropout, epoch as u64);
            let masks: Vec<Vec<Vec<f64>>> = (0..ys.len())
                .map(|_| {
                    hidden
                        .iter()
                        .map(|&h| {
                            (0..h)
                                .map(|_| {
                                    if rng.random::<f64>() < keep {
                                        1.0 / keep
                                    } else {
                                        0.0
                                    }
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            loss_grad_masked(&sizes, cfg.activation, th, x, &ys, Some(&masks))
        } else {
            loss_grad_masked(&sizes, cfg.activation, th, x, &ys, None)
        }
    })?;
    let (train_loss, _) = mlp_loss_grad(&sizes, cfg.activation, &theta, x, &ys);
    if !train_loss.is_finite() {
        return Err(NowcastError::Divergence { epoch: cfg.epochs });
    }
    Ok(MlpParams {
        sizes,
        activation: cfg.activation,
        weights: theta,
        y_mean,
        y_scale,
        train_loss,
    })
}

impl MlpParams {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.y_mean
            + self.y_scale * forward(&self.sizes, self.activation, &self.weights, x, None).out
    }

    /// Gradient of the prediction with respect to the input row.
    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let tr = forward(&self.sizes, self.activation, &self.weights, x, None);
        backward(
            &self.sizes,
            self.activation,
            &self.weights,
            &tr,
            None,
            self.y_scale,
            None,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let t = i as f64;
                vec![(t * 0.9).sin(), (t * 0.4).cos(), t / 12.0 - 0.5]
            })
            .collect();
        let y = x.iter().map(|r| r[0] * r[1] + 0.5 * r[2]).collect();
        (x, y)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = toy();
        for act in [Activation::Tanh, Activation::Identity] {
            let sizes = [3, 5, 4, 1];
            let mut theta = vec![0.0; n_weights(&sizes)];
            glorot_init(&mut theta, 3, &layer_dims(&sizes));
            for (i, t) in theta.iter_mut().enumerate() {
                *t += 0.01 * (i as f64).sin();
            }
            let (_, g) = mlp_loss_grad(&sizes, act, &theta, &x, &y);
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for k in 0..theta.len() {
                let mut tp = theta.clone();
                tp[k] += h;
                let mut tm = theta.clone();
                tm[k] -= h;
                let fd = (mlp_loss_grad(&sizes, act, &tp, &x, &y).0
                    - mlp_loss_grad(&sizes, act, &tm, &x, &y).0)
                    / (2.0 * h);
                worst = worst.max((fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6));
            }
            assert!(worst < 1e-4, "{act:?}: {worst}");
        }
    }

    #[test]
    fn input_gradient_matches_differences() {
        let (x, y) = toy();
        let m = fit_mlp(
            &x,
            &y,
            MlpConfig {
                hidden: &[6],
                activation: Activation::Tanh,
                epochs: 50,
                step_size: 0.05,
                dropout: 0.0,
            },
            1,
        )
        .unwrap();
        let g = m.input_gradient(&x[3]);
        for j in 0..3 {
            let mut a = x[3].clone();
            a[j] += 1e-6;
            let mut b = x[3].clone();
            b[j] -= 1e-6;
            let fd = (m.predict(&a) - m.predict(&b)) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn divergence_names_epoch() {
        let (x, y) = toy();
        let err = fit_mlp(
            &x,
            &y,
            MlpConfig {
                hidden: &[4],
                activation: Activation::Identity,
                epochs: 2000,
                step_size: 1e6,
                dropout: 0.0,
            },
            1,
        )
        .unwrap_err();
        assert!(matches!(err, NowcastError::Divergence { epoch } if epoch > 0));
    }
}
