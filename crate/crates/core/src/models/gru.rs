//! Single-layer GRU over fixed-length windows of design rows, with a linear
//! read-out of the final hidden state.

use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};

use super::neural::{descend, glorot_init, target_scale};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Offsets of each parameter block inside the flat weight vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    p: usize,
    h: usize,
}

impl Layout {
    // gates: 0 = update (z), 1 = reset (r), 2 = candidate (c)
    fn w(&self, g: usize) -> usize {
        g * (self.h * self.p + self.h * self.h + self.h)
    }
    fn u(&self, g: usize) -> usize {
        self.w(g) + self.h * self.p
    }
    fn b(&self, g: usize) -> usize {
        self.u(g) + self.h * self.h
    }
    fn v(&self) -> usize {
        self.w(3)
    }
    fn c0(&self) -> usize {
        self.v() + self.h
    }
    fn len(&self) -> usize {
        self.c0() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub n_features: usize,
    pub hidden: usize,
    pub seq_len: usize,
    /// Flat weights, per gate (update, reset, candidate): `W` (`hidden x
    /// features`), `U` (`hidden x hidden`), bias; then read-out vector and
    /// read-out bias.
    pub weights: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruConfig {
    pub hidden: usize,
    pub seq_len: usize,
    pub epochs: usize,
    pub step_size: f64,
}

struct Step {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

fn matvec(theta: &[f64], off: usize, rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|i| {
            theta[off + i * cols..off + (i + 1) * cols]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn run(l: Layout, theta: &[f64], seq: &[f64]) -> (Vec<Step>, Vec<f64>, f64) {
    let steps = seq.len() / l.p.max(1);
    let mut h = vec![0.0; l.h];
    let mut trace = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = &seq[t * l.p..(t + 1) * l.p];
        let gate = |g: usize, hh: &[f64]| -> Vec<f64> {
            let wx = matvec(theta, l.w(g), l.h, l.p, x);
            let uh = matvec(theta, l.u(g), l.h, l.h, hh);
            (0..l.h)
                .map(|i| wx[i] + uh[i] + theta[l.b(g) + i])
                .collect()
        };
        let z: Vec<f64> = gate(0, &h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(1, &h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let c: Vec<f64> = gate(2, &rh).into_iter().map(f64::tanh).collect();
        let next: Vec<f64> = (0..l.h)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i])
            .collect();
        trace.push(Step { h_prev: h, z, r, c });
        h = next;
    }
    let out = theta[l.c0()]
        + h.iter()
            .zip(&theta[l.v()..l.v() + l.h])
            .map(|(a, b)| a * b)
            .sum::<f64>();
    (trace, h, out)
}

/// Backpropagation through time; accumulates into `grad` when given and
/// returns the gradient with respect to the flattened input sequence.
fn backprop(
    l: Layout,
    theta: &[f64],
    seq: &[f64],
    d_out: f64,
    mut grad: Option<&mut [f64]>,
) -> Vec<f64> {
    let (trace, h_last, _) = run(l, theta, seq);
    let mut dx = vec![0.0; seq.len()];
    if let Some(g) = grad.as_deref_mut() {
        for i in 0..l.h {
            g[l.v() + i] += d_out * h_last[i];
        }
        g[l.c0()] += d_out;
    }
    let mut dh: Vec<f64> = theta[l.v()..l.v() + l.h]
        .iter()
        .map(|v| v * d_out)
        .collect();
    for (t, s) in trace.iter().enumerate().rev() {
        let x = &seq[t * l.p..(t + 1) * l.p];
        let mut dh_prev: Vec<f64> = (0..l.h).map(|i| dh[i] * (1.0 - s.z[i])).collect();
        let da_z: Vec<f64> = (0..l.h)
            .map(|i| dh[i] * (s.c[i] - s.h_prev[i]) * s.z[i] * (1.0 - s.z[i]))
            .collect();
        let da_c: Vec<f64> = (0..l.h)
            .map(|i| dh[i] * s.z[i] * (1.0 - s.c[i] * s.c[i]))
            .collect();
        let rh: Vec<f64> = (0..l.h).map(|i| s.r[i] * s.h_prev[i]).collect();
        // through the candidate's recurrent term U_c (r * h)
        let mut d_rh = vec![0.0; l.h];
        for i in 0..l.h {
            for k in 0..l.h {
                d_rh[k] += theta[l.u(2) + i * l.h + k] * da_c[i];
            }
        }
        let da_r: Vec<f64> = (0..l.h)
            .map(|k| d_rh[k] * s.h_prev[k] * s.r[k] * (1.0 - s.r[k]))
            .collect();
        for k in 0..l.h {
            dh_prev[k] += d_rh[k] * s.r[k];
        }
        for (g_idx, da, hin) in [
            (0, &da_z, &s.h_prev),
            (1, &da_r, &s.h_prev),
            (2, &da_c, &rh),
        ] {
            for i in 0..l.h {
                if let Some(g) = grad.as_deref_mut() {
                    for j in 0..l.p {
                        g[l.w(g_idx) + i * l.p + j] += da[i] * x[j];
                    }
                    for k in 0..l.h {
                        g[l.u(g_idx) + i * l.h + k] += da[i] * hin[k];
                    }
                    g[l.b(g_idx) + i] += da[i];
                }
                for j in 0..l.p {
                    dx[t * l.p + j] += theta[l.w(g_idx) + i * l.p + j] * da[i];
                }
                if g_idx < 2 {
                    for k in 0..l.h {
                        dh_prev[k] += theta[l.u(g_idx) + i * l.h + k] * da[i];
                    }
                }
            }
        }
        dh = dh_prev;
    }
    dx
}

/// Mean squared error of the standardized target and its gradient.
pub fn gru_loss_grad(
    n_features: usize,
    hidden: usize,
    theta: &[f64],
    x: &[Vec<f64>],
    y: &[f64],
) -> (f64, Vec<f64>) {
    let l = Layout {
        p: n_features,
        h: hidden,
    };
    let n = y.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for (seq, yi) in x.iter().zip(y) {
        let (_, _, out) = run(l, theta, seq);
        let e = out - yi;
        loss += e * e / n;
        backprop(l, theta, seq, 2.0 * e / n, Some(&mut grad));
    }
    (loss, grad)
}

/// `x` rows are flattened windows of `seq_len` consecutive design rows,
/// oldest first.
pub fn fit_gru(
    x: &[Vec<f64>],
    y: &[f64],
    n_features: usize,
    cfg: GruConfig,
    seed: u64,
) -> Result<GruParams> {
    if cfg.epochs == 0 || cfg.hidden == 0 || cfg.seq_len == 0 {
        return Err(NowcastError::InvalidSpec(
            "gru needs epochs, hidden and seq_len >= 1".into(),
        ));
    }
    if x.iter().any(|r| r.len() != n_features * cfg.seq_len) {
        return Err(NowcastError::ShapeMismatch(format!(
            "gru windows must hold {} x {} values",
            cfg.seq_len, n_features
        )));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(NowcastError::InvalidSpec(
            "gru inputs must be finite".into(),
        ));
    }
    let l = Layout {
        p: n_features,
        h: cfg.hidden,
    };
    let (y_mean, y_scale) = target_scale(y);
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
    let mut theta = vec![0.0; l.len()];
    let mut blocks = Vec::new();
    for g in 0..3 {
        blocks.push((l.w(g), l.p, l.h));
        blocks.push((l.u(g), l.h, l.h));
    }
    blocks.push((l.v(), l.h, 1));
    glorot_init(&mut theta, seed, &blocks);
    descend(&mut theta, cfg.epochs, cfg.step_size, |th, _| {
        gru_loss_grad(l.p, l.h, th, x, &ys)
    })?;
    let (train_loss, _) = gru_loss_grad(l.p, l.h, &theta, x, &ys);
    if !train_loss.is_finite() {
        return Err(NowcastError::Divergence { epoch: cfg.epochs });
    }
    Ok(GruParams {
        n_features,
        hidden: cfg.hidden,
        seq_len: cfg.seq_len,
        weights: theta,
        y_mean,
        y_scale,
        train_loss,
    })
}

impl GruParams {
    fn layout(&self) -> Layout {
        Layout {
            p: self.n_features,
            h: self.hidden,
        }
    }

    pub fn predict(&self, seq: &[f64]) -> f64 {
        self.y_mean + self.y_scale * run(self.layout(), &self.weights, seq).2
    }

    /// Final hidden state after reading `seq`.
    pub fn hidden_state(&self, seq: &[f64]) -> Vec<f64> {
        run(self.layout(), &self.weights, seq).1
    }

    pub fn input_gradient(&self, seq: &[f64]) -> Vec<f64> {
        backprop(self.layout(), &self.weights, seq, self.y_scale, None)
    }

    /// Sets every unit's bias for `gate` (0 update, 1 reset, 2 candidate).
    pub fn set_gate_bias(&mut self, gate: usize, value: f64) {
        let l = self.layout();
        for i in 0..l.h {
            self.weights[l.b(gate) + i] = value;
        }
    }
}
