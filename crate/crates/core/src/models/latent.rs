//! Principal component regression and PLS1 regression via NIPALS.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};

use super::linear::LinearParams;

fn means(x: &[Vec<f64>], p: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..p)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect()
}

fn check_k(k: usize, n: usize, p: usize) -> Result<()> {
    if k == 0 {
        return Err(NowcastError::InvalidSpec("k must be >= 1".into()));
    }
    let bound = p.min(n.saturating_sub(1));
    if k > bound {
        return Err(NowcastError::RankExceeded {
            requested: k,
            rank: bound,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcrParams {
    /// Coefficients mapped back to the original features.
    pub linear: LinearParams,
    /// One unit-norm loading vector per component.
    pub loadings: Vec<Vec<f64>>,
    pub x_means: Vec<f64>,
    /// Regression coefficient on each component score.
    pub score_coefs: Vec<f64>,
    /// Share of predictor variance per retained component.
    pub explained_variance: Vec<f64>,
}

impl PcrParams {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.loadings
            .iter()
            .map(|v| {
                v.iter()
                    .zip(x)
                    .zip(&self.x_means)
                    .map(|((l, xi), m)| l * (xi - m))
                    .sum()
            })
            .collect()
    }
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for j in 1..v.len() {
        if v[j].abs() > v[best].abs() {
            best = j;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
}

pub fn fit_pcr(x: &[Vec<f64>], y: &[f64], k: usize) -> Result<PcrParams> {
    let n = y.len();
    let p = x.first().map_or(0, Vec::len);
    check_k(k, n, p)?;
    let x_means = means(x, p);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - x_means[j]);
    let cov = (xc.transpose() * &xc) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > 1e-10 * top.max(f64::MIN_POSITIVE))
        .count();
    if k > rank {
        return Err(NowcastError::RankExceeded { requested: k, rank });
    }
    let mut loadings = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    let mut score_coefs = Vec::with_capacity(k);
    let mut beta = vec![0.0; p];
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        fix_sign(&mut v);
        let t: Vec<f64> = (0..n)
            .map(|i| (0..p).map(|j| xc[(i, j)] * v[j]).sum())
            .collect();
        let tt: f64 = t.iter().map(|a| a * a).sum();
        let ty: f64 = t.iter().zip(y).map(|(a, b)| a * (b - y_mean)).sum();
        let g = ty / tt;
        for j in 0..p {
            beta[j] += v[j] * g;
        }
        score_coefs.push(g);
        explained.push(eig.eigenvalues[idx].max(0.0) / total);
        loadings.push(v);
    }
    let intercept = y_mean - x_means.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    Ok(PcrParams {
        linear: LinearParams {
            intercept,
            coefs: beta,
        },
        loadings,
        x_means,
        score_coefs,
        explained_variance: explained,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsParams {
    pub linear: LinearParams,
    /// X weights, one vector per component.
    pub weights: Vec<Vec<f64>>,
    /// X loadings, one vector per component.
    pub loadings: Vec<Vec<f64>>,
    /// y loading per component.
    pub y_loadings: Vec<f64>,
    /// Score sum of squares `t_a't_a` per component.
    pub score_ss: Vec<f64>,
    pub x_means: Vec<f64>,
}

impl PlsParams {
    /// Target variance explained by each component, `q_a^2 t_a't_a`.
    pub fn explained_target_ss(&self) -> Vec<f64> {
        self.y_loadings
            .iter()
            .zip(&self.score_ss)
            .map(|(q, s)| q * q * s)
            .collect()
    }
}

const NIPALS_MAX_ITER: usize = 500;
const NIPALS_TOL: f64 = 1e-12;

pub fn fit_plsr(x: &[Vec<f64>], y: &[f64], k: usize) -> Result<PlsParams> {
    let n = y.len();
    let p = x.first().map_or(0, Vec::len);
    check_k(k, n, p)?;
    let x_means = means(x, p);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut xa = DMatrix::from_fn(n, p, |i, j| x[i][j] - x_means[j]);
    let mut ya: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let (mut ws, mut ps, mut qs, mut tss) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for a in 0..k {
        let scale = xa.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        let mut u = ya.clone();
        let mut w_prev: Option<Vec<f64>> = None;
        let mut converged = None;
        for _ in 0..NIPALS_MAX_ITER {
            let mut w: Vec<f64> = (0..p)
                .map(|j| (0..n).map(|i| xa[(i, j)] * u[i]).sum())
                .collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 1e-10 * scale) {
                return Err(NowcastError::RankExceeded {
                    requested: k,
                    rank: a,
                });
            }
            w.iter_mut().for_each(|v| *v /= norm);
            let t: Vec<f64> = (0..n)
                .map(|i| (0..p).map(|j| xa[(i, j)] * w[j]).sum())
                .collect();
            let tt: f64 = t.iter().map(|v| v * v).sum();
            let q = ya.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / tt;
            let done = w_prev.as_ref().is_some_and(|wp| {
                wp.iter()
                    .zip(&w)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    < NIPALS_TOL
            });
            if done {
                converged = Some((w, t, tt, q));
                break;
            }
            u = if q != 0.0 {
                ya.iter().map(|v| v / q).collect()
            } else {
                ya.clone()
            };
            w_prev = Some(w);
        }
        let Some((w, t, tt, q)) = converged else {
            return Err(NowcastError::NipalsNonConvergence { component: a + 1 });
        };
        let pl: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| xa[(i, j)] * t[i]).sum::<f64>() / tt)
            .collect();
        for i in 0..n {
            for j in 0..p {
                xa[(i, j)] -= t[i] * pl[j];
            }
            ya[i] -= q * t[i];
        }
        ws.push(w);
        ps.push(pl);
        qs.push(q);
        tss.push(tt);
    }
    // beta = W (P'W)^-1 q
    let wm = DMatrix::from_fn(p, k, |j, a| ws[a][j]);
    let pm = DMatrix::from_fn(p, k, |j, a| ps[a][j]);
    let ptw = pm.transpose() * &wm;
    let inv = ptw
        .try_inverse()
        .ok_or_else(|| NowcastError::Singular("P'W is singular".into()))?;
    let qv = nalgebra::DVector::from_vec(qs.clone());
    let beta = wm * (inv * qv);
    let coefs: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - x_means.iter().zip(&coefs).map(|(m, b)| m * b).sum::<f64>();
    Ok(PlsParams {
        linear: LinearParams { intercept, coefs },
        weights: ws,
        loadings: ps,
        y_loadings: qs,
        score_ss: tss,
        x_means,
    })
}
