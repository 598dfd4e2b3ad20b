//! Random walks, AR(p), OLS, ridge, and the lasso / elastic-net
//! coordinate-descent solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};

/// Coordinate descent stops when no coefficient moves more than this,
pub const CD_TOLERANCE: f64 = 1e-7;
/// or when the stationarity violation (checked every 10 sweeps) is below
/// this. Ill-conditioned fits crawl under the first rule alone.
pub const CD_KKT_TOLERANCE: f64 = 5e-7;
pub const CD_MAX_SWEEPS: usize = 10_000;

/// `sign(z) * max(|z| - gamma, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub intercept: f64,
    pub coefs: Vec<f64>,
}

impl LinearParams {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefs.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

struct Centered {
    /// column-major
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    x_means: Vec<f64>,
    y_mean: f64,
}

fn center(x: &[Vec<f64>], y: &[f64]) -> Result<Centered> {
    let n = y.len();
    if n == 0 {
        return Err(NowcastError::InsufficientData("no training rows".into()));
    }
    let p = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != p) || x.len() != n {
        return Err(NowcastError::ShapeMismatch("ragged training rows".into()));
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut cols = Vec::with_capacity(p);
    let mut x_means = Vec::with_capacity(p);
    for j in 0..p {
        let m = x.iter().map(|r| r[j]).sum::<f64>() / nf;
        x_means.push(m);
        cols.push(x.iter().map(|r| r[j] - m).collect());
    }
    Ok(Centered {
        cols,
        y: y.iter().map(|v| v - y_mean).collect(),
        x_means,
        y_mean,
    })
}

fn to_matrix(cols: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

fn finish(c: &Centered, coefs: Vec<f64>) -> LinearParams {
    let intercept = c.y_mean
        - c.x_means
            .iter()
            .zip(&coefs)
            .map(|(m, b)| m * b)
            .sum::<f64>();
    LinearParams { intercept, coefs }
}

/// Least squares with an intercept. Needs full column rank.
pub fn fit_ols(x: &[Vec<f64>], y: &[f64]) -> Result<LinearParams> {
    let c = center(x, y)?;
    let (n, p) = (y.len(), c.cols.len());
    if p == 0 {
        return Ok(finish(&c, Vec::new()));
    }
    if p + 1 > n {
        return Err(NowcastError::Singular(format!(
            "{p} columns plus intercept with {n} rows"
        )));
    }
    let xm = to_matrix(&c.cols, n);
    let svd = xm.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < 1e-10 {
        return Err(NowcastError::Singular("design is rank deficient".into()));
    }
    let beta = svd
        .solve(&DVector::from_vec(c.y.clone()), 0.0)
        .map_err(|e| NowcastError::Singular(e.to_string()))?;
    Ok(finish(&c, beta.iter().copied().collect()))
}

/// Closed form for `(1/2n)|y - Xb|^2 + (lambda/2)|b|^2`, intercept free.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<LinearParams> {
    let c = center(x, y)?;
    let (n, p) = (y.len(), c.cols.len());
    if p == 0 {
        return Ok(finish(&c, Vec::new()));
    }
    let xm = to_matrix(&c.cols, n);
    let mut a = xm.transpose() * &xm;
    for j in 0..p {
        a[(j, j)] += n as f64 * lambda;
    }
    let rhs = xm.transpose() * DVector::from_vec(c.y.clone());
    let chol = a.cholesky().ok_or_else(|| {
        NowcastError::Singular("ridge normal equations not positive definite".into())
    })?;
    let beta = chol.solve(&rhs);
    Ok(finish(&c, beta.iter().copied().collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdFit {
    pub params: LinearParams,
    pub sweeps: usize,
    pub kkt_gap: f64,
}

/// Cyclic coordinate descent for
/// `(1/2n)|y - Xb|^2 + lambda (alpha |b|_1 + (1 - alpha)/2 |b|^2)`.
pub fn fit_elastic_net(x: &[Vec<f64>], y: &[f64], lambda: f64, alpha: f64) -> Result<CdFit> {
    fit_elastic_net_with(x, y, lambda, alpha, CD_TOLERANCE, CD_MAX_SWEEPS)
}

pub fn fit_elastic_net_with(
    x: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
    alpha: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<CdFit> {
    let c = center(x, y)?;
    let n = y.len() as f64;
    let p = c.cols.len();
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);
    let norms: Vec<f64> = c
        .cols
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>() / n)
        .collect();
    let mut beta = vec![0.0; p];
    let mut r = c.y.clone();
    for sweep in 1..=max_sweeps {
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            let denom = norms[j] + l2;
            let old = beta[j];
            let new = if denom > 0.0 {
                let rho =
                    c.cols[j].iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n + norms[j] * old;
                soft_threshold(rho, l1) / denom
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                for (ri, xi) in r.iter_mut().zip(&c.cols[j]) {
                    *ri -= xi * delta;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let gap_due = sweep % 10 == 0;
        if max_delta < tol || gap_due {
            let gap = kkt_gap_centered(&c.cols, &r, &beta, l1, l2);
            if max_delta >= tol && gap > CD_KKT_TOLERANCE {
                continue;
            }
            return Ok(CdFit {
                params: finish(&c, beta),
                sweeps: sweep,
                kkt_gap: gap,
            });
        }
    }
    Err(NowcastError::NonConvergence {
        sweeps: max_sweeps,
        gap: kkt_gap_centered(&c.cols, &r, &beta, l1, l2),
    })
}

fn kkt_gap_centered(cols: &[Vec<f64>], r: &[f64], beta: &[f64], l1: f64, l2: f64) -> f64 {
    let n = r.len() as f64;
    cols.iter()
        .zip(beta)
        .map(|(col, &b)| {
            let g = col.iter().zip(r).map(|(a, c)| a * c).sum::<f64>() / n - l2 * b;
            if b == 0.0 {
                (g.abs() - l1).max(0.0)
            } else {
                (g - l1 * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of the elastic-net stationarity conditions at
/// `params`: for zero coefficients `|x_j'r/n| <= lambda alpha`, for
/// active ones `x_j'r/n - lambda (1 - alpha) b_j = lambda alpha sign(b_j)`.
pub fn kkt_gap(x: &[Vec<f64>], y: &[f64], params: &LinearParams, lambda: f64, alpha: f64) -> f64 {
    let c = center(x, y).expect("non-empty rows");
    let r: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(row, yi)| yi - params.predict(row))
        .collect();
    let rm = r.iter().sum::<f64>() / r.len() as f64;
    let r: Vec<f64> = r.iter().map(|v| v - rm).collect();
    kkt_gap_centered(
        &c.cols,
        &r,
        &params.coefs,
        lambda * alpha,
        lambda * (1.0 - alpha),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomWalkParams {
    pub last: f64,
    pub drift: f64,
}

pub fn fit_random_walk(
    history: &[f64],
    diffs: &[f64],
    with_drift: bool,
) -> Result<RandomWalkParams> {
    let last = *history.last().ok_or_else(|| {
        NowcastError::InsufficientData("random walk needs one target value".into())
    })?;
    let drift = if with_drift {
        if diffs.is_empty() {
            return Err(NowcastError::InsufficientData(
                "drift needs two target values".into(),
            ));
        }
        diffs.iter().sum::<f64>() / diffs.len() as f64
    } else {
        0.0
    };
    Ok(RandomWalkParams { last, drift })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArParams {
    pub intercept: f64,
    /// Coefficient on lag k at index k - 1.
    pub coefs: Vec<f64>,
    /// Most recent target values, newest first.
    pub recent: Vec<f64>,
}

impl ArParams {
    pub fn one_step(&self, lags: &[f64]) -> f64 {
        self.intercept + self.coefs.iter().zip(lags).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn forecast(&self) -> f64 {
        self.one_step(&self.recent)
    }
}

pub fn fit_ar(x: &[Vec<f64>], y: &[f64], recent: &[f64]) -> Result<ArParams> {
    let p = recent.len();
    if y.len() < p + 2 {
        return Err(NowcastError::InsufficientData(format!(
            "ar({p}) needs at least {} lag rows, got {}",
            p + 2,
            y.len()
        )));
    }
    let lp = fit_ols(x, y)?;
    Ok(ArParams {
        intercept: lp.intercept,
        coefs: lp.coefs,
        recent: recent.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
    }

    #[test]
    fn ols_recovers_plane() {
        let x: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64, ((i * 7) % 5) as f64])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 1.5 + 2.0 * r[0] - 0.5 * r[1]).collect();
        let p = fit_ols(&x, &y).unwrap();
        assert!((p.intercept - 1.5).abs() < 1e-10);
        assert!((p.coefs[0] - 2.0).abs() < 1e-10 && (p.coefs[1] + 0.5).abs() < 1e-10);
    }

    #[test]
    fn ols_singular_cases() {
        let x = vec![
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![3.0, 6.0],
            vec![4.0, 8.0],
        ];
        let y = vec![1.0, 2.0, 3.0, 5.0];
        assert!(matches!(fit_ols(&x, &y), Err(NowcastError::Singular(_))));
        let wide = vec![vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]];
        assert!(matches!(
            fit_ols(&wide, &[1.0, 2.0]),
            Err(NowcastError::Singular(_))
        ));
        // penalized fits do not need full rank
        assert!(fit_ridge(&x, &y, 0.1).is_ok());
        assert!(fit_elastic_net(&x, &y, 0.1, 0.5).is_ok());
    }

    #[test]
    fn lasso_single_standardized_predictor() {
        // x standardized (mean 0, population variance 1)
        let raw = [1.0, 2.0, 3.0, 4.0, 5.0];
        let m = 3.0;
        let sd = 2.0f64.sqrt();
        let x: Vec<Vec<f64>> = raw.iter().map(|v| vec![(v - m) / sd]).collect();
        let y = [1.2, 1.9, 3.4, 3.9, 5.3];
        let n = y.len() as f64;
        let ym = y.iter().sum::<f64>() / n;
        let xty: f64 = x.iter().zip(&y).map(|(r, v)| r[0] * (v - ym)).sum::<f64>() / n;
        for lambda in [0.0, 0.3, 1.0, 5.0] {
            let fit = fit_elastic_net(&x, &y, lambda, 1.0).unwrap();
            assert!(
                (fit.params.coefs[0] - soft_threshold(xty, lambda)).abs() < 1e-12,
                "lambda {lambda}"
            );
        }
    }

    #[test]
    fn random_walks() {
        let h = [1.0, 2.0, 3.0];
        let d = [1.0, 1.0];
        let rw = fit_random_walk(&h, &d, false).unwrap();
        assert_eq!(rw.last + rw.drift, 3.0);
        let rwd = fit_random_walk(&h, &d, true).unwrap();
        assert_eq!(rwd.last + rwd.drift, 4.0);
    }

    #[test]
    fn non_convergence_reports_gap() {
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, (i as f64).sin(), (i * i) as f64 / 50.0])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] - r[1] + 0.3 * r[2]).collect();
        match fit_elastic_net_with(&x, &y, 1e-4, 1.0, 1e-14, 2) {
            Err(NowcastError::NonConvergence { sweeps, gap }) => {
                assert_eq!(sweeps, 2);
                assert!(gap > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
