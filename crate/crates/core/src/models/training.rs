use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};
use crate::period::Period;
use crate::vintage::DesignMatrix;

use super::spec::{Family, ModelSpec};

/// The rows a family actually fits on, derived from a design matrix.
///
/// Regression families use the design rows directly; `ar` uses lag
/// embeddings of the target history; `rw` uses first differences; `gru`
/// uses flattened windows of consecutive design rows. Bootstrap replicates
/// resample these rows and leave `history` and `query` untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub periods: Vec<Period>,
    /// Names of the columns of `x` (lag names for `ar`).
    pub columns: Vec<String>,
    /// Design feature names the fitted model will accept.
    pub input_names: Vec<String>,
    /// Target history the univariate families forecast from.
    pub history: Vec<f64>,
    /// Input that produces the nowcast.
    pub query: Vec<f64>,
    pub nowcast_period: Period,
}

impl TrainingSet {
    pub fn from_design(spec: &ModelSpec, d: &DesignMatrix) -> Result<Self> {
        let history: Vec<f64> = d.target_history.iter().map(|(_, v)| *v).collect();
        let hist_periods: Vec<Period> = d.target_history.iter().map(|(p, _)| *p).collect();
        let base = |x, y, periods, columns, query| TrainingSet {
            x,
            y,
            periods,
            columns,
            input_names: d.feature_names.clone(),
            history: history.clone(),
            query,
            nowcast_period: d.nowcast.period,
        };
        match spec.family {
            Family::Rw | Family::RwDrift => {
                let y: Vec<f64> = history.windows(2).map(|w| w[1] - w[0]).collect();
                Ok(base(
                    vec![Vec::new(); y.len()],
                    y,
                    hist_periods[1.min(hist_periods.len())..].to_vec(),
                    Vec::new(),
                    Vec::new(),
                ))
            }
            Family::Ar => {
                let p = spec.hp().usize_or("p", 1)?;
                if p == 0 {
                    return Err(NowcastError::InvalidSpec("ar needs p >= 1".into()));
                }
                if history.len() <= p {
                    return Err(NowcastError::InsufficientData(format!(
                        "ar({p}) needs more than {p} target observations, got {}",
                        history.len()
                    )));
                }
                let mut x = Vec::new();
                let mut y = Vec::new();
                for t in p..history.len() {
                    x.push((1..=p).map(|k| history[t - k]).collect());
                    y.push(history[t]);
                }
                let n = history.len();
                let query = (0..p).map(|k| history[n - 1 - k]).collect();
                let columns = (1..=p).map(|k| format!("target_lag{k}")).collect();
                Ok(base(x, y, hist_periods[p..].to_vec(), columns, query))
            }
            Family::Gru => {
                let s = spec.hp().usize_or("seq_len", 4)?;
                if s == 0 {
                    return Err(NowcastError::InvalidSpec("gru needs seq_len >= 1".into()));
                }
                let mut x = Vec::new();
                let mut y = Vec::new();
                let mut periods = Vec::new();
                for i in (s - 1)..d.n_rows() {
                    let window = &d.target_periods[i + 1 - s..=i];
                    if window.windows(2).all(|w| w[0].next() == w[1]) {
                        x.push(d.x[i + 1 - s..=i].concat());
                        y.push(d.y[i]);
                        periods.push(d.target_periods[i]);
                    }
                }
                let n = d.n_rows();
                let contiguous_tail = n + 1 >= s
                    && (1..s)
                        .all(|k| d.target_periods[n - k] == d.nowcast.period.offset(-(k as i64)));
                if !contiguous_tail {
                    return Err(NowcastError::InsufficientData(format!(
                        "gru needs {} consecutive quarters before {}",
                        s - 1,
                        d.nowcast.period
                    )));
                }
                let mut query: Vec<f64> = d.x[n + 1 - s..].concat();
                query.extend_from_slice(&d.nowcast.x);
                Ok(base(x, y, periods, d.feature_names.clone(), query))
            }
            _ => Ok(base(
                d.x.clone(),
                d.y.clone(),
                d.target_periods.clone(),
                d.feature_names.clone(),
                d.nowcast.x.clone(),
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_columns(&self) -> usize {
        self.x.first().map_or(self.columns.len(), Vec::len)
    }

    /// Keeps the most recent `len` rows.
    pub fn tail(&self, len: usize) -> Self {
        let start = self.len().saturating_sub(len);
        let mut out = self.clone();
        out.x = self.x[start..].to_vec();
        out.y = self.y[start..].to_vec();
        out.periods = self.periods[start..].to_vec();
        out
    }

    /// Same history and query, rows replaced by `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = self.clone();
        out.x = indices.iter().map(|&i| self.x[i].clone()).collect();
        out.y = indices.iter().map(|&i| self.y[i]).collect();
        out.periods = indices.iter().map(|&i| self.periods[i]).collect();
        out
    }

    pub fn with_targets(&self, y: Vec<f64>) -> Self {
        let mut out = self.clone();
        out.y = y;
        out
    }

    /// Population standard deviation of each column.
    pub fn column_sd(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.n_columns())
            .map(|j| {
                if self.is_empty() {
                    return 0.0;
                }
                let m = self.x.iter().map(|r| r[j]).sum::<f64>() / n;
                (self.x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }
}
