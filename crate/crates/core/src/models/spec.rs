use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rw,
    RwDrift,
    Ar,
    Ols,
    Ridge,
    Lasso,
    ElasticNet,
    Pcr,
    Plsr,
    RandomForest,
    Gbdt,
    Mlp,
    Gru,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Rw => "rw",
            Family::RwDrift => "rw_drift",
            Family::Ar => "ar",
            Family::Ols => "ols",
            Family::Ridge => "ridge",
            Family::Lasso => "lasso",
            Family::ElasticNet => "elastic_net",
            Family::Pcr => "pcr",
            Family::Plsr => "plsr",
            Family::RandomForest => "random_forest",
            Family::Gbdt => "gbdt",
            Family::Mlp => "mlp",
            Family::Gru => "gru",
        }
    }

    /// Families that read only the target history.
    pub fn is_univariate(self) -> bool {
        matches!(self, Family::Rw | Family::RwDrift | Family::Ar)
    }

    pub fn is_tree(self) -> bool {
        matches!(self, Family::RandomForest | Family::Gbdt)
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Family::Mlp | Family::Gru)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Number(f64),
    List(Vec<f64>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hyperparams(pub BTreeMap<String, HyperValue>);

impl Hyperparams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.0.insert(key.to_string(), HyperValue::Number(v));
        self
    }

    pub fn with_list(mut self, key: &str, v: &[f64]) -> Self {
        self.0.insert(key.to_string(), HyperValue::List(v.to_vec()));
        self
    }

    pub fn with_text(mut self, key: &str, v: &str) -> Self {
        self.0
            .insert(key.to_string(), HyperValue::Text(v.to_string()));
        self
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(HyperValue::Number(v)) if v.is_finite() => Ok(*v),
            Some(other) => Err(NowcastError::InvalidSpec(format!(
                "{key} must be a finite number, got {other:?}"
            ))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.f64_or(key, default as f64)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(NowcastError::InvalidSpec(format!(
                "{key} must be a non-negative integer, got {v}"
            )));
        }
        Ok(v as usize)
    }

    pub fn sizes_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.0.get(key) {
            None => Ok(default.to_vec()),
            Some(HyperValue::Number(v)) => Ok(vec![*v as usize]),
            Some(HyperValue::List(vs)) => Ok(vs.iter().map(|v| *v as usize).collect()),
            Some(other) => Err(NowcastError::InvalidSpec(format!(
                "{key} must be a size list, got {other:?}"
            ))),
        }
    }

    pub fn text_or(&self, key: &str, default: &str) -> Result<String> {
        match self.0.get(key) {
            None => Ok(default.to_string()),
            Some(HyperValue::Text(s)) => Ok(s.clone()),
            Some(other) => Err(NowcastError::InvalidSpec(format!(
                "{key} must be text, got {other:?}"
            ))),
        }
    }
}

/// One portfolio member: family, hyperparameters and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub family: Family,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(id: impl Into<String>, family: Family) -> Self {
        Self {
            id: id.into(),
            family,
            hyperparams: Hyperparams::new(),
            seed: 0,
        }
    }

    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.hyperparams = self.hyperparams.with(key, v);
        self
    }

    pub fn with_list(mut self, key: &str, v: &[f64]) -> Self {
        self.hyperparams = self.hyperparams.with_list(key, v);
        self
    }

    pub fn with_text(mut self, key: &str, v: &str) -> Self {
        self.hyperparams = self.hyperparams.with_text(key, v);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn hp(&self) -> &Hyperparams {
        &self.hyperparams
    }

    /// Penalty weight and L1 share for the penalized linear families.
    pub fn penalty(&self) -> Result<(f64, f64)> {
        let h = &self.hyperparams;
        let (lambda, alpha) = match self.family {
            Family::Ridge => (h.f64_or("lambda", 1.0)?, 0.0),
            Family::Lasso => (h.f64_or("lambda", 0.1)?, 1.0),
            Family::ElasticNet => (h.f64_or("lambda", 0.1)?, h.f64_or("alpha", 0.5)?),
            _ => (0.0, 0.0),
        };
        if lambda < 0.0 {
            return Err(NowcastError::InvalidSpec(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(NowcastError::InvalidSpec(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok((lambda, alpha))
    }

    /// Fewest training rows a fit can use.
    pub fn min_rows(&self) -> usize {
        let h = &self.hyperparams;
        match self.family {
            Family::Rw | Family::RwDrift => 1,
            Family::Ar => h.usize_or("p", 1).unwrap_or(1) + 2,
            Family::Pcr | Family::Plsr => h.usize_or("k", 1).unwrap_or(1) + 1,
            Family::RandomForest | Family::Gbdt => 2 * h.usize_or("min_leaf", 1).unwrap_or(1),
            Family::Gru => h.usize_or("seq_len", 4).unwrap_or(4) + 1,
            _ => 2,
        }
    }
}
