//! Feature attributions: standardized coefficients, VIP, block permutation
//! importance, exact tree Shapley values, Integrated Gradients, bootstrap
//! bands and cross-origin stability.

mod global;
mod gradients;
mod profile;
mod tree_shap;

pub use global::{
    block_permutation, block_permutation_importance, block_permutation_importance_with,
    coefficient_importance, linear_contributions, vip_scores, PermutationConfig,
};
pub use gradients::{integrated_gradients, Baseline, NOT_INTERPRETABLE};
pub use profile::{
    importance_bands, profile_over_origins, stability_report, ImportanceProfile, InstabilityFlag,
    Sign, SignCoherence, StabilityConfig, StabilityReport,
};
pub use tree_shap::{brute_force_shapley, tree_shap, tree_shap_single, TreeShap};

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Coefficients,
    /// `beta_j (x_j - mean_j)`: additive local decomposition of a linear
    /// prediction around its training mean.
    LinearContribution,
    Vip,
    Permutation,
    TreeShap,
    IntegratedGradients,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Coefficients => "coefficients",
            Method::LinearContribution => "linear_contribution",
            Method::Vip => "vip",
            Method::Permutation => "permutation",
            Method::TreeShap => "tree_shap",
            Method::IntegratedGradients => "integrated_gradients",
        }
    }

    /// Local methods whose values sum to prediction minus base.
    pub fn is_additive(self) -> bool {
        matches!(
            self,
            Method::LinearContribution | Method::TreeShap | Method::IntegratedGradients
        )
    }

    /// Methods whose values carry a sign.
    pub fn is_signed(self) -> bool {
        !matches!(self, Method::Vip)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub origin: Option<NaiveDate>,
    pub model_id: String,
    pub method: Method,
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
    /// Prediction with no feature information (additive methods).
    pub base_value: Option<f64>,
    /// Model output being explained (additive methods).
    pub prediction: Option<f64>,
    /// Per-feature standard errors where the method estimates them.
    pub standard_errors: Option<Vec<f64>>,
    /// Digest of the data the attribution was computed on.
    pub data_digest: Option<String>,
    /// Baseline, permutation scheme, steps, seed: enough to replay.
    pub metadata: BTreeMap<String, String>,
}

impl AttributionVector {
    pub(crate) fn new(
        model_id: &str,
        method: Method,
        feature_names: Vec<String>,
        values: Vec<f64>,
    ) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("method".to_string(), method.as_str().to_string());
        Self {
            origin: None,
            model_id: model_id.to_string(),
            method,
            feature_names,
            values,
            base_value: None,
            prediction: None,
            standard_errors: None,
            data_digest: None,
            metadata,
        }
    }

    pub fn with_origin(mut self, origin: NaiveDate) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn with_data_digest(mut self, digest: impl Into<String>) -> Self {
        self.data_digest = Some(digest.into());
        self
    }

    pub fn value(&self, feature: &str) -> Option<f64> {
        self.feature_names
            .iter()
            .position(|f| f == feature)
            .map(|j| self.values[j])
    }

    /// `prediction - base - sum(values)` for additive methods.
    pub fn completeness_residual(&self) -> Option<f64> {
        Some(self.prediction? - self.base_value? - self.values.iter().sum::<f64>())
    }

    pub(crate) fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }
}

/// One CSV row per (vector, feature) with the metadata flattened into a
/// `key=value;...` column.
pub fn write_attributions_csv<W: Write>(w: W, vectors: &[AttributionVector]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "origin",
        "model",
        "method",
        "feature",
        "value",
        "standard_error",
        "base_value",
        "prediction",
        "metadata",
    ])?;
    for v in vectors {
        let meta: Vec<String> = v.metadata.iter().map(|(k, x)| format!("{k}={x}")).collect();
        for (j, f) in v.feature_names.iter().enumerate() {
            let opt = |o: Option<f64>| o.map(|x| x.to_string()).unwrap_or_default();
            wr.write_record([
                v.origin.map(|d| d.to_string()).unwrap_or_default(),
                v.model_id.clone(),
                v.method.as_str().to_string(),
                f.clone(),
                v.values[j].to_string(),
                opt(v.standard_errors.as_ref().map(|s| s[j])),
                opt(v.base_value),
                opt(v.prediction),
                meta.join(";"),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}
