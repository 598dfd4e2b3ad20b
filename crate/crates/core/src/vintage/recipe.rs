use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};

use super::transform::{Aggregation, PartialQuarters, Transform};

/// Economic information block a feature reports under.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum EconomicBlock {
    DomesticDemand,
    ExternalDemand,
    LaborMarket,
    Prices,
    FinancialConditions,
    #[default]
    Other,
}

impl EconomicBlock {
    pub const ALL: [EconomicBlock; 6] = [
        EconomicBlock::DomesticDemand,
        EconomicBlock::ExternalDemand,
        EconomicBlock::LaborMarket,
        EconomicBlock::Prices,
        EconomicBlock::FinancialConditions,
        EconomicBlock::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EconomicBlock::DomesticDemand => "domestic_demand",
            EconomicBlock::ExternalDemand => "external_demand",
            EconomicBlock::LaborMarket => "labor_market",
            EconomicBlock::Prices => "prices",
            EconomicBlock::FinancialConditions => "financial_conditions",
            EconomicBlock::Other => "other",
        }
    }
}

impl fmt::Display for EconomicBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeScope {
    /// Statistics from the training rows of the current origin only.
    #[default]
    Window,
    /// Statistics from every assembled row, including the nowcast row.
    /// Leaks; the audit flags it.
    FullSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaggedEdgePolicy {
    /// A one-quarter gap in the nowcast row is filled with the prior
    /// quarter's value; older gaps drop the feature for that origin.
    #[default]
    CarryWithinQuarter,
    /// Any gap in the nowcast row drops the feature.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecipe {
    pub series: String,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub transforms: Vec<Transform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub name: String,
    pub series: String,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub transforms: Vec<Transform>,
    #[serde(default)]
    pub block: EconomicBlock,
    /// Row `t` reads the feature at quarter `t - lag`.
    #[serde(default)]
    pub lag: u32,
    /// Read this series from the vintage `origin + offset` days instead of
    /// the origin's. Positive offsets look into the future.
    #[serde(default)]
    pub vintage_offset_days: i64,
    #[serde(default)]
    pub standardize_scope: StandardizeScope,
}

impl FeatureRecipe {
    pub fn new(name: impl Into<String>, series: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            series: series.into(),
            aggregation: Aggregation::Mean,
            transforms: Vec::new(),
            block: EconomicBlock::Other,
            lag: 0,
            vintage_offset_days: 0,
            standardize_scope: StandardizeScope::Window,
        }
    }

    pub fn with_transforms(mut self, t: Vec<Transform>) -> Self {
        self.transforms = t;
        self
    }

    pub fn with_block(mut self, b: EconomicBlock) -> Self {
        self.block = b;
        self
    }

    pub fn standardized(&self) -> bool {
        self.transforms.last() == Some(&Transform::Standardize)
    }
}

/// Everything needed to turn a snapshot into a design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub target: TargetRecipe,
    #[serde(default)]
    pub features: Vec<FeatureRecipe>,
    #[serde(default)]
    pub partial_quarters: PartialQuarters,
    #[serde(default)]
    pub ragged_edge: RaggedEdgePolicy,
}

impl Recipe {
    pub fn target_only(series: impl Into<String>) -> Self {
        Self {
            target: TargetRecipe {
                series: series.into(),
                aggregation: Aggregation::Mean,
                transforms: Vec::new(),
            },
            features: Vec::new(),
            partial_quarters: PartialQuarters::Drop,
            ragged_edge: RaggedEdgePolicy::CarryWithinQuarter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.transforms.contains(&Transform::Standardize) {
            return Err(NowcastError::InvalidRecipe(
                "the target chain cannot standardize".into(),
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(NowcastError::InvalidRecipe(format!(
                    "duplicate feature name {:?}",
                    f.name
                )));
            }
            if let Some(pos) = f
                .transforms
                .iter()
                .position(|t| *t == Transform::Standardize)
            {
                if pos + 1 != f.transforms.len() {
                    return Err(NowcastError::InvalidRecipe(format!(
                        "feature {:?}: standardize must be the last step",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }
}
