use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::period::{Frequency, Period};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelValue {
    pub value: f64,
    pub published_at: NaiveDate,
}

/// The data set exactly as a real-time observer saw it on `as_of`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    as_of: NaiveDate,
    panel: BTreeMap<String, BTreeMap<Period, PanelValue>>,
    ragged_edge: BTreeMap<String, Period>,
    /// Every series ever ingested, including ones with nothing published yet.
    known: BTreeMap<String, Frequency>,
}

impl Snapshot {
    pub(crate) fn new(
        as_of: NaiveDate,
        panel: BTreeMap<String, BTreeMap<Period, PanelValue>>,
        known: BTreeMap<String, Frequency>,
    ) -> Self {
        let ragged_edge = panel
            .iter()
            .filter_map(|(s, m)| m.keys().next_back().map(|p| (s.clone(), *p)))
            .collect();
        Self {
            as_of,
            panel,
            ragged_edge,
            known,
        }
    }

    pub fn as_of(&self) -> NaiveDate {
        self.as_of
    }

    pub fn get(&self, series_id: &str, period: Period) -> Option<f64> {
        self.panel.get(series_id)?.get(&period).map(|v| v.value)
    }

    pub fn series(&self, series_id: &str) -> Option<&BTreeMap<Period, PanelValue>> {
        self.panel.get(series_id)
    }

    pub fn panel(&self) -> &BTreeMap<String, BTreeMap<Period, PanelValue>> {
        &self.panel
    }

    /// Last available reference period per series.
    pub fn ragged_edge(&self) -> &BTreeMap<String, Period> {
        &self.ragged_edge
    }

    pub fn is_known(&self, series_id: &str) -> bool {
        self.known.contains_key(series_id)
    }

    pub fn frequency_of(&self, series_id: &str) -> Option<Frequency> {
        self.known.get(series_id).copied()
    }

    /// True when every entry here appears with the same value in `later`.
    pub fn is_subset_of(&self, later: &Snapshot) -> bool {
        self.panel.iter().all(|(s, m)| {
            m.iter()
                .all(|(p, v)| later.get(s, *p).map(|w| w.to_bits()) == Some(v.value.to_bits()))
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serializable snapshot")
    }
}
