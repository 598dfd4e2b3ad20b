//! Calendar periods encoded as `YYYY-MM` (monthly) or `YYYY-Qn` (quarterly).

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{NowcastError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    Monthly,
    Quarterly,
}

impl Frequency {
    pub fn as_str(self) -> &'static str {
        match self {
            Frequency::Monthly => "monthly",
            Frequency::Quarterly => "quarterly",
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Frequency {
    type Err = NowcastError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "monthly" | "m" | "M" => Ok(Frequency::Monthly),
            "quarterly" | "q" | "Q" => Ok(Frequency::Quarterly),
            other => Err(NowcastError::Parse(format!("unknown frequency {other:?}"))),
        }
    }
}

/// A reference period. Ordering is chronological by period start; a month
/// and the quarter containing it compare by their start month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Period {
    Month { year: i32, month: u32 },
    Quarter { year: i32, quarter: u32 },
}

impl Period {
    pub fn month(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(NowcastError::MalformedPeriod(format!("{year}-{month}")));
        }
        Ok(Period::Month { year, month })
    }

    pub fn quarter(year: i32, quarter: u32) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(NowcastError::MalformedPeriod(format!("{year}-Q{quarter}")));
        }
        Ok(Period::Quarter { year, quarter })
    }

    pub fn frequency(self) -> Frequency {
        match self {
            Period::Month { .. } => Frequency::Monthly,
            Period::Quarter { .. } => Frequency::Quarterly,
        }
    }

    fn start_month_index(self) -> i64 {
        match self {
            Period::Month { year, month } => year as i64 * 12 + (month as i64 - 1),
            Period::Quarter { year, quarter } => year as i64 * 12 + (quarter as i64 - 1) * 3,
        }
    }

    /// Linear index in units of the period's own frequency.
    pub fn ordinal(self) -> i64 {
        match self {
            Period::Month { .. } => self.start_month_index(),
            Period::Quarter { year, quarter } => year as i64 * 4 + (quarter as i64 - 1),
        }
    }

    fn from_ordinal(freq: Frequency, ord: i64) -> Self {
        match freq {
            Frequency::Monthly => Period::Month {
                year: ord.div_euclid(12) as i32,
                month: ord.rem_euclid(12) as u32 + 1,
            },
            Frequency::Quarterly => Period::Quarter {
                year: ord.div_euclid(4) as i32,
                quarter: ord.rem_euclid(4) as u32 + 1,
            },
        }
    }

    pub fn offset(self, steps: i64) -> Self {
        Period::from_ordinal(self.frequency(), self.ordinal() + steps)
    }

    pub fn next(self) -> Self {
        self.offset(1)
    }

    pub fn prev(self) -> Self {
        self.offset(-1)
    }

    /// Number of steps from `self` to `other` (same frequency assumed).
    pub fn steps_to(self, other: Period) -> i64 {
        other.ordinal() - self.ordinal()
    }

    /// The quarter containing this period.
    pub fn to_quarter(self) -> Period {
        match self {
            Period::Month { year, month } => Period::Quarter {
                year,
                quarter: (month - 1) / 3 + 1,
            },
            q => q,
        }
    }

    /// Months of a quarter, or the month itself.
    pub fn months(self) -> Vec<Period> {
        match self {
            Period::Month { .. } => vec![self],
            Period::Quarter { year, quarter } => (0..3)
                .map(|k| Period::Month {
                    year,
                    month: (quarter - 1) * 3 + 1 + k,
                })
                .collect(),
        }
    }

    pub fn start_date(self) -> NaiveDate {
        let idx = self.start_month_index();
        NaiveDate::from_ymd_opt(idx.div_euclid(12) as i32, idx.rem_euclid(12) as u32 + 1, 1)
            .expect("valid month start")
    }

    /// Last calendar day of the period.
    pub fn end_date(self) -> NaiveDate {
        let span = match self {
            Period::Month { .. } => 1,
            Period::Quarter { .. } => 3,
        };
        let next_start = self.start_month_index() + span;
        NaiveDate::from_ymd_opt(
            next_start.div_euclid(12) as i32,
            next_start.rem_euclid(12) as u32 + 1,
            1,
        )
        .expect("valid month start")
        .pred_opt()
        .expect("date in range")
    }

    /// The period of the given frequency that contains `date`.
    pub fn containing(date: NaiveDate, freq: Frequency) -> Period {
        let m = Period::Month {
            year: date.year(),
            month: date.month(),
        };
        match freq {
            Frequency::Monthly => m,
            Frequency::Quarterly => m.to_quarter(),
        }
    }
}

impl PartialOrd for Period {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Period {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.start_month_index()
            .cmp(&other.start_month_index())
            .then_with(|| self.frequency().cmp(&other.frequency()))
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::Month { year, month } => write!(f, "{year:04}-{month:02}"),
            Period::Quarter { year, quarter } => write!(f, "{year:04}-Q{quarter}"),
        }
    }
}

impl FromStr for Period {
    type Err = NowcastError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || NowcastError::MalformedPeriod(s.to_string());
        let (y, rest) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || !y.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        if let Some(q) = rest.strip_prefix('Q') {
            if q.len() != 1 {
                return Err(bad());
            }
            let quarter: u32 = q.parse().map_err(|_| bad())?;
            Period::quarter(year, quarter).map_err(|_| bad())
        } else {
            if rest.len() != 2 || !rest.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let month: u32 = rest.parse().map_err(|_| bad())?;
            Period::month(year, month).map_err(|_| bad())
        }
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|_| NowcastError::MalformedDate(s.to_string()))
}
