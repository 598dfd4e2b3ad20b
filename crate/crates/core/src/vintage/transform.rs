//! Frequency harmonization and window-local transformations.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};
use crate::period::{Frequency, Period};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    EndOfPeriod,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialQuarters {
    /// Quarters with fewer than three published months are not emitted.
    #[default]
    Drop,
    /// Partial quarters use the months available: their mean (`sum`
    /// scales it by three), or the last one for `end_of_period`.
    UseAvailable,
}

/// Monthly to quarterly. Input keys must be monthly periods.
pub fn aggregate_to_quarterly(
    monthly: &BTreeMap<Period, f64>,
    rule: Aggregation,
    partial: PartialQuarters,
) -> Result<BTreeMap<Period, f64>> {
    if monthly.is_empty() {
        return Err(NowcastError::EmptyInput("aggregate_to_quarterly"));
    }
    let mut groups: BTreeMap<Period, Vec<(Period, f64)>> = BTreeMap::new();
    for (p, v) in monthly {
        if p.frequency() != Frequency::Monthly {
            return Err(NowcastError::FrequencyMismatch {
                series_id: String::new(),
                ref_period: p.to_string(),
                expected: "monthly".into(),
            });
        }
        groups.entry(p.to_quarter()).or_default().push((*p, *v));
    }
    let mut out = BTreeMap::new();
    for (q, months) in groups {
        let vals: Vec<f64> = months.iter().map(|(_, v)| *v).collect();
        let complete = months.len() == 3;
        if !complete && partial == PartialQuarters::Drop {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = match rule {
            Aggregation::Mean => mean,
            Aggregation::EndOfPeriod => *vals.last().expect("non-empty group"),
            Aggregation::Sum if complete => vals.iter().sum(),
            Aggregation::Sum => 3.0 * mean,
        };
        out.insert(q, v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Log,
    Diff,
    /// Percent change, `100 (x_t / x_{t-1} - 1)`.
    PctChange,
    /// Subtract the window mean, divide by the window population standard
    /// deviation.
    Standardize,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Log => "log",
            Transform::Diff => "diff",
            Transform::PctChange => "pct_change",
            Transform::Standardize => "standardize",
        }
    }
}

/// Window statistics for standardization (population variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean: f64,
    pub sd: f64,
}

impl WindowStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(NowcastError::EmptyInput("standardize window"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(NowcastError::ZeroVariance);
        }
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }
}

fn apply_pointwise(values: &[f64], step: Transform) -> Result<Vec<f64>> {
    match step {
        Transform::Log => values
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(NowcastError::NonPositiveLog(v))
                }
            })
            .collect(),
        Transform::Diff => Ok(values.windows(2).map(|w| w[1] - w[0]).collect()),
        Transform::PctChange => values
            .windows(2)
            .map(|w| {
                if w[0] == 0.0 {
                    Err(NowcastError::InvalidRecipe(
                        "pct_change from a zero level".into(),
                    ))
                } else {
                    Ok(100.0 * (w[1] / w[0] - 1.0))
                }
            })
            .collect(),
        Transform::Standardize => unreachable!("standardize is windowed"),
    }
}

/// Applies `chain` to a contiguous series. `window` selects the slice of
/// the series (as it stands when `standardize` is reached) whose mean and
/// variance drive standardization; `None` means the whole series.
pub fn transform(
    values: &[f64],
    chain: &[Transform],
    window: Option<Range<usize>>,
) -> Result<Vec<f64>> {
    let mut cur = values.to_vec();
    for &step in chain {
        cur = match step {
            Transform::Standardize => {
                let w = window.clone().unwrap_or(0..cur.len());
                if w.end > cur.len() || w.start >= w.end {
                    return Err(NowcastError::ShapeMismatch(format!(
                        "standardize window {w:?} outside series of length {}",
                        cur.len()
                    )));
                }
                let stats = WindowStats::from_values(&cur[w])?;
                cur.iter().map(|&v| stats.apply(v)).collect()
            }
            other => apply_pointwise(&cur, other)?,
        };
    }
    Ok(cur)
}

/// Pointwise steps on a period-indexed series. `diff`/`pct_change` emit a
/// value at `t` only when `t-1` is present. Each output period carries the
/// input periods it was computed from.
pub(crate) fn transform_indexed(
    series: &BTreeMap<Period, (f64, Vec<Period>)>,
    step: Transform,
) -> Result<BTreeMap<Period, (f64, Vec<Period>)>> {
    let mut out = BTreeMap::new();
    match step {
        Transform::Log => {
            for (p, (v, src)) in series {
                if *v <= 0.0 {
                    return Err(NowcastError::NonPositiveLog(*v));
                }
                out.insert(*p, (v.ln(), src.clone()));
            }
        }
        Transform::Diff | Transform::PctChange => {
            for (p, (v, src)) in series {
                if let Some((prev, psrc)) = series.get(&p.prev()) {
                    let nv = apply_pointwise(&[*prev, *v], step)?[0];
                    let mut s = psrc.clone();
                    s.extend(src.iter().copied());
                    out.insert(*p, (nv, s));
                }
            }
        }
        Transform::Standardize => unreachable!("standardize is windowed"),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn months(vals: &[f64]) -> BTreeMap<Period, f64> {
        let start: Period = "2020-01".parse().unwrap();
        vals.iter()
            .enumerate()
            .map(|(i, v)| (start.offset(i as i64), *v))
            .collect()
    }

    #[test]
    fn aggregation_rules() {
        let m = months(&[1.0, 2.0, 3.0]);
        let q: Period = "2020-Q1".parse().unwrap();
        let agg = |r| aggregate_to_quarterly(&m, r, PartialQuarters::Drop).unwrap()[&q];
        assert_eq!(agg(Aggregation::Mean), 2.0);
        assert_eq!(agg(Aggregation::EndOfPeriod), 3.0);
        assert_eq!(agg(Aggregation::Sum), 6.0);
    }

    #[test]
    fn partial_quarters() {
        let m = months(&[1.0, 2.0, 3.0, 4.0, 6.0]);
        let dropped = aggregate_to_quarterly(&m, Aggregation::Mean, PartialQuarters::Drop).unwrap();
        assert_eq!(dropped.len(), 1);
        let kept =
            aggregate_to_quarterly(&m, Aggregation::Mean, PartialQuarters::UseAvailable).unwrap();
        assert_eq!(kept[&"2020-Q2".parse::<Period>().unwrap()], 5.0);
        assert!(
            aggregate_to_quarterly(&BTreeMap::new(), Aggregation::Mean, PartialQuarters::Drop)
                .is_err()
        );
    }

    #[test]
    fn log_diff() {
        let e = std::f64::consts::E;
        let out = transform(&[e, e * e], &[Transform::Log, Transform::Diff], None).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardize_population_variance() {
        let out = transform(&[1.0, 2.0, 3.0], &[Transform::Standardize], None).unwrap();
        // population sd of (1,2,3) is sqrt(2/3)
        let z = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((out[0] + z).abs() < 1e-12 && out[1].abs() < 1e-12 && (out[2] - z).abs() < 1e-12);
        assert!((out[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn length_and_errors() {
        assert!(transform(&[5.0], &[Transform::Diff], None)
            .unwrap()
            .is_empty());
        assert!(matches!(
            transform(&[1.0, 0.0], &[Transform::Log], None),
            Err(NowcastError::NonPositiveLog(_))
        ));
        assert!(matches!(
            transform(&[2.0, 2.0, 2.0], &[Transform::Standardize], None),
            Err(NowcastError::ZeroVariance)
        ));
        let pct = transform(&[100.0, 110.0], &[Transform::PctChange], None).unwrap();
        assert!((pct[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn standardization_is_window_local() {
        let a = transform(
            &[1.0, 2.0, 3.0, 100.0],
            &[Transform::Standardize],
            Some(0..3),
        )
        .unwrap();
        let b = transform(
            &[1.0, 2.0, 3.0, -7.0],
            &[Transform::Standardize],
            Some(0..3),
        )
        .unwrap();
        assert_eq!(a[..3], b[..3]);
        let mean: f64 = a[..3].iter().sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
    }
}
