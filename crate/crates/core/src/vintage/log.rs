use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{NowcastError, Result};
use crate::period::{parse_date, Frequency, Period};

use super::snapshot::{PanelValue, Snapshot};

/// One publication of one value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesObservation {
    pub series_id: String,
    pub ref_period: Period,
    pub value: f64,
    pub published_at: NaiveDate,
    pub frequency: Frequency,
}

impl SeriesObservation {
    pub fn new(
        series_id: impl Into<String>,
        ref_period: Period,
        value: f64,
        published_at: NaiveDate,
    ) -> Self {
        Self {
            series_id: series_id.into(),
            frequency: ref_period.frequency(),
            ref_period,
            value,
            published_at,
        }
    }
}

/// Raw CSV row, before period/date parsing.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CsvRow {
    series_id: String,
    ref_period: String,
    value: String,
    published_at: String,
    frequency: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    Duplicate,
    Invalid(NowcastError),
}

impl RejectReason {
    pub fn label(&self) -> String {
        match self {
            RejectReason::Duplicate => "duplicate".to_string(),
            RejectReason::Invalid(e) => e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reject {
    /// Position of the record in the ingested batch.
    pub index: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestSummary {
    pub inserts: usize,
    pub revisions: usize,
    pub rejects: Vec<Reject>,
}

impl IngestSummary {
    pub fn reject_count(&self) -> usize {
        self.rejects.len()
    }

    /// Rejects other than idempotent duplicates.
    pub fn invalid_count(&self) -> usize {
        self.rejects
            .iter()
            .filter(|r| !matches!(r.reason, RejectReason::Duplicate))
            .count()
    }
}

/// Append-only publication history. Every vintage is reconstructed from it.
#[derive(Debug, Clone, Default)]
pub struct ObservationLog {
    /// Days before period end a value may be published. Zero by default.
    early_release_allowance: i64,
    entries: BTreeMap<(String, Period), Vec<(NaiveDate, f64)>>,
    frequencies: BTreeMap<String, Frequency>,
}

impl ObservationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_early_release_allowance(days: i64) -> Self {
        Self {
            early_release_allowance: days,
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn series_ids(&self) -> impl Iterator<Item = &String> {
        self.frequencies.keys()
    }

    pub fn frequency_of(&self, series_id: &str) -> Option<Frequency> {
        self.frequencies.get(series_id).copied()
    }

    pub fn earliest_publication(&self) -> Option<NaiveDate> {
        self.entries
            .values()
            .flat_map(|v| v.iter().map(|(d, _)| *d))
            .min()
    }

    pub fn latest_publication(&self) -> Option<NaiveDate> {
        self.entries
            .values()
            .flat_map(|v| v.iter().map(|(d, _)| *d))
            .max()
    }

    /// Distinct publication dates of one series, ascending.
    pub fn publication_dates(&self, series_id: &str) -> Vec<NaiveDate> {
        let mut d: Vec<NaiveDate> = self
            .entries
            .iter()
            .filter(|((sid, _), _)| sid == series_id)
            .flat_map(|(_, v)| v.iter().map(|(d, _)| *d))
            .collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    fn validate(&self, obs: &SeriesObservation) -> Result<()> {
        if !obs.value.is_finite() {
            return Err(NowcastError::NonFiniteValue {
                series_id: obs.series_id.clone(),
                ref_period: obs.ref_period.to_string(),
            });
        }
        if obs.ref_period.frequency() != obs.frequency {
            return Err(NowcastError::FrequencyMismatch {
                series_id: obs.series_id.clone(),
                ref_period: obs.ref_period.to_string(),
                expected: obs.frequency.to_string(),
            });
        }
        if let Some(f) = self.frequencies.get(&obs.series_id) {
            if *f != obs.frequency {
                return Err(NowcastError::FrequencyMismatch {
                    series_id: obs.series_id.clone(),
                    ref_period: obs.ref_period.to_string(),
                    expected: f.to_string(),
                });
            }
        }
        let earliest = obs.ref_period.end_date() - Duration::days(self.early_release_allowance);
        if obs.published_at < earliest {
            return Err(NowcastError::EarlyRelease {
                series_id: obs.series_id.clone(),
                ref_period: obs.ref_period.to_string(),
                published_at: obs.published_at,
            });
        }
        Ok(())
    }

    /// Appends valid records. Identical re-ingestion is a counted no-op.
    pub fn ingest<I>(&mut self, records: I) -> IngestSummary
    where
        I: IntoIterator<Item = SeriesObservation>,
    {
        let mut summary = IngestSummary::default();
        for (index, obs) in records.into_iter().enumerate() {
            if let Err(e) = self.validate(&obs) {
                summary.rejects.push(Reject {
                    index,
                    reason: RejectReason::Invalid(e),
                });
                continue;
            }
            let key = (obs.series_id.clone(), obs.ref_period);
            let pubs = self.entries.entry(key).or_default();
            match pubs.binary_search_by(|(d, _)| d.cmp(&obs.published_at)) {
                Ok(pos) => {
                    let reason = if pubs[pos].1.to_bits() == obs.value.to_bits() {
                        RejectReason::Duplicate
                    } else {
                        RejectReason::Invalid(NowcastError::PublicationTie {
                            series_id: obs.series_id.clone(),
                            ref_period: obs.ref_period.to_string(),
                            published_at: obs.published_at,
                        })
                    };
                    summary.rejects.push(Reject { index, reason });
                }
                Err(pos) => {
                    if pubs.is_empty() {
                        summary.inserts += 1;
                    } else {
                        summary.revisions += 1;
                    }
                    pubs.insert(pos, (obs.published_at, obs.value));
                    self.frequencies.insert(obs.series_id, obs.frequency);
                }
            }
        }
        self.entries.retain(|_, v| !v.is_empty());
        summary
    }

    /// Point-in-time reconstruction: per (series, period) the value with
    /// the latest `published_at <= as_of`.
    pub fn snapshot_at(&self, as_of: NaiveDate) -> Result<Snapshot> {
        let earliest = self.earliest_publication().ok_or(NowcastError::EmptyLog)?;
        if as_of < earliest {
            return Err(NowcastError::EmptySnapshot(as_of));
        }
        let mut panel: BTreeMap<String, BTreeMap<Period, PanelValue>> = BTreeMap::new();
        for ((sid, period), pubs) in &self.entries {
            let idx = pubs.partition_point(|(d, _)| *d <= as_of);
            if idx == 0 {
                continue;
            }
            let (published_at, value) = pubs[idx - 1];
            panel.entry(sid.clone()).or_default().insert(
                *period,
                PanelValue {
                    value,
                    published_at,
                },
            );
        }
        Ok(Snapshot::new(as_of, panel, self.frequencies.clone()))
    }

    /// Value of the first release of every period for a series.
    pub fn first_releases(&self, series_id: &str) -> BTreeMap<Period, f64> {
        self.entries
            .iter()
            .filter(|((s, _), _)| s == series_id)
            .map(|((_, p), pubs)| (*p, pubs[0].1))
            .collect()
    }

    /// Latest release of every period for a series.
    pub fn latest_releases(&self, series_id: &str) -> BTreeMap<Period, f64> {
        self.entries
            .iter()
            .filter(|((s, _), _)| s == series_id)
            .map(|((_, p), pubs)| (*p, pubs[pubs.len() - 1].1))
            .collect()
    }

    /// All records in canonical (series, period, published_at) order.
    pub fn records(&self) -> Vec<SeriesObservation> {
        let mut out = Vec::with_capacity(self.len());
        for ((sid, period), pubs) in &self.entries {
            for (d, v) in pubs {
                out.push(SeriesObservation::new(sid.clone(), *period, *v, *d));
            }
        }
        out
    }

    /// Digest of the canonical CSV encoding.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        write_observations_csv(&mut buf, &self.records()).expect("in-memory write");
        sha256_hex(&buf)
    }
}

/// Parses the observation CSV. Rows that fail to parse come back as
/// `Err` in position so ingestion can count them as rejects.
pub fn read_observations_csv<R: Read>(reader: R) -> Result<Vec<Result<SeriesObservation>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = [
        "series_id",
        "ref_period",
        "value",
        "published_at",
        "frequency",
    ];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(NowcastError::Parse(format!(
            "observation header must be {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        out.push(row.map_err(NowcastError::from).and_then(parse_row));
    }
    Ok(out)
}

fn parse_row(row: CsvRow) -> Result<SeriesObservation> {
    let ref_period: Period = row.ref_period.parse()?;
    let value: f64 = row
        .value
        .parse()
        .map_err(|_| NowcastError::Parse(format!("value {:?}", row.value)))?;
    let published_at = parse_date(&row.published_at)?;
    let frequency: Frequency = row.frequency.parse()?;
    Ok(SeriesObservation {
        series_id: row.series_id,
        ref_period,
        value,
        published_at,
        frequency,
    })
}

/// Parses and ingests in one pass; parse failures become rejects.
pub fn ingest_csv<R: Read>(log: &mut ObservationLog, reader: R) -> Result<IngestSummary> {
    let rows = read_observations_csv(reader)?;
    let mut summary = IngestSummary::default();
    let mut valid = Vec::new();
    let mut positions = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Ok(obs) => {
                valid.push(obs);
                positions.push(i);
            }
            Err(e) => summary.rejects.push(Reject {
                index: i,
                reason: RejectReason::Invalid(e),
            }),
        }
    }
    let inner = log.ingest(valid);
    summary.inserts = inner.inserts;
    summary.revisions = inner.revisions;
    summary
        .rejects
        .extend(inner.rejects.into_iter().map(|r| Reject {
            index: positions[r.index],
            reason: r.reason,
        }));
    summary.rejects.sort_by_key(|r| r.index);
    Ok(summary)
}

pub fn write_observations_csv<W: Write>(writer: W, records: &[SeriesObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "series_id",
        "ref_period",
        "value",
        "published_at",
        "frequency",
    ])?;
    for r in records {
        w.write_record([
            r.series_id.clone(),
            r.ref_period.to_string(),
            format!("{}", r.value),
            r.published_at.format("%Y-%m-%d").to_string(),
            r.frequency.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    fn obs(sid: &str, p: &str, v: f64, pubd: &str) -> SeriesObservation {
        SeriesObservation::new(sid, p.parse().unwrap(), v, d(pubd))
    }

    #[test]
    fn counts_inserts() {
        let mut log = ObservationLog::new();
        let s = log.ingest(vec![
            obs("a", "2020-Q1", 1.0, "2020-05-01"),
            obs("a", "2020-Q2", 1.0, "2020-08-01"),
            obs("b", "2020-01", 1.0, "2020-02-15"),
        ]);
        assert_eq!((s.inserts, s.revisions, s.reject_count()), (3, 0, 0));
    }

    #[test]
    fn duplicate_is_idempotent() {
        let mut log = ObservationLog::new();
        let row = obs("a", "2020-Q1", 1.0, "2020-05-01");
        log.ingest(vec![row.clone()]);
        let before = log.digest();
        let s = log.ingest(vec![row]);
        assert_eq!(s.reject_count(), 1);
        assert_eq!(s.rejects[0].reason, RejectReason::Duplicate);
        assert_eq!(s.rejects[0].reason.label(), "duplicate");
        assert_eq!(log.digest(), before);
    }

    #[test]
    fn revision_and_tie() {
        let mut log = ObservationLog::new();
        let s = log.ingest(vec![
            obs("a", "2020-Q1", 1.0, "2020-05-01"),
            obs("a", "2020-Q1", 1.2, "2020-08-01"),
            obs("a", "2020-Q1", 1.3, "2020-08-01"),
        ]);
        assert_eq!((s.inserts, s.revisions), (1, 1));
        assert!(matches!(
            s.rejects[0].reason,
            RejectReason::Invalid(NowcastError::PublicationTie { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_and_early() {
        let mut log = ObservationLog::new();
        let s = log.ingest(vec![
            obs("a", "2020-Q1", f64::NAN, "2020-05-01"),
            obs("a", "2020-Q2", 1.0, "2020-06-29"),
        ]);
        assert!(matches!(
            s.rejects[0].reason,
            RejectReason::Invalid(NowcastError::NonFiniteValue { .. })
        ));
        assert!(matches!(
            s.rejects[1].reason,
            RejectReason::Invalid(NowcastError::EarlyRelease { .. })
        ));
        let mut lenient = ObservationLog::with_early_release_allowance(5);
        assert_eq!(
            lenient
                .ingest(vec![obs("a", "2020-Q2", 1.0, "2020-06-29")])
                .inserts,
            1
        );
    }

    #[test]
    fn csv_nan_and_malformed_period() {
        let data = "series_id,ref_period,value,published_at,frequency\n\
                    a,2020-Q1,NaN,2020-05-01,quarterly\n\
                    a,2020-Q9,1.0,2020-05-01,quarterly\n\
                    a,2020-Q2,2.5,2020-08-01,quarterly\n";
        let mut log = ObservationLog::new();
        let s = ingest_csv(&mut log, data.as_bytes()).unwrap();
        assert_eq!(s.inserts, 1);
        assert_eq!(s.rejects.len(), 2);
        assert!(matches!(
            s.rejects[0].reason,
            RejectReason::Invalid(NowcastError::NonFiniteValue { .. })
        ));
        assert!(matches!(
            s.rejects[1].reason,
            RejectReason::Invalid(NowcastError::MalformedPeriod(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut log = ObservationLog::new();
        log.ingest(vec![
            obs("a", "2020-Q1", 1.25, "2020-05-01"),
            obs("b", "2020-02", -0.1, "2020-03-20"),
        ]);
        let mut buf = Vec::new();
        write_observations_csv(&mut buf, &log.records()).unwrap();
        let mut again = ObservationLog::new();
        ingest_csv(&mut again, buf.as_slice()).unwrap();
        assert_eq!(again.records(), log.records());
        assert_eq!(again.digest(), log.digest());
    }
}
