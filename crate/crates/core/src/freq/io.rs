use super::{IngestError, RawFrequencyDay, SECONDS_PER_DAY};
use crate::model::TimeGrid;
use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

/// Reads `timestamp,frequency_hz` rows and segments them into UTC days.
///
/// Timestamps are epoch seconds or ISO-8601 date-times (offsets are honored,
/// naive values are taken as UTC). A header row is optional.
pub fn read_frequency_csv<R: Read>(reader: R) -> Result<Vec<RawFrequencyDay>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut days: BTreeMap<i64, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        if rec.len() < 2 {
            return Err(IngestError::Parse { line, msg: "expected two columns".into() });
        }
        let freq = match rec[1].parse::<f64>() {
            Ok(f) => f,
            Err(_) if i == 0 => continue, // header
            Err(_) if rec[1].is_empty() || rec[1].eq_ignore_ascii_case("nan") => f64::NAN,
            Err(e) => return Err(IngestError::Parse { line, msg: e.to_string() }),
        };
        let epoch = match parse_timestamp(&rec[0]) {
            Some(t) => t,
            None if i == 0 => continue,
            None => return Err(IngestError::Parse { line, msg: format!("bad timestamp {:?}", &rec[0]) }),
        };
        let day = (epoch / SECONDS_PER_DAY as f64).floor() as i64;
        let tod = epoch - day as f64 * SECONDS_PER_DAY as f64;
        days.entry(day).or_default().push((tod, freq));
    }

    Ok(days
        .into_iter()
        .map(|(day, mut samples)| {
            samples.sort_by(|a, b| a.0.total_cmp(&b.0));
            samples.dedup_by(|b, a| a.0 == b.0);
            let label = DateTime::from_timestamp(day * SECONDS_PER_DAY as i64, 0)
                .map(|d| d.format("%Y-%m-%d").to_string())
                .unwrap_or_else(|| day.to_string());
            let (ts, fs) = samples.into_iter().unzip();
            RawFrequencyDay::new(label, ts, fs)
        })
        .collect())
}

fn parse_timestamp(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            let utc = dt.and_utc();
            return Some(utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9);
        }
    }
    None
}

/// Writes one row per scenario, no header, values printed round-trip exact.
pub fn write_scenario_matrix<W: Write>(writer: W, rows: &[Vec<f64>]) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric matrix (optional header). A header column named `weight`
/// is split off and returned separately.
pub fn read_scenario_matrix<R: Read>(reader: R) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>), IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut weight_col = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(mut vals) => {
                if let Some(c) = weight_col {
                    weights.push(vals.remove(c));
                }
                if let Some(first) = rows.first().map(Vec::len) {
                    if first != vals.len() {
                        return Err(IngestError::RaggedMatrix(first, vals.len()));
                    }
                }
                rows.push(vals);
            }
            Err(_) if i == 0 => {
                weight_col = rec.iter().position(|h| h.eq_ignore_ascii_case("weight"));
            }
            Err(e) => return Err(IngestError::Parse { line: i + 1, msg: e.to_string() }),
        }
    }
    Ok((rows, weight_col.map(|_| weights)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedDay {
    pub label: String,
    pub reason: String,
}

/// Companion record of a scenario matrix produced by ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub version: u32,
    pub fold: bool,
    pub clamp: bool,
    pub grid: TimeGrid,
    pub eta_c: f64,
    pub eta_d: f64,
    pub f_nom: f64,
    pub df_max: f64,
    pub max_gap_s: u64,
    pub days: Vec<String>,
    pub rejected: Vec<RejectedDay>,
    pub matrix_sha256: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_by_utc_day_with_mixed_timestamps() {
        let csv = "timestamp,frequency_hz\n\
                   2016-03-01T23:59:58Z,50.01\n\
                   2016-03-01T23:59:59Z,50.02\n\
                   1456876800,49.99\n\
                   2016-03-02 00:00:01,49.98\n";
        let days = read_frequency_csv(csv.as_bytes()).unwrap();
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].label, "2016-03-01");
        assert_eq!(days[0].timestamps, vec![86_398.0, 86_399.0]);
        assert_eq!(days[1].label, "2016-03-02");
        assert_eq!(days[1].timestamps, vec![0.0, 1.0]);
        assert_eq!(days[1].f, vec![49.99, 49.98]);
    }

    #[test]
    fn offsets_convert_to_utc() {
        let csv = "2016-03-02T01:00:00+01:00,50.0\n";
        let days = read_frequency_csv(csv.as_bytes()).unwrap();
        assert_eq!(days[0].label, "2016-03-02");
        assert_eq!(days[0].timestamps, vec![0.0]);
    }

    #[test]
    fn bad_rows_are_reported() {
        let csv = "0,50.0\nyesterday,50.0\n";
        assert!(matches!(read_frequency_csv(csv.as_bytes()), Err(IngestError::Parse { line: 2, .. })));
    }

    #[test]
    fn matrix_roundtrip_and_weights() {
        let rows = vec![vec![0.1, -0.2, 1.0 / 3.0], vec![0.0, 1e-17, 5.0]];
        let mut buf = Vec::new();
        write_scenario_matrix(&mut buf, &rows).unwrap();
        let (back, w) = read_scenario_matrix(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        assert!(w.is_none());

        let with_w = "t1,t2,weight\n1,2,0.25\n3,4,0.75\n";
        let (m, w) = read_scenario_matrix(with_w.as_bytes()).unwrap();
        assert_eq!(m, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(w, Some(vec![0.25, 0.75]));
        assert!(read_scenario_matrix("1,2\n3\n".as_bytes()).is_err());
    }
}
