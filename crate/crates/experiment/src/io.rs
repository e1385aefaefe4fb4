//! CSV formats exchanged between the CLI verbs.
//!
//! Every reader checks the header row verbatim and reports parse failures
//! with the offending line number. Writers go through a temporary file and a
//! rename, so a reader never sees a half-written file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Writer};
use faultpf::{MeasurementBatch, SensorId, SensorReading};
use faultpf_traffic::{GNSS_KIND, LOOP_KIND};

use crate::error::{ExperimentError, Result};

pub const TRUTH_HEADER: [&str; 3] = ["k", "link", "rho"];
pub const ESTIMATE_HEADER: [&str; 3] = ["k", "link", "rho_hat"];
pub const MEASUREMENT_HEADER: [&str; 5] = ["k", "sensor_kind", "link", "value", "truth_faulty"];
pub const DECISION_HEADER: [&str; 6] = [
    "k",
    "sensor_seq",
    "link",
    "density_value",
    "normalizer",
    "rejected",
];

/// Shortest round-trip text, in scientific notation when plain decimals get long.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| ExperimentError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ExperimentError::io(path, e))
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SensorKind {
    Loop,
    Gnss,
}

impl SensorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Loop => "loop",
            Self::Gnss => "gnss",
        }
    }

    pub fn code(self) -> u16 {
        match self {
            Self::Loop => LOOP_KIND,
            Self::Gnss => GNSS_KIND,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            LOOP_KIND => Some(Self::Loop),
            GNSS_KIND => Some(Self::Gnss),
            _ => None,
        }
    }
}

impl FromStr for SensorKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "loop" => Ok(Self::Loop),
            "gnss" => Ok(Self::Gnss),
            other => Err(format!("unknown sensor kind {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRow {
    pub k: u64,
    pub kind: SensorKind,
    pub link: usize,
    pub value: f64,
    pub truth_faulty: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionRow {
    pub k: u64,
    /// Position of the reading within its step's measurement batch.
    pub sensor_seq: usize,
    pub link: usize,
    pub density_value: f64,
    pub normalizer: f64,
    pub rejected: bool,
}

/// Per-step link values keyed by `(k, link)`.
pub type LinkSeries = BTreeMap<(u64, usize), f64>;

struct CsvReader<'a> {
    path: &'a Path,
    reader: csv::Reader<fs::File>,
}

impl<'a> CsvReader<'a> {
    fn open(path: &'a Path, header: &[&str]) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut reader = ReaderBuilder::new().has_headers(true).from_reader(file);
        let found = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        if found.iter().ne(header.iter().copied()) {
            return Err(ExperimentError::Schema {
                path: path.to_path_buf(),
                expected: header.iter().map(|s| s.to_string()).collect(),
                found: found.iter().map(str::to_string).collect(),
            });
        }
        Ok(Self { path, reader })
    }

    fn for_each(mut self, mut f: impl FnMut(&Row<'_>) -> Result<()>) -> Result<()> {
        let mut record = StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    f(&Row {
                        path: self.path,
                        line,
                        record: &record,
                    })?;
                }
                Err(e) => return Err(csv_error(self.path, e)),
            }
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> ExperimentError {
    let line = e.position().map_or(0, |p| p.line());
    ExperimentError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: &'a StringRecord,
}

impl Row<'_> {
    fn error(&self, message: String) -> ExperimentError {
        ExperimentError::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message,
        }
    }

    fn field<T: FromStr>(&self, i: usize, name: &str) -> Result<T> {
        let raw = self.record.get(i).unwrap_or("");
        raw.trim()
            .parse()
            .map_err(|_| self.error(format!("cannot parse {name} from {raw:?}")))
    }

    fn finite(&self, i: usize, name: &str) -> Result<f64> {
        let x: f64 = self.field(i, name)?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(self.error(format!("{name} must be finite, got {x}")))
        }
    }

    fn flag(&self, i: usize, name: &str) -> Result<bool> {
        match self.record.get(i).map(str::trim) {
            Some("0") => Ok(false),
            Some("1") => Ok(true),
            raw => Err(self.error(format!("{name} must be 0 or 1, got {raw:?}"))),
        }
    }
}

fn write_series(path: &Path, header: &[&str; 3], rows: &[(u64, Vec<f64>)]) -> Result<()> {
    let body = csv_bytes(
        header,
        rows.iter().flat_map(|(k, values)| {
            values
                .iter()
                .enumerate()
                .map(move |(link, v)| vec![k.to_string(), link.to_string(), fmt_f64(*v)])
        }),
    );
    write_atomic(path, &body)
}

fn read_series(path: &Path, header: &[&str; 3]) -> Result<LinkSeries> {
    let mut out = LinkSeries::new();
    CsvReader::open(path, header)?.for_each(|row| {
        let key = (row.field(0, "k")?, row.field(1, "link")?);
        let v = row.finite(2, header[2])?;
        if out.insert(key, v).is_some() {
            return Err(row.error(format!("duplicate row for k={} link={}", key.0, key.1)));
        }
        Ok(())
    })?;
    Ok(out)
}

/// True densities, one `(k, densities)` entry per step.
pub fn write_truth(path: &Path, rows: &[(u64, Vec<f64>)]) -> Result<()> {
    write_series(path, &TRUTH_HEADER, rows)
}

pub fn read_truth(path: &Path) -> Result<LinkSeries> {
    read_series(path, &TRUTH_HEADER)
}

pub fn write_estimates(path: &Path, rows: &[(u64, Vec<f64>)]) -> Result<()> {
    write_series(path, &ESTIMATE_HEADER, rows)
}

pub fn read_estimates(path: &Path) -> Result<LinkSeries> {
    read_series(path, &ESTIMATE_HEADER)
}

/// Flatten batches in order. Readings with an unknown sensor kind are an error.
pub fn measurement_rows(batches: &[MeasurementBatch]) -> Result<Vec<MeasurementRow>> {
    let mut rows = Vec::new();
    for b in batches {
        for r in &b.readings {
            let kind = SensorKind::from_code(r.sensor_id.kind).ok_or_else(|| {
                ExperimentError::Alignment(format!("sensor {} has no CSV kind", r.sensor_id))
            })?;
            rows.push(MeasurementRow {
                k: b.time,
                kind,
                link: r.sensor_id.target as usize,
                value: r.value[0],
                truth_faulty: r.truth_faulty,
            });
        }
    }
    Ok(rows)
}

pub fn write_measurements(path: &Path, rows: &[MeasurementRow]) -> Result<()> {
    let body = csv_bytes(
        &MEASUREMENT_HEADER,
        rows.iter().map(|r| {
            vec![
                r.k.to_string(),
                r.kind.as_str().to_string(),
                r.link.to_string(),
                fmt_f64(r.value),
                match r.truth_faulty {
                    Some(true) => "1".into(),
                    Some(false) => "0".into(),
                    None => "NA".into(),
                },
            ]
        }),
    );
    write_atomic(path, &body)
}

pub fn read_measurements(path: &Path) -> Result<Vec<MeasurementRow>> {
    let mut rows = Vec::new();
    CsvReader::open(path, &MEASUREMENT_HEADER)?.for_each(|row| {
        let k: u64 = row.field(0, "k")?;
        if let Some(prev) = rows.last().map(|r: &MeasurementRow| r.k) {
            if k < prev {
                return Err(row.error(format!("k={k} after k={prev}; rows must be ordered by k")));
            }
        }
        let truth_faulty = match row.record.get(4).map(str::trim) {
            Some("NA") => None,
            _ => Some(row.flag(4, "truth_faulty")?),
        };
        let value = row.finite(3, "value")?;
        if value < 0.0 {
            return Err(row.error(format!("value must be nonnegative, got {value}")));
        }
        rows.push(MeasurementRow {
            k,
            kind: row
                .record
                .get(1)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e: String| row.error(e))?,
            link: row.field(2, "link")?,
            value,
            truth_faulty,
        });
        Ok(())
    })?;
    Ok(rows)
}

/// One batch per step `1..=horizon`, empty where a step has no readings.
///
/// GNSS sequence numbers count reports per `(k, link)` in file order.
pub fn batches_from_rows(rows: &[MeasurementRow], horizon: u64) -> Result<Vec<MeasurementBatch>> {
    let mut batches: Vec<MeasurementBatch> = (1..=horizon).map(MeasurementBatch::empty).collect();
    let mut seq: BTreeMap<(u64, usize), u32> = BTreeMap::new();
    for r in rows {
        if r.k == 0 || r.k > horizon {
            return Err(ExperimentError::Alignment(format!(
                "measurement at k={} outside steps 1..={horizon}",
                r.k
            )));
        }
        let s = match r.kind {
            SensorKind::Loop => 0,
            SensorKind::Gnss => {
                let n = seq.entry((r.k, r.link)).or_insert(0);
                *n += 1;
                *n - 1
            }
        };
        batches[(r.k - 1) as usize].readings.push(SensorReading {
            sensor_id: SensorId::new(r.kind.code(), r.link as u32, s),
            value: vec![r.value],
            truth_faulty: r.truth_faulty,
        });
    }
    for b in &batches {
        b.check_unique()
            .map_err(|e| ExperimentError::Alignment(format!("step {}: {e}", b.time)))?;
    }
    Ok(batches)
}

pub fn write_decisions(path: &Path, rows: &[DecisionRow]) -> Result<()> {
    let body = csv_bytes(
        &DECISION_HEADER,
        rows.iter().map(|d| {
            vec![
                d.k.to_string(),
                d.sensor_seq.to_string(),
                d.link.to_string(),
                fmt_f64(d.density_value),
                fmt_f64(d.normalizer),
                u8::from(d.rejected).to_string(),
            ]
        }),
    );
    write_atomic(path, &body)
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRow>> {
    let mut rows = Vec::new();
    CsvReader::open(path, &DECISION_HEADER)?.for_each(|row| {
        rows.push(DecisionRow {
            k: row.field(0, "k")?,
            sensor_seq: row.field(1, "sensor_seq")?,
            link: row.field(2, "link")?,
            density_value: row.finite(3, "density_value")?,
            normalizer: row.finite(4, "normalizer")?,
            rejected: row.flag(5, "rejected")?,
        });
        Ok(())
    })?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn float_text_round_trips() {
        for x in [0.0, 1.0, 0.1 + 0.2, 1e-300, 123456.789, 2.5e-7, 1e20, -3.25] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1e-300), "1e-300");
        assert_eq!(fmt_f64(0.25), "0.25");
    }

    #[test]
    fn measurements_round_trip_with_na() {
        let dir = tmp();
        let path = dir.path().join("m.csv");
        let rows = vec![
            MeasurementRow {
                k: 1,
                kind: SensorKind::Loop,
                link: 0,
                value: 0.02,
                truth_faulty: Some(false),
            },
            MeasurementRow {
                k: 1,
                kind: SensorKind::Gnss,
                link: 3,
                value: 0.0,
                truth_faulty: Some(true),
            },
            MeasurementRow {
                k: 2,
                kind: SensorKind::Gnss,
                link: 3,
                value: 27.5,
                truth_faulty: None,
            },
        ];
        write_measurements(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("k,sensor_kind,link,value,truth_faulty\n"));
        assert!(text.contains(",NA\n"));
        assert_eq!(read_measurements(&path).unwrap(), rows);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tmp();
        let path = dir.path().join("m.csv");
        fs::write(
            &path,
            "k,sensor_kind,link,value,truth_faulty\n1,loop,0,0.1,0\n2,gnss,1,abc,1\n",
        )
        .unwrap();
        match read_measurements(&path).unwrap_err() {
            ExperimentError::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("value"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
        fs::write(&path, "k,kind,link,value,truth_faulty\n").unwrap();
        assert!(matches!(
            read_measurements(&path).unwrap_err(),
            ExperimentError::Schema { .. }
        ));
    }

    #[test]
    fn batches_assign_gnss_sequence_per_link() {
        let rows = vec![
            MeasurementRow {
                k: 2,
                kind: SensorKind::Gnss,
                link: 1,
                value: 20.0,
                truth_faulty: None,
            },
            MeasurementRow {
                k: 2,
                kind: SensorKind::Gnss,
                link: 1,
                value: 21.0,
                truth_faulty: None,
            },
            MeasurementRow {
                k: 2,
                kind: SensorKind::Gnss,
                link: 4,
                value: 22.0,
                truth_faulty: None,
            },
        ];
        let b = batches_from_rows(&rows, 3).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b[0].readings.is_empty() && b[2].readings.is_empty());
        let seqs: Vec<u32> = b[1].readings.iter().map(|r| r.sensor_id.seq).collect();
        assert_eq!(seqs, [0, 1, 0]);
        assert!(batches_from_rows(&rows, 1).is_err());
    }

    #[test]
    fn series_and_decisions_round_trip() {
        let dir = tmp();
        let t = dir.path().join("t.csv");
        write_truth(&t, &[(0, vec![0.1, 0.2]), (1, vec![0.3, 1e-9])]).unwrap();
        let s = read_truth(&t).unwrap();
        assert_eq!(s[&(1, 1)], 1e-9);
        assert_eq!(s.len(), 4);
        assert!(read_estimates(&t).is_err());

        let d = dir.path().join("d.csv");
        let rows = vec![DecisionRow {
            k: 4,
            sensor_seq: 2,
            link: 7,
            density_value: 3.5e-12,
            normalizer: 0.3,
            rejected: true,
        }];
        write_decisions(&d, &rows).unwrap();
        assert_eq!(read_decisions(&d).unwrap(), rows);
        assert!(!dir.path().join(".d.csv.tmp").exists());
    }
}
