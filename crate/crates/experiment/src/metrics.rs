//! Density MAPE and fault-labeling confusion counts.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{ExperimentError, Result};
use crate::io::{DecisionRow, LinkSeries, MeasurementRow, SensorKind};

/// How decisions are paired with truth tags, as recorded in report metadata.
pub const MATCHING_RULE: &str = "decision (k, sensor_seq) is paired with the sensor_seq-th \
measurement row of step k in file order; GNSS reports within (k, link) are in generation order; \
only GNSS rows are counted";

/// Positive means declared faulty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, faulty: bool, rejected: bool) {
        match (faulty, rejected) {
            (true, true) => self.true_positives += 1,
            (false, true) => self.false_positives += 1,
            (false, false) => self.true_negatives += 1,
            (true, false) => self.false_negatives += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }

    pub fn flagged(&self) -> u64 {
        self.true_positives + self.false_positives
    }

    /// `100 (FP + FN) / total`, or `None` with no readings.
    pub fn labeling_error_pct(&self) -> Option<f64> {
        let total = self.total();
        (total > 0)
            .then(|| 100.0 * (self.false_positives + self.false_negatives) as f64 / total as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub density_mape_pct: f64,
    /// `(k, link)` pairs entering the MAPE.
    pub mape_samples: usize,
    pub confusion: ConfusionMatrix,
}

/// Mean of `|est - truth| / truth` in percent over every estimated `(k, link)`
/// whose true density exceeds `floor`.
pub fn density_mape(
    truth: &LinkSeries,
    estimates: &LinkSeries,
    floor: f64,
) -> Result<(f64, usize)> {
    if estimates.is_empty() {
        return Err(ExperimentError::Alignment("no estimates".into()));
    }
    let steps: std::collections::BTreeSet<u64> = estimates.keys().map(|(k, _)| *k).collect();
    let expected = truth.keys().filter(|(k, _)| steps.contains(k)).count();
    if expected != estimates.len() {
        return Err(ExperimentError::Alignment(format!(
            "{} estimates for {expected} true (k, link) pairs on the same steps",
            estimates.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (key, est) in estimates {
        let rho = *truth.get(key).ok_or_else(|| {
            ExperimentError::Alignment(format!("no truth for k={} link={}", key.0, key.1))
        })?;
        if rho > floor {
            sum += (est - rho).abs() / rho;
            n += 1;
        }
    }
    if n == 0 {
        return Err(ExperimentError::Alignment(format!(
            "no true density above the floor {floor}"
        )));
    }
    Ok((100.0 * sum / n as f64, n))
}

/// Confusion counts over GNSS readings with a truth tag.
pub fn confusion(
    measurements: &[MeasurementRow],
    decisions: &[DecisionRow],
) -> Result<ConfusionMatrix> {
    let mut by_key: BTreeMap<(u64, usize), &DecisionRow> = BTreeMap::new();
    for d in decisions {
        if by_key.insert((d.k, d.sensor_seq), d).is_some() {
            return Err(ExperimentError::Alignment(format!(
                "duplicate decision for k={} sensor_seq={}",
                d.k, d.sensor_seq
            )));
        }
    }
    if by_key.len() != measurements.len() {
        return Err(ExperimentError::Alignment(format!(
            "{} decisions for {} measurements",
            by_key.len(),
            measurements.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    let mut seq = 0usize;
    let mut step = None;
    for m in measurements {
        if step != Some(m.k) {
            step = Some(m.k);
            seq = 0;
        }
        let d = by_key.get(&(m.k, seq)).ok_or_else(|| {
            ExperimentError::Alignment(format!("no decision for k={} sensor_seq={seq}", m.k))
        })?;
        if d.link != m.link {
            return Err(ExperimentError::Alignment(format!(
                "decision k={} sensor_seq={seq} is on link {} but the reading is on link {}",
                m.k, d.link, m.link
            )));
        }
        if let (SensorKind::Gnss, Some(faulty)) = (m.kind, m.truth_faulty) {
            cm.record(faulty, d.rejected);
        }
        seq += 1;
    }
    Ok(cm)
}

pub fn evaluate(
    truth: &LinkSeries,
    measurements: &[MeasurementRow],
    estimates: &LinkSeries,
    decisions: &[DecisionRow],
    floor: f64,
) -> Result<Evaluation> {
    let (density_mape_pct, mape_samples) = density_mape(truth, estimates, floor)?;
    Ok(Evaluation {
        density_mape_pct,
        mape_samples,
        confusion: confusion(measurements, decisions)?,
    })
}
