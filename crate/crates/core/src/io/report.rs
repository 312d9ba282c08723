//! Detection reports (JSON), score traces (CSV) and run summaries.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::engine::{ClassOutcome, DetectionReport};
use crate::error::Result;

pub fn save_report(path: &Path, report: &DetectionReport) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn load_report(path: &Path) -> Result<DetectionReport> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "iteration",
    "window_start",
    "window_end",
    "baseline",
    "load_i",
    "load_ii",
    "load_iii",
    "threshold_i",
    "threshold_ii",
    "threshold_iii",
    "alarm",
];

/// One row per detection iteration.
pub fn trace_csv(report: &DetectionReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_COLUMNS)?;
    for row in &report.trace {
        let mut rec = vec![
            row.iteration.to_string(),
            row.windows.start.to_string(),
            row.windows.end.to_string(),
            row.baseline.to_string(),
        ];
        rec.extend(row.loads.iter().map(|v| v.to_string()));
        rec.extend(row.thresholds.iter().map(|v| v.to_string()));
        rec.push(u8::from(row.alarm).to_string());
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string()).into())
}

pub fn write_trace_csv(path: &Path, report: &DetectionReport) -> Result<()> {
    atomic_write(path, &trace_csv(report)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub v_l: usize,
    pub iterations: usize,
    pub alarms: usize,
    pub baselines: usize,
    pub thresholds: Vec<Option<[f64; 3]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub false_alarms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub false_alarm_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_outcomes: Option<Vec<ClassOutcome>>,
}

pub fn summary(report: &DetectionReport) -> ReportSummary {
    let eval = report.evaluation.as_ref();
    ReportSummary {
        v_l: report.v_l,
        iterations: report.iterations,
        alarms: report.alarms.len(),
        baselines: report.baselines.len(),
        thresholds: report.baselines.iter().map(|b| b.thresholds).collect(),
        false_alarms: eval.map(|e| e.false_alarms),
        false_alarm_ratio: eval.map(|e| e.false_alarm_ratio),
        class_outcomes: eval.map(|e| e.class_outcomes.clone()),
    }
}

impl fmt::Display for ReportSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} iterations at V_L={}, {} alarms, {} baselines",
            self.iterations, self.v_l, self.alarms, self.baselines
        )?;
        for (k, t) in self.thresholds.iter().enumerate() {
            match t {
                Some([a, b, c]) => writeln!(f, "  baseline {k}: thresholds {a:.4} {b:.4} {c:.4}")?,
                None => writeln!(f, "  baseline {k}: untuned")?,
            }
        }
        if let Some(outcomes) = &self.class_outcomes {
            for (k, o) in outcomes.iter().enumerate() {
                let text = match o {
                    ClassOutcome::DetectedOnTime => "detected on time".to_string(),
                    ClassOutcome::DetectedWithDelay { iterations } => {
                        format!("detected after {iterations} iteration(s)")
                    }
                    ClassOutcome::Undetected => "undetected".to_string(),
                };
                writeln!(f, "  class {}: {text}", k + 1)?;
            }
        }
        if let (Some(n), Some(r)) = (self.false_alarms, self.false_alarm_ratio) {
            writeln!(f, "  false alarms: {n} ({:.3}%)", 100.0 * r)?;
        }
        Ok(())
    }
}
