//! Per-iteration metric records and JSON-lines logs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One phase-2 log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    #[serde(rename = "L")]
    pub total: f64,
    #[serde(rename = "L_x")]
    pub supervised: f64,
    #[serde(rename = "L_u_plus")]
    pub consistency: f64,
    #[serde(rename = "L_u_minus")]
    pub regularization: f64,
    pub lr: f64,
    /// Mean predictive entropy on the weak view of the positive stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_entropy: Option<f64>,
    /// Fraction of positive samples contributing to the consistency term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_rate: Option<f64>,
    /// Top-1 accuracy of the EMA model on the test split, in percent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_err: Option<f64>,
}

impl MetricsRecord {
    pub fn with_accuracy(mut self, accuracy: f64) -> Self {
        self.test_acc = Some(accuracy);
        self.test_err = Some(100.0 - accuracy);
        self
    }
}

/// One phase-1 log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextRecord {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_jsonl<S: Serialize>(path: &Path, records: &[S]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<S>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::corrupt(path, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_and_error_are_consistent() {
        let r = MetricsRecord {
            iter: 3,
            total: 1.0,
            supervised: 1.0,
            consistency: 0.0,
            regularization: 0.0,
            lr: 0.01,
            pseudo_entropy: None,
            mask_rate: None,
            test_acc: None,
            test_err: None,
        }
        .with_accuracy(82.5);
        assert_eq!(r.test_err, Some(17.5));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"L_u_plus\":0.0") && json.contains("\"L\":1.0"));
        assert!(!json.contains("pseudo_entropy"));
    }
}
