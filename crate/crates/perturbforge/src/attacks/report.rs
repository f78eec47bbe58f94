//! Per-example attack records and their CSV form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Label;

use super::AttackError;

/// One attacked example. `original` is the manifest-relative source path;
/// `adversarial` is relative to the run directory. `l2` is measured on
/// 0-255-scaled pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub original: PathBuf,
    pub adversarial: PathBuf,
    pub success: bool,
    pub base_label: Label,
    pub l2: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackAggregates {
    /// Fraction of examples the base model still classifies correctly.
    pub mean_accuracy: f64,
    pub mean_l2: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub records: Vec<ExampleRecord>,
    pub aggregates: AttackAggregates,
}

impl AttackReport {
    /// Assemble a report; `correct` flags whether the base model's label
    /// matched the true label per record, aligned with `records`.
    pub fn from_records(records: Vec<ExampleRecord>, correct: &[bool]) -> Self {
        assert_eq!(records.len(), correct.len());
        let n = records.len().max(1) as f64;
        let aggregates = AttackAggregates {
            mean_accuracy: correct.iter().filter(|&&c| c).count() as f64 / n,
            mean_l2: records.iter().map(|r| r.l2).sum::<f64>() / n,
            mean_seconds: records.iter().map(|r| r.seconds).sum::<f64>() / n,
        };
        AttackReport {
            records,
            aggregates,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), AttackError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| AttackError::Report {
                    path: parent.to_path_buf(),
                    detail: e.to_string(),
                })?;
            }
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| AttackError::Report {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        w.write_record(["original", "adversarial", "success", "base_label", "l2", "seconds"])
            .map_err(|e| AttackError::Report {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        for r in &self.records {
            w.write_record([
                r.original.to_string_lossy().to_string(),
                r.adversarial.to_string_lossy().to_string(),
                r.success.to_string(),
                r.base_label.to_string(),
                format!("{}", r.l2),
                format!("{}", r.seconds),
            ])
            .map_err(|e| AttackError::Report {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        }
        w.flush().map_err(|e| AttackError::Report {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Read records back; aggregates are recomputed with `correct_of`, which
    /// maps each record to whether the base label matched the truth.
    pub fn read_csv(
        path: impl AsRef<Path>,
        correct_of: impl Fn(&ExampleRecord) -> bool,
    ) -> Result<Self, AttackError> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| AttackError::Report {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| AttackError::Report {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
            let field = |i: usize| -> Result<&str, AttackError> {
                row.get(i).ok_or_else(|| AttackError::Report {
                    path: path.to_path_buf(),
                    detail: format!("row {:?} is missing column {i}", row.position()),
                })
            };
            let parse_err = |what: &str| AttackError::Report {
                path: path.to_path_buf(),
                detail: format!("cannot parse {what} in row {:?}", row.position()),
            };
            records.push(ExampleRecord {
                original: PathBuf::from(field(0)?),
                adversarial: PathBuf::from(field(1)?),
                success: field(2)?.parse().map_err(|_| parse_err("success"))?,
                base_label: match field(3)? {
                    "spam" => Label::Spam,
                    "ham" => Label::Ham,
                    _ => return Err(parse_err("base_label")),
                },
                l2: field(4)?.parse().map_err(|_| parse_err("l2"))?,
                seconds: field(5)?.parse().map_err(|_| parse_err("seconds"))?,
            });
        }
        let correct: Vec<bool> = records.iter().map(&correct_of).collect();
        Ok(AttackReport::from_records(records, &correct))
    }
}
