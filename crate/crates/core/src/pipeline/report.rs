//! Run artifacts: the metrics JSON, prediction CSVs, atomic writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Evaluation, TrainMetrics};
use crate::error::{BgnnError, Result};

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| BgnnError::contract(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| BgnnError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        BgnnError::io(path, e)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub arch: String,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub val_acc: f64,
    pub test_acc: f64,
    pub teacher_mis_acc: Option<f64>,
    pub tau_range: Option<(f64, f64)>,
}

/// One JSON object per run. Top-level numbers describe the final step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub plan: String,
    pub seed: u64,
    pub per_epoch: Vec<EpochSummary>,
    pub test_acc: f64,
    pub teacher_mis_acc: Option<f64>,
    pub wall_ms: u64,
    pub steps: Vec<StepSummary>,
}

impl RunReport {
    pub fn new(plan: &str, seed: u64, steps: &[TrainMetrics]) -> Result<Self> {
        let last = steps.last().ok_or_else(|| BgnnError::contract("a report needs one step"))?;
        Ok(Self {
            plan: plan.to_string(),
            seed,
            per_epoch: last
                .per_epoch
                .iter()
                .map(|r| EpochSummary {
                    epoch: r.epoch,
                    train_loss: r.train_loss,
                    val_acc: r.val_acc,
                })
                .collect(),
            test_acc: last.test_acc,
            teacher_mis_acc: last.teacher_mis_acc,
            wall_ms: steps.iter().map(|m| m.wall_ms).sum(),
            steps: steps
                .iter()
                .map(|m| StepSummary {
                    step: m.step,
                    arch: m.arch.to_string(),
                    seed: m.seed,
                    best_epoch: m.best_epoch,
                    val_acc: m.val_acc,
                    test_acc: m.test_acc,
                    teacher_mis_acc: m.teacher_mis_acc,
                    tau_range: m.tau_range,
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

/// `sample_id,true,pred` rows for one evaluated split.
pub fn predictions_csv(eval: &Evaluation, labels: &[usize]) -> String {
    let mut s = String::from("sample_id,true,pred\n");
    for (&i, &p) in eval.samples.iter().zip(&eval.predictions) {
        let _ = writeln!(s, "{i},{},{p}", labels[i]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(dir.path().join("missing/m.json"), b"x").is_err());
    }

    #[test]
    fn csv_lists_split_samples() {
        let eval = Evaluation {
            accuracy: 0.5,
            samples: vec![2, 5],
            predictions: vec![1, 0],
            correct: vec![true, false],
        };
        let labels = [0, 0, 1, 0, 0, 1];
        assert_eq!(predictions_csv(&eval, &labels), "sample_id,true,pred\n2,1,1\n5,1,0\n");
    }
}
