//! Accuracy, ensembles and multi-seed aggregation.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{BgnnError, Result};
use crate::models::GnnModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

/// Per-sample outcome on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Sample ids of the split, in order.
    pub samples: Vec<usize>,
    pub predictions: Vec<usize>,
    pub correct: Vec<bool>,
}

/// Fraction of equal entries.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(BgnnError::contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(BgnnError::contract("accuracy of an empty split"));
    }
    Ok(predictions.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

/// Scores precomputed logits (one row per sample) on `split`.
pub fn evaluate_logits(logits: &Tensor, data: &Dataset, split: SplitKind) -> Result<Evaluation> {
    let samples = data.split(split).to_vec();
    if samples.is_empty() {
        return Err(BgnnError::contract(format!("the {split:?} split is empty")));
    }
    if logits.rows() != data.n_samples() || logits.cols() != data.n_classes() {
        return Err(BgnnError::contract(format!(
            "logits {:?} for {} samples and {} classes",
            logits.shape(),
            data.n_samples(),
            data.n_classes()
        )));
    }
    let predictions = logits.select_rows(&samples).argmax_rows();
    let truth: Vec<usize> = samples.iter().map(|&i| data.labels()[i]).collect();
    let correct = predictions.iter().zip(&truth).map(|(p, y)| p == y).collect();
    Ok(Evaluation {
        accuracy: accuracy(&predictions, &truth)?,
        samples,
        predictions,
        correct,
    })
}

pub fn evaluate(model: &GnnModel, data: &Dataset, split: SplitKind) -> Result<Evaluation> {
    evaluate_logits(&data.eval_logits(model)?, data, split)
}

/// Accuracy over the entries selected by `mask`; `None` if none are.
pub fn masked_accuracy(correct: &[bool], mask: &[bool]) -> Option<f64> {
    let (hits, n) = correct
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0usize, 0usize), |(h, n), (&c, _)| (h + c as usize, n + 1));
    (n > 0).then(|| hits as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    /// Mean of the best 5 out of exactly 10 runs.
    #[serde(rename = "top5of10")]
    Top5Of10,
}

pub fn aggregate(accuracies: &[f64], how: Aggregation) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(BgnnError::contract("nothing to aggregate"));
    }
    match how {
        Aggregation::Mean => Ok(mean_std(accuracies).0),
        Aggregation::Top5Of10 => {
            if accuracies.len() != 10 {
                return Err(BgnnError::contract(format!("top5of10 needs 10 runs, got {}", accuracies.len())));
            }
            let mut sorted = accuracies.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            Ok(sorted[..5].iter().sum::<f64>() / 5.0)
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    /// Mean eval-mode logits over the members.
    pub logits: Tensor,
    /// Argmax per sample (lowest index on ties).
    pub predictions: Vec<usize>,
    pub test: Evaluation,
}

pub fn ensemble_from_logits(logits: &[Tensor]) -> Result<Tensor> {
    let first = logits.first().ok_or_else(|| BgnnError::contract("empty ensemble"))?;
    if let Some(bad) = logits.iter().find(|l| l.shape() != first.shape()) {
        return Err(BgnnError::contract(format!(
            "ensemble members disagree in shape: {:?} vs {:?}",
            first.shape(),
            bad.shape()
        )));
    }
    let k = logits.len() as f64;
    let mut sum = vec![0.0; first.len()];
    for l in logits {
        for (s, v) in sum.iter_mut().zip(l.data()) {
            *s += v;
        }
    }
    Ok(Tensor::matrix(first.rows(), first.cols(), sum.into_iter().map(|s| s / k).collect()))
}

/// Averages the eval logits of `models`.
pub fn ensemble_predict(models: &[GnnModel], data: &Dataset) -> Result<Ensemble> {
    if let Some(m) = models.iter().find(|m| m.config().n_classes != data.n_classes()) {
        return Err(BgnnError::contract(format!(
            "ensemble member has {} classes, data {}",
            m.config().n_classes,
            data.n_classes()
        )));
    }
    let all = models.iter().map(|m| data.eval_logits(m)).collect::<Result<Vec<_>>>()?;
    let logits = ensemble_from_logits(&all)?;
    Ok(Ensemble {
        predictions: logits.argmax_rows(),
        test: evaluate_logits(&logits, data, SplitKind::Test)?,
        logits,
    })
}
