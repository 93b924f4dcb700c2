//! SAMME.R sample re-weighting and the weighted label loss.

use crate::error::{BgnnError, Result};
use crate::tensor::{Tape, Tensor, Var, PROB_FLOOR};

/// Positive per-sample weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWeights {
    w: Vec<f64>,
}

impl SampleWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Normalizes arbitrary positive finite weights.
    pub fn from_unnormalized(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(BgnnError::contract("sample weights need at least one sample"));
        }
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(BgnnError::contract(format!("sample weight {bad} is not positive and finite")));
        }
        let s: f64 = w.iter().sum();
        Ok(Self {
            w: w.into_iter().map(|v| v / s).collect(),
        })
    }
}

/// Uniform `1/n_train` weights.
pub fn init_weights(n_train: usize) -> Result<SampleWeights> {
    if n_train == 0 {
        return Err(BgnnError::contract("init_weights needs n_train >= 1"));
    }
    Ok(SampleWeights {
        w: vec![1.0 / n_train as f64; n_train],
    })
}

/// `exp(−((C−1)/C) · ln max(p_true, 1e-10))` per sample, before
/// renormalization.
pub fn samme_r_multipliers(probs: &Tensor, labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    if probs.rows() != labels.len() || probs.cols() != n_classes || n_classes == 0 {
        return Err(BgnnError::contract(format!(
            "teacher probabilities {:?} for {} labels and {n_classes} classes",
            probs.shape(),
            labels.len()
        )));
    }
    let k = (n_classes as f64 - 1.0) / n_classes as f64;
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = probs.row(i);
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(BgnnError::contract(format!("probability row {i} sums to {s}")));
            }
            if y >= n_classes {
                return Err(BgnnError::contract(format!("label {y} >= {n_classes}")));
            }
            Ok((-k * row[y].max(PROB_FLOOR).ln()).exp())
        })
        .collect()
}

/// Multiplicative SAMME.R update driven by the teacher's probabilities on
/// the training samples, renormalized to sum one.
pub fn samme_r_update(
    weights: &SampleWeights,
    probs: &Tensor,
    labels: &[usize],
    n_classes: usize,
) -> Result<SampleWeights> {
    if weights.len() != labels.len() {
        return Err(BgnnError::contract(format!(
            "{} weights for {} samples",
            weights.len(),
            labels.len()
        )));
    }
    let m = samme_r_multipliers(probs, labels, n_classes)?;
    SampleWeights::from_unnormalized(weights.w.iter().zip(&m).map(|(w, k)| w * k).collect())
}

/// `−Σ_i w_i log p_{i, y_i}` over the rows `idx` of `log_probs`.
pub fn weighted_label_loss(
    tape: &mut Tape,
    log_probs: Var,
    idx: &[usize],
    labels: &[usize],
    weights: &[f64],
) -> Result<Var> {
    if idx.len() != labels.len() || idx.len() != weights.len() {
        return Err(BgnnError::contract(format!(
            "{} samples, {} labels, {} weights",
            idx.len(),
            labels.len(),
            weights.len()
        )));
    }
    let c = tape.value(log_probs).cols();
    let mut pick = Tensor::zeros(idx.len(), c);
    for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
        if y >= c {
            return Err(BgnnError::contract(format!("label {y} >= {c} classes")));
        }
        pick.set(i, y, -w);
    }
    let rows = tape.gather_rows(log_probs, idx)?;
    let pick = tape.constant(pick);
    let picked = tape.mul(rows, pick)?;
    Ok(tape.sum_all(picked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Temperature;

    #[test]
    fn init_examples() {
        assert_eq!(init_weights(4).unwrap().as_slice(), &[0.25; 4]);
        assert_eq!(init_weights(1).unwrap().as_slice(), &[1.0]);
        assert!(init_weights(0).is_err());
    }

    #[test]
    fn multiplier_examples() {
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let m = samme_r_multipliers(&p, &[0, 0], 2).unwrap();
        assert_eq!(m[0], 1.0);
        assert!((m[1] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn low_confidence_sample_gains_weight() {
        let p = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let w = samme_r_update(&init_weights(2).unwrap(), &p, &[0, 0], 2).unwrap();
        assert!(w.as_slice()[1] > w.as_slice()[0]);
        assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_distribution_rows_are_rejected() {
        let p = Tensor::from_rows(&[vec![0.9, 0.2]]).unwrap();
        assert!(matches!(
            samme_r_update(&init_weights(1).unwrap(), &p, &[0], 2),
            Err(BgnnError::Contract(_))
        ));
    }

    #[test]
    fn loss_hand_example_and_masking() {
        let mut tape = Tape::new();
        let probs = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.75, 0.25]]).unwrap();
        let lp = tape.param(&Tensor::matrix(2, 2, probs.data().iter().map(|v| v.ln()).collect()));
        let loss = weighted_label_loss(&mut tape, lp, &[0, 1], &[0, 1], &[0.75, 0.25]).unwrap();
        let want = 0.75 * 2f64.ln() + 0.25 * 4f64.ln();
        assert!((tape.value(loss).data()[0] - want).abs() < 1e-12);
        assert!((want - 0.8664).abs() < 1e-4);

        let loss0 = weighted_label_loss(&mut tape, lp, &[0, 1], &[0, 1], &[1.0, 0.0]).unwrap();
        let g = tape.backward(loss0).unwrap();
        assert!(g.get(lp).unwrap()[2..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn uniform_weights_give_mean_cross_entropy() {
        let mut tape = Tape::new();
        let z = tape.param(&Tensor::from_rows(&[vec![1.0, 2.0, 0.5], vec![0.0, -1.0, 3.0], vec![2.0, 2.0, 2.0]]).unwrap());
        let lp = tape.log_softmax_rows(z, Temperature::Scalar(1.0)).unwrap();
        let w = init_weights(3).unwrap();
        let loss = weighted_label_loss(&mut tape, lp, &[0, 1, 2], &[1, 2, 0], w.as_slice()).unwrap();
        let lpv = tape.value(lp);
        let ce = -(lpv.get(0, 1) + lpv.get(1, 2) + lpv.get(2, 0));
        assert!((tape.value(loss).data()[0] - ce / 3.0).abs() < 1e-12);
        assert!(weighted_label_loss(&mut tape, lp, &[0, 1], &[1], &[1.0]).is_err());
    }
}
