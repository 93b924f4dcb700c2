//! Soft cross-entropy distillation with per-sample adaptive temperature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BgnnError, Result};
use crate::tensor::{softmax_rows_values, Tape, Temperature, Tensor, Var, PROB_FLOOR};

/// Entropy of `softmax(t)` per row, as an `m×1` column in `[0, ln C]`.
pub fn teacher_confidence(t: &Tensor) -> Tensor {
    let p = softmax_rows_values(t);
    let c = p.cols();
    let h = (0..p.rows())
        .map(|i| {
            let s: f64 = p.row(i).iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum();
            (-s).max(0.0)
        })
        .collect::<Vec<_>>();
    debug_assert!(h.iter().all(|v| *v <= (c.max(1) as f64).ln() + 1e-9));
    Tensor::column(h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TempVariant {
    /// MLP input is the teacher entropy alone.
    EntropyOnly,
    /// MLP input is the teacher logits followed by their entropy.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureConfig {
    pub tau_min: f64,
    pub tau_max: f64,
    pub hidden: usize,
}

impl Default for TemperatureConfig {
    fn default() -> Self {
        Self {
            tau_min: 1.0,
            tau_max: 4.0,
            hidden: 64,
        }
    }
}

impl TemperatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min >= 1.0 && self.tau_max > self.tau_min && self.tau_max.is_finite()) {
            return Err(BgnnError::Config(format!(
                "temperature range [{}, {}] needs 1 <= tau_min < tau_max",
                self.tau_min, self.tau_max
            )));
        }
        if self.hidden == 0 {
            return Err(BgnnError::Config("temperature MLP needs a hidden layer".into()));
        }
        Ok(())
    }
}

/// One-hidden-layer MLP mapping teacher confidence to a temperature in
/// `[tau_min, tau_max]`. The output layer starts at zero, so an untrained
/// module emits the midpoint of the range.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureModule {
    variant: TempVariant,
    n_classes: usize,
    config: TemperatureConfig,
    /// `[W1, b1, W2, b2]`.
    params: Vec<Tensor>,
}

impl TemperatureModule {
    pub fn new<R: Rng>(variant: TempVariant, n_classes: usize, config: TemperatureConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d_in = match variant {
            TempVariant::EntropyOnly => 1,
            TempVariant::Concat => n_classes + 1,
        };
        let h = config.hidden;
        let bound = (6.0 / (d_in + h) as f64).sqrt();
        let w1 = Tensor::matrix(d_in, h, (0..d_in * h).map(|_| rng.gen_range(-bound..=bound)).collect());
        Ok(Self {
            variant,
            n_classes,
            config,
            params: vec![
                w1.with_requires_grad(true),
                Tensor::zeros(1, h).with_requires_grad(true),
                Tensor::zeros(h, 1).with_requires_grad(true),
                Tensor::zeros(1, 1).with_requires_grad(true),
            ],
        })
    }

    pub fn variant(&self) -> TempVariant {
        self.variant
    }

    pub fn config(&self) -> &TemperatureConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Records the module on `tape`; returns the per-sample `m×1`
    /// temperatures and the parameter variables. Teacher logits enter as a
    /// constant.
    pub fn forward(&self, tape: &mut Tape, t: &Tensor) -> Result<(Var, Vec<Var>)> {
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(p)).collect();
        let tau = self.forward_with(tape, &params, t)?;
        Ok((tau, params))
    }

    pub fn forward_with(&self, tape: &mut Tape, params: &[Var], t: &Tensor) -> Result<Var> {
        if t.cols() != self.n_classes {
            return Err(BgnnError::shape(
                "adaptive_temperature",
                format!("teacher logits have {} classes, module expects {}", t.cols(), self.n_classes),
            ));
        }
        let entropy = teacher_confidence(t);
        let input = match self.variant {
            TempVariant::EntropyOnly => entropy,
            TempVariant::Concat => {
                let c = self.n_classes;
                let mut data = Vec::with_capacity(t.rows() * (c + 1));
                for i in 0..t.rows() {
                    data.extend_from_slice(t.row(i));
                    data.push(entropy.data()[i]);
                }
                Tensor::matrix(t.rows(), c + 1, data)
            }
        };
        let x = tape.constant(input);
        let h = tape.matmul(x, params[0])?;
        let h = tape.add_row(h, params[1])?;
        let h = tape.relu(h);
        let o = tape.matmul(h, params[2])?;
        let o = tape.add_row(o, params[3])?;
        let s = tape.sigmoid(o);
        let span = self.config.tau_max - self.config.tau_min;
        let scaled = tape.scale(s, span);
        Ok(tape.add_scalar(scaled, self.config.tau_min))
    }
}

/// Eval-only convenience: the temperatures as a plain column.
pub fn adaptive_temperature(module: &TemperatureModule, t: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (tau, _) = module.forward(&mut tape, t)?;
    Ok(tape.value(tau).clone())
}

/// How per-sample KD terms are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KdReduction {
    /// Average over the in-scope samples.
    #[default]
    Mean,
    /// Plain sum over the in-scope samples.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct KdOptions {
    pub reduction: KdReduction,
    /// Multiply each sample's term by `τ²`.
    pub tau_squared: bool,
}

/// Soft cross-entropy `−Σ_v softmax(t_v/τ_v) · log softmax(z_v/τ_v)` over
/// the rows in `scope`.
///
/// `t` is recorded as a constant, so no gradient reaches the teacher; a
/// per-row temperature on the tape receives gradient through both
/// softened distributions.
pub fn kd_loss(
    tape: &mut Tape,
    z: Var,
    t: &Tensor,
    tau: Temperature,
    scope: &[usize],
    opts: KdOptions,
) -> Result<Var> {
    let zv = tape.value(z);
    if zv.rows() != t.rows() || zv.cols() != t.cols() {
        return Err(BgnnError::contract(format!(
            "student logits {:?} and teacher logits {:?} differ in shape",
            zv.shape(),
            t.shape()
        )));
    }
    if let Temperature::PerRow(col) = tau {
        let tv = tape.value(col);
        if tv.rows() != t.rows() || tv.cols() != 1 {
            return Err(BgnnError::contract(format!("temperature shape {:?} for {} samples", tv.shape(), t.rows())));
        }
    }
    if scope.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let t_in = tape.constant(t.select_rows(scope));
    let z_in = tape.gather_rows(z, scope)?;
    let tau_in = match tau {
        Temperature::PerRow(col) => Temperature::PerRow(tape.gather_rows(col, scope)?),
        s => s,
    };
    let target = tape
        .softmax_rows(t_in, tau_in)
        .map_err(|e| BgnnError::contract(e.to_string()))?;
    let log_student = tape.log_softmax_rows(z_in, tau_in)?;
    let prod = tape.mul(target, log_student)?;
    let terms = if opts.tau_squared {
        let c = tape.value(prod).cols();
        let ones = tape.constant(Tensor::filled(c, 1, 1.0));
        let rows = tape.matmul(prod, ones)?;
        match tau_in {
            Temperature::PerRow(col) => {
                let sq = tape.mul(col, col)?;
                tape.mul_col(rows, sq)?
            }
            Temperature::Scalar(s) => tape.scale(rows, s * s),
        }
    } else {
        prod
    };
    let total = tape.sum_all(terms);
    let k = match opts.reduction {
        KdReduction::Mean => -1.0 / scope.len() as f64,
        KdReduction::Sum => -1.0,
    };
    Ok(tape.scale(total, k))
}

/// Closed-form gradient of the summed KD loss w.r.t. the student logits,
/// `(1/τ_v)(softmax(z_v/τ_v) − softmax(t_v/τ_v))`, computed off-tape.
pub fn kd_gradient_reference(z: &Tensor, t: &Tensor, tau: &[f64]) -> Result<Tensor> {
    if z.shape() != t.shape() || tau.len() != z.rows() {
        return Err(BgnnError::contract("kd_gradient_reference needs matching shapes"));
    }
    if let Some(bad) = tau.iter().find(|v| !(**v > 0.0)) {
        return Err(BgnnError::contract(format!("temperature {bad} must be positive")));
    }
    let c = z.cols();
    let scaled = |m: &Tensor| {
        let data = (0..m.rows())
            .flat_map(|i| m.row(i).iter().map(move |v| v / tau[i]))
            .collect();
        softmax_rows_values(&Tensor::matrix(m.rows(), c, data))
    };
    let (ps, pt) = (scaled(z), scaled(t));
    let data = (0..z.rows())
        .flat_map(|i| {
            let (ps, pt) = (ps.row(i).to_vec(), pt.row(i).to_vec());
            (0..c).map(move |j| (ps[j] - pt[j]) / tau[i])
        })
        .collect();
    Ok(Tensor::matrix(z.rows(), c, data))
}

/// `Σ_v H(softmax(t_v/τ_v))`, the minimum of the summed KD loss.
pub fn soft_target_entropy(t: &Tensor, tau: &[f64]) -> f64 {
    (0..t.rows())
        .map(|i| {
            let row: Vec<f64> = t.row(i).iter().map(|v| v / tau[i]).collect();
            let p = softmax_rows_values(&Tensor::matrix(1, row.len(), row));
            -p.data().iter().map(|&q| q * q.max(PROB_FLOOR).ln()).sum::<f64>()
        })
        .sum()
}
