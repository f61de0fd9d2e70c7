//! Minibatch training with SGD (heavy-ball momentum), AdamW, and Adam
//! without bias correction.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{check_params, Model};
use crate::error::{Error, Result};
use crate::seed::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// `m = β₁m + g; w -= η m`. Weight decay, when set, is added to the
    /// gradient.
    Sgd,
    /// Decoupled decay `w -= η λ w`, then the bias-corrected Adam step.
    AdamW,
    /// `m⁰ = g⁰, v⁰ = g⁰∘g⁰`, no bias correction.
    AdamNoBias,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adamw" => Ok(OptimizerKind::AdamW),
            "adamnobias" | "adam-nobias" => Ok(OptimizerKind::AdamNoBias),
            other => Err(Error::invalid(format!(
                "unknown optimizer {other:?} (expected sgd, adamw or adamnobias)"
            ))),
        }
    }
}

pub const DEFAULT_ADAMW_WEIGHT_DECAY: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerSpec {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// `None` trains on the full dataset every step.
    pub batch_size: Option<usize>,
    pub steps: usize,
    pub seed: u64,
    /// Full-data loss and accuracy are recorded every `eval_every` steps
    /// (0: only at the start and the end).
    pub eval_every: usize,
}

impl TrainerSpec {
    /// `(β₁, β₂, ε) = (0.9, 0.999, 1e-8)`; weight decay 0.01 for AdamW, 0
    /// otherwise; full batch.
    pub fn new(optimizer: OptimizerKind, lr: f64, steps: usize, seed: u64) -> Self {
        Self {
            optimizer,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: if optimizer == OptimizerKind::AdamW {
                DEFAULT_ADAMW_WEIGHT_DECAY
            } else {
                0.0
            },
            batch_size: None,
            steps,
            seed,
            eval_every: 0,
        }
    }

    pub fn with_batch_size(mut self, batch: usize) -> Self {
        self.batch_size = Some(batch);
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in [0, 1], got {x}")))
            }
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.eps >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid("eps and weight decay must be non-negative"));
        }
        if self.optimizer == OptimizerKind::AdamW && (self.beta1 == 1.0 || self.beta2 == 1.0) {
            return Err(Error::invalid("bias correction needs beta1, beta2 < 1"));
        }
        match self.batch_size {
            Some(b) if b == 0 || b > n => Err(Error::invalid(format!("batch size must lie in 1..={n}, got {b}"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub w: Vec<f64>,
    /// Minibatch loss at each step, before the update.
    pub step_losses: Vec<f64>,
    pub evals: Vec<EvalRecord>,
}

impl TrainResult {
    pub fn final_eval(&self) -> &EvalRecord {
        self.evals.last().expect("the final step is always evaluated")
    }
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl OptState {
    fn step(&mut self, spec: &TrainerSpec, w: &mut [f64], g: &[f64]) {
        let eta = spec.lr;
        let (b1, b2) = (spec.beta1, spec.beta2);
        self.t += 1;
        match spec.optimizer {
            OptimizerKind::Sgd => {
                for ((wi, mi), gi) in w.iter_mut().zip(&mut self.m).zip(g) {
                    let gi = gi + spec.weight_decay * *wi;
                    *mi = b1 * *mi + gi;
                    *wi -= eta * *mi;
                }
            }
            OptimizerKind::AdamW => {
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for (((wi, mi), vi), gi) in w.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(g) {
                    *wi -= eta * spec.weight_decay * *wi;
                    *mi = b1 * *mi + (1.0 - b1) * gi;
                    *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                    let denom = (*vi / c2).sqrt() + spec.eps;
                    if denom > 0.0 {
                        *wi -= eta * (*mi / c1) / denom;
                    }
                }
            }
            OptimizerKind::AdamNoBias => {
                let first = self.t == 1;
                for (((wi, mi), vi), gi) in w.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(g) {
                    *wi -= eta * spec.weight_decay * *wi;
                    if first {
                        *mi = *gi;
                        *vi = gi * gi;
                    } else {
                        *mi = b1 * *mi + (1.0 - b1) * gi;
                        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                    }
                    let denom = vi.sqrt() + spec.eps;
                    if denom > 0.0 {
                        *wi -= eta * *mi / denom;
                    }
                }
            }
        }
    }
}

fn evaluate(model: &dyn Model, data: &Dataset, w: &[f64], step: usize) -> Result<EvalRecord> {
    Ok(EvalRecord {
        step,
        loss: model.loss(data, w)?,
        accuracy: model.accuracy(data, w)?,
    })
}

pub fn train(model: &dyn Model, data: &Dataset, w0: &[f64], spec: &TrainerSpec) -> Result<TrainResult> {
    train_with_callback(model, data, w0, spec, |_, _| Ok(()))
}

/// As [`train`], calling `at_eval(step, w)` at every evaluation point
/// (step 0, every `eval_every` steps, and the last step).
///
/// Each step draws `batch_size` distinct indices uniformly from one seeded
/// stream, so the run is a pure function of the spec and `w0`.
pub fn train_with_callback(
    model: &dyn Model,
    data: &Dataset,
    w0: &[f64],
    spec: &TrainerSpec,
    mut at_eval: impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<TrainResult> {
    check_params(model, w0)?;
    spec.validate(data.len())?;
    let d = model.num_params();
    let mut w = w0.to_vec();
    let mut state = OptState {
        m: vec![0.0; d],
        v: vec![0.0; d],
        t: 0,
    };
    let mut rng = derived_rng(spec.seed, "minibatch", 0);
    let mut step_losses = Vec::with_capacity(spec.steps);
    let mut evals = vec![evaluate(model, data, &w, 0)?];
    at_eval(0, &w)?;
    for step in 1..=spec.steps {
        let batch;
        let view = match spec.batch_size {
            Some(b) if b < data.len() => {
                batch = data.subset(&sample(&mut rng, data.len(), b).into_vec());
                &batch
            }
            _ => data,
        };
        let (loss, g) = model.loss_grad(view, &w)?;
        if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite loss or gradient at step {step} ({:?}, lr {}): loss {loss}",
                spec.optimizer, spec.lr
            )));
        }
        step_losses.push(loss);
        state.step(spec, &mut w, &g);
        let due = step == spec.steps || (spec.eval_every > 0 && step % spec.eval_every == 0);
        if due {
            let rec = evaluate(model, data, &w, step)?;
            if !rec.loss.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite loss {} after step {step} ({:?}, lr {})",
                    rec.loss, spec.optimizer, spec.lr
                )));
            }
            evals.push(rec);
            at_eval(step, &w)?;
        }
    }
    Ok(TrainResult { w, step_losses, evals })
}
