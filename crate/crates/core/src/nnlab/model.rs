use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::operator::{BlockPartition, SymmetricOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn f(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    pub fn d1(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn d2(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Relu => 0.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!(
                "unknown activation {other:?} (expected tanh or relu)"
            ))),
        }
    }
}

/// A differentiable model with a mean training loss over a dataset.
pub trait Model: Send + Sync {
    fn num_params(&self) -> usize;

    /// Parameter blocks, one per weight or bias tensor (or neuron).
    fn partition(&self) -> &BlockPartition;

    fn block_labels(&self) -> Vec<String>;

    fn init_params(&self, seed: u64) -> Vec<f64>;

    /// Mean loss and its gradient.
    fn loss_grad(&self, data: &Dataset, w: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Hessian of the mean loss times `v`.
    fn hvp(&self, data: &Dataset, w: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    fn predict(&self, data: &Dataset, w: &[f64]) -> Result<Vec<usize>>;

    fn loss(&self, data: &Dataset, w: &[f64]) -> Result<f64> {
        Ok(self.loss_grad(data, w)?.0)
    }

    fn accuracy(&self, data: &Dataset, w: &[f64]) -> Result<f64> {
        let pred = self.predict(data, w)?;
        let hits = pred.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / data.len() as f64)
    }
}

pub(crate) fn check_params(model: &dyn Model, w: &[f64]) -> Result<()> {
    crate::error::check_dim(model.num_params(), w.len())
}

pub(crate) fn check_input_dim(expected: usize, data: &Dataset) -> Result<()> {
    crate::error::check_dim(expected, data.dim())
}

/// Hessian of a model's loss at fixed `(data, w)` as a matrix-free operator.
pub struct HessianOperator<'a> {
    model: &'a dyn Model,
    data: &'a Dataset,
    w: &'a [f64],
}

impl<'a> HessianOperator<'a> {
    pub fn new(model: &'a dyn Model, data: &'a Dataset, w: &'a [f64]) -> Result<Self> {
        check_params(model, w)?;
        // One product up front surfaces dimension errors before the operator
        // is handed to code that cannot report them.
        model.hvp(data, w, &vec![0.0; w.len()])?;
        Ok(Self { model, data, w })
    }
}

impl SymmetricOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let hv = self
            .model
            .hvp(self.data, self.w, v)
            .expect("dimensions validated at construction");
        out.copy_from_slice(&hv);
    }
}
