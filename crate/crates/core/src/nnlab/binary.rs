//! One-hidden-layer binary classifier `f(x) = Σ_i v_i φ(w_iᵀx)` with
//! labels `y = ±1` and logistic loss `log(1 + exp(−y f))`.
//!
//! Parameters are laid out as `w_1, …, w_width` (each of length `dim`)
//! followed by `v`; each neuron's input weights form one block and `v`
//! forms the last block.

use ndarray::ArrayView1;
use rand::Rng;

use super::data::Dataset;
use super::model::{check_input_dim, check_params, Activation, Model};
use crate::error::{check_dim, Error, Result};
use crate::operator::{BlockPartition, DenseSymmetric};
use crate::seed::derived_rng;

#[derive(Debug, Clone)]
pub struct OneHiddenBinary {
    dim: usize,
    width: usize,
    activation: Activation,
    partition: BlockPartition,
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign_label(y: usize) -> f64 {
    if y == 1 {
        1.0
    } else {
        -1.0
    }
}

struct Sample {
    s: Vec<f64>,
    phi: Vec<f64>,
    d1: Vec<f64>,
    f: f64,
}

impl OneHiddenBinary {
    pub fn new(dim: usize, width: usize, activation: Activation) -> Result<Self> {
        if dim == 0 || width == 0 {
            return Err(Error::invalid("input dimension and width must be positive"));
        }
        let mut sizes = vec![dim; width];
        sizes.push(width);
        Ok(Self {
            dim,
            width,
            activation,
            partition: BlockPartition::from_sizes(&sizes)?,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        check_input_dim(self.dim, data)?;
        if data.n_classes > 2 {
            return Err(Error::invalid("binary model needs labels in {0, 1}"));
        }
        Ok(())
    }

    fn neuron<'w>(&self, w: &'w [f64], i: usize) -> &'w [f64] {
        &w[i * self.dim..(i + 1) * self.dim]
    }

    fn head<'w>(&self, w: &'w [f64]) -> &'w [f64] {
        &w[self.width * self.dim..]
    }

    fn sample(&self, x: ArrayView1<f64>, w: &[f64]) -> Sample {
        let v = self.head(w);
        let s: Vec<f64> = (0..self.width)
            .map(|i| x.iter().zip(self.neuron(w, i)).map(|(a, b)| a * b).sum())
            .collect();
        let phi: Vec<f64> = s.iter().map(|&z| self.activation.f(z)).collect();
        let d1: Vec<f64> = s.iter().map(|&z| self.activation.d1(z)).collect();
        let f = v.iter().zip(&phi).map(|(a, b)| a * b).sum();
        Sample { s, phi, d1, f }
    }

    /// Off-diagonal block `(i, j)` of the Hessian between neurons `i` and
    /// `j` (0-based, `i != j`): the data mean of
    /// `p(1−p) v_i v_j φ'(w_iᵀx) φ'(w_jᵀx) x xᵀ` with `p = σ(y f(x))`.
    pub fn cross_neuron_block(&self, data: &Dataset, w: &[f64], i: usize, j: usize) -> Result<DenseSymmetric> {
        check_params(self, w)?;
        self.check_data(data)?;
        if i >= self.width || j >= self.width || i == j {
            return Err(Error::invalid(format!(
                "need two distinct neuron indices below {}, got ({i}, {j})",
                self.width
            )));
        }
        let v = self.head(w);
        let d = self.dim;
        let mut acc = vec![0.0; d * d];
        for (x, &label) in data.inputs.rows().into_iter().zip(&data.labels) {
            let smp = self.sample(x, w);
            let p = sigmoid(sign_label(label) * smp.f);
            let coef = p * (1.0 - p) * v[i] * v[j] * smp.d1[i] * smp.d1[j];
            for a in 0..d {
                let ca = coef * x[a];
                for b in 0..d {
                    acc[a * d + b] += ca * x[b];
                }
            }
        }
        let n = data.len() as f64;
        for e in &mut acc {
            *e /= n;
        }
        DenseSymmetric::symmetrized(d, &acc)
    }
}

impl Model for OneHiddenBinary {
    fn num_params(&self) -> usize {
        self.partition.dim()
    }

    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn block_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = (1..=self.width).map(|i| format!("neuron{i}")).collect();
        out.push("output".into());
        out
    }

    /// Uniform `(-1/√dim, 1/√dim)` input weights and `(-1/√width, 1/√width)`
    /// output weights.
    fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = derived_rng(seed, "binary-init", 0);
        let bw = 1.0 / (self.dim as f64).sqrt();
        let bv = 1.0 / (self.width as f64).sqrt();
        let mut w: Vec<f64> = (0..self.width * self.dim).map(|_| rng.random_range(-bw..bw)).collect();
        w.extend((0..self.width).map(|_| rng.random_range(-bv..bv)));
        w
    }

    fn loss_grad(&self, data: &Dataset, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_params(self, w)?;
        self.check_data(data)?;
        let v = self.head(w);
        let mut grad = vec![0.0; self.num_params()];
        let mut loss = 0.0;
        for (x, &label) in data.inputs.rows().into_iter().zip(&data.labels) {
            let y = sign_label(label);
            let smp = self.sample(x, w);
            loss += softplus(-y * smp.f);
            let dl = -y * sigmoid(-y * smp.f);
            for i in 0..self.width {
                let c = dl * v[i] * smp.d1[i];
                for (g, xa) in grad[i * self.dim..(i + 1) * self.dim].iter_mut().zip(x.iter()) {
                    *g += c * xa;
                }
                grad[self.width * self.dim + i] += dl * smp.phi[i];
            }
        }
        let n = data.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        Ok((loss / n, grad))
    }

    fn hvp(&self, data: &Dataset, w: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_params(self, w)?;
        check_dim(self.num_params(), u.len())?;
        self.check_data(data)?;
        let v = self.head(w);
        let r = self.head(u);
        let mut out = vec![0.0; self.num_params()];
        for (x, &label) in data.inputs.rows().into_iter().zip(&data.labels) {
            let y = sign_label(label);
            let smp = self.sample(x, w);
            let dl = -y * sigmoid(-y * smp.f);
            let p = sigmoid(y * smp.f);
            let d2l = p * (1.0 - p);
            let ux: Vec<f64> = (0..self.width)
                .map(|i| self.neuron(u, i).iter().zip(x.iter()).map(|(a, b)| a * b).sum())
                .collect();
            let rf: f64 = (0..self.width)
                .map(|i| r[i] * smp.phi[i] + v[i] * smp.d1[i] * ux[i])
                .sum();
            for i in 0..self.width {
                let d2 = self.activation.d2(smp.s[i]);
                let c = d2l * rf * v[i] * smp.d1[i] + dl * (r[i] * smp.d1[i] + v[i] * d2 * ux[i]);
                for (o, xa) in out[i * self.dim..(i + 1) * self.dim].iter_mut().zip(x.iter()) {
                    *o += c * xa;
                }
                out[self.width * self.dim + i] += d2l * rf * smp.phi[i] + dl * smp.d1[i] * ux[i];
            }
        }
        let n = data.len() as f64;
        for o in &mut out {
            *o /= n;
        }
        Ok(out)
    }

    fn predict(&self, data: &Dataset, w: &[f64]) -> Result<Vec<usize>> {
        check_params(self, w)?;
        self.check_data(data)?;
        Ok(data
            .inputs
            .rows()
            .into_iter()
            .map(|x| usize::from(self.sample(x, w).f > 0.0))
            .collect())
    }
}
