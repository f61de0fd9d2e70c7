//! Linear least-squares head: `L(w) = (1/2n) Σ (wᵀx − y)²` with the class
//! index as the real-valued target. Its Hessian is `XᵀX/n` everywhere.

use rand_distr::{Distribution, StandardNormal};

use super::data::Dataset;
use super::model::{check_input_dim, check_params, Model};
use crate::error::{check_dim, Error, Result};
use crate::operator::{BlockPartition, DenseSymmetric};
use crate::quadlab::QuadraticProblem;
use crate::seed::derived_rng;

#[derive(Debug, Clone)]
pub struct LinearRegression {
    partition: BlockPartition,
}

impl LinearRegression {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        Ok(Self {
            partition: BlockPartition::from_sizes(&[dim])?,
        })
    }

    fn residuals(&self, data: &Dataset, w: &[f64]) -> Vec<f64> {
        data.inputs
            .rows()
            .into_iter()
            .zip(&data.labels)
            .map(|(x, &y)| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - y as f64)
            .collect()
    }

    /// `XᵀX/n`
    pub fn gram(&self, data: &Dataset) -> Result<DenseSymmetric> {
        check_input_dim(self.partition.dim(), data)?;
        let g = data.inputs.t().dot(&data.inputs) / data.len() as f64;
        let d = g.nrows();
        let flat: Vec<f64> = g.iter().copied().collect();
        DenseSymmetric::symmetrized(d, &flat)
    }

    /// The same objective as `½ wᵀHw − hᵀw` with `H = XᵀX/n`,
    /// `h = Xᵀy/n` (differs from the loss by the constant `Σy²/(2n)`).
    pub fn as_quadratic(&self, data: &Dataset) -> Result<QuadraticProblem> {
        let h_mat = self.gram(data)?;
        let n = data.len() as f64;
        let y: Vec<f64> = data.labels.iter().map(|&l| l as f64).collect();
        let h: Vec<f64> = (0..self.partition.dim())
            .map(|j| data.inputs.column(j).iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n)
            .collect();
        QuadraticProblem::from_blocks("linear-regression", vec![h_mat])?.with_linear_term(h)
    }
}

impl Model for LinearRegression {
    fn num_params(&self) -> usize {
        self.partition.dim()
    }

    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn block_labels(&self) -> Vec<String> {
        vec!["weight".into()]
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = derived_rng(seed, "linear-init", 0);
        (0..self.num_params())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    fn loss_grad(&self, data: &Dataset, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_params(self, w)?;
        check_input_dim(self.num_params(), data)?;
        let r = self.residuals(data, w);
        let n = data.len() as f64;
        let loss = r.iter().map(|e| e * e).sum::<f64>() / (2.0 * n);
        let mut g = vec![0.0; self.num_params()];
        for (x, e) in data.inputs.rows().into_iter().zip(&r) {
            for (gi, xi) in g.iter_mut().zip(x.iter()) {
                *gi += e * xi / n;
            }
        }
        Ok((loss, g))
    }

    fn hvp(&self, data: &Dataset, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_params(self, w)?;
        check_dim(self.num_params(), v.len())?;
        check_input_dim(self.num_params(), data)?;
        let n = data.len() as f64;
        let mut out = vec![0.0; self.num_params()];
        for x in data.inputs.rows() {
            let xv: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, xi) in out.iter_mut().zip(x.iter()) {
                *o += xv * xi / n;
            }
        }
        Ok(out)
    }

    /// Nearest class index to the regression output.
    fn predict(&self, data: &Dataset, w: &[f64]) -> Result<Vec<usize>> {
        check_params(self, w)?;
        check_input_dim(self.num_params(), data)?;
        let top = (data.n_classes.max(1) - 1) as f64;
        Ok(data
            .inputs
            .rows()
            .into_iter()
            .map(|x| {
                let f: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
                f.round().clamp(0.0, top) as usize
            })
            .collect())
    }
}
