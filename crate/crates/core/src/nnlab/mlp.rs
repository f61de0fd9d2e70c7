//! Fully connected softmax classifier with per-layer pre-activation scale.
//!
//! Layer `k` computes `z_k = c · (a_{k-1} W_kᵀ + b_k)`; hidden layers apply
//! the activation, the last layer's `z` are the logits. The loss is the
//! mean softmax cross-entropy. Hessian-vector products use the R-operator
//! (a forward pass of directional derivatives followed by a second
//! backward pass).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{check_input_dim, check_params, Activation, Model};
use crate::error::{Error, Result};
use crate::operator::BlockPartition;
use crate::seed::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input dimension, hidden widths, number of classes.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    partition: BlockPartition,
    /// Offset of each layer's weight tensor; the bias follows it.
    offsets: Vec<usize>,
}

struct Forward {
    /// `a[0]` is the input; `a[k]` the activation after layer `k`.
    a: Vec<Array2<f64>>,
    /// Scaled pre-activations per layer; the last entry holds the logits.
    z: Vec<Array2<f64>>,
}

fn softmax_rows(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut s = z.clone();
    let mut lse = Array1::zeros(z.nrows());
    for (mut row, l) in s.rows_mut().into_iter().zip(lse.iter_mut()) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - m).exp());
        let sum = row.sum();
        row /= sum;
        *l = m + sum.ln();
    }
    (s, lse)
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        if spec.widths.len() < 2 || spec.widths.contains(&0) {
            return Err(Error::invalid(
                "an MLP needs at least an input and an output width, all positive",
            ));
        }
        if spec.widths.last() == Some(&1) {
            return Err(Error::invalid("softmax output needs at least 2 classes"));
        }
        if !(spec.scale > 0.0 && spec.scale.is_finite()) {
            return Err(Error::invalid(format!(
                "layer scale must be positive, got {}",
                spec.scale
            )));
        }
        let mut sizes = Vec::new();
        let mut offsets = Vec::new();
        let mut off = 0;
        for pair in spec.widths.windows(2) {
            let (fi, fo) = (pair[0], pair[1]);
            offsets.push(off);
            sizes.push(fi * fo);
            sizes.push(fo);
            off += fi * fo + fo;
        }
        let partition = BlockPartition::from_sizes(&sizes)?;
        Ok(Self {
            spec,
            partition,
            offsets,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    fn num_layers(&self) -> usize {
        self.spec.widths.len() - 1
    }

    fn layer<'w>(&self, k: usize, w: &'w [f64]) -> (ArrayView2<'w, f64>, ArrayView1<'w, f64>) {
        let (fi, fo) = (self.spec.widths[k], self.spec.widths[k + 1]);
        let off = self.offsets[k];
        let wk = ArrayView2::from_shape((fo, fi), &w[off..off + fi * fo]).expect("layer shape");
        let bk = ArrayView1::from(&w[off + fi * fo..off + fi * fo + fo]);
        (wk, bk)
    }

    fn forward(&self, x: &Array2<f64>, w: &[f64]) -> Forward {
        let c = self.spec.scale;
        let act = self.spec.activation;
        let l = self.num_layers();
        let mut a = vec![x.clone()];
        let mut z = Vec::with_capacity(l);
        for k in 0..l {
            let (wk, bk) = self.layer(k, w);
            let mut zk = a[k].dot(&wk.t());
            zk += &bk;
            zk *= c;
            if k + 1 < l {
                a.push(zk.mapv(|v| act.f(v)));
            }
            z.push(zk);
        }
        Forward { a, z }
    }

    fn one_hot_residual(&self, s: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
        let n = labels.len() as f64;
        let mut d = s.clone();
        for (mut row, &y) in d.rows_mut().into_iter().zip(labels) {
            row[y] -= 1.0;
        }
        d / n
    }

    fn write_layer_grad(&self, k: usize, gw: &Array2<f64>, gb: &Array1<f64>, out: &mut [f64]) {
        let (fi, fo) = (self.spec.widths[k], self.spec.widths[k + 1]);
        let off = self.offsets[k];
        for (dst, src) in out[off..off + fi * fo].iter_mut().zip(gw.iter()) {
            *dst = *src;
        }
        for (dst, src) in out[off + fi * fo..off + fi * fo + fo].iter_mut().zip(gb.iter()) {
            *dst = *src;
        }
    }
}

impl Model for Mlp {
    fn num_params(&self) -> usize {
        self.partition.dim()
    }

    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn block_labels(&self) -> Vec<String> {
        (1..=self.num_layers())
            .flat_map(|k| [format!("layer{k}.weight"), format!("layer{k}.bias")])
            .collect()
    }

    /// Uniform `(-1/√fan_in, 1/√fan_in)` for weights and biases.
    fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = derived_rng(seed, "mlp-init", 0);
        let mut w = Vec::with_capacity(self.num_params());
        for pair in self.spec.widths.windows(2) {
            let (fi, fo) = (pair[0], pair[1]);
            let bound = 1.0 / (fi as f64).sqrt();
            for _ in 0..fi * fo + fo {
                w.push(rng.random_range(-bound..bound));
            }
        }
        w
    }

    fn loss_grad(&self, data: &Dataset, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_params(self, w)?;
        check_input_dim(self.spec.widths[0], data)?;
        let c = self.spec.scale;
        let act = self.spec.activation;
        let fw = self.forward(&data.inputs, w);
        let l = self.num_layers();
        let logits = &fw.z[l - 1];
        let (s, lse) = softmax_rows(logits);
        let loss = data
            .labels
            .iter()
            .enumerate()
            .map(|(i, &y)| lse[i] - logits[(i, y)])
            .sum::<f64>()
            / data.len() as f64;
        let mut grad = vec![0.0; self.num_params()];
        let mut dz = self.one_hot_residual(&s, &data.labels);
        for k in (0..l).rev() {
            let du = &dz * c;
            let gw = du.t().dot(&fw.a[k]);
            let gb = du.sum_axis(Axis(0));
            self.write_layer_grad(k, &gw, &gb, &mut grad);
            if k > 0 {
                let (wk, _) = self.layer(k, w);
                let mut da = du.dot(&wk);
                Zip::from(&mut da).and(&fw.z[k - 1]).for_each(|d, &zv| *d *= act.d1(zv));
                dz = da;
            }
        }
        Ok((loss, grad))
    }

    fn hvp(&self, data: &Dataset, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_params(self, w)?;
        check_params(self, v)?;
        check_input_dim(self.spec.widths[0], data)?;
        let c = self.spec.scale;
        let act = self.spec.activation;
        let l = self.num_layers();
        let fw = self.forward(&data.inputs, w);
        let n = data.len();

        // Directional derivatives of the forward pass.
        let mut ra: Vec<Array2<f64>> = vec![Array2::zeros((n, self.spec.widths[0]))];
        let mut rz: Vec<Array2<f64>> = Vec::with_capacity(l);
        for k in 0..l {
            let (wk, _) = self.layer(k, w);
            let (vw, vb) = self.layer(k, v);
            let mut ru = fw.a[k].dot(&vw.t());
            ru += &vb;
            if k > 0 {
                ru += &ra[k].dot(&wk.t());
            }
            ru *= c;
            if k + 1 < l {
                let mut rak = ru.clone();
                Zip::from(&mut rak).and(&fw.z[k]).for_each(|r, &zv| *r *= act.d1(zv));
                ra.push(rak);
            }
            rz.push(ru);
        }

        let (s, _) = softmax_rows(&fw.z[l - 1]);
        let mut dz = self.one_hot_residual(&s, &data.labels);
        let mut rdz = {
            let mut t = &s * &rz[l - 1];
            let rowsum = t.sum_axis(Axis(1));
            t = &rz[l - 1] - &rowsum.insert_axis(Axis(1));
            (&s * &t) / n as f64
        };

        let mut out = vec![0.0; self.num_params()];
        for k in (0..l).rev() {
            let du = &dz * c;
            let rdu = &rdz * c;
            let mut hw = rdu.t().dot(&fw.a[k]);
            if k > 0 {
                hw += &du.t().dot(&ra[k]);
            }
            let hb = rdu.sum_axis(Axis(0));
            self.write_layer_grad(k, &hw, &hb, &mut out);
            if k > 0 {
                let (wk, _) = self.layer(k, w);
                let (vw, _) = self.layer(k, v);
                let da = du.dot(&wk);
                let rda = rdu.dot(&wk) + du.dot(&vw);
                let zp = &fw.z[k - 1];
                let rzp = &rz[k - 1];
                let mut new_dz = da.clone();
                let mut new_rdz = rda;
                Zip::from(&mut new_dz).and(zp).for_each(|d, &zv| *d *= act.d1(zv));
                Zip::from(&mut new_rdz)
                    .and(&da)
                    .and(zp)
                    .and(rzp)
                    .for_each(|r, &d, &zv, &rzv| *r = *r * act.d1(zv) + d * act.d2(zv) * rzv);
                dz = new_dz;
                rdz = new_rdz;
            }
        }
        Ok(out)
    }

    fn predict(&self, data: &Dataset, w: &[f64]) -> Result<Vec<usize>> {
        check_params(self, w)?;
        check_input_dim(self.spec.widths[0], data)?;
        let fw = self.forward(&data.inputs, w);
        let logits = &fw.z[self.num_layers() - 1];
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &x)| if x > best.1 { (i, x) } else { best },
                    )
                    .0
            })
            .collect())
    }
}
