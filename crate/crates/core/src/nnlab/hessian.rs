//! Dense Hessians of small models by finite differences of the analytic
//! gradient, and the block-dominance measure.

use rayon::prelude::*;

use super::data::Dataset;
use super::model::{check_params, Model};
use crate::error::{check_dim, Error, Result};
use crate::operator::{BlockPartition, DenseSymmetric};

pub const MAX_EXACT_PARAMS: usize = 2000;
pub const FD_STEP: f64 = 1e-5;
pub const MAX_ASYMMETRY: f64 = 1e-6;

/// Central differences `(∇L(w + h e_j) − ∇L(w − h e_j)) / 2h`, column by
/// column, symmetrized. Fails if the raw matrix is asymmetric beyond 1e-6
/// relative to its largest entry.
pub fn exact_hessian_small(model: &dyn Model, data: &Dataset, w: &[f64]) -> Result<DenseSymmetric> {
    let d = model.num_params();
    if d > MAX_EXACT_PARAMS {
        return Err(Error::invalid(format!(
            "dense Hessian limited to {MAX_EXACT_PARAMS} parameters, model has {d}"
        )));
    }
    check_params(model, w)?;
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[j] += FD_STEP;
            wm[j] -= FD_STEP;
            let (_, gp) = model.loss_grad(data, &wp)?;
            let (_, gm) = model.loss_grad(data, &wm)?;
            Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * FD_STEP)).collect())
        })
        .collect::<Result<_>>()?;
    let mut raw = vec![0.0; d * d];
    for (j, col) in columns.iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            raw[i * d + j] = *x;
        }
    }
    let scale = raw.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut asym = 0.0f64;
    for i in 0..d {
        for j in i + 1..d {
            asym = asym.max((raw[i * d + j] - raw[j * d + i]).abs());
        }
    }
    if scale > 0.0 && asym / scale > MAX_ASYMMETRY {
        return Err(Error::numerical(format!(
            "finite-difference Hessian is asymmetric ({:.3e} relative)",
            asym / scale
        )));
    }
    DenseSymmetric::symmetrized(d, &raw)
}

/// Share of the squared Frobenius norm carried by the principal blocks;
/// 1 for an exactly block-diagonal (or zero) matrix.
pub fn block_dominance(h: &DenseSymmetric, part: &BlockPartition) -> Result<f64> {
    check_dim(h.n(), part.dim())?;
    let total: f64 = h.as_row_major().iter().map(|x| x * x).sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    let diag: f64 = part
        .ranges()
        .iter()
        .map(|r| {
            r.clone()
                .map(|i| h.row(i)[r.clone()].iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
        })
        .sum();
    Ok(diag / total)
}

/// Sub-block `(rows, cols)` of a dense matrix, row-major.
pub fn off_diagonal_block(h: &DenseSymmetric, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
    rows.flat_map(|i| h.row(i)[cols.clone()].to_vec()).collect()
}

/// `‖a − b‖_F / ‖b‖_F` (absolute difference when `b = 0`).
pub fn relative_frobenius(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if nb > 0.0 {
        diff / nb
    } else {
        diff
    }
}
