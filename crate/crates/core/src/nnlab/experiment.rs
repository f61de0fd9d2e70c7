//! Heterogeneity by layer scaling: for each scale `c`, the blockwise
//! Hessian spectra at initialization (summarized by JS⁰) and the best
//! test accuracy SGD and AdamW reach over a learning-rate grid.

use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::mlp::{Mlp, MlpSpec};
use super::model::{Activation, HessianOperator, Model};
use super::train::{train, OptimizerKind, TrainerSpec};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_json, write_text};
use crate::operator::block_restrict;
use crate::seed::{derive_seed, derived_rng};
use crate::slq::{slq_density, ProbeConfig};
use crate::spectra::{heterogeneity_report_auto, HeterogeneityReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub c_values: Vec<f64>,
    pub lr_grid: Vec<f64>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub steps: usize,
    pub sgd_momentum: f64,
    pub seed: u64,
    /// Training samples used for the initialization Hessian.
    pub hessian_samples: usize,
    pub slq_probes: usize,
    pub slq_steps: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            c_values: vec![1.0, 10.0],
            lr_grid: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
            hidden: vec![300, 128, 64],
            activation: Activation::Relu,
            batch_size: 128,
            steps: 100,
            sgd_momentum: 0.9,
            seed: 0,
            hessian_samples: 256,
            slq_probes: 4,
            slq_steps: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub test_accuracy: Option<f64>,
    /// Why the run aborted, if it did.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub c: f64,
    pub js0: f64,
    pub best_sgd_accuracy: f64,
    pub best_sgd_lr: Option<f64>,
    pub best_adamw_accuracy: f64,
    pub best_adamw_lr: Option<f64>,
    pub cells: Vec<CellResult>,
    pub report: HeterogeneityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub config: ScalingConfig,
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("c,js0,best_sgd_accuracy,best_sgd_lr,best_adamw_accuracy,best_adamw_lr\n");
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f64(r.c),
                fmt_f64(r.js0),
                fmt_f64(r.best_sgd_accuracy),
                opt(r.best_sgd_lr),
                fmt_f64(r.best_adamw_accuracy),
                opt(r.best_adamw_lr)
            ));
        }
        out
    }

    /// CSV table at `csv_path`, the full table (cells and reports) next to
    /// it as JSON.
    pub fn export(&self, csv_path: &Path) -> Result<()> {
        write_text(csv_path, &self.to_csv())?;
        write_json(&csv_path.with_extension("json"), self)
    }
}

pub fn scaled_mlp(config: &ScalingConfig, input_dim: usize, n_classes: usize, c: f64) -> Result<Mlp> {
    let mut widths = vec![input_dim];
    widths.extend(&config.hidden);
    widths.push(n_classes);
    Mlp::new(MlpSpec {
        widths,
        activation: config.activation,
        scale: c,
    })
}

/// JS⁰ of `model` at `w`: one SLQ density per parameter block of the
/// Hessian on `data`.
pub fn init_heterogeneity(
    model: &dyn Model,
    data: &Dataset,
    w: &[f64],
    probes: &ProbeConfig,
) -> Result<HeterogeneityReport> {
    let h = HessianOperator::new(model, data, w)?;
    let part = model.partition();
    let labels = model.block_labels();
    let densities = (1..=part.num_blocks())
        .map(|l| {
            let sub = block_restrict(&h, part, l)?;
            let cfg = ProbeConfig {
                seed: derive_seed(probes.seed, "block", l as u64),
                ..*probes
            };
            Ok(slq_density(&sub, &cfg, None)?.with_label(labels[l - 1].clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    heterogeneity_report_auto(&densities)
}

fn best(cells: &[CellResult], kind: OptimizerKind) -> (f64, Option<f64>) {
    cells
        .iter()
        .filter(|c| c.optimizer == kind)
        .filter_map(|c| c.test_accuracy.map(|a| (a, c.lr)))
        .fold((0.0, None), |acc, (a, lr)| {
            if acc.1.is_none() || a > acc.0 {
                (a, Some(lr))
            } else {
                acc
            }
        })
}

/// For every `c`: the same initialization seed and minibatch seed across
/// optimizers and learning rates, so cells differ only in the optimizer.
/// Training aborts are recorded in the cell rather than failing the table.
pub fn heterogeneity_experiment(
    config: &ScalingConfig,
    train_data: &Dataset,
    test_data: &Dataset,
) -> Result<ScalingTable> {
    if config.c_values.is_empty() {
        return Err(Error::invalid("need at least one scale value"));
    }
    if config.lr_grid.is_empty() {
        return Err(Error::invalid("learning-rate grid is empty"));
    }
    if config.lr_grid.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
        return Err(Error::invalid("learning rates must be positive"));
    }
    if config.hessian_samples == 0 {
        return Err(Error::invalid("hessian_samples must be positive"));
    }
    if train_data.dim() != test_data.dim() {
        return Err(Error::invalid("train and test inputs differ in dimension"));
    }
    let n_classes = train_data.n_classes.max(test_data.n_classes);
    let probes = ProbeConfig::new(config.slq_probes, config.slq_steps, derive_seed(config.seed, "js0", 0));
    probes.validate()?;
    let hessian_data = {
        let k = config.hessian_samples.min(train_data.len());
        let mut rng = derived_rng(config.seed, "hessian-subset", 0);
        let mut idx = sample(&mut rng, train_data.len(), k).into_vec();
        idx.sort_unstable();
        train_data.subset(&idx)
    };
    let init_seed = derive_seed(config.seed, "init", 0);
    let train_seed = derive_seed(config.seed, "train", 0);

    let mut rows = Vec::with_capacity(config.c_values.len());
    for &c in &config.c_values {
        let model = scaled_mlp(config, train_data.dim(), n_classes, c)?;
        let w0 = model.init_params(init_seed);
        let report = init_heterogeneity(&model, &hessian_data, &w0, &probes)?;

        let jobs: Vec<(OptimizerKind, f64)> = [OptimizerKind::Sgd, OptimizerKind::AdamW]
            .into_iter()
            .flat_map(|k| config.lr_grid.iter().map(move |&lr| (k, lr)))
            .collect();
        let cells: Vec<CellResult> = jobs
            .into_par_iter()
            .map(|(kind, lr)| {
                let mut spec = TrainerSpec::new(kind, lr, config.steps, train_seed)
                    .with_batch_size(config.batch_size.min(train_data.len()));
                if kind == OptimizerKind::Sgd {
                    spec.beta1 = config.sgd_momentum;
                }
                let outcome = train(&model, train_data, &w0, &spec).and_then(|r| model.accuracy(test_data, &r.w));
                match outcome {
                    Ok(acc) => CellResult {
                        optimizer: kind,
                        lr,
                        test_accuracy: Some(acc),
                        error: None,
                    },
                    Err(e) => CellResult {
                        optimizer: kind,
                        lr,
                        test_accuracy: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();
        let (best_sgd_accuracy, best_sgd_lr) = best(&cells, OptimizerKind::Sgd);
        let (best_adamw_accuracy, best_adamw_lr) = best(&cells, OptimizerKind::AdamW);
        rows.push(ScalingRow {
            c,
            js0: report.js0,
            best_sgd_accuracy,
            best_sgd_lr,
            best_adamw_accuracy,
            best_adamw_lr,
            cells,
            report,
        });
    }
    Ok(ScalingTable {
        config: config.clone(),
        rows,
    })
}
