//! Convergence-rate constants and bound checks for GD and Adam on
//! block-diagonal quadratics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::QuadraticProblem;
use super::runners::{OptimizerSpec, Trajectory, SINGULAR_GRADIENT};
use crate::error::{check_dim, Error, Result};
use crate::seed::derive_seed;

/// Per-step ratios are evaluated only while the loss gap exceeds this.
pub const RATIO_FLOOR: f64 = 1e-290;
pub const BOUND_TOL: f64 = 1e-9;
pub const EQUALITY_TOL: f64 = 1e-10;
/// Relative error used for the measured iteration counts in reports.
pub const REPORT_TARGET: f64 = 1e-6;

pub const ETA_NOTE: &str = "step size eta = min_l C_{l,1} (the choice under which the per-block \
contraction argument goes through); the reciprocal choice min_l 1/C_{l,1} is not used";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RConstants {
    /// `min_i |g_{l,i}| / λ_{l,1}` per block.
    pub c1: Vec<f64>,
    /// `max_i |g_{l,i}| / λ_{l,1}` per block.
    pub c2: Vec<f64>,
    /// `max_l C_{l,2}² / min_l C_{l,1}²`
    pub r: f64,
    pub kappa_l: Vec<f64>,
    /// `r · κ_l`
    pub kappa_adam: Vec<f64>,
}

impl RConstants {
    pub fn eta(&self) -> f64 {
        self.c1.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `max_l (1 − 1/(r κ_l))`
    pub fn contraction_bound(&self) -> f64 {
        self.kappa_adam
            .iter()
            .map(|k| 1.0 - 1.0 / k)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn nonsingular_gradient(p: &QuadraticProblem, w0: &[f64]) -> Result<Vec<f64>> {
    check_dim(p.dim(), w0.len())?;
    let g = p.gradient(w0);
    if let Some(i) = g.iter().position(|x| x.abs() < SINGULAR_GRADIENT) {
        return Err(Error::invalid(format!(
            "initial gradient vanishes at coordinate {}",
            i + 1
        )));
    }
    Ok(g)
}

pub fn compute_r(p: &QuadraticProblem, w0: &[f64]) -> Result<RConstants> {
    let g = nonsingular_gradient(p, w0)?;
    let mut c1 = Vec::with_capacity(p.num_blocks());
    let mut c2 = Vec::with_capacity(p.num_blocks());
    for (l, range) in p.partition().ranges().iter().enumerate() {
        let top = p.block_eigenvalues(l)[0];
        let mags = g[range.clone()].iter().map(|x| x.abs());
        let (lo, hi) = mags.fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
        c1.push(lo / top);
        c2.push(hi / top);
    }
    let max_c2 = c2.iter().copied().fold(0.0, f64::max);
    let min_c1 = c1.iter().copied().fold(f64::INFINITY, f64::min);
    let r = (max_c2 * max_c2) / (min_c1 * min_c1);
    let kappa_l = p.block_kappas();
    let kappa_adam = kappa_l.iter().map(|k| r * k).collect();
    Ok(RConstants {
        c1,
        c2,
        r,
        kappa_l,
        kappa_adam,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdBoundReport {
    pub kappa: f64,
    /// `1 − 2/(κ+1)`
    pub bound: f64,
    /// `((κ−1)/(κ+1))²`, the per-step loss ratio of GD with `η = 2/(λ₁+λ_d)`
    /// when both extreme modes carry loss.
    pub squared_rate: f64,
    pub steps_checked: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `min_t (ratio_t − bound)`; negative means the bound is violated.
    pub worst_slack: f64,
    pub max_deviation_from_bound: f64,
    pub max_deviation_from_squared_rate: f64,
    /// Every ratio is at least `bound − 1e-9`.
    pub satisfied: bool,
    /// Every ratio equals `bound` within 1e-10.
    pub equality_with_bound: bool,
    pub equality_with_squared_rate: bool,
}

pub fn verify_gd_lower_bound(traj: &Trajectory, kappa: f64) -> Result<GdBoundReport> {
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!("condition number must be >= 1, got {kappa}")));
    }
    let bound = 1.0 - 2.0 / (kappa + 1.0);
    let q = (kappa - 1.0) / (kappa + 1.0);
    let squared_rate = q * q;
    let ratios = traj.step_ratios(RATIO_FLOOR);
    if ratios.is_empty() {
        return Err(Error::invalid("trajectory has no steps to check"));
    }
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = f64::NEG_INFINITY;
    let mut dev_bound: f64 = 0.0;
    let mut dev_sq: f64 = 0.0;
    for &(_, r) in &ratios {
        min_ratio = min_ratio.min(r);
        max_ratio = max_ratio.max(r);
        dev_bound = dev_bound.max((r - bound).abs());
        dev_sq = dev_sq.max((r - squared_rate).abs());
    }
    let worst_slack = min_ratio - bound;
    Ok(GdBoundReport {
        kappa,
        bound,
        squared_rate,
        steps_checked: ratios.len(),
        min_ratio,
        max_ratio,
        worst_slack,
        max_deviation_from_bound: dev_bound,
        max_deviation_from_squared_rate: dev_sq,
        satisfied: worst_slack >= -BOUND_TOL,
        equality_with_bound: dev_bound <= EQUALITY_TOL,
        equality_with_squared_rate: dev_sq <= EQUALITY_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamBoundReport {
    pub constants: RConstants,
    pub kappa: f64,
    pub eta_used: f64,
    pub eta_theory: f64,
    pub eta_note: String,
    /// `max_l (1 − 1/(r κ_l))`
    pub bound: f64,
    pub steps_checked: usize,
    pub worst_contraction: f64,
    pub satisfied: bool,
    pub target_rel_error: f64,
    pub measured_iterations: Option<usize>,
    /// `r · max_l κ_l`
    pub predicted_adam_complexity: f64,
    /// `κ`
    pub predicted_gd_complexity: f64,
    pub verdict: String,
}

pub fn verify_adam_upper_bound(p: &QuadraticProblem, w0: &[f64], traj: &Trajectory) -> Result<AdamBoundReport> {
    let eta_used = match traj.optimizer {
        OptimizerSpec::Adam { eta, beta2 } if beta2 == 1.0 => eta,
        other => {
            return Err(Error::invalid(format!(
                "expected an Adam trajectory with beta2 = 1, got {other:?}"
            )))
        }
    };
    if traj.final_iterate.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: traj.final_iterate.len(),
        });
    }
    let rc = compute_r(p, w0)?;
    if (p.loss(w0) - traj.records[0].loss).abs() > 1e-12 * traj.records[0].loss.abs().max(1.0) {
        return Err(Error::invalid("trajectory does not start at the given initial point"));
    }
    let bound = rc.contraction_bound();
    let ratios = traj.step_ratios(RATIO_FLOOR);
    let worst = ratios.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let max_kappa_l = rc.kappa_l.iter().copied().fold(0.0, f64::max);
    let adam_c = rc.r * max_kappa_l;
    let kappa = p.kappa();
    let verdict = if adam_c < kappa {
        "adam provably faster"
    } else {
        "no separation"
    };
    Ok(AdamBoundReport {
        eta_theory: rc.eta(),
        constants: rc,
        kappa,
        eta_used,
        eta_note: ETA_NOTE.to_string(),
        bound,
        steps_checked: ratios.len(),
        worst_contraction: worst,
        satisfied: ratios.is_empty() || worst <= bound + BOUND_TOL,
        target_rel_error: REPORT_TARGET,
        measured_iterations: traj.iterations_to(REPORT_TARGET),
        predicted_adam_complexity: adam_c,
        predicted_gd_complexity: kappa,
        verdict: verdict.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleReport {
    pub non_converged: bool,
    /// Minimum loss gap over the final half of the steps.
    pub liminf_estimate: f64,
    pub initial_gap: f64,
}

pub const MIN_CYCLE_STEPS: usize = 1000;

pub fn detect_limit_cycle(traj: &Trajectory) -> Result<LimitCycleReport> {
    let n = traj.steps();
    if n < MIN_CYCLE_STEPS {
        return Err(Error::invalid(format!(
            "limit-cycle detection needs at least {MIN_CYCLE_STEPS} steps, got {n}"
        )));
    }
    let tail = &traj.records[traj.records.len() - n / 2..];
    let liminf = tail
        .iter()
        .map(|r| r.loss - traj.optimal_loss)
        .fold(f64::INFINITY, f64::min);
    let initial_gap = traj.initial_gap();
    Ok(LimitCycleReport {
        non_converged: liminf > 1e-8 * initial_gap,
        liminf_estimate: liminf,
        initial_gap,
    })
}

/// Condition number of `(D⁰_l)^{-1/2} H_l (D⁰_l)^{-1/2}` per block, with
/// `D⁰ = diag(|∇L(w⁰)|)`.
pub fn preconditioned_condition_numbers(p: &QuadraticProblem, w0: &[f64]) -> Result<Vec<f64>> {
    let g = nonsingular_gradient(p, w0)?;
    p.hessian()
        .blocks()
        .iter()
        .zip(p.partition().ranges())
        .map(|(block, range)| {
            let s: Vec<f64> = g[range.clone()].iter().map(|x| 1.0 / x.abs().sqrt()).collect();
            let n = block.n();
            let m = DMatrix::from_fn(n, n, |i, j| s[i] * block.get(i, j) * s[j]);
            let ev = m.symmetric_eigenvalues();
            let (lo, hi) = ev.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
            if !(lo > 0.0) {
                return Err(Error::numerical("preconditioned block is not positive definite"));
            }
            Ok(hi / lo)
        })
        .collect()
}

/// Initial point for Monte-Carlo trial `i`.
pub fn trial_init(p: &QuadraticProblem, seed: u64, trial: usize) -> Vec<f64> {
    p.gaussian_init(derive_seed(seed, "trial", trial as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RStatistic {
    pub trials: usize,
    pub seed: u64,
    pub threshold: f64,
    pub fraction_at_most: f64,
    pub r_values: Vec<f64>,
}

/// Distribution of `r` over `trials` standard Gaussian initial points.
pub fn r_statistic(p: &QuadraticProblem, trials: usize, seed: u64, threshold: f64) -> Result<RStatistic> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let r_values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| compute_r(p, &trial_init(p, seed, i)).map(|c| c.r))
        .collect::<Result<_>>()?;
    let hits = r_values.iter().filter(|r| **r <= threshold).count();
    Ok(RStatistic {
        trials,
        seed,
        threshold,
        fraction_at_most: hits as f64 / trials as f64,
        r_values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierStatistic {
    pub trials: usize,
    pub seed: u64,
    pub kappa_l: Vec<f64>,
    /// Mean over trials of `κ(D⁻¹H_l) / κ_l`, per block.
    pub mean_multiplier: Vec<f64>,
}

pub fn preconditioned_multipliers(p: &QuadraticProblem, trials: usize, seed: u64) -> Result<MultiplierStatistic> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let kappa_l = p.block_kappas();
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| preconditioned_condition_numbers(p, &trial_init(p, seed, i)))
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; kappa_l.len()];
    for row in &per_trial {
        for (m, (k, kl)) in mean.iter_mut().zip(row.iter().zip(&kappa_l)) {
            *m += k / kl;
        }
    }
    for m in &mut mean {
        *m /= trials as f64;
    }
    Ok(MultiplierStatistic {
        trials,
        seed,
        kappa_l,
        mean_multiplier: mean,
    })
}
