//! Deterministic GD and Adam (β₁ = 0, ε = 0) on quadratic problems.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::problem::QuadraticProblem;
use crate::error::{check_dim, Error, Result};
use crate::io::write_csv;

/// Loss gap growth (relative to the initial gap) treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e12;
/// Gradient magnitudes below this make the fixed preconditioner singular.
pub const SINGULAR_GRADIENT: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    /// `2 / (λ₁ + λ_d)`
    Auto,
    Fixed(f64),
}

impl StepSize {
    pub fn resolve(self, p: &QuadraticProblem) -> Result<f64> {
        let eta = match self {
            StepSize::Auto => 2.0 / (p.lambda_max() + p.lambda_min()),
            StepSize::Fixed(eta) => eta,
        };
        check_eta(eta)?;
        Ok(eta)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "step size must be positive and finite, got {eta}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerSpec {
    Gd {
        eta: f64,
    },
    /// β₁ = 0 and ε = 0 are fixed.
    Adam {
        eta: f64,
        beta2: f64,
    },
}

impl OptimizerSpec {
    pub fn eta(&self) -> f64 {
        match *self {
            OptimizerSpec::Gd { eta } | OptimizerSpec::Adam { eta, .. } => eta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub loss: f64,
    /// `(L(wᵗ) − L*) / (L(w⁰) − L*)`
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub optimizer: OptimizerSpec,
    pub seed: Option<u64>,
    pub optimal_loss: f64,
    pub records: Vec<TrajectoryRecord>,
    pub final_iterate: Vec<f64>,
    /// Set when the divergence guard stopped the run early.
    pub diverged: bool,
}

impl Trajectory {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn initial_gap(&self) -> f64 {
        self.records[0].loss - self.optimal_loss
    }

    /// `(L(wᵗ⁺¹) − L*) / (L(wᵗ) − L*)` for every step whose starting gap is
    /// above `floor` (in absolute terms).
    pub fn step_ratios(&self, floor: f64) -> Vec<(usize, f64)> {
        self.records
            .windows(2)
            .filter_map(|w| {
                let before = w[0].loss - self.optimal_loss;
                let after = w[1].loss - self.optimal_loss;
                (before > floor).then(|| (w[0].step, after / before))
            })
            .collect()
    }

    /// First step at which the relative error is at most `target`.
    pub fn iterations_to(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.rel_error <= target).map(|r| r.step)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            &["step", "loss", "rel_error"],
            self.records.iter().map(|r| vec![r.step as f64, r.loss, r.rel_error]),
        )
    }
}

/// Running second-moment state of Adam with β₁ = 0:
/// `v⁰ = g⁰∘g⁰`, `vᵗ = β₂ vᵗ⁻¹ + (1 − β₂) gᵗ∘gᵗ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    beta2: f64,
    v: Option<Vec<f64>>,
}

impl AdamState {
    pub fn new(beta2: f64) -> Result<Self> {
        if !(beta2 > 0.0 && beta2 <= 1.0) {
            return Err(Error::invalid(format!("beta2 must lie in (0, 1], got {beta2}")));
        }
        Ok(Self { beta2, v: None })
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    /// Second-moment estimate after the last [`AdamState::observe`].
    pub fn v(&self) -> Option<&[f64]> {
        self.v.as_deref()
    }

    pub fn observe(&mut self, g: &[f64]) {
        match &mut self.v {
            None => self.v = Some(g.iter().map(|x| x * x).collect()),
            Some(v) => {
                // With β₂ = 1 the first gradient's magnitudes stay fixed.
                if self.beta2 < 1.0 {
                    let b = self.beta2;
                    for (vi, gi) in v.iter_mut().zip(g) {
                        *vi = b * *vi + (1.0 - b) * gi * gi;
                    }
                }
            }
        }
    }

    /// `w ← w − η g / √v`; coordinates with `v = 0` are left in place.
    pub fn apply(&self, eta: f64, g: &[f64], w: &mut [f64]) {
        let v = self.v.as_ref().expect("observe before apply");
        for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v) {
            if *vi > 0.0 {
                *wi -= eta * gi / vi.sqrt();
            }
        }
    }
}

enum Stepper {
    Gd { eta: f64 },
    Adam { eta: f64, state: AdamState },
}

impl Stepper {
    fn step(&mut self, g: &[f64], w: &mut [f64]) {
        match self {
            Stepper::Gd { eta } => {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= *eta * gi;
                }
            }
            Stepper::Adam { eta, state } => {
                state.observe(g);
                state.apply(*eta, g, w);
            }
        }
    }
}

fn drive(
    p: &QuadraticProblem,
    w0: &[f64],
    mut stepper: Stepper,
    optimizer: OptimizerSpec,
    steps: usize,
    stop_below: Option<f64>,
) -> Result<Trajectory> {
    check_dim(p.dim(), w0.len())?;
    if w0.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("initial point must be finite"));
    }
    let l_star = p.optimal_loss()?;
    let mut w = w0.to_vec();
    let mut g = vec![0.0; p.dim()];
    p.gradient_into(&w, &mut g);
    let loss0 = p.loss_from_gradient(&w, &g);
    let gap0 = loss0 - l_star;
    if !(gap0 > 0.0) {
        return Err(Error::invalid("initial point is already optimal"));
    }
    let mut records = Vec::with_capacity(steps.min(1 << 20) + 1);
    records.push(TrajectoryRecord {
        step: 0,
        loss: loss0,
        rel_error: 1.0,
    });
    let mut diverged = false;
    for t in 1..=steps {
        if stop_below.is_some_and(|target| records.last().unwrap().rel_error <= target) {
            break;
        }
        stepper.step(&g, &mut w);
        p.gradient_into(&w, &mut g);
        let loss = p.loss_from_gradient(&w, &g);
        let rel = (loss - l_star) / gap0;
        records.push(TrajectoryRecord {
            step: t,
            loss,
            rel_error: rel,
        });
        if !rel.is_finite() || rel > DIVERGENCE_FACTOR {
            diverged = true;
            break;
        }
    }
    Ok(Trajectory {
        optimizer,
        seed: None,
        optimal_loss: l_star,
        records,
        final_iterate: w,
        diverged,
    })
}

/// `wᵗ⁺¹ = wᵗ − η (Hwᵗ − h)`, recording `steps + 1` losses.
pub fn run_gd(p: &QuadraticProblem, step: StepSize, steps: usize, w0: &[f64]) -> Result<Trajectory> {
    let eta = step.resolve(p)?;
    drive(p, w0, Stepper::Gd { eta }, OptimizerSpec::Gd { eta }, steps, None)
}

fn adam_stepper(p: &QuadraticProblem, eta: f64, beta2: f64, w0: &[f64]) -> Result<Stepper> {
    check_eta(eta)?;
    let state = AdamState::new(beta2)?;
    check_dim(p.dim(), w0.len())?;
    if beta2 == 1.0 {
        let g0 = p.gradient(w0);
        if let Some(i) = g0.iter().position(|x| x.abs() < SINGULAR_GRADIENT) {
            return Err(Error::invalid(format!(
                "initial gradient vanishes at coordinate {}; the fixed preconditioner is singular",
                i + 1
            )));
        }
    }
    Ok(Stepper::Adam { eta, state })
}

/// Adam with β₁ = 0 and ε = 0. With β₂ = 1 the preconditioner is the fixed
/// `diag(|∇L(w⁰)|)`; with β₂ < 1 it follows the running second moment.
pub fn run_adam(p: &QuadraticProblem, eta: f64, beta2: f64, steps: usize, w0: &[f64]) -> Result<Trajectory> {
    let stepper = adam_stepper(p, eta, beta2, w0)?;
    drive(p, w0, stepper, OptimizerSpec::Adam { eta, beta2 }, steps, None)
}

/// Iterations until `rel_error <= target`, or `None` if `max_steps` pass
/// first or the run diverges.
pub fn iterations_to_target(
    p: &QuadraticProblem,
    optimizer: OptimizerSpec,
    w0: &[f64],
    target: f64,
    max_steps: usize,
) -> Result<Option<usize>> {
    let stepper = match optimizer {
        OptimizerSpec::Gd { eta } => {
            check_eta(eta)?;
            Stepper::Gd { eta }
        }
        OptimizerSpec::Adam { eta, beta2 } => adam_stepper(p, eta, beta2, w0)?,
    };
    let traj = drive(p, w0, stepper, optimizer, max_steps, Some(target))?;
    Ok(if traj.diverged {
        None
    } else {
        traj.iterations_to(target)
    })
}

/// `{1, 3} × 10^k` for `k = −6 … −1`, then 1.
pub fn default_eta_grid() -> Vec<f64> {
    let mut grid = Vec::with_capacity(13);
    for k in -6..=-1 {
        let base = 10f64.powi(k);
        grid.push(base);
        grid.push(3.0 * base);
    }
    grid.push(1.0);
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationComparison {
    pub target: f64,
    pub max_steps: usize,
    pub gd_eta: f64,
    pub gd_iterations: Option<usize>,
    /// Adam (β₂ = 1) iterations per grid step size.
    pub adam: Vec<(f64, Option<usize>)>,
    pub adam_best_eta: Option<f64>,
    pub adam_best_iterations: Option<usize>,
}

/// GD with `η = 2/(λ₁+λ_d)` against Adam (β₂ = 1) at its best grid step size.
pub fn compare_gd_adam(
    p: &QuadraticProblem,
    w0: &[f64],
    target: f64,
    max_steps: usize,
    grid: &[f64],
) -> Result<IterationComparison> {
    let gd_eta = StepSize::Auto.resolve(p)?;
    let gd_iterations = iterations_to_target(p, OptimizerSpec::Gd { eta: gd_eta }, w0, target, max_steps)?;
    let adam = grid
        .iter()
        .map(|&eta| {
            iterations_to_target(p, OptimizerSpec::Adam { eta, beta2: 1.0 }, w0, target, max_steps).map(|n| (eta, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = adam
        .iter()
        .filter_map(|&(eta, n)| n.map(|n| (eta, n)))
        .min_by_key(|&(_, n)| n);
    Ok(IterationComparison {
        target,
        max_steps,
        gd_eta,
        gd_iterations,
        adam,
        adam_best_eta: best.map(|b| b.0),
        adam_best_iterations: best.map(|b| b.1),
    })
}
