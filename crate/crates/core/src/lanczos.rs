//! m-step Lanczos tridiagonalization of a symmetric operator.
//!
//! The recurrence follows the classical three-term form
//!
//! ```text
//! w'_1 = A v_1,  alpha_1 = <w'_1, v_1>,  w_1 = w'_1 - alpha_1 v_1
//! beta_j = |w_{j-1}|,  v_j = w_{j-1} / beta_j
//! w'_j = A v_j,  alpha_j = <w'_j, v_j>,  w_j = w'_j - alpha_j v_j - beta_j v_{j-1}
//! ```
//!
//! with optional full reorthogonalization (two classical Gram-Schmidt
//! passes against every stored basis vector). When `beta_j` falls below
//! `1e-12 * max(1, max beta)` the run continues from a fresh random unit
//! vector orthogonal to the basis (recorded as `beta_j = 0`). If no such
//! vector exists, or the basis was not stored, `T` is truncated.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot, norm, project_out, scale};
use crate::operator::SymmetricOperator;
use crate::seed::{derived_rng, gaussian_vector};

const BREAKDOWN_RTOL: f64 = 1e-12;

/// Symmetric tridiagonal matrix with diagonal `alpha` (length m) and
/// off-diagonal `beta` (length m - 1, nonnegative).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::invalid("tridiagonal matrix needs at least one diagonal entry"));
        }
        if beta.len() + 1 != alpha.len() {
            return Err(Error::invalid(format!(
                "tridiagonal with {} diagonal entries needs {} off-diagonal entries, got {}",
                alpha.len(),
                alpha.len() - 1,
                beta.len()
            )));
        }
        if beta.iter().any(|b| *b < 0.0) {
            return Err(Error::invalid("off-diagonal entries must be nonnegative"));
        }
        if alpha.iter().chain(&beta).any(|x| !x.is_finite()) {
            return Err(Error::invalid("tridiagonal entries must be finite"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        let m = self.len();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = self.alpha[i];
        }
        for (i, b) in self.beta.iter().enumerate() {
            t[(i, i + 1)] = *b;
            t[(i + 1, i)] = *b;
        }
        t
    }

    /// Eigenvalues (ascending) and the first component of each
    /// corresponding orthonormal eigenvector.
    pub fn eigen_first_components(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let eig = self.to_nalgebra().symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = eig
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(k, &lambda)| (lambda, eig.eigenvectors[(0, k)]))
            .collect();
        if pairs.iter().any(|(l, q)| !l.is_finite() || !q.is_finite()) {
            return Err(Error::numerical("tridiagonal eigensolver produced non-finite output"));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(pairs.into_iter().unzip())
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.eigen_first_components()?.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosConfig {
    pub steps: usize,
    pub reorthogonalize: bool,
    /// Keep the basis even without reorthogonalization.
    pub keep_basis: bool,
    /// Seed for the random restart vectors used after a breakdown.
    pub restart_seed: u64,
}

impl LanczosConfig {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            reorthogonalize: true,
            keep_basis: false,
            restart_seed: 0,
        }
    }

    pub fn reorthogonalize(mut self, on: bool) -> Self {
        self.reorthogonalize = on;
        self
    }

    pub fn keep_basis(mut self, on: bool) -> Self {
        self.keep_basis = on;
        self
    }

    pub fn restart_seed(mut self, seed: u64) -> Self {
        self.restart_seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
pub struct LanczosRun {
    pub tridiagonal: Tridiagonal,
    /// Basis vectors `v_1..v_k`, when stored.
    pub basis: Option<Vec<Vec<f64>>>,
    /// Number of steps actually taken (less than requested on truncation).
    pub effective_steps: usize,
    pub restarts: usize,
}

pub fn lanczos(op: &dyn SymmetricOperator, v1: &[f64], config: LanczosConfig) -> Result<LanczosRun> {
    let d = op.dim();
    check_dim(d, v1.len())?;
    let m = config.steps;
    if m == 0 {
        return Err(Error::invalid("Lanczos step count must be positive"));
    }
    if m > d {
        return Err(Error::invalid(format!(
            "Lanczos step count {m} exceeds operator dimension {d}"
        )));
    }
    let v1_norm = norm(v1);
    if (v1_norm - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "start vector must have unit norm, got {v1_norm}"
        )));
    }

    let reorth = config.reorthogonalize;
    let store = reorth || config.keep_basis;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m.saturating_sub(1));
    let mut restarts = 0usize;
    let mut max_beta: f64 = 0.0;

    let mut v_prev: Vec<f64> = vec![0.0; d];
    let mut v = v1.to_vec();
    let mut w = vec![0.0; d];
    op.apply_into(&v, &mut w);
    let a = dot(&w, &v);
    axpy(-a, &v, &mut w);
    alpha.push(a);
    if store {
        basis.push(v.clone());
    }
    if reorth {
        project_out(&mut w, &basis);
        project_out(&mut w, &basis);
    }

    for j in 2..=m {
        let b = norm(&w);
        let next;
        let beta_j;
        if b < BREAKDOWN_RTOL * max_beta.max(1.0) {
            // Invariant subspace found; continue orthogonally if possible.
            if !store || j > d {
                break;
            }
            let mut rng = derived_rng(config.restart_seed, "lanczos-restart", restarts as u64);
            let mut r: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            project_out(&mut r, &basis);
            project_out(&mut r, &basis);
            let nr = norm(&r);
            if nr < 1e-8 {
                break;
            }
            scale(1.0 / nr, &mut r);
            next = r;
            beta_j = 0.0;
            restarts += 1;
        } else {
            let mut q = w.clone();
            scale(1.0 / b, &mut q);
            next = q;
            beta_j = b;
            max_beta = max_beta.max(b);
        }
        beta.push(beta_j);
        v_prev = std::mem::replace(&mut v, next);

        op.apply_into(&v, &mut w);
        let a = dot(&w, &v);
        axpy(-a, &v, &mut w);
        axpy(-beta_j, &v_prev, &mut w);
        alpha.push(a);
        if store {
            basis.push(v.clone());
        }
        if reorth {
            project_out(&mut w, &basis);
            project_out(&mut w, &basis);
        }
    }
    let _ = v_prev;

    let effective_steps = alpha.len();
    if alpha.iter().chain(&beta).any(|x| !x.is_finite()) {
        return Err(Error::numerical(
            "Lanczos coefficients are not finite (the operator produced overflow or NaN)",
        ));
    }
    let tridiagonal = Tridiagonal::new(alpha, beta)?;
    Ok(LanczosRun {
        tridiagonal,
        basis: if store { Some(basis) } else { None },
        effective_steps,
        restarts,
    })
}

/// Largest and smallest Ritz values from a seeded random unit start with
/// full reorthogonalization. `m` is clamped to the operator dimension.
pub fn extreme_ritz(op: &dyn SymmetricOperator, m: usize, seed: u64) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(Error::invalid("extreme_ritz needs at least 2 Lanczos steps"));
    }
    let d = op.dim();
    let mut start = gaussian_vector(d, seed);
    let n = norm(&start);
    if n == 0.0 {
        return Err(Error::numerical("random start vector is zero"));
    }
    scale(1.0 / n, &mut start);
    let run = lanczos(op, &start, LanczosConfig::new(m.min(d)).restart_seed(seed))?;
    let ev = run.tridiagonal.eigenvalues()?;
    Ok((*ev.last().unwrap(), ev[0]))
}
