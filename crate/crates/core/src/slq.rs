//! Stochastic Lanczos quadrature.
//!
//! Each probe `v` (a normalized Gaussian or Rademacher vector) is pushed
//! through Lanczos; the eigenvalues `x_j` of the resulting tridiagonal
//! matrix and the squared first components `c_j` of its eigenvectors form
//! a Gauss quadrature rule for the spectral measure of the operator seen
//! from `v`. The density estimate is the probe average of the
//! Gaussian-blurred rules `sum_j c_j N(x_j, sigma^2)`.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_csv, write_json};
use crate::lanczos::{lanczos, LanczosConfig, Tridiagonal};
use crate::linalg::{dot, norm, scale};
use crate::operator::{block_restrict, BlockPartition, SymmetricOperator};
use crate::seed::{derive_seed, derived_rng};
use crate::spectra::{GridSpec, SpectralDensity};

const WEIGHT_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::invalid(format!(
                "quadrature rule needs matching nonempty nodes and weights, got {} and {}",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.iter().chain(&weights).any(|x| !x.is_finite()) {
            return Err(Error::invalid("quadrature nodes and weights must be finite"));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("quadrature weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("quadrature weights sum to {total}, not 1")));
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_j c_j f(x_j)`
    pub fn estimate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, c)| c * f(*x)).sum()
    }
}

pub fn quadrature_from_tridiagonal(t: &Tridiagonal) -> Result<QuadratureRule> {
    let (nodes, first) = t.eigen_first_components()?;
    let weights: Vec<f64> = first.iter().map(|q| q * q).collect();
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::numerical(format!(
            "eigenvectors of the tridiagonal matrix are not normalized (weights sum to {total})"
        )));
    }
    Ok(QuadratureRule { nodes, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeDistribution {
    #[default]
    Gaussian,
    Rademacher,
}

impl std::str::FromStr for ProbeDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "rademacher" => Ok(Self::Rademacher),
            other => Err(Error::invalid(format!(
                "unknown probe distribution {other:?} (expected gaussian or rademacher)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub num_probes: usize,
    pub steps: usize,
    pub distribution: ProbeDistribution,
    pub seed: u64,
    pub reorthogonalize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            num_probes: 10,
            steps: 100,
            distribution: ProbeDistribution::Gaussian,
            seed: 0,
            reorthogonalize: true,
        }
    }
}

impl ProbeConfig {
    pub fn new(num_probes: usize, steps: usize, seed: u64) -> Self {
        Self {
            num_probes,
            steps,
            seed,
            ..Self::default()
        }
    }

    /// One probe, ten Lanczos steps.
    pub fn simplified(seed: u64) -> Self {
        Self::new(1, 10, seed)
    }

    pub fn with_distribution(mut self, distribution: ProbeDistribution) -> Self {
        self.distribution = distribution;
        self
    }

    pub fn with_reorthogonalize(mut self, on: bool) -> Self {
        self.reorthogonalize = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_probes == 0 {
            return Err(Error::invalid("number of probes must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("Lanczos step count must be at least 1"));
        }
        Ok(())
    }

    pub fn probe_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, "probe", index as u64)
    }
}

/// Unit-norm probe vector number `index`.
pub fn probe_vector(dim: usize, config: &ProbeConfig, index: usize) -> Result<Vec<f64>> {
    let mut rng = derived_rng(config.seed, "probe", index as u64);
    let mut v: Vec<f64> = match config.distribution {
        ProbeDistribution::Gaussian => (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
        ProbeDistribution::Rademacher => (0..dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
    };
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::numerical("degenerate probe vector"));
    }
    scale(1.0 / n, &mut v);
    Ok(v)
}

/// Hutchinson estimate `(1/n_v) sum_i d * v_i^T A v_i` with unit probes.
pub fn estimate_trace(op: &dyn SymmetricOperator, config: &ProbeConfig) -> Result<f64> {
    config.validate()?;
    let d = op.dim();
    let samples: Vec<f64> = (0..config.num_probes)
        .into_par_iter()
        .map(|i| {
            let v = probe_vector(d, config, i)?;
            let mut av = vec![0.0; d];
            op.apply_into(&v, &mut av);
            Ok(d as f64 * dot(&v, &av))
        })
        .collect::<Result<_>>()?;
    Ok(samples.iter().sum::<f64>() / config.num_probes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlqProvenance {
    pub num_probes: usize,
    pub steps_requested: usize,
    /// Lanczos steps actually taken, per probe.
    pub steps_effective: Vec<usize>,
    pub restarts: Vec<usize>,
    pub distribution: ProbeDistribution,
    pub seed: u64,
    pub probe_seeds: Vec<u64>,
    pub reorthogonalize: bool,
    pub sigma_rule: String,
}

/// `0.01 * (x_max - x_min)` over all nodes. When the nodes coincide up to
/// rounding: `0.01 * max|x|`, or `0.01` if every node is zero.
pub fn default_sigma(rules: &[QuadratureRule]) -> f64 {
    let (lo, hi) = rules
        .iter()
        .flat_map(|r| r.nodes.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let span = hi - lo;
    let magnitude = lo.abs().max(hi.abs());
    if span > 1e-12 * magnitude {
        0.01 * span
    } else if magnitude > 0.0 {
        0.01 * magnitude
    } else {
        0.01
    }
}

/// Runs one Lanczos pass per probe and returns the blurred density. Steps
/// are clamped to the operator dimension. `sigma = None` selects
/// [`default_sigma`].
pub fn slq_density(op: &dyn SymmetricOperator, config: &ProbeConfig, sigma: Option<f64>) -> Result<SpectralDensity> {
    config.validate()?;
    if let Some(s) = sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {s}")));
        }
    }
    let d = op.dim();
    if d == 0 {
        return Err(Error::invalid("operator has dimension 0"));
    }
    let m = config.steps.min(d);
    let runs: Vec<(QuadratureRule, usize, usize)> = (0..config.num_probes)
        .into_par_iter()
        .map(|i| {
            let v = probe_vector(d, config, i)?;
            let lc = LanczosConfig::new(m)
                .reorthogonalize(config.reorthogonalize)
                .restart_seed(derive_seed(config.seed, "restart", i as u64));
            let run = lanczos(op, &v, lc)?;
            let rule = quadrature_from_tridiagonal(&run.tridiagonal)?;
            Ok((rule, run.effective_steps, run.restarts))
        })
        .collect::<Result<_>>()?;

    let mut rules = Vec::with_capacity(runs.len());
    let mut steps_effective = Vec::with_capacity(runs.len());
    let mut restarts = Vec::with_capacity(runs.len());
    for (r, s, k) in runs {
        rules.push(r);
        steps_effective.push(s);
        restarts.push(k);
    }
    let (sigma, sigma_rule) = match sigma {
        Some(s) => (s, "explicit".to_string()),
        None => (default_sigma(&rules), "0.01 * node span".to_string()),
    };
    let provenance = SlqProvenance {
        num_probes: config.num_probes,
        steps_requested: config.steps,
        steps_effective,
        restarts,
        distribution: config.distribution,
        seed: config.seed,
        probe_seeds: (0..config.num_probes).map(|i| config.probe_seed(i)).collect(),
        reorthogonalize: config.reorthogonalize,
        sigma_rule,
    };
    SpectralDensity::from_rules("", rules, sigma).map(|d| d.with_provenance(provenance))
}

/// Samples `ceil(fraction * L)` blocks without replacement and estimates
/// the density of each restricted operator. Every block gets its own probe
/// seed derived from `config.seed` and the block id. Results are ordered by
/// (1-based) block id.
pub fn slq_simplified(
    op: &dyn SymmetricOperator,
    part: &BlockPartition,
    fraction: f64,
    config: &ProbeConfig,
) -> Result<Vec<(usize, SpectralDensity)>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "block fraction must lie in (0, 1], got {fraction}"
        )));
    }
    config.validate()?;
    crate::error::check_dim(op.dim(), part.dim())?;
    let l = part.num_blocks();
    let count = ((fraction * l as f64).ceil() as usize).clamp(1, l);
    let mut rng = derived_rng(config.seed, "block-sample", 0);
    let mut chosen: Vec<usize> = sample(&mut rng, l, count).into_iter().map(|i| i + 1).collect();
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|block| {
            let sub = block_restrict(op, part, block)?;
            let cfg = ProbeConfig {
                seed: derive_seed(config.seed, "block", block as u64),
                ..*config
            };
            let density = slq_density(&sub, &cfg, None)?.with_label(format!("block {block}"));
            Ok((block, density))
        })
        .collect()
}

/// Writes `(t, density)` rows on `grid` to `csv_path` and the full density
/// (rules, sigma, provenance) to the same path with a `.json` extension.
pub fn export_density(density: &SpectralDensity, grid: &GridSpec, csv_path: &Path) -> Result<()> {
    let values = density.evaluate_grid(grid);
    let rows = grid.points().zip(values).map(|(t, p)| vec![t, p]);
    write_csv(csv_path, &["t", "density"], rows)?;
    write_json(&csv_path.with_extension("json"), density)
}
