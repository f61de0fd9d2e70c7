//! Blurred spectral densities, Jensen-Shannon distances and the JS⁰
//! heterogeneity summary.
//!
//! Distances are computed on a shared uniform grid: each density is
//! discretized to the exact Gaussian mass of the cell around every grid
//! point, renormalized to sum to one, and the natural-log JS divergence of
//! the two discrete distributions is returned. Values therefore lie in
//! `[0, ln 2]`. Cell masses keep a density that is much narrower than the
//! grid spacing from vanishing between grid points.

use std::f64::consts::{LN_2, PI};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_string, write_json, write_text};
use crate::slq::{QuadratureRule, SlqProvenance};

/// Padding on each side of the node range, in units of sigma.
pub const PAD_SIGMAS: f64 = 6.0;
pub const MIN_GRID_POINTS: usize = 256;
pub const DEFAULT_GRID_POINTS: usize = 2048;
/// Upper bound for automatically refined grids.
pub const MAX_GRID_POINTS: usize = 1 << 22;
/// Kernel contributions beyond this many sigmas are dropped on grids.
const KERNEL_CUTOFF_SIGMAS: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub label: String,
    pub sigma: f64,
    pub rules: Vec<QuadratureRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<SlqProvenance>,
}

impl SpectralDensity {
    pub fn from_rules(label: impl Into<String>, rules: Vec<QuadratureRule>, sigma: f64) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::invalid("a spectral density needs at least one quadrature rule"));
        }
        check_sigma(sigma)?;
        Ok(Self {
            label: label.into(),
            sigma,
            rules,
            provenance: None,
        })
    }

    /// Uniform point masses at the given eigenvalues, blurred by `sigma`.
    pub fn from_eigenvalues(label: impl Into<String>, eigenvalues: &[f64], sigma: f64) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("no eigenvalues given"));
        }
        let w = 1.0 / eigenvalues.len() as f64;
        let rule = QuadratureRule::new(eigenvalues.to_vec(), vec![w; eigenvalues.len()])?;
        Self::from_rules(label, vec![rule], sigma)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_provenance(mut self, provenance: SlqProvenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    /// Same rules, new blur width.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { sigma, ..self.clone() })
    }

    pub fn num_probes(&self) -> usize {
        self.rules.len()
    }

    /// Smallest and largest node over all rules.
    pub fn node_range(&self) -> (f64, f64) {
        self.rules
            .iter()
            .flat_map(|r| r.nodes.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let s = self.sigma;
        let c0 = 1.0 / ((2.0 * PI).sqrt() * s);
        let total: f64 = self
            .rules
            .iter()
            .map(|r| {
                r.nodes
                    .iter()
                    .zip(&r.weights)
                    .map(|(x, c)| {
                        let z = (t - x) / s;
                        c * (-0.5 * z * z).exp()
                    })
                    .sum::<f64>()
            })
            .sum();
        c0 * total / self.rules.len() as f64
    }

    /// Density at every grid point. Kernel tails beyond 12 sigma are
    /// dropped (their contribution is below 1e-31 relative).
    pub fn evaluate_grid(&self, grid: &GridSpec) -> Vec<f64> {
        let n = grid.points;
        let h = grid.spacing();
        let s = self.sigma;
        let cutoff = KERNEL_CUTOFF_SIGMAS * s;
        let scale = 1.0 / ((2.0 * PI).sqrt() * s * self.rules.len() as f64);
        let mut out = vec![0.0; n];
        for rule in &self.rules {
            for (&x, &c) in rule.nodes.iter().zip(&rule.weights) {
                if c == 0.0 {
                    continue;
                }
                let first = ((x - cutoff - grid.lo) / h).ceil().max(0.0);
                let last = ((x + cutoff - grid.lo) / h).floor().min((n - 1) as f64);
                if first > last {
                    continue;
                }
                let w = c * scale;
                for (i, slot) in out.iter_mut().enumerate().take(last as usize + 1).skip(first as usize) {
                    let z = (grid.at(i) - x) / s;
                    *slot += w * (-0.5 * z * z).exp();
                }
            }
        }
        out
    }

    /// Divides every node (and sigma) by the k-th largest distinct node.
    pub fn normalize_axis(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("normalization rank k must be at least 1"));
        }
        let mut distinct: Vec<f64> = self.rules.iter().flat_map(|r| r.nodes.iter().copied()).collect();
        distinct.sort_by(|a, b| b.total_cmp(a));
        distinct.dedup();
        if distinct.len() < k {
            return Err(Error::invalid(format!(
                "density has only {} distinct nodes, cannot normalize by the {k}-th largest; lower k",
                distinct.len()
            )));
        }
        let pivot = distinct[k - 1];
        if !(pivot > 0.0) {
            return Err(Error::invalid(format!(
                "the {k}-th largest node is {pivot}; normalization needs a positive value"
            )));
        }
        let rules = self
            .rules
            .iter()
            .map(|r| QuadratureRule {
                nodes: r.nodes.iter().map(|x| x / pivot).collect(),
                weights: r.weights.clone(),
            })
            .collect();
        Ok(Self {
            label: self.label.clone(),
            sigma: self.sigma / pivot,
            rules,
            provenance: self.provenance.clone(),
        })
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "sigma must be positive and finite, got {sigma}"
        )))
    }
}

/// Uniform grid `lo = t_0 < ... < t_{points-1} = hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("grid needs finite lo < hi, got [{lo}, {hi}]")));
        }
        if points < MIN_GRID_POINTS {
            return Err(Error::invalid(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {points}"
            )));
        }
        Ok(Self { lo, hi, points })
    }

    /// Union of the node ranges padded by 6 sigma, with at least 2048
    /// points and a spacing of at most half the smallest sigma (capped at
    /// [`MAX_GRID_POINTS`]).
    pub fn covering(densities: &[&SpectralDensity]) -> Result<Self> {
        let (lo, hi, min_sigma) = padded_span(densities)?;
        let needed = ((hi - lo) / (0.5 * min_sigma)).ceil() + 1.0;
        let points = if needed.is_finite() {
            (needed as usize).clamp(DEFAULT_GRID_POINTS, MAX_GRID_POINTS)
        } else {
            MAX_GRID_POINTS
        };
        Self::new(lo, hi, points)
    }

    /// Padded union of node ranges with a fixed number of points.
    pub fn covering_with_points(densities: &[&SpectralDensity], points: usize) -> Result<Self> {
        let (lo, hi, _) = padded_span(densities)?;
        Self::new(lo, hi, points)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn at(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(move |i| self.at(i))
    }

    /// True when the grid spans the density's nodes padded by 6 sigma.
    pub fn covers(&self, d: &SpectralDensity) -> bool {
        let (lo, hi) = d.node_range();
        let pad = PAD_SIGMAS * d.sigma;
        let slack = 1e-12 * (lo.abs().max(hi.abs()) + pad).max(1.0);
        self.lo <= lo - pad + slack && self.hi >= hi + pad - slack
    }
}

fn padded_span(densities: &[&SpectralDensity]) -> Result<(f64, f64, f64)> {
    if densities.is_empty() {
        return Err(Error::invalid("grid construction needs at least one density"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut min_sigma = f64::INFINITY;
    for d in densities {
        let (a, b) = d.node_range();
        lo = lo.min(a - PAD_SIGMAS * d.sigma);
        hi = hi.max(b + PAD_SIGMAS * d.sigma);
        min_sigma = min_sigma.min(d.sigma);
    }
    Ok((lo, hi, min_sigma))
}

/// `P(a < Z < b)` for a standard normal `Z`, accurate in both tails.
fn normal_mass(a: f64, b: f64) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    if a >= 0.0 {
        0.5 * (libm::erfc(a * r) - libm::erfc(b * r))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * r) - libm::erfc(-a * r))
    } else {
        1.0 - 0.5 * (libm::erfc(-a * r) + libm::erfc(b * r))
    }
}

/// Above this many grid cells per sigma, cell masses come from Simpson's
/// rule on a recurrence-generated Gaussian (relative error ~ (h/sigma)^4)
/// instead of erfc differences.
const SIMPSON_MIN_SIGMA_CELLS: f64 = 8.0;
/// Cells between exact re-evaluations of the Gaussian recurrence.
const RECURRENCE_RESYNC: usize = 256;

/// `out[k]` is cell `first + k`.
fn add_node_erfc(out: &mut [f64], first: usize, grid: &GridSpec, x: f64, s: f64, c: f64) {
    let h = grid.spacing();
    for (k, slot) in out.iter_mut().enumerate() {
        let t = grid.at(first + k);
        *slot += c * normal_mass((t - 0.5 * h - x) / s, (t + 0.5 * h - x) / s);
    }
}

/// Same contract as `add_node_erfc`. Along the half-cell lattice
/// `g(u + d) = g(u) r(u)` and `r(u + d) = r(u) exp(-d^2/s^2)`.
fn add_node_simpson(out: &mut [f64], first: usize, grid: &GridSpec, x: f64, s: f64, c: f64) {
    let h = grid.spacing();
    let d = 0.5 * h;
    let decay = (-(d * d) / (s * s)).exp();
    let scale = c * h / (6.0 * s * (2.0 * std::f64::consts::PI).sqrt());
    for (chunk_idx, chunk) in out.chunks_mut(RECURRENCE_RESYNC).enumerate() {
        let u = grid.at(first + chunk_idx * RECURRENCE_RESYNC) - d;
        let z = (u - x) / s;
        let mut g = (-0.5 * z * z).exp();
        let mut r = (-(2.0 * (u - x) * d + d * d) / (2.0 * s * s)).exp();
        for slot in chunk {
            let left = g;
            g *= r;
            r *= decay;
            let mid = g;
            g *= r;
            r *= decay;
            *slot += scale * (left + 4.0 * mid + g);
        }
    }
}

/// Mass of the blurred density in `[t_i - h/2, t_i + h/2]` for every grid
/// point `t_i`.
fn cell_masses(d: &SpectralDensity, grid: &GridSpec) -> Vec<f64> {
    let n = grid.points;
    let h = grid.spacing();
    let s = d.sigma;
    let cutoff = KERNEL_CUTOFF_SIGMAS * s;
    let simpson = s >= SIMPSON_MIN_SIGMA_CELLS * h;
    let mut out = vec![0.0; n];
    for rule in &d.rules {
        for (&x, &c) in rule.nodes.iter().zip(&rule.weights) {
            if c == 0.0 {
                continue;
            }
            let first = ((x - cutoff - grid.lo) / h - 0.5).floor().max(0.0);
            let last = ((x + cutoff - grid.lo) / h + 0.5).ceil().min((n - 1) as f64);
            if first > last {
                continue;
            }
            let (first, last) = (first as usize, last as usize);
            if simpson {
                add_node_simpson(&mut out[first..=last], first, grid, x, s, c);
            } else {
                add_node_erfc(&mut out[first..=last], first, grid, x, s, c);
            }
        }
    }
    out
}

fn discrete_distribution(d: &SpectralDensity, grid: &GridSpec) -> Result<Vec<f64>> {
    if !grid.covers(d) {
        return Err(Error::invalid(format!(
            "grid [{}, {}] does not cover density {:?} padded by {PAD_SIGMAS} sigma",
            grid.lo, grid.hi, d.label
        )));
    }
    let mut p = cell_masses(d, grid);
    let total: f64 = p.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::numerical(format!(
            "density {:?} carries no mass on the grid",
            d.label
        )));
    }
    for x in &mut p {
        *x /= total;
    }
    Ok(p)
}

fn kl_term(p: f64, m: f64) -> f64 {
    if p > 0.0 {
        p * (p / m).ln()
    } else {
        0.0
    }
}

fn js_of_distributions(p: &[f64], q: &[f64]) -> f64 {
    let sum: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            kl_term(a, m) + kl_term(b, m)
        })
        .sum();
    (0.5 * sum).clamp(0.0, LN_2)
}

/// Jensen-Shannon divergence (natural log) between the two densities
/// discretized on `grid`.
pub fn js_distance(a: &SpectralDensity, b: &SpectralDensity, grid: &GridSpec) -> Result<f64> {
    let p = discrete_distribution(a, grid)?;
    let q = discrete_distribution(b, grid)?;
    Ok(js_of_distributions(&p, &q))
}

/// [`js_distance`] on the automatically chosen covering grid.
pub fn js_distance_auto(a: &SpectralDensity, b: &SpectralDensity) -> Result<f64> {
    js_distance(a, b, &GridSpec::covering(&[a, b])?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub labels: Vec<String>,
    pub pairwise: Vec<Vec<f64>>,
    /// Mean of the strictly upper triangle of `pairwise`.
    pub js0: f64,
    pub grid: GridSpec,
}

pub fn heterogeneity_report(densities: &[SpectralDensity], grid: &GridSpec) -> Result<HeterogeneityReport> {
    let l = densities.len();
    if l < 2 {
        return Err(Error::invalid(format!(
            "heterogeneity needs at least 2 densities, got {l}"
        )));
    }
    let dists: Vec<Vec<f64>> = densities
        .par_iter()
        .map(|d| discrete_distribution(d, grid))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..l).flat_map(|i| (i + 1..l).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| js_of_distributions(&dists[i], &dists[j]))
        .collect();
    let mut pairwise = vec![vec![0.0; l]; l];
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        pairwise[i][j] = v;
        pairwise[j][i] = v;
    }
    // Summing in sorted order makes js0 independent of the input order.
    let mut sorted = values;
    sorted.sort_by(f64::total_cmp);
    let js0 = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(HeterogeneityReport {
        labels: densities.iter().map(|d| d.label.clone()).collect(),
        pairwise,
        js0,
        grid: *grid,
    })
}

/// [`heterogeneity_report`] on the covering grid of all densities.
pub fn heterogeneity_report_auto(densities: &[SpectralDensity]) -> Result<HeterogeneityReport> {
    let refs: Vec<&SpectralDensity> = densities.iter().collect();
    heterogeneity_report(densities, &GridSpec::covering(&refs)?)
}

impl HeterogeneityReport {
    /// Pairwise matrix as CSV with the labels as header.
    pub fn to_csv(&self) -> String {
        let header: Vec<String> = self.labels.iter().map(|s| csv_field(s)).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        csv_string(&header, self.pairwise.iter().cloned())
    }

    /// Writes the CSV matrix and a `.json` report next to it.
    pub fn export(&self, csv_path: &Path) -> Result<()> {
        write_text(csv_path, &self.to_csv())?;
        write_json(&csv_path.with_extension("json"), self)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
