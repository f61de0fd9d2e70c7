//! Block-diagonal quadratic problems `L(w) = ½ wᵀHw − hᵀw`.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;
use crate::operator::{make_block_diagonal, BlockDiagonal, BlockPartition, DenseSymmetric, SymmetricOperator};
use crate::seed::{derived_rng, LabRng};

/// How the eigenvector basis `Q_l` of each block is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QConstruction {
    /// Q factor of a QR decomposition of a Gaussian matrix; the requested
    /// eigenvalues are exactly the eigenvalues of the block.
    #[default]
    Orthogonal,
    /// `Q_l` with i.i.d. standard Gaussian entries; eigenvalues of the
    /// block then differ from the requested list.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    Case1,
    Case2,
    Case3,
    Case4,
}

impl Case {
    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Case::Case1),
            2 => Ok(Case::Case2),
            3 => Ok(Case::Case3),
            4 => Ok(Case::Case4),
            other => Err(Error::invalid(format!("unknown case {other} (expected 1, 2, 3 or 4)"))),
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Case::Case1 => 1,
            Case::Case2 => 2,
            Case::Case3 => 3,
            Case::Case4 => 4,
        }
    }
}

pub const CASE3_SPECTRA: [[f64; 3]; 3] = [[1.0, 2.0, 3.0], [99.0, 100.0, 101.0], [4998.0, 4999.0, 5000.0]];
pub const CASE4_SPECTRA: [[f64; 3]; 3] = [[1.0, 99.0, 4998.0], [2.0, 100.0, 4999.0], [3.0, 101.0, 5000.0]];

/// Eigenvalues sampled per block for Cases 1 and 2.
pub const SURROGATE_BLOCK_SIZE: usize = 25;
/// Target range of the affine map applied to Case 1 and 2 spectra.
pub const SURROGATE_RANGE: (f64, f64) = (1.0, 5000.0);

const CASE1_SOURCES: [&str; 4] = [
    include_str!("../../data/case1_block1.csv"),
    include_str!("../../data/case1_block2.csv"),
    include_str!("../../data/case1_block3.csv"),
    include_str!("../../data/case1_block4.csv"),
];
const CASE2_SOURCES: [&str; 4] = [
    include_str!("../../data/case2_block1.csv"),
    include_str!("../../data/case2_block2.csv"),
    include_str!("../../data/case2_block3.csv"),
    include_str!("../../data/case2_block4.csv"),
];

/// Parses an eigenvalue list: one value per line, blank lines and `#`
/// comments ignored.
pub fn parse_eigenvalue_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let x: f64 = line
            .trim_end_matches(',')
            .parse()
            .map_err(|e| format!("line {}: {e}", k + 1))?;
        if !x.is_finite() {
            return Err(format!("line {}: non-finite value", k + 1));
        }
        out.push(x);
    }
    if out.is_empty() {
        return Err("no eigenvalues found".into());
    }
    Ok(out)
}

pub fn load_eigenvalue_list(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_eigenvalue_list(&text).map_err(|m| Error::parse(path, m))
}

/// Bundled surrogate spectra for Case 1 (heterogeneous) or Case 2
/// (homogeneous), one list per block.
pub fn surrogate_spectra(case: Case) -> Result<Vec<Vec<f64>>> {
    let sources = match case {
        Case::Case1 => &CASE1_SOURCES,
        Case::Case2 => &CASE2_SOURCES,
        _ => return Err(Error::invalid("surrogate spectra exist only for cases 1 and 2")),
    };
    sources
        .iter()
        .map(|s| parse_eigenvalue_list(s).map_err(|m| Error::invalid(format!("bundled spectrum: {m}"))))
        .collect()
}

/// Draws `per_block` values from each source list without replacement and
/// maps all of them affinely so the global minimum and maximum land on
/// `range`.
pub fn sample_block_spectra(
    sources: &[Vec<f64>],
    per_block: usize,
    range: (f64, f64),
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if sources.is_empty() || per_block == 0 {
        return Err(Error::invalid("need at least one source list and one value per block"));
    }
    let (a, b) = range;
    if !(a > 0.0 && b > a) {
        return Err(Error::invalid(format!(
            "target range must satisfy 0 < lo < hi, got ({a}, {b})"
        )));
    }
    let mut drawn = Vec::with_capacity(sources.len());
    for (l, src) in sources.iter().enumerate() {
        if src.len() < per_block {
            return Err(Error::invalid(format!(
                "source list {} has {} values, fewer than {per_block}",
                l + 1,
                src.len()
            )));
        }
        let mut rng = derived_rng(seed, "case-spectrum", l as u64);
        let mut idx = sample(&mut rng, src.len(), per_block).into_vec();
        idx.sort_unstable();
        drawn.push(idx.into_iter().map(|i| src[i]).collect::<Vec<f64>>());
    }
    let lo = drawn.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = drawn.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::invalid("sampled spectra are constant; cannot map onto a range"));
    }
    let slope = (b - a) / (hi - lo);
    Ok(drawn
        .into_iter()
        .map(|block| {
            block
                .into_iter()
                .map(|x| if x == hi { b } else { a + (x - lo) * slope })
                .collect()
        })
        .collect())
}

fn gaussian_matrix(n: usize, rng: &mut LabRng) -> DMatrix<f64> {
    // Row-major fill so the draw order does not depend on storage layout.
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        data.push(StandardNormal.sample(rng));
    }
    DMatrix::from_row_slice(n, n, &data)
}

fn descending(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    label: String,
    hessian: BlockDiagonal,
    h: Vec<f64>,
    /// Per block, descending.
    block_eigenvalues: Vec<Vec<f64>>,
}

impl QuadraticProblem {
    /// Assembles a problem from explicit blocks; eigendata are computed.
    pub fn from_blocks(label: impl Into<String>, blocks: Vec<DenseSymmetric>) -> Result<Self> {
        let eig = blocks.iter().map(|b| descending(b.eigenvalues())).collect();
        Self::assemble(label.into(), blocks, eig)
    }

    /// Diagonal blocks with the given entries.
    pub fn from_diagonal_blocks(label: impl Into<String>, diagonals: &[Vec<f64>]) -> Result<Self> {
        let blocks = diagonals
            .iter()
            .map(|d| DenseSymmetric::from_diagonal(d))
            .collect::<Result<Vec<_>>>()?;
        let eig = diagonals.iter().map(|d| descending(d.clone())).collect();
        Self::assemble(label.into(), blocks, eig)
    }

    /// `H_l = Q_l Λ_l Q_lᵀ` for each requested block spectrum, with `Q_l`
    /// drawn from a stream derived from `seed` and the block index.
    pub fn from_block_spectra(
        label: impl Into<String>,
        spectra: &[Vec<f64>],
        seed: u64,
        construction: QConstruction,
    ) -> Result<Self> {
        if spectra.is_empty() {
            return Err(Error::invalid("no block spectra given"));
        }
        let mut blocks = Vec::with_capacity(spectra.len());
        for (l, lambda) in spectra.iter().enumerate() {
            let n = lambda.len();
            if n == 0 {
                return Err(Error::invalid(format!("block {} has an empty spectrum", l + 1)));
            }
            let mut rng = derived_rng(seed, "case-q", l as u64);
            let g = gaussian_matrix(n, &mut rng);
            let q = match construction {
                QConstruction::Orthogonal => g.qr().q(),
                QConstruction::Gaussian => g,
            };
            let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(lambda));
            let h = &q * lam * q.transpose();
            blocks.push(DenseSymmetric::from_nalgebra(&h)?);
        }
        let eig = match construction {
            QConstruction::Orthogonal => spectra.iter().map(|s| descending(s.clone())).collect(),
            QConstruction::Gaussian => blocks.iter().map(|b| descending(b.eigenvalues())).collect(),
        };
        Self::assemble(label.into(), blocks, eig)
    }

    fn assemble(label: String, blocks: Vec<DenseSymmetric>, block_eigenvalues: Vec<Vec<f64>>) -> Result<Self> {
        for (l, ev) in block_eigenvalues.iter().enumerate() {
            let min = ev.last().copied().unwrap_or(0.0);
            if !(min > 0.0) {
                return Err(Error::invalid(format!(
                    "block {} is not positive definite (smallest eigenvalue {min})",
                    l + 1
                )));
            }
        }
        let hessian = make_block_diagonal(blocks)?;
        let h = vec![0.0; hessian.dim()];
        Ok(Self {
            label,
            hessian,
            h,
            block_eigenvalues,
        })
    }

    pub fn with_linear_term(mut self, h: Vec<f64>) -> Result<Self> {
        check_dim(self.dim(), h.len())?;
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("linear term must be finite"));
        }
        self.h = h;
        Ok(self)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.hessian.dim()
    }

    pub fn hessian(&self) -> &BlockDiagonal {
        &self.hessian
    }

    pub fn partition(&self) -> &BlockPartition {
        self.hessian.partition()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_eigenvalues.len()
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.h
    }

    /// Eigenvalues of block `l` (0-based), descending.
    pub fn block_eigenvalues(&self, l: usize) -> &[f64] {
        &self.block_eigenvalues[l]
    }

    pub fn all_block_eigenvalues(&self) -> &[Vec<f64>] {
        &self.block_eigenvalues
    }

    /// Global eigenvalues, descending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        descending(self.block_eigenvalues.iter().flatten().copied().collect())
    }

    pub fn lambda_max(&self) -> f64 {
        self.block_eigenvalues
            .iter()
            .map(|e| e[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lambda_min(&self) -> f64 {
        self.block_eigenvalues
            .iter()
            .map(|e| *e.last().unwrap())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn kappa(&self) -> f64 {
        self.lambda_max() / self.lambda_min()
    }

    pub fn block_kappas(&self) -> Vec<f64> {
        self.block_eigenvalues
            .iter()
            .map(|e| e[0] / e.last().unwrap())
            .collect()
    }

    /// `Hw − h`
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(w, &mut g);
        g
    }

    pub(crate) fn gradient_into(&self, w: &[f64], g: &mut [f64]) {
        self.hessian.apply_into(w, g);
        for (gi, hi) in g.iter_mut().zip(&self.h) {
            *gi -= hi;
        }
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        let mut hw = vec![0.0; self.dim()];
        self.hessian.apply_into(w, &mut hw);
        0.5 * dot(w, &hw) - dot(&self.h, w)
    }

    /// Loss from a precomputed gradient `g = Hw − h`: `½ wᵀ(g − h)`.
    pub(crate) fn loss_from_gradient(&self, w: &[f64], g: &[f64]) -> f64 {
        w.iter()
            .zip(g)
            .zip(&self.h)
            .map(|((wi, gi), hi)| 0.5 * wi * (gi - hi))
            .sum()
    }

    /// Minimizer `H⁻¹h`, solved block by block.
    pub fn minimizer(&self) -> Result<Vec<f64>> {
        let mut w = vec![0.0; self.dim()];
        if self.h.iter().all(|x| *x == 0.0) {
            return Ok(w);
        }
        for (block, range) in self.hessian.blocks().iter().zip(self.partition().ranges()) {
            let chol = block
                .to_nalgebra()
                .cholesky()
                .ok_or_else(|| Error::numerical("block is not numerically positive definite"))?;
            let rhs = nalgebra::DVector::from_column_slice(&self.h[range.clone()]);
            let x = chol.solve(&rhs);
            w[range.clone()].copy_from_slice(x.as_slice());
        }
        Ok(w)
    }

    /// `L* = −½ hᵀH⁻¹h`
    pub fn optimal_loss(&self) -> Result<f64> {
        let w = self.minimizer()?;
        Ok(-0.5 * dot(&self.h, &w))
    }

    /// Standard Gaussian initial point drawn from a stream derived from `seed`.
    pub fn gaussian_init(&self, seed: u64) -> Vec<f64> {
        let mut rng = derived_rng(seed, "w0", 0);
        (0..self.dim()).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

/// The quadratic test problems; `h = 0` throughout.
pub fn build_case(case: Case, seed: u64, construction: QConstruction) -> Result<QuadraticProblem> {
    let label = format!("case{}", case.id());
    match case {
        Case::Case3 | Case::Case4 => {
            let table = if case == Case::Case3 {
                CASE3_SPECTRA
            } else {
                CASE4_SPECTRA
            };
            let spectra: Vec<Vec<f64>> = table.iter().map(|b| b.to_vec()).collect();
            QuadraticProblem::from_block_spectra(label, &spectra, seed, construction)
        }
        Case::Case1 | Case::Case2 => {
            let spectra = sample_block_spectra(&surrogate_spectra(case)?, SURROGATE_BLOCK_SIZE, SURROGATE_RANGE, seed)?;
            QuadraticProblem::from_block_spectra(label, &spectra, seed, construction)
        }
    }
}

/// `H = diag(κ, 1)` as two scalar blocks, with the start point
/// `w⁰ = (√(1/κ), √κ)` that puts equal loss on both modes.
pub fn gd_lower_bound_instance(kappa: f64) -> Result<(QuadraticProblem, Vec<f64>)> {
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!("condition number must be >= 1, got {kappa}")));
    }
    let p = QuadraticProblem::from_diagonal_blocks("gd-lower-bound", &[vec![kappa], vec![1.0]])?;
    Ok((p, vec![(1.0 / kappa).sqrt(), kappa.sqrt()]))
}

/// One-dimensional `L(w) = ½ w²`.
pub fn scalar_instance() -> QuadraticProblem {
    QuadraticProblem::from_diagonal_blocks("scalar", &[vec![1.0]]).expect("valid 1-D problem")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case3_spectrum_and_kappas() {
        let p = build_case(Case::Case3, 0, QConstruction::Orthogonal).unwrap();
        let mut want: Vec<f64> = CASE3_SPECTRA.iter().flatten().copied().collect();
        want.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(p.eigenvalues(), want);
        assert_eq!(p.kappa(), 5000.0);
        for (block, spec) in p.hessian().blocks().iter().zip(CASE3_SPECTRA) {
            for (got, want) in block.eigenvalues().iter().zip(spec) {
                assert!((got - want).abs() < 1e-8, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn case4_block_kappas() {
        let p = build_case(Case::Case4, 0, QConstruction::Orthogonal).unwrap();
        assert_eq!(p.block_kappas(), vec![4998.0, 4999.0 / 2.0, 5000.0 / 3.0]);
        assert_eq!(p.block_kappas().iter().copied().fold(0.0, f64::max), 4998.0);
    }

    #[test]
    fn surrogate_cases() {
        for case in [Case::Case1, Case::Case2] {
            let p = build_case(case, 3, QConstruction::Orthogonal).unwrap();
            assert_eq!(p.num_blocks(), 4);
            assert_eq!(p.partition().sizes(), vec![25; 4]);
            assert!(p.eigenvalues().iter().all(|x| (1.0..=5000.0).contains(x)));
            assert!((p.kappa() - 5000.0).abs() < 1e-6);
        }
        let a = build_case(Case::Case1, 3, QConstruction::Orthogonal).unwrap();
        let b = build_case(Case::Case1, 3, QConstruction::Orthogonal).unwrap();
        assert_eq!(a.eigenvalues(), b.eigenvalues());
    }

    #[test]
    fn gaussian_q_moves_eigenvalues() {
        let p = build_case(Case::Case3, 0, QConstruction::Gaussian).unwrap();
        let block1 = p.block_eigenvalues(0);
        assert!((block1[0] - 3.0).abs() > 1e-3);
    }

    #[test]
    fn unknown_case() {
        assert!(Case::from_id(5).is_err());
        assert!(Case::from_id(0).is_err());
    }

    #[test]
    fn linear_term_and_minimizer() {
        let p = QuadraticProblem::from_diagonal_blocks("d", &[vec![2.0, 4.0]])
            .unwrap()
            .with_linear_term(vec![2.0, 2.0])
            .unwrap();
        let w = p.minimizer().unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        assert!((p.optimal_loss().unwrap() + 1.5).abs() < 1e-15);
        assert!(p.gradient(&w).iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn non_pd_rejected() {
        assert!(QuadraticProblem::from_diagonal_blocks("bad", &[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn eigenvalue_list_parsing() {
        assert_eq!(parse_eigenvalue_list("# c\n1\n\n2.5,\n").unwrap(), vec![1.0, 2.5]);
        assert!(parse_eigenvalue_list("x\n").is_err());
        assert!(parse_eigenvalue_list("\n").is_err());
    }
}
