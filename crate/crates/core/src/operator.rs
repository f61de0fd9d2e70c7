//! Matrix-free symmetric operators, dense realizations, and block partitions.
//!
//! Everything downstream (Lanczos, SLQ, the quadratic lab, network
//! Hessians) talks to a [`SymmetricOperator`]. Operators are immutable
//! after construction and `Sync`, so probes can apply them concurrently.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

pub trait SymmetricOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `A v` into `out`. Both slices have length `dim()`; callers
    /// outside this module go through [`SymmetricOperator::apply`].
    fn apply_into(&self, v: &[f64], out: &mut [f64]);

    /// Whether the operator is backed by explicit dense storage.
    fn is_dense(&self) -> bool {
        false
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v.len())?;
        let mut out = vec![0.0; self.dim()];
        self.apply_into(v, &mut out);
        Ok(out)
    }
}

impl<T: SymmetricOperator + ?Sized> SymmetricOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        (**self).apply_into(v, out)
    }
    fn is_dense(&self) -> bool {
        (**self).is_dense()
    }
}

impl<T: SymmetricOperator + ?Sized> SymmetricOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        (**self).apply_into(v, out)
    }
    fn is_dense(&self) -> bool {
        (**self).is_dense()
    }
}

/// Dense symmetric matrix with full row-major storage.
#[derive(Clone, PartialEq)]
pub struct DenseSymmetric {
    n: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseSymmetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseSymmetric").field("n", &self.n).finish()
    }
}

impl DenseSymmetric {
    /// Builds from rows, requiring exact symmetry.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("matrix has no rows"));
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "row {} has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(n, data)
    }

    /// Builds from row-major storage, requiring exact symmetry.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(n * n, data.len())?;
        if n == 0 {
            return Err(Error::invalid("matrix dimension must be positive"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if data[i * n + j] != data[j * n + i] {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { n, data })
    }

    /// Symmetrizes `(M + Mᵀ)/2` of an arbitrary square row-major matrix.
    pub fn symmetrized(n: usize, data: &[f64]) -> Result<Self> {
        check_dim(n * n, data.len())?;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = 0.5 * (data[i * n + j] + data[j * n + i]);
            }
        }
        Self::from_row_major(n, out)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            data[i * n + i] = *d;
        }
        Self::from_row_major(n, data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        Self::from_row_major(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    /// Eigenvalues in ascending order (dense symmetric eigensolver).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.to_nalgebra().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Principal submatrix on `range`.
    pub fn submatrix(&self, range: Range<usize>) -> DenseSymmetric {
        let k = range.len();
        let mut data = Vec::with_capacity(k * k);
        for i in range.clone() {
            data.extend_from_slice(&self.row(i)[range.clone()]);
        }
        DenseSymmetric { n: k, data }
    }

    /// Loads a matrix from CSV: one row per line, comma-separated floats.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| tok.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
            rows.push(row);
        }
        Self::from_rows(&rows).map_err(|e| Error::parse(path, e.to_string()))
    }
}

impl SymmetricOperator for DenseSymmetric {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = crate::linalg::dot(self.row(i), v);
        }
    }

    fn is_dense(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl SymmetricOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
    }
}

#[derive(Debug, Clone)]
pub struct Diagonal(pub Vec<f64>);

impl SymmetricOperator for Diagonal {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for ((o, d), x) in out.iter_mut().zip(&self.0).zip(v) {
            *o = d * x;
        }
    }
}

/// Operator defined by a closure.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> SymmetricOperator for FnOperator<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        (self.f)(v, out)
    }
}

/// Wraps an operator and counts matvecs. Test and diagnostics helper.
pub struct CountingOperator<T> {
    inner: T,
    calls: AtomicUsize,
}

impl<T: SymmetricOperator> CountingOperator<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<T: SymmetricOperator> SymmetricOperator for CountingOperator<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_into(v, out)
    }
    fn is_dense(&self) -> bool {
        self.inner.is_dense()
    }
}

/// Ordered, disjoint, contiguous index ranges covering `0..dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    ranges: Vec<Range<usize>>,
}

impl BlockPartition {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::invalid("partition needs at least one block"));
        }
        let mut ranges = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            if s == 0 {
                return Err(Error::invalid("partition blocks must be non-empty"));
            }
            ranges.push(start..start + s);
            start += s;
        }
        Ok(Self { ranges })
    }

    /// From 0-based half-open ranges; must tile `0..dim` in order.
    pub fn from_ranges(ranges: Vec<Range<usize>>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::invalid("partition needs at least one block"));
        }
        let mut expected = 0;
        for (l, r) in ranges.iter().enumerate() {
            if r.start != expected || r.end <= r.start {
                return Err(Error::invalid(format!(
                    "block {} ({}..{}) does not continue the partition at index {expected}",
                    l + 1,
                    r.start,
                    r.end
                )));
            }
            expected = r.end;
        }
        Ok(Self { ranges })
    }

    /// Parses a JSON list of `[start, end]` inclusive 1-based ranges.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let pairs: Vec<[usize; 2]> =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("partition JSON: {e}")))?;
        let mut ranges = Vec::with_capacity(pairs.len());
        for [start, end] in pairs {
            if start == 0 || end < start {
                return Err(Error::invalid(format!(
                    "partition range [{start}, {end}] is not a 1-based inclusive range"
                )));
            }
            ranges.push(start - 1..end);
        }
        Self::from_ranges(ranges)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Serializes back to the 1-based inclusive JSON form.
    pub fn to_json_string(&self) -> String {
        let pairs: Vec<[usize; 2]> = self.ranges.iter().map(|r| [r.start + 1, r.end]).collect();
        serde_json::to_string(&pairs).expect("partition serializes")
    }

    pub fn num_blocks(&self) -> usize {
        self.ranges.len()
    }

    pub fn dim(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    /// Range of the 1-based block `l`.
    pub fn block(&self, l: usize) -> Result<Range<usize>> {
        if l == 0 || l > self.ranges.len() {
            return Err(Error::BlockOutOfRange {
                index: l,
                count: self.ranges.len(),
            });
        }
        Ok(self.ranges[l - 1].clone())
    }

    pub fn block_of(&self, index: usize) -> Option<usize> {
        self.ranges.iter().position(|r| r.contains(&index))
    }
}

/// Principal block `P_l A P_lᵀ` of a matrix-free operator, realized by
/// zero-padding the input, applying the parent, and projecting back.
pub struct Restricted<'a> {
    parent: &'a dyn SymmetricOperator,
    range: Range<usize>,
}

impl Restricted<'_> {
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }
}

impl SymmetricOperator for Restricted<'_> {
    fn dim(&self) -> usize {
        self.range.len()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.parent.dim();
        let mut padded = vec![0.0; d];
        padded[self.range.clone()].copy_from_slice(v);
        let mut full = vec![0.0; d];
        self.parent.apply_into(&padded, &mut full);
        out.copy_from_slice(&full[self.range.clone()]);
    }
}

/// Restricts `op` to the 1-based block `l` of `part`.
pub fn block_restrict<'a>(op: &'a dyn SymmetricOperator, part: &BlockPartition, l: usize) -> Result<Restricted<'a>> {
    check_dim(op.dim(), part.dim())?;
    let range = part.block(l)?;
    Ok(Restricted { parent: op, range })
}

/// `diag(H_1, ..., H_L)` stored block by block.
#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    blocks: Vec<DenseSymmetric>,
    partition: BlockPartition,
}

pub fn make_block_diagonal(blocks: Vec<DenseSymmetric>) -> Result<BlockDiagonal> {
    if blocks.is_empty() {
        return Err(Error::invalid("block list is empty"));
    }
    let sizes: Vec<usize> = blocks.iter().map(|b| b.n()).collect();
    let partition = BlockPartition::from_sizes(&sizes)?;
    Ok(BlockDiagonal { blocks, partition })
}

impl BlockDiagonal {
    pub fn blocks(&self) -> &[DenseSymmetric] {
        &self.blocks
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn to_dense(&self) -> DenseSymmetric {
        let d = self.partition.dim();
        let mut data = vec![0.0; d * d];
        for (block, range) in self.blocks.iter().zip(self.partition.ranges()) {
            for (bi, i) in range.clone().enumerate() {
                for (bj, j) in range.clone().enumerate() {
                    data[i * d + j] = block.get(bi, bj);
                }
            }
        }
        DenseSymmetric { n: d, data }
    }
}

impl SymmetricOperator for BlockDiagonal {
    fn dim(&self) -> usize {
        self.partition.dim()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for (block, range) in self.blocks.iter().zip(self.partition.ranges()) {
            block.apply_into(&v[range.clone()], &mut out[range.clone()]);
        }
    }

    fn is_dense(&self) -> bool {
        true
    }
}

/// Dense realization of any operator by applying it to unit vectors.
pub fn densify(op: &dyn SymmetricOperator) -> Result<DenseSymmetric> {
    let n = op.dim();
    let mut cols = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply_into(&e, &mut col);
        e[j] = 0.0;
        for i in 0..n {
            cols[i * n + j] = col[i];
        }
    }
    DenseSymmetric::symmetrized(n, &cols)
}
