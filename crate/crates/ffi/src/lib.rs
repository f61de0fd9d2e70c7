//! C ABI over the heterolab core.
//!
//! Every fallible function returns an [`HlStatus`]; on failure the message
//! is kept per thread and read with [`hl_last_error_message`]. Handles are
//! opaque, created by `hl_*_new`-style constructors that write through an
//! out pointer, and released with the matching `*_free`. Array arguments
//! are `(pointer, length)` pairs; a null pointer is accepted only with
//! length 0.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use heterolab::error::Error;
use heterolab::operator::{block_restrict, BlockPartition, DenseSymmetric, Diagonal, SymmetricOperator};
use heterolab::quadlab::{build_case, run_adam, run_gd, Case, QConstruction, QuadraticProblem, StepSize, Trajectory};
use heterolab::slq::{default_sigma, estimate_trace, slq_density, ProbeConfig, ProbeDistribution, QuadratureRule};
use heterolab::spectra::{heterogeneity_report_auto, js_distance_auto, SpectralDensity};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Parse = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlProbeDistribution {
    Gaussian = 0,
    Rademacher = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlQConstruction {
    Orthogonal = 0,
    Gaussian = 1,
}

/// Probe settings for SLQ and trace estimation.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HlProbeConfig {
    pub num_probes: usize,
    /// Lanczos steps per probe (clamped to the operator dimension).
    pub steps: usize,
    pub seed: u64,
    pub distribution: HlProbeDistribution,
    pub reorthogonalize: bool,
}

impl From<&HlProbeConfig> for ProbeConfig {
    fn from(c: &HlProbeConfig) -> Self {
        ProbeConfig::new(c.num_probes, c.steps, c.seed)
            .with_distribution(match c.distribution {
                HlProbeDistribution::Gaussian => ProbeDistribution::Gaussian,
                HlProbeDistribution::Rademacher => ProbeDistribution::Rademacher,
            })
            .with_reorthogonalize(c.reorthogonalize)
    }
}

/// Writes `A x` into `y`; both arrays have `dim` entries. May be called from
/// several threads at once.
pub type HlApplyFn = Option<unsafe extern "C" fn(user_data: *mut c_void, x: *const f64, y: *mut f64, dim: usize)>;

/// A symmetric linear operator, optionally with a block partition.
pub struct HlOperator {
    op: Box<dyn SymmetricOperator>,
    partition: Option<BlockPartition>,
}

/// A blurred spectral density (quadrature nodes, weights and width).
pub struct HlDensity(SpectralDensity);

/// A block-diagonal quadratic `½ wᵀHw`.
pub struct HlQuadProblem(QuadraticProblem);

struct CallbackOperator {
    dim: usize,
    apply: unsafe extern "C" fn(*mut c_void, *const f64, *mut f64, usize),
    user_data: *mut c_void,
}

// The caller promises the callback and its user data are thread-safe.
unsafe impl Send for CallbackOperator {}
unsafe impl Sync for CallbackOperator {}

impl SymmetricOperator for CallbackOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        unsafe { (self.apply)(self.user_data, v.as_ptr(), out.as_mut_ptr(), self.dim) }
    }
}

struct Failure(HlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Numerical(_) => HlStatus::Numerical,
            Error::Io { .. } => HlStatus::Io,
            Error::Parse { .. } | Error::BadMagic { .. } | Error::Truncated { .. } | Error::CountMismatch { .. } => {
                HlStatus::Parse
            }
            _ => HlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(HlStatus::InvalidArgument, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            HlStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(HlStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure(HlStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn href<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(HlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(HlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn free_box<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated when `len > 0`). Returns the full message length without
/// the terminator, 0 if no call on this thread has failed.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let k = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, k);
            *buf.add(k) = 0;
        }
        bytes.len()
    })
}

/// Ten Gaussian probes, 100 steps, seed 0, reorthogonalization on.
#[no_mangle]
pub extern "C" fn hl_probe_config_default() -> HlProbeConfig {
    let d = ProbeConfig::default();
    HlProbeConfig {
        num_probes: d.num_probes,
        steps: d.steps,
        seed: d.seed,
        distribution: HlProbeDistribution::Gaussian,
        reorthogonalize: d.reorthogonalize,
    }
}

fn new_operator(op: Box<dyn SymmetricOperator>, out: &mut *mut HlOperator) {
    *out = Box::into_raw(Box::new(HlOperator { op, partition: None }));
}

/// Dense symmetric `n × n` operator from row-major `data` (`n * n` values).
///
/// # Safety
/// `data` must point to `n * n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_operator_dense(n: usize, data: *const f64, out: *mut *mut HlOperator) -> HlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let len = n.checked_mul(n).ok_or_else(|| invalid("n * n overflows"))?;
        let data = slice(data, len, "data")?;
        new_operator(Box::new(DenseSymmetric::from_row_major(n, data.to_vec())?), out);
        Ok(())
    })
}

/// Diagonal operator.
///
/// # Safety
/// `diag` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_operator_diagonal(n: usize, diag: *const f64, out: *mut *mut HlOperator) -> HlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let diag = slice(diag, n, "diag")?;
        if n == 0 {
            return Err(invalid("operator has dimension 0"));
        }
        if diag.iter().any(|x| !x.is_finite()) {
            return Err(invalid("diagonal has non-finite entries"));
        }
        new_operator(Box::new(Diagonal(diag.to_vec())), out);
        Ok(())
    })
}

/// Matrix-free operator backed by `apply`. `user_data` must outlive the
/// handle.
///
/// # Safety
/// `apply` must honour the [`HlApplyFn`] contract; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_operator_callback(
    dim: usize,
    apply: HlApplyFn,
    user_data: *mut c_void,
    out: *mut *mut HlOperator,
) -> HlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let apply = apply.ok_or_else(|| Failure(HlStatus::NullPointer, "apply is null".into()))?;
        if dim == 0 {
            return Err(invalid("operator has dimension 0"));
        }
        new_operator(Box::new(CallbackOperator { dim, apply, user_data }), out);
        Ok(())
    })
}

/// Attaches a partition into contiguous blocks of the given sizes, which
/// must sum to the operator dimension.
///
/// # Safety
/// `op` must be a live handle; `sizes` must point to `num_blocks` values.
#[no_mangle]
pub unsafe extern "C" fn hl_operator_set_partition(
    op: *mut HlOperator,
    sizes: *const usize,
    num_blocks: usize,
) -> HlStatus {
    guard(|| {
        let op = out_ptr(op, "op")?;
        let part = BlockPartition::from_sizes(slice(sizes, num_blocks, "sizes")?)?;
        if part.dim() != op.op.dim() {
            return Err(invalid(format!(
                "partition covers {} indices but the operator has dimension {}",
                part.dim(),
                op.op.dim()
            )));
        }
        op.partition = Some(part);
        Ok(())
    })
}

/// Dimension of `op`, 0 for a null handle.
///
/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_operator_dim(op: *const HlOperator) -> usize {
    op.as_ref().map_or(0, |o| o.op.dim())
}

/// `y = A x`, both of length `n` (the operator dimension).
///
/// # Safety
/// `op` must be a live handle; `x` and `y` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_operator_apply(op: *const HlOperator, x: *const f64, y: *mut f64, n: usize) -> HlStatus {
    guard(|| {
        let op = href(op, "op")?;
        let y = slice_mut(y, n, "y")?;
        y.copy_from_slice(&op.op.apply(slice(x, n, "x")?)?);
        Ok(())
    })
}

/// # Safety
/// `op` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hl_operator_free(op: *mut HlOperator) {
    free_box(op)
}

/// Hutchinson estimate of `tr(A)`.
///
/// # Safety
/// `op` must be a live handle; `config` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hl_estimate_trace(
    op: *const HlOperator,
    config: *const HlProbeConfig,
    out: *mut f64,
) -> HlStatus {
    guard(|| {
        let op = href(op, "op")?;
        let cfg = ProbeConfig::from(href(config, "config")?);
        *out_ptr(out, "out")? = estimate_trace(op.op.as_ref(), &cfg)?;
        Ok(())
    })
}

/// SLQ density of `op`, or of its 1-based `block` under the attached
/// partition (`block = 0` for the whole operator). `sigma = 0` selects the
/// default width.
///
/// # Safety
/// `op` must be a live handle; `config` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hl_slq_density(
    op: *const HlOperator,
    block: usize,
    config: *const HlProbeConfig,
    sigma: f64,
    out: *mut *mut HlDensity,
) -> HlStatus {
    guard(|| {
        let op = href(op, "op")?;
        let cfg = ProbeConfig::from(href(config, "config")?);
        let out = out_ptr(out, "out")?;
        let sigma = if sigma == 0.0 { None } else { Some(sigma) };
        let d = if block == 0 {
            slq_density(op.op.as_ref(), &cfg, sigma)?
        } else {
            let part = op
                .partition
                .as_ref()
                .ok_or_else(|| invalid("block requested but the operator has no partition"))?;
            let sub = block_restrict(op.op.as_ref(), part, block)?;
            slq_density(&sub, &cfg, sigma)?.with_label(format!("block{block}"))
        };
        *out = Box::into_raw(Box::new(HlDensity(d)));
        Ok(())
    })
}

/// Density of a known spectrum, each eigenvalue weighted `1/n`. `sigma = 0`
/// selects the default width.
///
/// # Safety
/// `eigenvalues` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_density_from_eigenvalues(
    n: usize,
    eigenvalues: *const f64,
    sigma: f64,
    out: *mut *mut HlDensity,
) -> HlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let eig = slice(eigenvalues, n, "eigenvalues")?;
        if n == 0 {
            return Err(invalid("no eigenvalues"));
        }
        let sigma = if sigma == 0.0 {
            default_sigma(&[QuadratureRule::new(eig.to_vec(), vec![1.0 / n as f64; n])?])
        } else {
            sigma
        };
        *out = Box::into_raw(Box::new(HlDensity(SpectralDensity::from_eigenvalues("", eig, sigma)?)));
        Ok(())
    })
}

/// Blur width of `d`, NaN for a null handle.
///
/// # Safety
/// `d` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_density_sigma(d: *const HlDensity) -> f64 {
    d.as_ref().map_or(f64::NAN, |d| d.0.sigma)
}

/// Evaluates the density at `n` points.
///
/// # Safety
/// `d` must be a live handle; `t` and `values` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_density_evaluate(
    d: *const HlDensity,
    t: *const f64,
    values: *mut f64,
    n: usize,
) -> HlStatus {
    guard(|| {
        let d = href(d, "density")?;
        let t = slice(t, n, "t")?;
        for (v, &x) in slice_mut(values, n, "values")?.iter_mut().zip(t) {
            *v = d.0.evaluate(x);
        }
        Ok(())
    })
}

/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hl_density_free(d: *mut HlDensity) {
    free_box(d)
}

/// Jensen-Shannon distance (natural log, in `[0, ln 2]`) on an automatic
/// grid.
///
/// # Safety
/// `a`, `b` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_js_distance(a: *const HlDensity, b: *const HlDensity, out: *mut f64) -> HlStatus {
    guard(|| {
        let (a, b) = (href(a, "a")?, href(b, "b")?);
        *out_ptr(out, "out")? = js_distance_auto(&a.0, &b.0)?;
        Ok(())
    })
}

/// Mean pairwise JS distance among `n >= 2` densities.
///
/// # Safety
/// `densities` must hold `n` live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_js0(densities: *const *const HlDensity, n: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        let handles = slice(densities, n, "densities")?;
        let ds = handles
            .iter()
            .map(|&p| href(p, "density").map(|d| d.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        *out_ptr(out, "out")? = heterogeneity_report_auto(&ds)?.js0;
        Ok(())
    })
}

fn new_problem(p: QuadraticProblem, out: &mut *mut HlQuadProblem) {
    *out = Box::into_raw(Box::new(HlQuadProblem(p)));
}

/// One of the four reference cases (1 to 4), built from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_quad_case(
    case_id: u32,
    seed: u64,
    construction: HlQConstruction,
    out: *mut *mut HlQuadProblem,
) -> HlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let q = match construction {
            HlQConstruction::Orthogonal => QConstruction::Orthogonal,
            HlQConstruction::Gaussian => QConstruction::Gaussian,
        };
        new_problem(build_case(Case::from_id(case_id)?, seed, q)?, out);
        Ok(())
    })
}

/// Problem with diagonal blocks: block `l` has `sizes[l]` entries taken in
/// order from `diag`.
///
/// # Safety
/// `sizes` must hold `num_blocks` values and `diag` their sum; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hl_quad_diagonal_blocks(
    num_blocks: usize,
    sizes: *const usize,
    diag: *const f64,
    out: *mut *mut HlQuadProblem,
) -> HlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let sizes = slice(sizes, num_blocks, "sizes")?;
        let total = sizes
            .iter()
            .try_fold(0usize, |a, &s| a.checked_add(s))
            .ok_or_else(|| invalid("block sizes overflow"))?;
        let diag = slice(diag, total, "diag")?;
        let mut blocks = Vec::with_capacity(num_blocks);
        let mut at = 0;
        for &s in sizes {
            blocks.push(diag[at..at + s].to_vec());
            at += s;
        }
        new_problem(QuadraticProblem::from_diagonal_blocks("diagonal", &blocks)?, out);
        Ok(())
    })
}

/// Dimension of `p`, 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_quad_dim(p: *const HlQuadProblem) -> usize {
    p.as_ref().map_or(0, |p| p.0.dim())
}

/// Loss `½ wᵀHw + hᵀw` at `w` (length `n`).
///
/// # Safety
/// `p` must be a live handle; `w` must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_quad_loss(p: *const HlQuadProblem, w: *const f64, n: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        let p = href(p, "problem")?;
        let w = slice(w, n, "w")?;
        if n != p.0.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.0.dim(),
                got: n,
            }
            .into());
        }
        *out_ptr(out, "out")? = p.0.loss(w);
        Ok(())
    })
}

/// Standard Gaussian initial point for `seed`.
///
/// # Safety
/// `p` must be a live handle; `w` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_quad_gaussian_init(p: *const HlQuadProblem, seed: u64, w: *mut f64, n: usize) -> HlStatus {
    guard(|| {
        let p = href(p, "problem")?;
        if n != p.0.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.0.dim(),
                got: n,
            }
            .into());
        }
        slice_mut(w, n, "w")?.copy_from_slice(&p.0.gaussian_init(seed));
        Ok(())
    })
}

unsafe fn write_trajectory(
    t: &Trajectory,
    loss: *mut f64,
    rel_error: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> Result<(), Failure> {
    let len = t.records.len();
    if capacity < len {
        return Err(invalid(format!(
            "output capacity {capacity} is below the {len} records"
        )));
    }
    if !loss.is_null() {
        for (slot, r) in slice_mut(loss, len, "loss")?.iter_mut().zip(&t.records) {
            *slot = r.loss;
        }
    }
    if !rel_error.is_null() {
        for (slot, r) in slice_mut(rel_error, len, "rel_error")?.iter_mut().zip(&t.records) {
            *slot = r.rel_error;
        }
    }
    *out_ptr(out_len, "out_len")? = len;
    Ok(())
}

/// Gradient descent from `w0` (length `n`) with step `eta` (`0` for
/// `2 / (λ_max + λ_min)`). Writes up to `steps + 1` records (fewer if the
/// run diverged) into the optional `loss` and `rel_error` arrays of
/// `capacity` entries and their count into `out_len`.
///
/// # Safety
/// `p` must be a live handle; arrays must match their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hl_quad_run_gd(
    p: *const HlQuadProblem,
    eta: f64,
    steps: usize,
    w0: *const f64,
    n: usize,
    loss: *mut f64,
    rel_error: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> HlStatus {
    guard(|| {
        let p = href(p, "problem")?;
        let step = if eta == 0.0 {
            StepSize::Auto
        } else {
            StepSize::Fixed(eta)
        };
        let t = run_gd(&p.0, step, steps, slice(w0, n, "w0")?)?;
        write_trajectory(&t, loss, rel_error, capacity, out_len)
    })
}

/// Adam with `β₁ = 0`, `ε = 0` and the given `β₂`; outputs as for
/// [`hl_quad_run_gd`].
///
/// # Safety
/// `p` must be a live handle; arrays must match their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hl_quad_run_adam(
    p: *const HlQuadProblem,
    eta: f64,
    beta2: f64,
    steps: usize,
    w0: *const f64,
    n: usize,
    loss: *mut f64,
    rel_error: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> HlStatus {
    guard(|| {
        let p = href(p, "problem")?;
        let t = run_adam(&p.0, eta, beta2, steps, slice(w0, n, "w0")?)?;
        write_trajectory(&t, loss, rel_error, capacity, out_len)
    })
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hl_quad_free(p: *mut HlQuadProblem) {
    free_box(p)
}
