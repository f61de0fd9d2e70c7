use std::ffi::{c_void, CStr};
use std::path::Path;
use std::process::Command;
use std::ptr;

use heterolab_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe {
        hl_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn diag_op(values: &[f64]) -> *mut HlOperator {
    let mut op = ptr::null_mut();
    assert_eq!(
        unsafe { hl_operator_diagonal(values.len(), values.as_ptr(), &mut op) },
        HlStatus::Ok
    );
    op
}

fn config(num_probes: usize, steps: usize, seed: u64) -> HlProbeConfig {
    HlProbeConfig {
        num_probes,
        steps,
        seed,
        ..hl_probe_config_default()
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(hl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dense_apply_and_dim() {
    let a = [2.0, 1.0, 1.0, 3.0];
    let mut op = ptr::null_mut();
    unsafe {
        assert_eq!(hl_operator_dense(2, a.as_ptr(), &mut op), HlStatus::Ok);
        assert_eq!(hl_operator_dim(op), 2);
        let mut y = [0.0; 2];
        assert_eq!(
            hl_operator_apply(op, [1.0, -1.0].as_ptr(), y.as_mut_ptr(), 2),
            HlStatus::Ok
        );
        assert_eq!(y, [1.0, -2.0]);
        assert_eq!(
            hl_operator_apply(op, [1.0].as_ptr(), y.as_mut_ptr(), 1),
            HlStatus::InvalidArgument
        );
        hl_operator_free(op);
    }
}

#[test]
fn errors_set_status_and_message() {
    let asym = [1.0, 2.0, 0.0, 1.0];
    let mut op = ptr::null_mut();
    unsafe {
        assert_eq!(hl_operator_dense(2, asym.as_ptr(), &mut op), HlStatus::InvalidArgument);
        assert!(op.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(hl_operator_dense(2, ptr::null(), &mut op), HlStatus::NullPointer);
        assert_eq!(last_error(), "data is null");
        assert_eq!(
            hl_operator_dense(1, [1.0].as_ptr(), ptr::null_mut()),
            HlStatus::NullPointer
        );
        assert_eq!(hl_operator_dim(ptr::null()), 0);
        hl_operator_free(ptr::null_mut());
    }
}

#[test]
fn error_message_truncates_and_reports_length() {
    let mut op = ptr::null_mut();
    unsafe {
        hl_operator_dense(2, ptr::null(), &mut op);
        let mut buf = [0x7f as std::ffi::c_char; 5];
        let n = hl_last_error_message(buf.as_mut_ptr(), buf.len());
        assert_eq!(n, "data is null".len());
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "data");
        assert_eq!(hl_last_error_message(ptr::null_mut(), 0), n);
    }
}

#[test]
fn rademacher_trace_of_a_diagonal_is_exact() {
    let d: Vec<f64> = (1..=50).map(f64::from).collect();
    let op = diag_op(&d);
    let cfg = HlProbeConfig {
        distribution: HlProbeDistribution::Rademacher,
        ..config(7, 1, 3)
    };
    let mut tr = 0.0;
    unsafe {
        assert_eq!(hl_estimate_trace(op, &cfg, &mut tr), HlStatus::Ok);
        hl_operator_free(op);
    }
    assert!((tr - 1275.0).abs() < 1e-9 * 1275.0, "{tr}");
}

#[test]
fn slq_density_matches_the_exact_spectrum() {
    let d: Vec<f64> = (1..=100).map(f64::from).collect();
    let op = diag_op(&d);
    let cfg = config(10, 100, 0);
    let (mut est, mut exact) = (ptr::null_mut(), ptr::null_mut());
    let mut js = f64::NAN;
    unsafe {
        assert_eq!(hl_slq_density(op, 0, &cfg, 0.0, &mut est), HlStatus::Ok);
        assert_eq!(
            hl_density_from_eigenvalues(100, d.as_ptr(), 0.0, &mut exact),
            HlStatus::Ok
        );
        assert!((hl_density_sigma(exact) - 0.99).abs() < 1e-12);
        assert_eq!(hl_js_distance(est, exact, &mut js), HlStatus::Ok);
        let mut v = [0.0; 2];
        assert_eq!(
            hl_density_evaluate(exact, [50.0, 1e6].as_ptr(), v.as_mut_ptr(), 2),
            HlStatus::Ok
        );
        assert!(v[0] > 0.0 && v[1] == 0.0);
        hl_density_free(est);
        hl_density_free(exact);
        hl_operator_free(op);
    }
    assert!(js < 0.01, "{js}");
}

#[test]
fn block_densities_and_js0() {
    let mut d: Vec<f64> = (1..=20).map(f64::from).collect();
    d.extend((1..=20).map(|x| 1000.0 * f64::from(x)));
    let op = diag_op(&d);
    let cfg = config(4, 20, 1);
    let mut blocks = [ptr::null_mut(); 2];
    let mut js0 = f64::NAN;
    unsafe {
        assert_eq!(
            hl_slq_density(op, 1, &cfg, 0.0, &mut blocks[0]),
            HlStatus::InvalidArgument
        );
        assert!(last_error().contains("partition"));
        assert_eq!(
            hl_operator_set_partition(op, [20, 21].as_ptr(), 2),
            HlStatus::InvalidArgument
        );
        assert_eq!(hl_operator_set_partition(op, [20, 20].as_ptr(), 2), HlStatus::Ok);
        for (l, slot) in blocks.iter_mut().enumerate() {
            assert_eq!(hl_slq_density(op, l + 1, &cfg, 0.0, slot), HlStatus::Ok);
        }
        assert_eq!(
            hl_slq_density(op, 3, &cfg, 0.0, &mut ptr::null_mut()),
            HlStatus::InvalidArgument
        );
        let handles: Vec<*const HlDensity> = blocks.iter().map(|&b| b as *const _).collect();
        assert_eq!(hl_js0(handles.as_ptr(), 2, &mut js0), HlStatus::Ok);
        assert!((js0 - std::f64::consts::LN_2).abs() < 1e-6, "{js0}");
        let same = [handles[0], handles[0]];
        assert_eq!(hl_js0(same.as_ptr(), 2, &mut js0), HlStatus::Ok);
        assert_eq!(js0, 0.0);
        assert_eq!(hl_js0(same.as_ptr(), 1, &mut js0), HlStatus::InvalidArgument);
        blocks.iter().for_each(|&b| hl_density_free(b));
        hl_operator_free(op);
    }
}

unsafe extern "C" fn tridiag(user: *mut c_void, x: *const f64, y: *mut f64, n: usize) {
    let scale = *(user as *const f64);
    let x = std::slice::from_raw_parts(x, n);
    let y = std::slice::from_raw_parts_mut(y, n);
    for i in 0..n {
        let left = if i > 0 { x[i - 1] } else { 0.0 };
        let right = if i + 1 < n { x[i + 1] } else { 0.0 };
        y[i] = scale * (2.0 * x[i] - left - right);
    }
}

#[test]
fn callback_operator_agrees_with_dense() {
    let n = 30;
    let mut scale = 0.5f64;
    let mut dense = vec![0.0; n * n];
    for i in 0..n {
        dense[i * n + i] = 1.0;
        if i + 1 < n {
            dense[i * n + i + 1] = -0.5;
            dense[(i + 1) * n + i] = -0.5;
        }
    }
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    let cfg = config(3, 30, 9);
    let (mut ta, mut tb) = (0.0, 0.0);
    unsafe {
        let user = &mut scale as *mut f64 as *mut c_void;
        assert_eq!(hl_operator_callback(n, None, user, &mut a), HlStatus::NullPointer);
        assert_eq!(hl_operator_callback(n, Some(tridiag), user, &mut a), HlStatus::Ok);
        assert_eq!(hl_operator_dense(n, dense.as_ptr(), &mut b), HlStatus::Ok);
        assert_eq!(hl_estimate_trace(a, &cfg, &mut ta), HlStatus::Ok);
        assert_eq!(hl_estimate_trace(b, &cfg, &mut tb), HlStatus::Ok);
        hl_operator_free(a);
        hl_operator_free(b);
    }
    assert!((ta - tb).abs() <= 1e-12 * tb.abs(), "{ta} vs {tb}");
}

#[test]
fn gd_on_the_two_by_two_instance() {
    let kappa: f64 = 5000.0;
    let mut p = ptr::null_mut();
    let w0 = [(1.0 / kappa).sqrt(), kappa.sqrt()];
    let mut loss = vec![0.0; 11];
    let mut len = 0;
    unsafe {
        assert_eq!(
            hl_quad_diagonal_blocks(2, [1, 1].as_ptr(), [kappa, 1.0].as_ptr(), &mut p),
            HlStatus::Ok
        );
        assert_eq!(hl_quad_dim(p), 2);
        let mut l0 = 0.0;
        assert_eq!(hl_quad_loss(p, w0.as_ptr(), 2, &mut l0), HlStatus::Ok);
        assert!((l0 - 0.5 * (1.0 + kappa)).abs() < 1e-9);
        assert_eq!(
            hl_quad_run_gd(
                p,
                0.0,
                10,
                w0.as_ptr(),
                2,
                loss.as_mut_ptr(),
                ptr::null_mut(),
                11,
                &mut len
            ),
            HlStatus::Ok
        );
        assert_eq!(
            hl_quad_run_gd(
                p,
                0.0,
                10,
                w0.as_ptr(),
                2,
                loss.as_mut_ptr(),
                ptr::null_mut(),
                10,
                &mut len
            ),
            HlStatus::InvalidArgument
        );
        hl_quad_free(p);
    }
    let rate = ((kappa - 1.0) / (kappa + 1.0)).powi(2);
    for t in 0..10 {
        assert!((loss[t + 1] / loss[t] - rate).abs() < 1e-12);
    }
}

#[test]
fn reference_cases_and_adam() {
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(
            hl_quad_case(9, 0, HlQConstruction::Orthogonal, &mut p),
            HlStatus::InvalidArgument
        );
        assert_eq!(hl_quad_case(3, 0, HlQConstruction::Orthogonal, &mut p), HlStatus::Ok);
        let n = hl_quad_dim(p);
        let mut w0 = vec![0.0; n];
        assert_eq!(hl_quad_gaussian_init(p, 4, w0.as_mut_ptr(), n), HlStatus::Ok);
        assert_eq!(
            hl_quad_gaussian_init(p, 4, w0.as_mut_ptr(), n - 1),
            HlStatus::InvalidArgument
        );
        let mut rel = vec![0.0; 201];
        let mut len = 0;
        assert_eq!(
            hl_quad_run_adam(
                p,
                1e-3,
                1.0,
                200,
                w0.as_ptr(),
                n,
                ptr::null_mut(),
                rel.as_mut_ptr(),
                201,
                &mut len
            ),
            HlStatus::Ok
        );
        assert_eq!(len, 201);
        assert_eq!(rel[0], 1.0);
        assert!(rel[200] < rel[0]);
        assert_eq!(
            hl_quad_run_adam(
                p,
                -1.0,
                1.0,
                5,
                w0.as_ptr(),
                n,
                ptr::null_mut(),
                rel.as_mut_ptr(),
                201,
                &mut len
            ),
            HlStatus::InvalidArgument
        );
        hl_quad_free(p);
    }
}

#[test]
fn header_is_valid_c_and_cxx() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/heterolab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "hl_slq_density",
        "hl_js0",
        "hl_quad_run_adam",
        "HL_STATUS_NUMERICAL",
        "typedef struct HlOperator HlOperator",
    ] {
        assert!(text.contains(name), "{name} missing from the header");
    }
    let dir = tempfile::tempdir().unwrap();
    for (compiler, file) in [("cc", "t.c"), ("c++", "t.cpp")] {
        let src = dir.path().join(file);
        std::fs::write(
            &src,
            format!(
                "#include \"{}\"\nint main(void) {{ return hl_version() == 0; }}\n",
                header.display()
            ),
        )
        .unwrap();
        match Command::new(compiler)
            .arg("-fsyntax-only")
            .arg("-Wall")
            .arg("-Werror")
            .arg(&src)
            .output()
        {
            Ok(out) => assert!(
                out.status.success(),
                "{compiler}: {}",
                String::from_utf8_lossy(&out.stderr)
            ),
            Err(_) => eprintln!("{compiler} not found; skipping"),
        }
    }
}
