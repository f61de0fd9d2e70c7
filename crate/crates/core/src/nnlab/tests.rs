use ndarray::Array2;
use rand::Rng;

use super::*;
use crate::operator::{BlockPartition, DenseSymmetric, SymmetricOperator};
use crate::quadlab::{run_gd, StepSize};
use crate::seed::{derived_rng, gaussian_vector};

fn random_data(n: usize, dim: usize, n_classes: usize, seed: u64) -> Dataset {
    let mut rng = derived_rng(seed, "test-data", 0);
    let x: Vec<f64> = gaussian_vector(n * dim, seed);
    let labels = (0..n)
        .map(|i| (i + rng.random_range(0..n_classes)) % n_classes)
        .collect();
    Dataset::new(Array2::from_shape_vec((n, dim), x).unwrap(), labels, n_classes, "test").unwrap()
}

fn fd_gradient(model: &dyn Model, data: &Dataset, w: &[f64], h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|j| {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[j] += h;
            wm[j] -= h;
            (model.loss(data, &wp).unwrap() - model.loss(data, &wm).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn assert_grad_close(model: &dyn Model, data: &Dataset, w: &[f64]) {
    let (_, g) = model.loss_grad(data, w).unwrap();
    let fd = fd_gradient(model, data, w, 1e-5);
    for (j, (a, b)) in g.iter().zip(&fd).enumerate() {
        let tol = 1e-6 * a.abs().max(b.abs()) + 1e-9;
        assert!((a - b).abs() <= tol, "coordinate {j}: analytic {a} vs fd {b}");
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    relative_frobenius(a, b)
}

fn mlp(widths: &[usize], act: Activation, scale: f64) -> Mlp {
    Mlp::new(MlpSpec {
        widths: widths.to_vec(),
        activation: act,
        scale,
    })
    .unwrap()
}

#[test]
fn mlp_parameter_count_and_blocks() {
    let m = mlp(&[5, 7, 3], Activation::Tanh, 1.0);
    assert_eq!(m.num_params(), 6 * 7 + 8 * 3);
    assert_eq!(m.partition().sizes(), vec![35, 7, 21, 3]);
    assert_eq!(m.block_labels()[3], "layer2.bias");
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    for act in [Activation::Tanh, Activation::Relu] {
        for trial in 0..5u64 {
            let m = mlp(&[4, 6, 5, 3], act, 1.0 + trial as f64 * 0.5);
            let data = random_data(12, 4, 3, trial);
            let w = m.init_params(trial);
            assert_grad_close(&m, &data, &w);
        }
    }
}

#[test]
fn binary_gradient_matches_finite_differences() {
    for act in [Activation::Tanh, Activation::Relu] {
        for trial in 0..5u64 {
            let m = OneHiddenBinary::new(3, 4, act).unwrap();
            let data = random_data(10, 3, 2, 100 + trial);
            let w = m.init_params(trial);
            assert_grad_close(&m, &data, &w);
        }
    }
}

#[test]
fn zero_weights_give_log_two() {
    let m = OneHiddenBinary::new(3, 4, Activation::Tanh).unwrap();
    let data = random_data(10, 3, 2, 7);
    let w = vec![0.0; m.num_params()];
    assert!((m.loss(&data, &w).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn confident_prediction_saturates() {
    let m = OneHiddenBinary::new(1, 1, Activation::Tanh).unwrap();
    let data = Dataset::new(Array2::from_elem((1, 1), 1.0), vec![1], 2, "one").unwrap();
    // tanh(5) ≈ 1, so f ≈ 20.
    let w = vec![5.0, 20.0];
    let (loss, g) = m.loss_grad(&data, &w).unwrap();
    assert!(loss < 1e-3);
    assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-2);
}

#[test]
fn hvp_zero_direction() {
    let m = mlp(&[3, 4, 2], Activation::Tanh, 1.0);
    let data = random_data(6, 3, 2, 1);
    let w = m.init_params(1);
    let hv = m.hvp(&data, &w, &vec![0.0; m.num_params()]).unwrap();
    assert!(hv.iter().all(|&x| x == 0.0));
}

#[test]
fn hvp_is_bilinear_symmetric() {
    let models: Vec<Box<dyn Model>> = vec![
        Box::new(mlp(&[4, 6, 5, 3], Activation::Tanh, 2.0)),
        Box::new(mlp(&[4, 6, 3], Activation::Relu, 1.0)),
        Box::new(OneHiddenBinary::new(4, 3, Activation::Tanh).unwrap()),
    ];
    for (k, m) in models.iter().enumerate() {
        let n_classes = if k == 2 { 2 } else { 3 };
        let data = random_data(9, 4, n_classes, k as u64);
        let w = m.init_params(k as u64);
        for pair in 0..5u64 {
            let u = gaussian_vector(m.num_params(), 10 + pair);
            let v = gaussian_vector(m.num_params(), 20 + pair);
            let a = dot(&u, &m.hvp(&data, &w, &v).unwrap());
            let b = dot(&v, &m.hvp(&data, &w, &u).unwrap());
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "model {k}: {a} vs {b}");
        }
    }
}

#[test]
fn hvp_matches_gradient_differences() {
    // 7·8 + 8 + 8·4 + 4 = 100 parameters.
    for act in [Activation::Tanh, Activation::Relu] {
        let m = mlp(&[7, 8, 4], act, 1.0);
        assert_eq!(m.num_params(), 100);
        let data = random_data(20, 7, 4, 3);
        let w = m.init_params(3);
        let v = gaussian_vector(100, 4);
        let eps = 1e-4;
        let shift = |s: f64| -> Vec<f64> { w.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
        let (_, gp) = m.loss_grad(&data, &shift(eps)).unwrap();
        let (_, gm) = m.loss_grad(&data, &shift(-eps)).unwrap();
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let hv = m.hvp(&data, &w, &v).unwrap();
        assert!(rel_err(&hv, &fd) < 1e-5, "{act:?}: {}", rel_err(&hv, &fd));
    }
}

#[test]
fn hvp_matches_dense_hessian() {
    let cases: Vec<(Box<dyn Model>, usize, usize)> = vec![
        (Box::new(mlp(&[5, 10, 6, 3], Activation::Tanh, 1.5)), 5, 3),
        (Box::new(OneHiddenBinary::new(6, 5, Activation::Tanh).unwrap()), 6, 2),
    ];
    for (k, (m, dim, nc)) in cases.iter().enumerate() {
        assert!(m.num_params() <= 600);
        let data = random_data(15, *dim, *nc, 50 + k as u64);
        let w = m.init_params(k as u64);
        let h = exact_hessian_small(m.as_ref(), &data, &w).unwrap();
        for t in 0..3u64 {
            let v = gaussian_vector(m.num_params(), 60 + t);
            let hv = m.hvp(&data, &w, &v).unwrap();
            let dense = h.apply(&v).unwrap();
            assert!(rel_err(&hv, &dense) < 1e-8, "model {k}: {}", rel_err(&hv, &dense));
        }
    }
}

#[test]
fn hessian_operator_feeds_lanczos() {
    let m = mlp(&[3, 5, 2], Activation::Tanh, 1.0);
    let data = random_data(8, 3, 2, 9);
    let w = m.init_params(9);
    let op = HessianOperator::new(&m, &data, &w).unwrap();
    let v = gaussian_vector(m.num_params(), 1);
    assert_eq!(op.apply(&v).unwrap(), m.hvp(&data, &w, &v).unwrap());
    assert!(HessianOperator::new(&m, &data, &w[1..]).is_err());
}

#[test]
fn linear_hessian_is_gram() {
    let m = LinearRegression::new(4).unwrap();
    let data = random_data(11, 4, 3, 2);
    let w = m.init_params(2);
    let h = exact_hessian_small(&m, &data, &w).unwrap();
    let g = m.gram(&data).unwrap();
    // Oracle: XᵀX/n summed by hand.
    for a in 0..4 {
        for b in 0..4 {
            let want: f64 = (0..11).map(|i| data.inputs[(i, a)] * data.inputs[(i, b)]).sum::<f64>() / 11.0;
            assert!((g.get(a, b) - want).abs() < 1e-14);
            assert!((h.get(a, b) - want).abs() < 1e-9 * want.abs().max(1.0));
        }
    }
}

#[test]
fn hessian_guard_and_asymmetry_check() {
    let m = mlp(&[40, 50, 2], Activation::Tanh, 1.0);
    assert!(m.num_params() > MAX_EXACT_PARAMS);
    let data = random_data(2, 40, 2, 0);
    assert!(exact_hessian_small(&m, &data, &m.init_params(0)).is_err());
}

#[test]
fn hessian_at_origin_matches_finite_differences() {
    // At w = 0 only the cross terms between neurons and the head survive.
    let m = OneHiddenBinary::new(3, 2, Activation::Tanh).unwrap();
    let data = random_data(8, 3, 2, 4);
    let w = vec![0.0; m.num_params()];
    let h = exact_hessian_small(&m, &data, &w).unwrap();
    for j in 0..m.num_params() {
        let mut e = vec![0.0; m.num_params()];
        e[j] = 1.0;
        let col = m.hvp(&data, &w, &e).unwrap();
        for i in 0..m.num_params() {
            assert!((h.get(i, j) - col[i]).abs() < 1e-8);
        }
    }
}

#[test]
fn cross_neuron_blocks_follow_closed_form() {
    let dim = 4;
    let width = 3;
    let m = OneHiddenBinary::new(dim, width, Activation::Tanh).unwrap();
    let data = random_data(25, dim, 2, 8);
    let w = m.init_params(8);
    let h = exact_hessian_small(&m, &data, &w).unwrap();
    for i in 0..width {
        for j in 0..width {
            if i == j {
                continue;
            }
            let got = off_diagonal_block(&h, i * dim..(i + 1) * dim, j * dim..(j + 1) * dim);
            let want = m.cross_neuron_block(&data, &w, i, j).unwrap();
            assert!(rel_err(&got, want.as_row_major()) < 1e-5);
        }
    }
    assert!(m.cross_neuron_block(&data, &w, 1, 1).is_err());
}

#[test]
fn dominance_examples() {
    let ones = DenseSymmetric::from_row_major(4, vec![1.0; 16]).unwrap();
    let part = BlockPartition::from_sizes(&[2, 2]).unwrap();
    assert!((block_dominance(&ones, &part).unwrap() - 0.5).abs() < 1e-15);
    let diag = DenseSymmetric::from_rows(&[vec![1.0, 2.0, 0.0], vec![2.0, 3.0, 0.0], vec![0.0, 0.0, 4.0]]).unwrap();
    let part = BlockPartition::from_sizes(&[2, 1]).unwrap();
    assert_eq!(block_dominance(&diag, &part).unwrap(), 1.0);
    let zero = DenseSymmetric::from_diagonal(&[0.0, 0.0, 0.0]).unwrap();
    assert_eq!(block_dominance(&zero, &part).unwrap(), 1.0);
    assert!(block_dominance(&ones, &part).is_err());
}

#[test]
fn adam_without_bias_first_step_has_unit_magnitude() {
    let m = mlp(&[3, 4, 2], Activation::Tanh, 1.0);
    let data = random_data(6, 3, 2, 5);
    let w0 = m.init_params(5);
    let (_, g0) = m.loss_grad(&data, &w0).unwrap();
    let mut spec = TrainerSpec::new(OptimizerKind::AdamNoBias, 0.01, 1, 0);
    spec.eps = 0.0;
    let r = train(&m, &data, &w0, &spec).unwrap();
    for ((a, b), g) in r.w.iter().zip(&w0).zip(&g0) {
        if *g != 0.0 {
            assert!(((a - b).abs() - 0.01).abs() < 1e-15);
            assert_eq!((a - b).signum(), -g.signum());
        }
    }
}

#[test]
fn plain_sgd_matches_gradient_descent_on_quadratic_head() {
    let m = LinearRegression::new(5).unwrap();
    let data = random_data(30, 5, 4, 6);
    let w0 = m.init_params(6);
    let eta = 0.05;
    let mut spec = TrainerSpec::new(OptimizerKind::Sgd, eta, 50, 0);
    spec.beta1 = 0.0;
    let r = train(&m, &data, &w0, &spec).unwrap();
    let q = m.as_quadratic(&data).unwrap();
    let traj = run_gd(&q, StepSize::Fixed(eta), 50, &w0).unwrap();
    assert!(rel_err(&r.w, &traj.final_iterate) < 1e-12);
    // The losses differ by the constant Σy²/(2n).
    let offset = r.step_losses[0] - traj.records[0].loss;
    for (a, rec) in r.step_losses.iter().zip(&traj.records) {
        assert!((a - rec.loss - offset).abs() < 1e-10 * offset.abs().max(1.0));
    }
}

#[test]
fn sgd_momentum_accumulates_without_dampening() {
    // L(w) = ½w² on one sample with x = 1, y = 0: g = w.
    let m = LinearRegression::new(1).unwrap();
    let data = Dataset::new(Array2::from_elem((1, 1), 1.0), vec![0], 1, "one").unwrap();
    let mut spec = TrainerSpec::new(OptimizerKind::Sgd, 0.1, 2, 0);
    spec.beta1 = 0.5;
    let r = train(&m, &data, &[1.0], &spec).unwrap();
    // m¹ = 1, w¹ = 0.9; m² = 0.5 + 0.9 = 1.4, w² = 0.9 − 0.14.
    assert!((r.w[0] - 0.76).abs() < 1e-15);
}

#[test]
fn adamw_decays_then_steps() {
    let m = LinearRegression::new(1).unwrap();
    let data = Dataset::new(Array2::from_elem((1, 1), 1.0), vec![0], 1, "one").unwrap();
    let mut spec = TrainerSpec::new(OptimizerKind::AdamW, 0.1, 1, 0);
    spec.weight_decay = 0.5;
    spec.eps = 0.0;
    let r = train(&m, &data, &[2.0], &spec).unwrap();
    // Bias-corrected first step moves by η·sign(g) after the decay 2 → 1.9.
    assert!((r.w[0] - 1.8).abs() < 1e-15);
}

#[test]
fn training_is_deterministic_and_checks_batches() {
    let m = mlp(&[3, 6, 3], Activation::Relu, 1.0);
    let data = random_data(40, 3, 3, 11);
    let w0 = m.init_params(1);
    let spec = TrainerSpec::new(OptimizerKind::AdamW, 1e-2, 30, 4).with_batch_size(8);
    let a = train(&m, &data, &w0, &spec).unwrap();
    let b = train(&m, &data, &w0, &spec).unwrap();
    assert_eq!(a, b);
    let other = TrainerSpec {
        seed: 5,
        ..spec.clone()
    };
    assert_ne!(train(&m, &data, &w0, &other).unwrap().step_losses, a.step_losses);
    assert!(train(&m, &data, &w0, &spec.clone().with_batch_size(41)).is_err());
    assert!(train(&m, &data, &w0, &spec.with_batch_size(0)).is_err());
}

#[test]
fn divergent_training_reports_the_step() {
    let m = LinearRegression::new(2).unwrap();
    let data = random_data(10, 2, 3, 12);
    let mut spec = TrainerSpec::new(OptimizerKind::Sgd, 1e6, 500, 0);
    spec.beta1 = 0.0;
    let err = train(&m, &data, &[1.0, 1.0], &spec).unwrap_err();
    assert!(err.is_numerical());
    assert!(err.to_string().contains("step"));
}

#[test]
fn cluster_data_trains_to_full_accuracy() {
    let data = generate_cluster_data(50, 2, 8, 0).unwrap();
    let m = OneHiddenBinary::new(8, 4, Activation::Tanh).unwrap();
    let spec = TrainerSpec::new(OptimizerKind::AdamW, 1e-2, 200, 0);
    let r = train(&m, &data, &m.init_params(0), &spec).unwrap();
    assert_eq!(r.final_eval().accuracy, 1.0);
}

#[test]
fn experiment_rejects_empty_grids() {
    let (tr, te) = generate_cluster_split(5, 2, 3, 4, 0).unwrap();
    let cfg = ScalingConfig {
        lr_grid: vec![],
        ..ScalingConfig::default()
    };
    assert!(heterogeneity_experiment(&cfg, &tr, &te).is_err());
    let cfg = ScalingConfig {
        c_values: vec![],
        ..ScalingConfig::default()
    };
    assert!(heterogeneity_experiment(&cfg, &tr, &te).is_err());
}

#[test]
fn small_experiment_produces_a_row_per_scale() {
    let (tr, te) = generate_cluster_split(10, 5, 3, 6, 0).unwrap();
    let cfg = ScalingConfig {
        c_values: vec![1.0, 4.0],
        lr_grid: vec![1e-2, 1e-1],
        hidden: vec![8, 6],
        batch_size: 8,
        steps: 20,
        hessian_samples: 16,
        slq_probes: 2,
        slq_steps: 8,
        ..ScalingConfig::default()
    };
    let t = heterogeneity_experiment(&cfg, &tr, &te).unwrap();
    assert_eq!(t.rows.len(), 2);
    assert_eq!(t.rows[0].cells.len(), 4);
    assert!(t
        .rows
        .iter()
        .all(|r| (0.0..=std::f64::consts::LN_2.sqrt()).contains(&r.js0)));
    assert_eq!(t.to_csv().lines().count(), 3);
    assert_eq!(heterogeneity_experiment(&cfg, &tr, &te).unwrap(), t);
}
