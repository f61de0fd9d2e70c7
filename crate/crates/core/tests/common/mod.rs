#![allow(dead_code)]

use heterolab::operator::DenseSymmetric;
use heterolab::seed::rng_from_seed;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_symmetric(n: usize, seed: u64) -> DenseSymmetric {
    let mut rng = rng_from_seed(seed);
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let x: f64 = rng.random_range(-1.0..1.0);
            data[i * n + j] = x;
            data[j * n + i] = x;
        }
    }
    DenseSymmetric::from_row_major(n, data).unwrap()
}

/// `Q diag(eigs) Qᵀ` with a seeded Haar-like orthogonal `Q`.
pub fn with_spectrum(eigs: &[f64], seed: u64) -> DenseSymmetric {
    let n = eigs.len();
    let mut rng = rng_from_seed(seed);
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let h = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eigs)) * q.transpose();
    let sym = (&h + h.transpose()) * 0.5;
    DenseSymmetric::from_row_major(n, sym.transpose().as_slice().to_vec()).unwrap()
}

pub fn random_spd(n: usize, seed: u64, lo: f64, hi: f64) -> DenseSymmetric {
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let eigs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    with_spectrum(&eigs, seed)
}

pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    heterolab::seed::gaussian_vector(n, seed)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub const BENCHMARK_SEED: u64 = 7;

/// Dense 100 × 100 benchmark with eigenvalues 1, 2, …, 100.
pub fn benchmark_100() -> (DenseSymmetric, Vec<f64>) {
    let eigs: Vec<f64> = (1..=100).map(f64::from).collect();
    (with_spectrum(&eigs, BENCHMARK_SEED), eigs)
}
