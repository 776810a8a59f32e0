#![allow(dead_code)]

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let a = gaussian(n, n, rng);
    (&a + &a.t()) * 0.5
}

pub fn inf_norm(m: &Array2<f64>) -> f64 {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Independent reference eigensolver.
pub fn reference_eigen(m: &Array2<f64>) -> (Vec<f64>, nalgebra::DMatrix<f64>) {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = nalgebra::DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Planted two-block batch with non-negative features: block A lives on the
/// first half of the coordinates, block B on the second half, plus small
/// non-negative noise everywhere. Returns the batch and block membership.
pub fn two_block_batch(n: usize, d: usize, noise: f64, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<bool>) {
    let half = d / 2;
    let jitter = gaussian(n, d, rng).mapv(|v| noise * v.abs());
    let mut x = Array2::zeros((n, d));
    let mut in_first = Vec::with_capacity(n);
    for i in 0..n {
        let first = i % 2 == 0;
        for j in 0..d {
            let on_support = if first { j < half } else { j >= half };
            x[[i, j]] = if on_support { 1.0 } else { 0.0 } + jitter[[i, j]];
        }
        in_first.push(first);
    }
    (x, in_first)
}

/// Smallest within-block and largest cross-block cosine similarity.
pub fn block_similarity_bounds(s: &Array2<f64>, in_first: &[bool]) -> (f64, f64) {
    let mut within = f64::INFINITY;
    let mut cross = f64::NEG_INFINITY;
    for i in 0..in_first.len() {
        for j in 0..in_first.len() {
            if i == j {
                continue;
            }
            if in_first[i] == in_first[j] {
                within = within.min(s[[i, j]]);
            } else {
                cross = cross.max(s[[i, j]]);
            }
        }
    }
    (within, cross)
}
