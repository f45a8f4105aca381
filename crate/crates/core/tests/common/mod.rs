//! Naive reference implementations used as oracles. They work on plain
//! nested vectors and share no code with the library's statistics.

#![allow(dead_code)]

use kcm::harness::{gen_reg, Noise};
use kcm::models::Dataset;
use kcm::rng::stream;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-sq / (2.0 * sigma * sigma)).exp()
}

/// `H_ij = ψ_iᵀψ_j k(x_i, x_j)` by direct indexing.
pub fn naive_h(
    psi: &[Vec<f64>],
    x: &[Vec<f64>],
    k: impl Fn(&[f64], &[f64]) -> f64,
) -> Vec<Vec<f64>> {
    let n = psi.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| dot(&psi[i], &psi[j]) * k(&x[i], &x[j]))
                .collect()
        })
        .collect()
}

pub fn naive_u(h: &[Vec<f64>]) -> f64 {
    let n = h.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += h[i][j];
            }
        }
    }
    s / (n as f64 * (n as f64 - 1.0))
}

pub fn naive_icm(psi: &[Vec<f64>], x: &[Vec<f64>]) -> f64 {
    let n = psi.len();
    let q = psi[0].len();
    let mut t = 0.0;
    for k in 0..n {
        let mut r = vec![0.0; q];
        for i in 0..n {
            let le = x[i].iter().zip(&x[k]).all(|(a, b)| a <= b);
            if le {
                for c in 0..q {
                    r[c] += psi[i][c] / n as f64;
                }
            }
        }
        t += dot(&r, &r);
    }
    t
}

pub fn naive_smooth(psi: &[Vec<f64>], x: &[Vec<f64>], h: f64) -> f64 {
    let n = psi.len();
    let d = x[0].len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let u2: f64 = x[i]
                .iter()
                .zip(&x[j])
                .map(|(a, b)| ((a - b) / h).powi(2))
                .sum();
            let kern = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0) * (-u2 / 2.0).exp();
            s += dot(&psi[i], &psi[j]) * kern;
        }
    }
    s / (n as f64 * (n as f64 - 1.0) * h.powi(d as i32))
}

/// Random dataset with columns `(y, x1..xd)`, conditioning on the x's.
pub fn random_reg(n: usize, d: usize, seed: u64) -> Dataset {
    gen_reg(n, d, Noise::Homoskedastic, &mut stream(seed, 0)).unwrap()
}

pub fn random_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, 1);
    DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_vec(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}
