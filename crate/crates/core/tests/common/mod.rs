//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spoofpmf::audio_io::Label;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian blobs in `dim` dimensions, `per` points around each centre.
pub fn blobs(rng: &mut ChaCha8Rng, centres: &[Vec<f64>], per: usize, spread: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for c in centres {
        for _ in 0..per {
            out.push(c.iter().map(|m| m + spread * normal(rng)).collect());
        }
    }
    out
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| normal(rng)).collect()).collect()
}

/// FPR and FNR at `theta`, counted from sorted per-class score lists.
fn rates(genuine: &[f64], spoofed: &[f64], theta: f64) -> (f64, f64) {
    let genuine_below = genuine.partition_point(|&s| s < theta);
    let spoofed_below = spoofed.partition_point(|&s| s < theta);
    (
        (genuine.len() - genuine_below) as f64 / genuine.len() as f64,
        spoofed_below as f64 / spoofed.len() as f64,
    )
}

/// EER by evaluating the error rates below the lowest score, at every
/// midpoint between consecutive distinct scores and above the highest score,
/// then interpolating linearly across the first sign change of `FPR - FNR`.
pub fn brute_force_eer(scores: &[f64], labels: &[Label]) -> f64 {
    let mut genuine: Vec<f64> = Vec::new();
    let mut spoofed: Vec<f64> = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        match l {
            Label::Genuine => genuine.push(s),
            Label::Spoofed => spoofed.push(s),
        }
    }
    genuine.sort_by(f64::total_cmp);
    spoofed.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut thetas = vec![f64::NEG_INFINITY];
    thetas.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thetas.push(f64::INFINITY);
    let curve: Vec<(f64, f64)> = thetas.iter().map(|&t| rates(&genuine, &spoofed, t)).collect();
    for i in 0..curve.len() {
        let (fpr, fnr) = curve[i];
        if fpr - fnr <= 0.0 {
            if i == 0 || fpr == fnr {
                return fpr;
            }
            let (pa, na) = curve[i - 1];
            let (da, db) = (pa - na, fpr - fnr);
            return pa + da / (da - db) * (fpr - pa);
        }
    }
    unreachable!("the last point always has FPR = 0, FNR = 1")
}

/// Random scored trial set with both classes present.
pub fn random_trials(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> (Vec<f64>, Vec<Label>) {
    loop {
        let labels: Vec<Label> = (0..n)
            .map(|_| if rng.gen_bool(0.5) { Label::Spoofed } else { Label::Genuine })
            .collect();
        if labels.contains(&Label::Genuine) && labels.contains(&Label::Spoofed) {
            let scores = labels
                .iter()
                .map(|l| {
                    let shift = if *l == Label::Spoofed { 0.7 } else { 0.0 };
                    let s: f64 = shift + normal(rng);
                    if ties {
                        (s * 4.0).round() / 4.0
                    } else {
                        s
                    }
                })
                .collect();
            return (scores, labels);
        }
    }
}

/// Row-stochastic kernel matrix and degrees, computed directly.
pub fn markov_matrix(points: &[Vec<f64>], epsilon: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = points.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum();
        (-d2 / epsilon).exp()
    });
    let deg: Vec<f64> = (0..n).map(|i| k.row(i).sum()).collect();
    let p = DMatrix::from_fn(n, n, |i, j| k[(i, j)] / deg[i]);
    (p, deg)
}

/// Squared diffusion distance between every pair from t-step transition rows.
pub fn diffusion_distances(points: &[Vec<f64>], epsilon: f64, t: u32) -> DMatrix<f64> {
    let n = points.len();
    let (p, deg) = markov_matrix(points, epsilon);
    let vol: f64 = deg.iter().sum();
    let mut pt = DMatrix::identity(n, n);
    for _ in 0..t {
        pt = &pt * &p;
    }
    DMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|y| (pt[(i, y)] - pt[(j, y)]).powi(2) / (deg[y] / vol))
            .sum()
    })
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unnormalized random probability vector with some exact zeros.
pub fn random_pmf(rng: &mut ChaCha8Rng, bins: usize, zero_fraction: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..bins)
        .map(|_| if rng.gen_bool(zero_fraction) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}
