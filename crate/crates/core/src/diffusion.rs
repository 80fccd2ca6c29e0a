//! Diffusion maps with Nyström out-of-sample extension.
//!
//! The Gaussian kernel `k(x, y) = exp(-|x - y|^2 / eps)` is row-normalized into
//! the Markov matrix `P = D^-1 K`. Its spectrum is computed through the
//! symmetric conjugate `S = D^-1/2 K D^-1/2`, which shares eigenvalues with
//! `P`; right eigenvectors are recovered as `psi = sqrt(vol) D^-1/2 v`, which
//! makes `psi_0 = 1` and the `psi_k` orthonormal under the stationary
//! distribution `deg / vol`. Each eigenvector is signed so that its
//! largest-magnitude coordinate is positive.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::par;

const KIND: &[u8; 4] = b"DMAP";

/// Largest point count used by [`select_epsilon`].
pub const EPSILON_SUBSAMPLE: usize = 2000;

/// Eigenvalues below this magnitude cannot be used for the Nyström extension.
pub const MIN_EXTENSION_EIGENVALUE: f64 = 1e-10;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::InvalidArgument("points must have at least one coordinate".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(Error::InvalidArgument(format!(
                "point {i} has dimension {}, expected {d}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("point {i} has a non-finite coordinate")));
        }
    }
    Ok(d)
}

/// Kernel scale: median squared pairwise distance over at most
/// [`EPSILON_SUBSAMPLE`] points drawn with `seed`.
pub fn select_epsilon(points: &[Vec<f64>], seed: u64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("need at least two points to select epsilon".into()));
    }
    check_points(points)?;
    let chosen: Vec<&Vec<f64>> = if points.len() > EPSILON_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, points.len(), EPSILON_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &points[i]).collect()
    } else {
        points.iter().collect()
    };
    let mut d2: Vec<f64> = chosen
        .iter()
        .enumerate()
        .flat_map(|(i, a)| chosen[i + 1..].iter().map(move |b| squared_distance(a, b)))
        .collect();
    d2.sort_by(f64::total_cmp);
    let n = d2.len();
    let median = if n % 2 == 1 {
        d2[n / 2]
    } else {
        0.5 * (d2[n / 2 - 1] + d2[n / 2])
    };
    if median <= 0.0 {
        return Err(Error::Numeric(
            "median pairwise distance is zero; points are (mostly) identical".into(),
        ));
    }
    Ok(median)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    /// Training points the kernel is anchored on.
    pub references: Vec<Vec<f64>>,
    pub epsilon: f64,
    /// `lambda_0 ..= lambda_K`, non-increasing in magnitude.
    pub eigenvalues: Vec<f64>,
    /// Right eigenvectors `psi_0 ..= psi_K`, each of length N.
    pub eigenvectors: Vec<Vec<f64>>,
    pub degrees: Vec<f64>,
    pub t: u32,
    pub k: usize,
}

/// Embedded coordinates, one row per point, column `k` holding `lambda_k^t psi_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coordinates: Vec<Vec<f64>>,
    pub t: u32,
    pub k: usize,
}

fn kernel_matrix(points: &[Vec<f64>], epsilon: f64) -> Vec<f64> {
    let n = points.len();
    let mut k = vec![0.0; n * n];
    par::for_each_chunk_mut(&mut k, n, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-squared_distance(&points[i], &points[j]) / epsilon).exp();
        }
    });
    k
}

/// Fits a diffusion map keeping the `k` leading non-trivial eigenpairs.
pub fn fit(points: &[Vec<f64>], k: usize, epsilon: f64, t: u32) -> Result<DiffusionModel> {
    let n = points.len();
    if k == 0 || t == 0 {
        return Err(Error::InvalidArgument("embedding dimension and t must be >= 1".into()));
    }
    if n < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} points cannot support a {k}-dimensional embedding"
        )));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    check_points(points)?;

    let kernel = kernel_matrix(points, epsilon);
    let degrees: Vec<f64> = kernel.chunks(n).map(|r| r.iter().sum()).collect();
    if let Some(i) = degrees.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::Numeric(format!(
            "point {i} has zero kernel degree; increase epsilon"
        )));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| kernel[i * n + j] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = SymmetricEigen::new(s);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
    let volume: f64 = degrees.iter().sum();
    let scale = volume.sqrt();

    let mut eigenvalues = Vec::with_capacity(k + 1);
    let mut eigenvectors = Vec::with_capacity(k + 1);
    for &idx in order.iter().take(k + 1) {
        let v = eig.eigenvectors.column(idx);
        let mut psi: Vec<f64> = (0..n).map(|i| scale * inv_sqrt[i] * v[i]).collect();
        let pivot = psi
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
            .0;
        if psi[pivot] < 0.0 {
            psi.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvalues.push(eig.eigenvalues[idx]);
        eigenvectors.push(psi);
    }

    Ok(DiffusionModel {
        references: points.to_vec(),
        epsilon,
        eigenvalues,
        eigenvectors,
        degrees,
        t,
        k,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    dim: usize,
    k: usize,
    t: u32,
}

impl DiffusionModel {
    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.references.first().map_or(0, Vec::len)
    }

    /// Same model with a different diffusion time.
    pub fn with_t(&self, t: u32) -> Self {
        DiffusionModel { t, ..self.clone() }
    }

    /// In-sample embedding of the reference points.
    pub fn embed(&self) -> Embedding {
        let n = self.len();
        let weights: Vec<f64> = (1..=self.k)
            .map(|j| self.eigenvalues[j].powi(self.t as i32))
            .collect();
        let coordinates = (0..n)
            .map(|i| {
                (1..=self.k)
                    .map(|j| weights[j - 1] * self.eigenvectors[j][i])
                    .collect()
            })
            .collect();
        Embedding {
            coordinates,
            t: self.t,
            k: self.k,
        }
    }

    /// Nyström extension of a new point to embedding coordinates.
    pub fn extend(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "point has dimension {}, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("point has a non-finite coordinate".into()));
        }
        if let Some(j) = (1..=self.k).find(|&j| self.eigenvalues[j].abs() < MIN_EXTENSION_EIGENVALUE) {
            return Err(Error::Numeric(format!(
                "eigenvalue {j} is numerically zero; reduce the embedding dimension"
            )));
        }
        let weights: Vec<f64> = self
            .references
            .iter()
            .map(|y| (-squared_distance(x, y) / self.epsilon).exp())
            .collect();
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Numeric(
                "point has zero kernel mass to every reference; increase epsilon".into(),
            ));
        }
        Ok((1..=self.k)
            .map(|j| {
                let lambda = self.eigenvalues[j];
                let avg: f64 = weights
                    .iter()
                    .zip(&self.eigenvectors[j])
                    .map(|(w, psi)| w * psi)
                    .sum::<f64>()
                    / mass;
                lambda.powi(self.t as i32) * avg / lambda
            })
            .collect())
    }

    /// Extends every point, in order.
    pub fn extend_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        par::map(xs, |x| self.extend(x)).into_iter().collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = Header {
            n: self.len(),
            dim: self.dim(),
            k: self.k,
            t: self.t,
        };
        let arrays = vec![
            vec![self.epsilon],
            self.references.concat(),
            self.degrees.clone(),
            self.eigenvalues.clone(),
            self.eigenvectors.concat(),
        ];
        Container::new(KIND, &header, arrays)?.save(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let corrupt = |reason: &str| Error::CorruptModel {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let c = Container::load(path, KIND)?;
        let h: Header = c.header().map_err(|e| corrupt(&e))?;
        let [eps, refs, degrees, values, vectors]: [Vec<f64>; 5] = c
            .arrays
            .try_into()
            .map_err(|_| corrupt("expected 5 arrays"))?;
        let ok = eps.len() == 1
            && h.dim > 0
            && refs.len() == h.n * h.dim
            && degrees.len() == h.n
            && values.len() == h.k + 1
            && vectors.len() == (h.k + 1) * h.n;
        if !ok {
            return Err(corrupt("array sizes do not match header"));
        }
        Ok(DiffusionModel {
            references: refs.chunks(h.dim).map(<[f64]>::to_vec).collect(),
            epsilon: eps[0],
            eigenvalues: values,
            eigenvectors: vectors.chunks(h.n).map(<[f64]>::to_vec).collect(),
            degrees,
            t: h.t,
            k: h.k,
        })
    }
}

/// Picks a training subset: up to `per_attack` rows of every attack and up to
/// `genuine_count` genuine rows (attack name "None").
///
/// Buckets smaller than requested are taken whole (logged). Returned
/// indices are sorted.
pub fn subsample_training(attacks: &[&str], per_attack: usize, genuine_count: usize, seed: u64) -> Vec<usize> {
    let mut buckets: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, a) in attacks.iter().enumerate() {
        buckets.entry(a).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (name, members) in buckets {
        let want = if name == "None" { genuine_count } else { per_attack };
        if members.len() <= want {
            if members.len() < want {
                log::info!(
                    "bucket {name} has {} rows, fewer than the {want} requested; taking all",
                    members.len()
                );
            }
            chosen.extend(members);
        } else {
            chosen.extend(sample(&mut rng, members.len(), want).into_iter().map(|i| members[i]));
        }
    }
    chosen.sort_unstable();
    chosen
}
