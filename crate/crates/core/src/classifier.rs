//! Binary logistic regression trained by full-batch gradient descent.
//!
//! Objective: weighted mean binary cross-entropy plus `l2 / 2 * |w|^2` (the
//! bias is not penalized). Steps use Armijo backtracking, starting from zero
//! weights unless an initial point is given.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io::Label;
use crate::container::Container;
use crate::error::{Error, Result};

const KIND: &[u8; 4] = b"LOGR";

/// Loss is recorded every this many iterations.
const CHECKPOINT_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub l2: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Weight samples by inverse class frequency.
    pub balance_classes: bool,
    /// Starting point `(weights, bias)`; zeros when absent.
    #[serde(skip)]
    pub initial: Option<(Vec<f64>, f64)>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            l2: 1e-4,
            max_iterations: 5000,
            gradient_tolerance: 1e-8,
            balance_classes: true,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub final_loss: f64,
    pub l2: f64,
    /// Loss at iteration 0, every `CHECKPOINT_EVERY` iterations and at the end.
    pub loss_checkpoints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainingMeta,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Training data with per-sample weights.
pub struct Problem<'a> {
    pub x: &'a [Vec<f64>],
    pub y: Vec<f64>,
    pub sample_weights: Vec<f64>,
    pub l2: f64,
}

impl<'a> Problem<'a> {
    pub fn new(x: &'a [Vec<f64>], labels: &[Label], balance: bool, l2: f64) -> Result<Self> {
        if x.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} rows but {} labels",
                x.len(),
                labels.len()
            )));
        }
        let dim = x.first().map_or(0, Vec::len);
        if x.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("rows have different dimensions".into()));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite training feature".into()));
        }
        let n = x.len();
        let spoofed = labels.iter().filter(|&&l| l == Label::Spoofed).count();
        let genuine = n - spoofed;
        if n < 2 || spoofed == 0 || genuine == 0 {
            return Err(Error::Data(
                "logistic regression needs both classes in the training data".into(),
            ));
        }
        let sample_weights = labels
            .iter()
            .map(|&l| {
                if !balance {
                    1.0
                } else if l == Label::Spoofed {
                    n as f64 / (2.0 * spoofed as f64)
                } else {
                    n as f64 / (2.0 * genuine as f64)
                }
            })
            .collect();
        Ok(Problem {
            x,
            y: labels.iter().map(|l| l.target()).collect(),
            sample_weights,
            l2,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn loss(&self, w: &[f64], b: f64) -> f64 {
        let n = self.x.len() as f64;
        let data: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .zip(&self.sample_weights)
            .map(|((xi, &yi), &si)| {
                let z = dot(w, xi) + b;
                si * (softplus(z) - yi * z)
            })
            .sum();
        data / n + 0.5 * self.l2 * dot(w, w)
    }

    /// Loss with its gradient with respect to `(w, b)`.
    pub fn loss_and_gradient(&self, w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
        let n = self.x.len() as f64;
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        let mut data = 0.0;
        for ((xi, &yi), &si) in self.x.iter().zip(&self.y).zip(&self.sample_weights) {
            let z = dot(w, xi) + b;
            data += si * (softplus(z) - yi * z);
            let r = si * (sigmoid(z) - yi);
            for (g, x) in gw.iter_mut().zip(xi) {
                *g += r * x;
            }
            gb += r;
        }
        for (g, wj) in gw.iter_mut().zip(w) {
            *g = *g / n + self.l2 * wj;
        }
        (data / n + 0.5 * self.l2 * dot(w, w), gw, gb / n)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits a logistic model; labels genuine = 0, spoofed = 1.
pub fn train(x: &[Vec<f64>], labels: &[Label], opts: &TrainOptions) -> Result<LogisticModel> {
    let problem = Problem::new(x, labels, opts.balance_classes, opts.l2)?;
    let dim = problem.dim();
    let (mut w, mut b) = match &opts.initial {
        Some((w0, b0)) if w0.len() == dim => (w0.clone(), *b0),
        Some(_) => {
            return Err(Error::InvalidArgument("initial weights have the wrong dimension".into()))
        }
        None => (vec![0.0; dim], 0.0),
    };

    let (mut loss, mut gw, mut gb) = problem.loss_and_gradient(&w, b);
    let mut checkpoints = vec![loss];
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let g2 = dot(&gw, &gw) + gb * gb;
        if g2.sqrt() < opts.gradient_tolerance {
            break;
        }
        // Armijo backtracking; try a larger step first after each success.
        step *= 2.0;
        let accepted = loop {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(wj, g)| wj - step * g).collect();
            let b_new = b - step * gb;
            let l_new = problem.loss(&w_new, b_new);
            if l_new <= loss - 1e-4 * step * g2 {
                break Some((w_new, b_new));
            }
            step *= 0.5;
            if step < 1e-30 {
                break None;
            }
        };
        let Some((w_new, b_new)) = accepted else {
            break;
        };
        w = w_new;
        b = b_new;
        (loss, gw, gb) = problem.loss_and_gradient(&w, b);
        iterations += 1;
        if iterations % CHECKPOINT_EVERY == 0 {
            checkpoints.push(loss);
        }
    }
    if iterations % CHECKPOINT_EVERY != 0 {
        checkpoints.push(loss);
    }
    if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logistic regression diverged".into()));
    }
    Ok(LogisticModel {
        weights: w,
        bias: b,
        meta: TrainingMeta {
            iterations,
            final_loss: loss,
            l2: opts.l2,
            loss_checkpoints: checkpoints,
        },
    })
}

impl LogisticModel {
    /// Affine score `w . x + b`.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::InvalidArgument(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// Spoof probability `sigmoid(w . x + b)`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.decision(x).map(sigmoid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let arrays = vec![
            self.weights.clone(),
            vec![self.bias, self.meta.final_loss, self.meta.l2],
            self.meta.loss_checkpoints.clone(),
        ];
        Container::new(KIND, &self.meta.iterations, arrays)?.save(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let corrupt = |reason: String| Error::CorruptModel {
            path: path.to_path_buf(),
            reason,
        };
        let c = Container::load(path, KIND)?;
        let iterations: usize = c.header().map_err(corrupt)?;
        let [weights, scalars, loss_checkpoints]: [Vec<f64>; 3] =
            c.arrays.try_into().map_err(|_| corrupt("expected 3 arrays".into()))?;
        let [bias, final_loss, l2] = scalars[..] else {
            return Err(corrupt("expected 3 scalars".into()));
        };
        Ok(LogisticModel {
            weights,
            bias,
            meta: TrainingMeta {
                iterations,
                final_loss,
                l2,
                loss_checkpoints,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable() -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..50 {
            x.push(vec![-1.0]);
            y.push(Label::Genuine);
            x.push(vec![1.0]);
            y.push(Label::Spoofed);
        }
        (x, y)
    }

    #[test]
    fn separable_data_is_classified() {
        let (x, y) = separable();
        let m = train(&x, &y, &TrainOptions::default()).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let s = m.score(xi).unwrap();
            assert_eq!(s >= 0.5, *yi == Label::Spoofed);
        }
        assert!(m.meta.final_loss <= std::f64::consts::LN_2);
        assert!(m.meta.loss_checkpoints.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn symmetric_data_has_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..40 {
            let v = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let label = if v[0] + 0.3 * v[1] + rng.gen_range(-0.5..0.5) > 0.0 {
                (Label::Spoofed, Label::Genuine)
            } else {
                (Label::Genuine, Label::Spoofed)
            };
            x.push(v.clone());
            y.push(label.0);
            x.push(v.iter().map(|a| -a).collect());
            y.push(label.1);
        }
        let m = train(&x, &y, &TrainOptions::default()).unwrap();
        assert!(m.bias.abs() < 1e-6, "bias {}", m.bias);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(train(&x, &[Label::Genuine, Label::Genuine], &TrainOptions::default()).is_err());
        assert!(train(&x, &[Label::Genuine], &TrainOptions::default()).is_err());
    }

    #[test]
    fn score_identities() {
        let meta = TrainingMeta {
            iterations: 0,
            final_loss: 0.0,
            l2: 0.0,
            loss_checkpoints: vec![],
        };
        let zero = LogisticModel {
            weights: vec![0.0, 0.0],
            bias: 0.0,
            meta: meta.clone(),
        };
        assert_eq!(zero.score(&[3.0, -7.0]).unwrap(), 0.5);
        let sat = LogisticModel {
            weights: vec![0.0],
            bias: 50.0,
            meta: meta.clone(),
        };
        assert!(sat.score(&[0.0]).unwrap() > 1.0 - 1e-10);
        let m = LogisticModel {
            weights: vec![0.7, -1.3],
            bias: 0.0,
            meta,
        };
        let x = [0.4, 0.9];
        let s = m.score(&x).unwrap() + m.score(&[-0.4, -0.9]).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(m.score(&[1.0]).is_err());
    }

    #[test]
    fn save_load() {
        let (x, y) = separable();
        let m = train(&x, &y, &TrainOptions { max_iterations: 30, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lr.bin");
        m.save(&p).unwrap();
        assert_eq!(LogisticModel::load(&p).unwrap(), m);
    }
}
