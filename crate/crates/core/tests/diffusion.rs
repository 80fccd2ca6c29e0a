mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spoofpmf::diffusion::{fit, select_epsilon, DiffusionModel};

fn pi_inner(model: &DiffusionModel, a: &[f64], b: &[f64]) -> f64 {
    let vol: f64 = model.degrees.iter().sum();
    a.iter().zip(b).zip(&model.degrees).map(|((x, y), d)| x * y * d / vol).sum()
}

#[test]
fn eigenvectors_are_pi_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let points = random_points(&mut rng, 80, 4);
    let eps = select_epsilon(&points, 0).unwrap();
    let model = fit(&points, 10, eps, 1).unwrap();
    for (i, a) in model.eigenvectors.iter().enumerate() {
        for (j, b) in model.eigenvectors.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((pi_inner(&model, a, b) - want).abs() < 1e-9, "({i}, {j})");
        }
    }
}

#[test]
fn largest_coordinate_is_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let points = random_points(&mut rng, 50, 3);
    let model = fit(&points, 6, 2.0, 1).unwrap();
    for psi in &model.eigenvectors {
        let pivot = psi.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(pivot > 0.0);
    }
}

#[test]
fn two_step_distances_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let points = blobs(&mut rng, &[vec![0.0, 0.0], vec![3.0, 1.0], vec![-2.0, 4.0]], 20, 0.7);
    let n = points.len();
    let eps = select_epsilon(&points, 3).unwrap();
    let emb = fit(&points, n - 1, eps, 2).unwrap().embed();
    let oracle = diffusion_distances(&points, eps, 2);
    for i in 0..n {
        for j in 0..i {
            let d2: f64 = emb.coordinates[i]
                .iter()
                .zip(&emb.coordinates[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            assert!((d2 - oracle[(i, j)]).abs() <= 1e-8 * oracle[(i, j)]);
        }
    }
}

#[test]
fn saved_model_extends_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let points = random_points(&mut rng, 120, 6);
    let model = fit(&points, 4, select_epsilon(&points, 1).unwrap(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dm.bin");
    model.save(&path).unwrap();
    let back = DiffusionModel::load(&path).unwrap();
    let probes = random_points(&mut rng, 20, 6);
    assert_eq!(model.extend_batch(&probes).unwrap(), back.extend_batch(&probes).unwrap());
}

#[test]
fn truncated_file_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let points = random_points(&mut rng, 10, 2);
    let model = fit(&points, 2, 1.0, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dm.bin");
    model.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(DiffusionModel::load(&path), Err(spoofpmf::Error::CorruptModel { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spectrum_is_bounded(seed in 0u64..10_000, n in 5usize..60, dim in 1usize..6, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = random_points(&mut rng, n, dim);
        let eps = select_epsilon(&points, seed).unwrap();
        let model = fit(&points, k, eps, 1).unwrap();
        prop_assert!((model.eigenvalues[0] - 1.0).abs() < 1e-9);
        for w in model.eigenvalues.windows(2) {
            prop_assert!(w[1].abs() <= w[0].abs() + 1e-12);
        }
        prop_assert!(model.eigenvalues.iter().all(|l| l.abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn in_sample_extension_is_consistent(seed in 0u64..10_000, n in 10usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = random_points(&mut rng, n, 3);
        let eps = select_epsilon(&points, seed).unwrap();
        let model = fit(&points, 3, eps, 1).unwrap();
        let emb = model.embed();
        for (p, e) in points.iter().zip(&emb.coordinates) {
            let x = model.extend(p).unwrap();
            let diff: Vec<f64> = x.iter().zip(e).map(|(a, b)| a - b).collect();
            prop_assert!(norm(&diff) <= 1e-6 * norm(e).max(1e-12));
        }
    }
}
