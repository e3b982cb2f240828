//! Small random molecules with closed-form targets for smoke tests.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::{evaluate, make_examples, train, LossKind, TrainConfig, TrainOutcome};
use crate::chem_io::{Label, Structure};
use crate::geometry::distance;
use crate::model::{ModelConfig, PamNet};
use crate::Result;

/// Molecules in the overfit smoke set.
pub const SMOKE_MOLECULES: usize = 16;
/// Largest smoke molecule.
pub const SMOKE_MAX_ATOMS: usize = 6;
/// Optimizer steps allowed in the smoke run.
pub const SMOKE_STEPS: usize = 2000;

/// `Σ 1/d_ij` over unordered atom pairs with `d_ij ≤ cutoff`.
pub fn inverse_distance_sum(s: &Structure, cutoff: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let d = distance(s.positions[i], s.positions[j]);
            if d <= cutoff {
                total += 1.0 / d;
            }
        }
    }
    total
}

/// `n` molecules of 2 to `max_atoms` H/C/N/O atoms packed in a 3 Å cube,
/// atoms at least 0.9 Å apart, labelled with [`inverse_distance_sum`].
pub fn smoke_molecules(n: usize, max_atoms: usize, cutoff: f64, seed: u64) -> Result<Vec<Structure>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let n_atoms = rng.gen_range(2..=max_atoms.max(2));
            let mut pos: Vec<[f64; 3]> = Vec::with_capacity(n_atoms);
            while pos.len() < n_atoms {
                let p = [0, 1, 2].map(|_| rng.gen_range(0.0..3.0));
                if pos.iter().all(|q| distance(*q, p) >= 0.9) {
                    pos.push(p);
                }
            }
            let z: Vec<u8> = (0..n_atoms).map(|_| [1, 6, 7, 8][rng.gen_range(0..4)]).collect();
            let s = Structure::from_parts(format!("smoke{k}"), &z, pos)?;
            let y = inverse_distance_sum(&s, cutoff);
            Ok(s.with_label(Label::Scalar(y)))
        })
        .collect()
}

/// `n` unlabelled H/C/N/O molecules with `min_atoms..=max_atoms` atoms at
/// roughly liquid density, atoms at least 0.9 Å apart.
pub fn random_molecules(n: usize, min_atoms: usize, max_atoms: usize, seed: u64) -> Result<Vec<Structure>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let n_atoms = rng.gen_range(min_atoms.max(1)..=max_atoms.max(min_atoms.max(1)));
            let side = 1.6 * (n_atoms as f64).cbrt() + 1.0;
            let mut pos: Vec<[f64; 3]> = Vec::with_capacity(n_atoms);
            while pos.len() < n_atoms {
                let p = [0, 1, 2].map(|_| rng.gen_range(0.0..side));
                if pos.iter().all(|q| distance(*q, p) >= 0.9) {
                    pos.push(p);
                }
            }
            let z: Vec<u8> = (0..n_atoms).map(|_| [1, 6, 7, 8][rng.gen_range(0..4)]).collect();
            Structure::from_parts(format!("mol{k}"), &z, pos)
        })
        .collect()
}

/// Reduced model used for the overfit smoke run.
pub fn smoke_model_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 32,
        n_layers: 3,
        n_radial_global: 8,
        n_radial_local: 8,
        n_spherical: 4,
        n_radial_angular: 4,
        ..ModelConfig::default()
    }
}

/// Full-batch schedule for the smoke run: one step per epoch.
pub fn smoke_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: SMOKE_MOLECULES,
        initial_lr: 2e-3,
        warmup_epochs: 100.0,
        decay_ratio: 0.3,
        decay_period_epochs: 300.0,
        max_epochs: SMOKE_STEPS,
        max_steps: Some(SMOKE_STEPS as u64),
        loss: LossKind::SmoothL1,
        ema_decay: 0.99,
        early_stop_patience: SMOKE_STEPS,
        eval_every: 50,
        seed,
        ..TrainConfig::default()
    }
}

/// Result of one smoke run.
#[derive(Debug)]
pub struct SmokeRun {
    /// Train MAE of the returned (best EMA) parameters.
    pub train_mae: f64,
    pub elapsed_secs: f64,
    pub outcome: TrainOutcome,
}

/// Trains `model_cfg` on the smoke set, which doubles as the validation set.
pub fn run_smoke(model_cfg: ModelConfig, train_cfg: &TrainConfig, seed: u64) -> Result<SmokeRun> {
    let start = Instant::now();
    let mols = smoke_molecules(SMOKE_MOLECULES, SMOKE_MAX_ATOMS, model_cfg.graph.d_global, seed)?;
    let (model, store) = PamNet::new(model_cfg, seed)?;
    let examples = make_examples(&model, &mols)?;
    let outcome = train(&model, store, &examples, &examples, train_cfg)?;
    let train_mae = evaluate(&model, &outcome.best, &examples, &outcome.stats)?.overall.mae;
    Ok(SmokeRun { train_mae, elapsed_secs: start.elapsed().as_secs_f64(), outcome })
}

/// First window index whose mean exceeds the previous window's, after
/// dropping `skip` leading values and grouping the rest into full windows.
pub fn first_window_increase(values: &[f64], skip: usize, window: usize) -> Option<usize> {
    let means: Vec<f64> = values
        .get(skip..)
        .unwrap_or_default()
        .chunks_exact(window.max(1))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    means.windows(2).position(|w| w[1] > w[0]).map(|k| k + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_distance_sum_by_hand() {
        let s = Structure::from_parts("t", &[1, 1, 1], vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 4.0, 0.0]]).unwrap();
        // pairs: 1.0, 4.0, √17
        assert!((inverse_distance_sum(&s, 5.0) - (1.0 + 0.25 + 1.0 / 17f64.sqrt())).abs() < 1e-15);
        assert!((inverse_distance_sum(&s, 4.0) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn smoke_set_is_deterministic_and_small() {
        let a = smoke_molecules(16, 6, 5.0, 1).unwrap();
        assert_eq!(a, smoke_molecules(16, 6, 5.0, 1).unwrap());
        assert!(a.iter().all(|s| (2..=6).contains(&s.len())));
    }

    #[test]
    fn random_molecules_respect_bounds() {
        let mols = random_molecules(50, 3, 20, 2).unwrap();
        assert_eq!(mols, random_molecules(50, 3, 20, 2).unwrap());
        for m in &mols {
            assert!((3..=20).contains(&m.len()));
            for i in 0..m.len() {
                for j in i + 1..m.len() {
                    assert!(distance(m.positions[i], m.positions[j]) >= 0.9);
                }
            }
        }
    }

    #[test]
    fn window_increase() {
        assert_eq!(first_window_increase(&[9.0, 4.0, 3.0, 2.0, 1.0], 1, 2), None);
        assert_eq!(first_window_increase(&[1.0, 1.0, 2.0, 2.0, 5.0], 0, 2), Some(1));
        // trailing partial window ignored
        assert_eq!(first_window_increase(&[2.0, 1.0, 9.0], 0, 1), Some(2));
        assert_eq!(first_window_increase(&[2.0, 1.0, 9.0], 0, 2), None);
        assert_eq!(first_window_increase(&[], 5, 2), None);
    }

    #[test]
    fn smoke_configs_validate() {
        smoke_model_config().validate().unwrap();
        smoke_train_config(0).validate().unwrap();
    }
}
