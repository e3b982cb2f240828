//! Drivers that probe any predictor for E(3) and permutation symmetry.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chem_io::Structure;
use crate::geometry::{apply_transform, mat_vec, norm, random_e3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryKind {
    /// Output unchanged by any rigid motion or reflection.
    Invariant,
    /// 3-vector output that rotates with the structure.
    Equivariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCase {
    pub id: String,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub kind: SymmetryKind,
    pub n_transforms: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub cases: Vec<SymmetryCase>,
    pub max_deviation: f64,
    pub passed: bool,
}

/// Seed for the `k`-th transform of a check; odd `k` include a reflection.
fn transform_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(k as u64)
}

fn deviation(kind: SymmetryKind, base: &[f64], moved: &[f64], rotation: &crate::geometry::Mat3) -> Result<f64> {
    match kind {
        SymmetryKind::Invariant => {
            if base.len() != moved.len() {
                return Err(Error::Shape("predictor output width changed".into()));
            }
            Ok(base
                .iter()
                .zip(moved)
                .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
                .fold(0.0, f64::max))
        }
        SymmetryKind::Equivariant => {
            if base.len() != 3 || moved.len() != 3 {
                return Err(Error::Shape("equivariance check needs 3-vector outputs".into()));
            }
            let expected = mat_vec(rotation, [base[0], base[1], base[2]]);
            let diff = [moved[0] - expected[0], moved[1] - expected[1], moved[2] - expected[2]];
            Ok(norm(diff) / norm(expected).max(1.0))
        }
    }
}

/// Applies `n_transforms` seeded random E(3) transforms to every structure
/// and records the largest output deviation, relative to `max(|y|, 1)`.
pub fn check_symmetry<F>(
    predict: F,
    structures: &[Structure],
    n_transforms: usize,
    seed: u64,
    kind: SymmetryKind,
    tolerance: f64,
) -> Result<SymmetryReport>
where
    F: Fn(&Structure) -> Result<Vec<f64>> + Sync,
{
    let cases = structures
        .par_iter()
        .map(|s| {
            let base = predict(s)?;
            let mut worst: f64 = 0.0;
            for k in 0..n_transforms {
                let t = random_e3(transform_seed(seed, k), k % 2 == 1);
                let moved = predict(&apply_transform(s, &t))?;
                worst = worst.max(deviation(kind, &base, &moved, &t.rotation)?);
            }
            Ok(SymmetryCase {
                id: s.id.clone(),
                max_deviation: worst,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_deviation = cases.iter().map(|c| c.max_deviation).fold(0.0, f64::max);
    Ok(SymmetryReport {
        kind,
        n_transforms,
        seed,
        tolerance,
        passed: max_deviation < tolerance && cases.iter().all(|c| c.max_deviation.is_finite()),
        cases,
        max_deviation,
    })
}

/// Relabels atoms by `perm` (new atom `k` is old atom `perm[k]`).
pub fn permute_atoms(s: &Structure, perm: &[usize]) -> Result<Structure> {
    if perm.len() != s.len() {
        return Err(Error::Shape(format!("permutation of {} for {} atoms", perm.len(), s.len())));
    }
    let mut inverse = vec![usize::MAX; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        if old >= perm.len() || inverse[old] != usize::MAX {
            return Err(Error::Shape("not a permutation".into()));
        }
        inverse[old] = new;
    }
    let mut out = s.clone();
    out.atoms = perm.iter().map(|&k| s.atoms[k].clone()).collect();
    out.positions = perm.iter().map(|&k| s.positions[k]).collect();
    if let Some(bonds) = &s.bonds {
        out.bonds = Some(
            bonds
                .iter()
                .map(|&(a, b)| {
                    let (x, y) = (inverse[a], inverse[b]);
                    (x.min(y), x.max(y))
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Largest absolute output change over `n_perms` seeded random relabelings.
pub fn check_permutation<F>(predict: F, structures: &[Structure], n_perms: usize, seed: u64) -> Result<f64>
where
    F: Fn(&Structure) -> Result<Vec<f64>> + Sync,
{
    let worst = structures
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let base = predict(s)?;
            let mut rng = ChaCha8Rng::seed_from_u64(transform_seed(seed, i));
            let mut perm: Vec<usize> = (0..s.len()).collect();
            let mut worst: f64 = 0.0;
            for _ in 0..n_perms {
                perm.shuffle(&mut rng);
                let out = predict(&permute_atoms(s, &perm)?)?;
                for (a, b) in base.iter().zip(&out) {
                    worst = worst.max((a - b).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}
