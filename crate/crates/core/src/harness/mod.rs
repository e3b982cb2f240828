//! Training, evaluation, symmetry checks and model persistence.

mod metrics;
mod symmetry;
pub mod synthetic;
mod train;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{metrics, pearson_r, replica_delta, report, std_mae, Metrics, MetricsReport};
pub use symmetry::{check_permutation, check_symmetry, permute_atoms, SymmetryCase, SymmetryKind, SymmetryReport};
pub use train::{
    evaluate, make_examples, predict_examples, predict_structures, train, EpochRecord, Example, LossKind, TargetStats,
    TrainConfig, TrainOutcome,
};

use crate::model::{Batch, ModelConfig, PamNet, Prepared};
use crate::nn::{checkpoint, ParameterStore, Tape};
use crate::{Error, Result};

/// JSON written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub model: ModelConfig,
    pub target_stats: Option<TargetStats>,
}

/// Path of the JSON sidecar belonging to checkpoint `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_model(path: &Path, sidecar: &Sidecar, store: &ParameterStore) -> Result<()> {
    checkpoint::save(store, path)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

/// Loads a checkpoint and its sidecar and rebuilds the matching network.
pub fn load_model(path: &Path) -> Result<(PamNet, ParameterStore, Sidecar)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    let store = checkpoint::load(path)?;
    let model = PamNet::from_store(sidecar.model.clone(), &store)?;
    Ok((model, store, sidecar))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub mean_global: f64,
    pub mean_local: f64,
    /// Largest `|α_g + α_l − 1|` seen on any node and layer.
    pub max_normalization_error: f64,
    pub n_nodes: usize,
}

/// Averages attention weights over every node, layer and molecule.
pub fn report_attention(model: &PamNet, store: &ParameterStore, items: &[Prepared]) -> Result<AttentionSummary> {
    let parts = items
        .par_iter()
        .map(|p| {
            let batch = Batch::new(&[p])?;
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, store, &batch)?;
            let a = out.attention;
            let sum_g: f64 = a.global.iter().flatten().sum();
            let sum_l: f64 = a.local.iter().flatten().sum();
            let n: usize = a.global.iter().map(Vec::len).sum();
            let err = a
                .global
                .iter()
                .flatten()
                .zip(a.local.iter().flatten())
                .map(|(g, l)| (g + l - 1.0).abs())
                .fold(0.0, f64::max);
            Ok((sum_g, sum_l, n, err))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut g, mut l, mut n, mut err) = (0.0, 0.0, 0usize, 0.0f64);
    for (a, b, c, d) in parts {
        g += a;
        l += b;
        n += c;
        err = err.max(d);
    }
    if n == 0 {
        return Err(Error::Dataset("no atoms to report attention on".into()));
    }
    Ok(AttentionSummary {
        mean_global: g / n as f64,
        mean_local: l / n as f64,
        max_normalization_error: err,
        n_nodes: n,
    })
}

#[cfg(test)]
mod tests;
