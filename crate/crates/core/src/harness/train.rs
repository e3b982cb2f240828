//! Training loop with warm-up/staircase learning rate, EMA evaluation and
//! early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{report, MetricsReport};
use crate::chem_io::{Label, Structure};
use crate::geometry::norm;
use crate::model::{Batch, Head, PamNet, Prepared, Prediction};
use crate::nn::{adam_step, ema_update, AdamConfig, Gradients, ParameterStore, Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mae,
    SmoothL1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Molecules per computation graph; micro-batches run in parallel.
    pub micro_batch_size: usize,
    pub initial_lr: f64,
    pub warmup_epochs: f64,
    pub decay_ratio: f64,
    pub decay_period_epochs: f64,
    pub max_epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
    pub loss: LossKind,
    pub smooth_l1_beta: f64,
    pub ema_decay: f64,
    pub early_stop_patience: usize,
    /// Validate every this many epochs.
    pub eval_every: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            micro_batch_size: 8,
            initial_lr: 1e-4,
            warmup_epochs: 1.0,
            decay_ratio: 0.1,
            decay_period_epochs: 600.0,
            max_epochs: 900,
            max_steps: None,
            loss: LossKind::Mae,
            smooth_l1_beta: 1.0,
            ema_decay: 0.999,
            early_stop_patience: 30,
            eval_every: 1,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 || self.micro_batch_size == 0 || self.max_epochs == 0 || self.eval_every == 0 {
            return bad("batch sizes, max_epochs and eval_every must be positive");
        }
        if !(self.initial_lr > 0.0) || !(self.warmup_epochs >= 0.0) {
            return bad("initial_lr must be positive and warmup_epochs non-negative");
        }
        if !(self.decay_ratio > 0.0 && self.decay_ratio <= 1.0) || !(self.decay_period_epochs > 0.0) {
            return bad("decay_ratio must lie in (0, 1] and decay_period_epochs be positive");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) || !(self.smooth_l1_beta > 0.0) {
            return bad("ema_decay must lie in [0, 1] and smooth_l1_beta be positive");
        }
        Ok(())
    }

    /// Learning rate at fractional epoch `epoch`: linear warm-up, then
    /// `initial_lr · decay_ratio^⌊epoch / decay_period⌋`.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let decay = self
            .decay_ratio
            .powi((epoch / self.decay_period_epochs).floor() as i32);
        let warm = if epoch < self.warmup_epochs {
            epoch / self.warmup_epochs
        } else {
            1.0
        };
        self.initial_lr * warm * decay
    }
}

/// A prepared molecule with its target row.
#[derive(Debug, Clone)]
pub struct Example {
    pub prepared: Prepared,
    pub target: Vec<f64>,
}

fn target_row(s: &Structure, head: Head) -> Result<Vec<f64>> {
    let label = s
        .label
        .as_ref()
        .ok_or_else(|| Error::Dataset(format!("{} has no label", s.id)))?;
    match (head, label) {
        (Head::Vector, Label::Vector(v)) => Ok(v.to_vec()),
        (Head::Vector, Label::Scalar(_)) => Err(Error::Dataset(format!(
            "{}: vector head needs a 3-component label",
            s.id
        ))),
        (_, Label::Scalar(v)) => Ok(vec![*v]),
        (Head::VectorMagnitude, Label::Vector(v)) => Ok(vec![crate::geometry::norm(*v)]),
        (Head::Scalar, Label::Vector(_)) => Err(Error::Dataset(format!(
            "{}: scalar head needs a scalar label",
            s.id
        ))),
    }
}

/// Featurizes labelled structures in parallel.
pub fn make_examples(model: &PamNet, structures: &[Structure]) -> Result<Vec<Example>> {
    let head = model.config().head;
    structures
        .par_iter()
        .map(|s| {
            Ok(Example {
                prepared: model.prepare(s)?,
                target: target_row(s, head)?,
            })
        })
        .collect()
}

/// Affine map between raw targets and the scale the network is trained on.
/// Vector heads are only rescaled, never shifted, so equivariance survives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetStats {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn fit(examples: &[Example], head: Head) -> Result<Self> {
        let width = examples
            .first()
            .map(|e| e.target.len())
            .ok_or_else(|| Error::Dataset("cannot fit target statistics on no data".into()))?;
        let n = examples.len() as f64;
        let col = |c: usize| examples.iter().map(move |e| e.target[c]);
        if head == Head::Scalar {
            let mut mean = Vec::with_capacity(width);
            let mut std = Vec::with_capacity(width);
            for c in 0..width {
                let m = col(c).sum::<f64>() / n;
                let s = (col(c).map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                mean.push(m);
                std.push(if s > 0.0 { s } else { 1.0 });
            }
            Ok(Self { mean, std })
        } else {
            let ms = examples
                .iter()
                .flat_map(|e| e.target.iter())
                .map(|v| v * v)
                .sum::<f64>()
                / (n * width as f64);
            let s = if ms > 0.0 { ms.sqrt() } else { 1.0 };
            Ok(Self {
                mean: vec![0.0; width],
                std: vec![s; width],
            })
        }
    }

    pub fn standardize(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn restore(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

fn raw_output(model: &PamNet, tape: &Tape, out: &crate::model::ForwardOutput) -> Vec<f64> {
    match model.config().head {
        Head::Vector => tape.value(out.vector.expect("vector head")).data().to_vec(),
        _ => tape.value(out.prediction).data().to_vec(),
    }
}

/// Summed per-molecule loss and its parameter gradients for one micro-batch,
/// both scaled by `scale`.
fn micro_batch_grad(
    model: &PamNet,
    store: &ParameterStore,
    items: &[&Example],
    stats: &TargetStats,
    cfg: &TrainConfig,
    scale: f64,
) -> Result<(f64, Gradients)> {
    let prepared: Vec<&Prepared> = items.iter().map(|e| &e.prepared).collect();
    let batch = Batch::new(&prepared)?;
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, store, &batch)?;
    let pred = match model.config().head {
        Head::Vector => out.vector.expect("vector head"),
        _ => out.prediction,
    };
    let width = tape.shape(pred)[1];
    let target: Vec<f64> = items.iter().flat_map(|e| stats.standardize(&e.target)).collect();
    let target = tape.constant(Tensor::from_vec(items.len(), width, target)?);
    let diff = tape.sub(pred, target)?;
    let per = match cfg.loss {
        LossKind::Mae => tape.abs(diff),
        LossKind::SmoothL1 => tape.smooth_l1(diff, cfg.smooth_l1_beta),
    };
    let total = tape.sum(per);
    let loss = tape.scale(total, scale / width as f64);
    let value = tape.value(loss).item();
    let (grads, _) = tape.backward(loss, store)?;
    Ok((value, grads))
}

/// Predictions in raw target units, in input order.
pub fn predict_examples(
    model: &PamNet,
    store: &ParameterStore,
    examples: &[Example],
    stats: &TargetStats,
) -> Result<Vec<Vec<f64>>> {
    examples
        .par_iter()
        .map(|ex| {
            let batch = Batch::new(&[&ex.prepared])?;
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, store, &batch)?;
            tape.check_finite()?;
            Ok(stats.restore(&raw_output(model, &tape, &out)))
        })
        .collect()
}

/// Unlabelled predictions in raw target units, in input order. Vectors are
/// rescaled the same way as the targets they were trained against.
pub fn predict_structures(
    model: &PamNet,
    store: &ParameterStore,
    structures: &[Structure],
    stats: &TargetStats,
) -> Result<Vec<Prediction>> {
    let scale = stats.std.first().copied().unwrap_or(1.0);
    structures
        .par_iter()
        .map(|s| {
            let mut p = model.predict(store, s)?;
            match model.config().head {
                Head::Scalar => p.values = stats.restore(&p.values),
                Head::VectorMagnitude => {
                    p.values = stats.restore(&p.values);
                    p.vector = p.vector.map(|v| v.map(|x| x * scale));
                }
                Head::Vector => {
                    let v = p.vector.map(|v| {
                        let r = stats.restore(&v);
                        [r[0], r[1], r[2]]
                    });
                    p.values = vec![v.map_or(0.0, norm)];
                    p.vector = v;
                }
            }
            Ok(p)
        })
        .collect()
}

pub fn evaluate(
    model: &PamNet,
    store: &ParameterStore,
    examples: &[Example],
    stats: &TargetStats,
) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let pred = predict_examples(model, store, examples, stats)?;
    let truth: Vec<Vec<f64>> = examples.iter().map(|e| e.target.clone()).collect();
    report(&pred, &truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    /// Validation MAE of the EMA parameters in raw units, on evaluated epochs.
    pub valid_mae: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Mean loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Live parameters and optimizer state after the last step.
    pub store: ParameterStore,
    /// EMA parameters from the epoch with the best validation MAE.
    pub best: ParameterStore,
    pub best_epoch: usize,
    pub best_valid_mae: f64,
    pub stats: TargetStats,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn write_history_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.history {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains `store` in place of a copy and returns the outcome. Target
/// statistics are fitted on `train`.
pub fn train(
    model: &PamNet,
    store: ParameterStore,
    train: &[Example],
    valid: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Dataset("training and validation sets must be non-empty".into()));
    }
    let stats = TargetStats::fit(train, model.config().head)?;
    let mut store = store;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut best = store.with_ema_values();
    let mut best_epoch = 0;
    let mut best_valid_mae = f64::INFINITY;
    let mut step: u64 = 0;
    let mut stopped_early = false;

    'epochs: for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let inv = 1.0 / chunk.len() as f64;
            let results: Vec<Result<(f64, Gradients)>> = chunk
                .par_chunks(cfg.micro_batch_size)
                .map(|ids| {
                    let items: Vec<&Example> = ids.iter().map(|&i| &train[i]).collect();
                    micro_batch_grad(model, &store, &items, &stats, cfg, inv)
                })
                .collect();
            let mut grads = Gradients::zeros_like(&store);
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r.map_err(|e| match e {
                    Error::NonFinite(m) => {
                        Error::NonFinite(format!("epoch {epoch}, step {step}: {m}"))
                    }
                    e => e,
                })?;
                loss += l;
                grads.accumulate(&g);
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}, step {step}"
                )));
            }
            let pos = (step as f64 + 1.0) / steps_per_epoch as f64;
            lr = cfg.lr_at(pos);
            adam_step(&mut store, &grads, lr, &cfg.adam)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, step {step}: {e}")))?;
            ema_update(&mut store, cfg.ema_decay);
            step += 1;
            step_losses.push(loss);
            epoch_loss += loss;
            epoch_steps += 1;
        }
        if epoch_steps == 0 {
            break;
        }
        let last = cfg.max_steps.is_some_and(|m| step >= m) || epoch + 1 == cfg.max_epochs;
        let valid_mae = if epoch % cfg.eval_every == 0 || last {
            let ema = store.with_ema_values();
            let m = evaluate(model, &ema, valid, &stats)?.overall.mae;
            if m < best_valid_mae {
                best_valid_mae = m;
                best_epoch = epoch;
                best = ema;
            }
            Some(m)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            step,
            lr,
            train_loss: epoch_loss / epoch_steps as f64,
            valid_mae,
        });
        log::debug!("epoch {epoch} step {step} lr {lr:.3e} loss {:.5} valid {valid_mae:?}", epoch_loss / epoch_steps as f64);
        if epoch - best_epoch > cfg.early_stop_patience {
            stopped_early = true;
            break 'epochs;
        }
        if last {
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        step_losses,
        store,
        best,
        best_epoch,
        best_valid_mae,
        stats,
        stopped_early,
    })
}
