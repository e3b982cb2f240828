//! Regression metrics on de-standardized predictions.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Residual standard deviation of the truth about its least-squares
    /// line on the predictions, with an `n − 1` denominator.
    pub sd: f64,
    pub pearson_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Metrics over all components pooled together.
    pub overall: Metrics,
    pub per_target: Vec<Metrics>,
    /// Mean of `mae_t / std_t` in percent, using the evaluated set's stds.
    pub std_mae: Option<f64>,
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.is_empty() {
        return Err(Error::Dataset("no predictions to score".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let rmse = (pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt();

    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let spp: f64 = pred.iter().map(|p| (p - mp).powi(2)).sum();
    let spt: f64 = pred.iter().zip(truth).map(|(p, t)| (p - mp) * (t - mt)).sum();
    let slope = if spp > 0.0 { spt / spp } else { 0.0 };
    let intercept = mt - slope * mp;
    let ss_res: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (t - (slope * p + intercept)).powi(2))
        .sum();
    let sd = if pred.len() > 1 { (ss_res / (n - 1.0)).sqrt() } else { 0.0 };
    Ok(Metrics {
        n: pred.len(),
        mae,
        rmse,
        sd,
        pearson_r: pearson_r(pred, truth),
    })
}

/// Mean of `mae_t / std_t` over targets, in percent.
pub fn std_mae(mae: &[f64], std: &[f64]) -> Result<f64> {
    if mae.is_empty() || mae.len() != std.len() {
        return Err(Error::Shape(format!("{} MAEs for {} stds", mae.len(), std.len())));
    }
    if let Some(bad) = std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Domain(format!("target std must be positive, got {bad}")));
    }
    Ok(mae.iter().zip(std).map(|(m, s)| m / s).sum::<f64>() / mae.len() as f64 * 100.0)
}

/// Binding free energy from three predictions of one shared network.
pub fn replica_delta(g_complex: f64, g_pocket: f64, g_ligand: f64) -> f64 {
    g_complex - g_pocket - g_ligand
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Scores `[n, width]` predictions against targets of the same layout.
pub fn report(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<MetricsReport> {
    let width = truth.first().map_or(0, Vec::len);
    if pred.len() != truth.len() || pred.iter().chain(truth).any(|r| r.len() != width) {
        return Err(Error::Shape("prediction and target layouts differ".into()));
    }
    let flat = |rows: &[Vec<f64>]| rows.iter().flatten().copied().collect::<Vec<_>>();
    let overall = metrics(&flat(pred), &flat(truth))?;
    let column = |rows: &[Vec<f64>], c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    let per_target = (0..width)
        .map(|c| metrics(&column(pred, c), &column(truth, c)))
        .collect::<Result<Vec<_>>>()?;
    let stds: Vec<f64> = (0..width).map(|c| population_std(&column(truth, c))).collect();
    let maes: Vec<f64> = per_target.iter().map(|m| m.mae).collect();
    Ok(MetricsReport {
        overall,
        per_target,
        std_mae: std_mae(&maes, &stds).ok(),
    })
}
