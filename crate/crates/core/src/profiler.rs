//! Message-count accounting over datasets and cutoff sweeps.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chem_io::Structure;
use crate::graph::{build_multiplex, GraphConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub id: String,
    pub n_atoms: usize,
    pub k_g: f64,
    pub k_l: f64,
    pub global_msgs: usize,
    pub local_base_msgs: usize,
    pub local_angle_msgs: usize,
    pub dimenet_style_msgs: usize,
}

impl ProfileRow {
    pub fn pamnet_msgs(&self) -> usize {
        self.global_msgs + self.local_base_msgs + self.local_angle_msgs
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub n_molecules: usize,
    pub n_skipped: usize,
    pub mean_n_atoms: f64,
    pub mean_k_g: f64,
    pub mean_k_l: f64,
    pub mean_global_msgs: f64,
    pub mean_local_base_msgs: f64,
    pub mean_local_angle_msgs: f64,
    pub mean_pamnet_msgs: f64,
    pub mean_dimenet_style_msgs: f64,
    pub elapsed_secs: f64,
    /// Peak resident set size of the process, when the platform reports it.
    pub peak_rss_kb: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub rows: Vec<ProfileRow>,
    /// `(id, error)` for molecules whose graph could not be built.
    pub skipped: Vec<(String, String)>,
    pub summary: ProfileSummary,
}

fn mean(rows: &[ProfileRow], f: impl Fn(&ProfileRow) -> f64) -> f64 {
    if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    }
}

/// Peak resident memory from `/proc/self/status`.
pub fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn profile_one(s: &Structure, cfg: &GraphConfig) -> Result<ProfileRow> {
    let g = build_multiplex(s, cfg)?;
    let c = g.count_messages();
    let (k_g, k_l) = g.average_degree()?;
    Ok(ProfileRow {
        id: s.id.clone(),
        n_atoms: s.len(),
        k_g,
        k_l,
        global_msgs: c.global,
        local_base_msgs: c.local_base,
        local_angle_msgs: c.local_angle,
        dimenet_style_msgs: g.comparator_messages(),
    })
}

/// Counts messages per molecule in parallel. Molecules whose graph fails to
/// build are logged and listed in `skipped`.
pub fn profile_dataset(structures: &[Structure], cfg: &GraphConfig) -> Result<ProfileReport> {
    if structures.is_empty() {
        return Err(Error::Dataset("nothing to profile".into()));
    }
    cfg.validate()?;
    let start = Instant::now();
    let results: Vec<_> = structures.par_iter().map(|s| profile_one(s, cfg)).collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for (s, r) in structures.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("skipping {}: {e}", s.id);
                skipped.push((s.id.clone(), e.to_string()));
            }
        }
    }
    let summary = ProfileSummary {
        n_molecules: rows.len(),
        n_skipped: skipped.len(),
        mean_n_atoms: mean(&rows, |r| r.n_atoms as f64),
        mean_k_g: mean(&rows, |r| r.k_g),
        mean_k_l: mean(&rows, |r| r.k_l),
        mean_global_msgs: mean(&rows, |r| r.global_msgs as f64),
        mean_local_base_msgs: mean(&rows, |r| r.local_base_msgs as f64),
        mean_local_angle_msgs: mean(&rows, |r| r.local_angle_msgs as f64),
        mean_pamnet_msgs: mean(&rows, |r| r.pamnet_msgs() as f64),
        mean_dimenet_style_msgs: mean(&rows, |r| r.dimenet_style_msgs as f64),
        elapsed_secs: start.elapsed().as_secs_f64(),
        peak_rss_kb: peak_rss_kb(),
    };
    Ok(ProfileReport {
        rows,
        skipped,
        summary,
    })
}

impl ProfileReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d_global: f64,
    pub summary: ProfileSummary,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Log-log slopes `(global, comparator)` of mean counts against `d`,
    /// over points where both are positive.
    pub fn slopes(&self) -> Option<(f64, f64)> {
        let pts: Vec<_> = self
            .points
            .iter()
            .filter(|p| p.summary.mean_global_msgs > 0.0 && p.summary.mean_dimenet_style_msgs > 0.0)
            .collect();
        let x: Vec<f64> = pts.iter().map(|p| p.d_global.ln()).collect();
        let g: Vec<f64> = pts.iter().map(|p| p.summary.mean_global_msgs.ln()).collect();
        let c: Vec<f64> = pts.iter().map(|p| p.summary.mean_dimenet_style_msgs.ln()).collect();
        Some((ls_slope(&x, &g)?, ls_slope(&x, &c)?))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "d_global",
            "mean_k_g",
            "mean_global_msgs",
            "mean_local_base_msgs",
            "mean_local_angle_msgs",
            "mean_pamnet_msgs",
            "mean_dimenet_style_msgs",
        ])?;
        for p in &self.points {
            let s = &p.summary;
            w.write_record(
                [
                    p.d_global,
                    s.mean_k_g,
                    s.mean_global_msgs,
                    s.mean_local_base_msgs,
                    s.mean_local_angle_msgs,
                    s.mean_pamnet_msgs,
                    s.mean_dimenet_style_msgs,
                ]
                .map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `y` on `x`; `None` with fewer than two distinct `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Profiles the same structures at each global cutoff in `d_values`. The
/// local cutoff is clamped so it never exceeds the global one.
pub fn sweep_cutoff(structures: &[Structure], base: &GraphConfig, d_values: &[f64]) -> Result<SweepReport> {
    if d_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("sweep cutoffs must increase: {d_values:?}")));
    }
    let mut points = Vec::with_capacity(d_values.len());
    for &d in d_values {
        let cfg = GraphConfig {
            d_global: d,
            d_local: base.d_local.min(d),
            ..*base
        };
        let report = profile_dataset(structures, &cfg)?;
        points.push(SweepPoint {
            d_global: d,
            summary: report.summary,
        });
    }
    Ok(SweepReport { points })
}

/// Carbon atoms placed uniformly at random in a cube of side `side` Å with
/// no two closer than `min_dist`.
pub fn uniform_box(id: &str, seed: u64, n_atoms: usize, side: f64, min_dist: f64) -> Result<Structure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<[f64; 3]> = Vec::with_capacity(n_atoms);
    let mut attempts = 0usize;
    while pos.len() < n_atoms {
        attempts += 1;
        if attempts > 1000 * n_atoms.max(1) {
            return Err(Error::Config(format!(
                "cannot place {n_atoms} atoms {min_dist} Å apart in a {side} Å box"
            )));
        }
        let p = [0, 1, 2].map(|_| rng.gen_range(0.0..side));
        let md2 = min_dist * min_dist;
        if pos.iter().all(|q| {
            let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] >= md2
        }) {
            pos.push(p);
        }
    }
    Structure::from_parts(id, &vec![6; n_atoms], pos)
}
