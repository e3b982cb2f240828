//! Fixed-radius neighbor search: O(N²) reference and a cell list.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{distance, Vec3};
use crate::{Error, Result};

/// Atoms closer than this are treated as coincident.
pub const COINCIDENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborAlgorithm {
    Brute,
    #[default]
    CellList,
}

/// Undirected pair `i < j` with its distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborPair {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

fn check_pair(i: usize, j: usize, d: f64) -> Result<()> {
    if d < COINCIDENT_TOLERANCE {
        return Err(Error::DegenerateGeometry(format!(
            "atoms {i} and {j} are {d:e} Å apart"
        )));
    }
    Ok(())
}

/// All pairs with `distance <= cutoff`, sorted by `(i, j)`, `i < j`.
pub fn neighbor_search(
    positions: &[Vec3],
    cutoff: f64,
    algorithm: NeighborAlgorithm,
) -> Result<Vec<NeighborPair>> {
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::Config(format!("cutoff must be positive, got {cutoff}")));
    }
    match algorithm {
        NeighborAlgorithm::Brute => brute_force(positions, cutoff),
        NeighborAlgorithm::CellList => cell_list(positions, cutoff),
    }
}

fn brute_force(positions: &[Vec3], cutoff: f64) -> Result<Vec<NeighborPair>> {
    let mut out = Vec::new();
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            let d = distance(positions[i], positions[j]);
            check_pair(i, j, d)?;
            if d <= cutoff {
                out.push(NeighborPair { i, j, distance: d });
            }
        }
    }
    Ok(out)
}

type CellKey = (i64, i64, i64);

fn cell_list(positions: &[Vec3], cutoff: f64) -> Result<Vec<NeighborPair>> {
    if positions.is_empty() {
        return Ok(Vec::new());
    }
    let mut lo = positions[0];
    for p in positions {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
        }
    }
    // A hair above the cutoff so that rounding in the cell index can never put
    // two in-range atoms two cells apart.
    let side = cutoff * (1.0 + 1e-9);
    let key = |p: &Vec3| -> CellKey {
        (
            ((p[0] - lo[0]) / side).floor() as i64,
            ((p[1] - lo[1]) / side).floor() as i64,
            ((p[2] - lo[2]) / side).floor() as i64,
        )
    };
    let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
    let keys: Vec<CellKey> = positions.iter().map(key).collect();
    for (idx, k) in keys.iter().enumerate() {
        cells.entry(*k).or_default().push(idx);
    }

    let mut out = Vec::new();
    for (i, &(cx, cy, cz)) in keys.iter().enumerate() {
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(members) = cells.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in members {
                        if j <= i {
                            continue;
                        }
                        let d = distance(positions[i], positions[j]);
                        check_pair(i, j, d)?;
                        if d <= cutoff {
                            out.push(NeighborPair { i, j, distance: d });
                        }
                    }
                }
            }
        }
    }
    out.sort_by_key(|a| (a.i, a.j));
    Ok(out)
}
