//! Two-plex molecular graph: a local plex (bonds or short cutoff) and a global
//! plex (long cutoff) over one shared node set, plus the one-hop and two-hop
//! angle tuples consumed by local message passing.

mod neighbors;

use serde::{Deserialize, Serialize};

use crate::chem_io::Structure;
use crate::geometry::{angle, distance, Vec3};
use crate::{Error, Result};

pub use neighbors::{neighbor_search, NeighborAlgorithm, NeighborPair, COINCIDENT_TOLERANCE};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalMode {
    Bonds,
    #[default]
    Cutoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub local_mode: LocalMode,
    /// Local cutoff in Å; only read in cutoff mode.
    pub d_local: f64,
    pub d_global: f64,
    pub neighbor_algorithm: NeighborAlgorithm,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            local_mode: LocalMode::Cutoff,
            d_local: 2.0,
            d_global: 5.0,
            neighbor_algorithm: NeighborAlgorithm::CellList,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_global > 0.0 && self.d_global.is_finite()) {
            return Err(Error::Config(format!("d_global must be positive, got {}", self.d_global)));
        }
        if self.local_mode == LocalMode::Cutoff {
            if !(self.d_local > 0.0 && self.d_local.is_finite()) {
                return Err(Error::Config(format!("d_local must be positive, got {}", self.d_local)));
            }
            if self.d_local > self.d_global {
                return Err(Error::Config(format!(
                    "d_local ({}) must not exceed d_global ({})",
                    self.d_local, self.d_global
                )));
            }
        }
        Ok(())
    }
}

/// Directed edges `src → dst` (message `m_{src,dst}` flows into `dst`),
/// sorted by `(dst, src)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeSet {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub dist: Vec<f64>,
    /// `incoming[offsets[i]..offsets[i+1]]` are the edges into node `i`.
    offsets: Vec<usize>,
}

impl EdgeSet {
    fn from_pairs(n_nodes: usize, pairs: &[NeighborPair]) -> Self {
        let mut directed: Vec<(usize, usize, f64)> = pairs
            .iter()
            .flat_map(|p| [(p.i, p.j, p.distance), (p.j, p.i, p.distance)])
            .collect();
        directed.sort_by_key(|a| (a.1, a.0));
        let mut offsets = vec![0usize; n_nodes + 1];
        for &(_, d, _) in &directed {
            offsets[d + 1] += 1;
        }
        for i in 0..n_nodes {
            offsets[i + 1] += offsets[i];
        }
        Self {
            src: directed.iter().map(|e| e.0).collect(),
            dst: directed.iter().map(|e| e.1).collect(),
            dist: directed.iter().map(|e| e.2).collect(),
            offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    /// Edge indices whose destination is `node`.
    pub fn incoming(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Index of the directed edge `src → dst`, if present.
    pub fn find(&self, src: usize, dst: usize) -> Option<usize> {
        let r = self.incoming(dst);
        self.src[r.clone()].binary_search(&src).ok().map(|k| r.start + k)
    }

    /// Appends `other` with node indices shifted by `node_offset`.
    fn extend_shifted(&mut self, other: &EdgeSet, node_offset: usize) {
        let edge_offset = self.len();
        self.src.extend(other.src.iter().map(|s| s + node_offset));
        self.dst.extend(other.dst.iter().map(|d| d + node_offset));
        self.dist.extend_from_slice(&other.dist);
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        self.offsets
            .extend(other.offsets.iter().skip(1).map(|o| o + edge_offset));
    }
}

/// An angle tuple attached to directed edge `dst_edge`.
///
/// One-hop: `(a, vertex, b) = (j′, i, j)` for `dst_edge = j → i` and
/// `src_edge = j′ → i`. Two-hop: `(a, vertex, b) = (k, j, i)` for
/// `dst_edge = j → i` and `src_edge = k → j`. In both cases
/// `theta = ∠(a, vertex, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleTuple {
    pub a: usize,
    pub vertex: usize,
    pub b: usize,
    pub theta: f64,
    pub src_edge: usize,
    pub dst_edge: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultiplexGraph {
    pub n_nodes: usize,
    pub local: EdgeSet,
    pub global: EdgeSet,
    pub onehop: Vec<AngleTuple>,
    pub twohop: Vec<AngleTuple>,
}

/// Per-hidden-layer message counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounts {
    pub global: usize,
    pub local_base: usize,
    pub local_angle: usize,
}

impl MessageCounts {
    pub fn total(&self) -> usize {
        self.global + self.local_base + self.local_angle
    }
}

/// Builds the two-plex graph for `s`.
pub fn build_multiplex(s: &Structure, cfg: &GraphConfig) -> Result<MultiplexGraph> {
    cfg.validate()?;
    s.validate()?;
    let n = s.len();
    let pos = &s.positions;
    let mut global = neighbor_search(pos, cfg.d_global, cfg.neighbor_algorithm)?;

    let local: Vec<NeighborPair> = match cfg.local_mode {
        LocalMode::Cutoff => global
            .iter()
            .filter(|p| p.distance <= cfg.d_local)
            .copied()
            .collect(),
        LocalMode::Bonds => {
            let bonds = s.bonds.as_ref().ok_or_else(|| {
                Error::Config(format!("{}: bonds local mode requires a bond list", s.id))
            })?;
            let mut pairs: Vec<NeighborPair> = bonds
                .iter()
                .map(|&(a, b)| {
                    let (i, j) = (a.min(b), a.max(b));
                    NeighborPair {
                        i,
                        j,
                        distance: distance(pos[i], pos[j]),
                    }
                })
                .collect();
            pairs.sort_by_key(|a| (a.i, a.j));
            // long bonds still belong to the global plex
            let mut extra: Vec<NeighborPair> = pairs
                .iter()
                .filter(|p| p.distance > cfg.d_global)
                .copied()
                .collect();
            if !extra.is_empty() {
                global.append(&mut extra);
                global.sort_by_key(|a| (a.i, a.j));
            }
            pairs
        }
    };

    let local = EdgeSet::from_pairs(n, &local);
    let global = EdgeSet::from_pairs(n, &global);
    let (onehop, twohop) = enumerate_angles(&local, pos)?;
    Ok(MultiplexGraph {
        n_nodes: n,
        local,
        global,
        onehop,
        twohop,
    })
}

fn enumerate_angles(local: &EdgeSet, pos: &[Vec3]) -> Result<(Vec<AngleTuple>, Vec<AngleTuple>)> {
    let mut onehop = Vec::new();
    let mut twohop = Vec::new();
    for e in 0..local.len() {
        let (j, i) = (local.src[e], local.dst[e]);
        for e2 in local.incoming(i) {
            let jp = local.src[e2];
            if jp != j {
                onehop.push(AngleTuple {
                    a: jp,
                    vertex: i,
                    b: j,
                    theta: angle(pos[jp], pos[i], pos[j])?,
                    src_edge: e2,
                    dst_edge: e,
                });
            }
        }
        for e2 in local.incoming(j) {
            let k = local.src[e2];
            if k != i {
                twohop.push(AngleTuple {
                    a: k,
                    vertex: j,
                    b: i,
                    theta: angle(pos[k], pos[j], pos[i])?,
                    src_edge: e2,
                    dst_edge: e,
                });
            }
        }
    }
    Ok((onehop, twohop))
}

impl MultiplexGraph {
    /// Messages per hidden layer, from degrees alone.
    pub fn count_messages(&self) -> MessageCounts {
        let l = &self.local;
        let local_angle = (0..l.len())
            .map(|e| (l.degree(l.dst[e]) - 1) + (l.degree(l.src[e]) - 1))
            .sum();
        MessageCounts {
            global: self.global.len(),
            local_base: l.len(),
            local_angle,
        }
    }

    /// Messages an angle-aware single-plex model would need on the global
    /// plex: Σ over directed global edges (j, i) of |N_g(j) \ {i}|.
    pub fn comparator_messages(&self) -> usize {
        let g = &self.global;
        (0..g.len()).map(|e| g.degree(g.src[e]) - 1).sum()
    }

    /// Average directed degree `(k_g, k_l)`.
    pub fn average_degree(&self) -> Result<(f64, f64)> {
        if self.n_nodes == 0 {
            return Err(Error::Domain("average degree of an empty graph".into()));
        }
        let n = self.n_nodes as f64;
        Ok((self.global.len() as f64 / n, self.local.len() as f64 / n))
    }

    /// Disjoint union; node and edge indices of later graphs are shifted.
    pub fn disjoint_union(graphs: &[&MultiplexGraph]) -> MultiplexGraph {
        let mut out = MultiplexGraph::default();
        out.local.offsets.push(0);
        out.global.offsets.push(0);
        for g in graphs {
            let (node_off, local_off) = (out.n_nodes, out.local.len());
            let shift = |t: &AngleTuple| AngleTuple {
                a: t.a + node_off,
                vertex: t.vertex + node_off,
                b: t.b + node_off,
                theta: t.theta,
                src_edge: t.src_edge + local_off,
                dst_edge: t.dst_edge + local_off,
            };
            out.onehop.extend(g.onehop.iter().map(shift));
            out.twohop.extend(g.twohop.iter().map(shift));
            out.local.extend_shifted(&g.local, node_off);
            out.global.extend_shifted(&g.global, node_off);
            out.n_nodes += g.n_nodes;
        }
        out
    }
}
