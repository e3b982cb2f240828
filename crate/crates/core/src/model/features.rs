//! Per-molecule graph features and batching by disjoint union.

use std::sync::Arc;

use crate::basis::{radial_basis_into, AngularBasis, BasisConfig};
use crate::chem_io::Structure;
use crate::graph::{build_multiplex, AngleTuple, EdgeSet, GraphConfig, LocalMode, MultiplexGraph};
use crate::nn::Tensor;
use crate::Result;

/// Everything the network reads from one structure, computed once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub species: Vec<usize>,
    pub graph: MultiplexGraph,
    pub rbf_global: Tensor,
    pub rbf_local: Tensor,
    pub ang_onehop: Tensor,
    pub ang_twohop: Tensor,
    /// `r_dst − r_src` per global edge.
    pub disp_global: Tensor,
    pub disp_local: Tensor,
}

impl Prepared {
    pub fn n_atoms(&self) -> usize {
        self.species.len()
    }
}

/// Radial and angular expansions sized for one model configuration.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub graph: GraphConfig,
    pub global_radial: BasisConfig,
    pub local_radial: BasisConfig,
    pub angular: AngularBasis,
}

fn radial_features(edges: &EdgeSet, cfg: &BasisConfig) -> Result<Tensor> {
    let mut t = Tensor::zeros(edges.len(), cfg.n_radial);
    for (e, &d) in edges.dist.iter().enumerate() {
        radial_basis_into(d, cfg, t.row_mut(e))?;
    }
    Ok(t)
}

fn displacements(edges: &EdgeSet, pos: &[[f64; 3]]) -> Tensor {
    let mut t = Tensor::zeros(edges.len(), 3);
    for e in 0..edges.len() {
        let (s, d) = (pos[edges.src[e]], pos[edges.dst[e]]);
        t.row_mut(e)
            .iter_mut()
            .zip(d.iter().zip(&s))
            .for_each(|(o, (a, b))| *o = a - b);
    }
    t
}

impl Featurizer {
    /// Local basis cutoff is `d_local` in cutoff mode and `d_global` in bond mode.
    pub fn new(
        graph: GraphConfig,
        n_radial_global: usize,
        n_radial_local: usize,
        n_spherical: usize,
        n_radial_angular: usize,
        envelope_exponent: u32,
    ) -> Result<Self> {
        graph.validate()?;
        let local_cutoff = match graph.local_mode {
            LocalMode::Cutoff => graph.d_local,
            LocalMode::Bonds => graph.d_global,
        };
        let global_radial = BasisConfig {
            n_radial: n_radial_global,
            n_spherical: 1,
            envelope_exponent,
            cutoff: graph.d_global,
        };
        let local_radial = BasisConfig {
            n_radial: n_radial_local,
            cutoff: local_cutoff,
            ..global_radial
        };
        global_radial.validate()?;
        local_radial.validate()?;
        let angular = AngularBasis::new(BasisConfig {
            n_radial: n_radial_angular,
            n_spherical,
            envelope_exponent,
            cutoff: local_cutoff,
        })?;
        Ok(Self {
            graph,
            global_radial,
            local_radial,
            angular,
        })
    }

    fn angular_features(&self, tuples: &[AngleTuple], local: &EdgeSet) -> Result<Tensor> {
        let mut t = Tensor::zeros(tuples.len(), self.angular.len());
        for (k, a) in tuples.iter().enumerate() {
            self.angular
                .eval_into(local.dist[a.src_edge], a.theta, t.row_mut(k))?;
        }
        Ok(t)
    }

    pub fn prepare(&self, s: &Structure) -> Result<Prepared> {
        let graph = build_multiplex(s, &self.graph)?;
        Ok(Prepared {
            id: s.id.clone(),
            species: s.atoms.iter().map(|a| a.atomic_number as usize).collect(),
            rbf_global: radial_features(&graph.global, &self.global_radial)?,
            rbf_local: radial_features(&graph.local, &self.local_radial)?,
            ang_onehop: self.angular_features(&graph.onehop, &graph.local)?,
            ang_twohop: self.angular_features(&graph.twohop, &graph.local)?,
            disp_global: displacements(&graph.global, &s.positions),
            disp_local: displacements(&graph.local, &s.positions),
            graph,
        })
    }
}

fn index(v: impl Iterator<Item = usize>) -> Arc<[usize]> {
    v.collect::<Vec<_>>().into()
}

/// Several molecules merged into one disconnected graph.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n_molecules: usize,
    pub n_nodes: usize,
    pub graph: MultiplexGraph,
    pub species: Arc<[usize]>,
    pub molecule: Arc<[usize]>,
    pub atoms_per_molecule: Vec<usize>,
    pub rbf_global: Tensor,
    pub rbf_local: Tensor,
    pub ang_onehop: Tensor,
    pub ang_twohop: Tensor,
    pub disp_global: Tensor,
    pub disp_local: Tensor,
    pub global_src: Arc<[usize]>,
    pub global_dst: Arc<[usize]>,
    pub local_src: Arc<[usize]>,
    pub local_dst: Arc<[usize]>,
    pub onehop_src: Arc<[usize]>,
    pub onehop_dst: Arc<[usize]>,
    pub twohop_src: Arc<[usize]>,
    pub twohop_dst: Arc<[usize]>,
}

impl Batch {
    pub fn new(items: &[&Prepared]) -> Result<Self> {
        let graphs: Vec<&MultiplexGraph> = items.iter().map(|p| &p.graph).collect();
        let graph = MultiplexGraph::disjoint_union(&graphs);
        let cat = |f: fn(&Prepared) -> &Tensor, cols: usize| {
            Tensor::concat_rows(&items.iter().map(|p| f(p)).collect::<Vec<_>>(), cols)
        };
        let cols = |f: fn(&Prepared) -> &Tensor| items.first().map_or(0, |p| f(p).cols());
        let molecule = index(
            items
                .iter()
                .enumerate()
                .flat_map(|(m, p)| std::iter::repeat_n(m, p.n_atoms())),
        );
        Ok(Self {
            n_molecules: items.len(),
            n_nodes: graph.n_nodes,
            species: index(items.iter().flat_map(|p| p.species.iter().copied())),
            molecule,
            atoms_per_molecule: items.iter().map(|p| p.n_atoms()).collect(),
            rbf_global: cat(|p| &p.rbf_global, cols(|p| &p.rbf_global))?,
            rbf_local: cat(|p| &p.rbf_local, cols(|p| &p.rbf_local))?,
            ang_onehop: cat(|p| &p.ang_onehop, cols(|p| &p.ang_onehop))?,
            ang_twohop: cat(|p| &p.ang_twohop, cols(|p| &p.ang_twohop))?,
            disp_global: cat(|p| &p.disp_global, 3)?,
            disp_local: cat(|p| &p.disp_local, 3)?,
            global_src: index(graph.global.src.iter().copied()),
            global_dst: index(graph.global.dst.iter().copied()),
            local_src: index(graph.local.src.iter().copied()),
            local_dst: index(graph.local.dst.iter().copied()),
            onehop_src: index(graph.onehop.iter().map(|a| a.src_edge)),
            onehop_dst: index(graph.onehop.iter().map(|a| a.dst_edge)),
            twohop_src: index(graph.twohop.iter().map(|a| a.src_edge)),
            twohop_dst: index(graph.twohop.iter().map(|a| a.dst_edge)),
            graph,
        })
    }
}
