//! The PAMNet network: message embeddings, global and local message passing,
//! update blocks, attention-pooled fusion and the geometric-vector head.

mod features;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use features::{Batch, Featurizer, Prepared};

use crate::chem_io::elements::MAX_ATOMIC_NUMBER;
use crate::chem_io::Structure;
use crate::graph::{GraphConfig, MessageCounts};
use crate::nn::{
    Activation, Embedding, Initializer, Linear, Mlp, MlpSpec, ParamId, ParameterStore, Tape,
    Tensor, Var,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    #[default]
    Scalar,
    /// Norm of the equivariant vector output.
    VectorMagnitude,
    /// Raw equivariant 3-vector.
    Vector,
}

/// Which messages drive the geometric vectors of each plex.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    /// One field from global messages, used by both plexes.
    #[default]
    Shared,
    /// Each plex builds its own field from its own messages and edges.
    PerPlex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub output_dim: usize,
    pub readout: Readout,
    pub head: Head,
    pub leaky_slope: f64,
    pub graph: GraphConfig,
    pub n_radial_global: usize,
    pub n_radial_local: usize,
    pub n_spherical: usize,
    pub n_radial_angular: usize,
    pub envelope_exponent: u32,
    pub vector_source: VectorSource,
    pub attention_pool: bool,
    pub local_mp: bool,
    pub global_mp: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            n_layers: 6,
            output_dim: 1,
            readout: Readout::Sum,
            head: Head::Scalar,
            leaky_slope: 0.2,
            graph: GraphConfig::default(),
            n_radial_global: 16,
            n_radial_local: 16,
            n_spherical: 7,
            n_radial_angular: 6,
            envelope_exponent: 5,
            vector_source: VectorSource::Shared,
            attention_pool: true,
            local_mp: true,
            global_mp: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 1 || self.n_layers < 1 || self.output_dim < 1 {
            return Err(Error::Config(
                "hidden_dim, n_layers and output_dim must be at least 1".into(),
            ));
        }
        if self.head != Head::Scalar && self.output_dim != 1 {
            return Err(Error::Config("vector heads need output_dim = 1".into()));
        }
        if !self.local_mp && !self.global_mp {
            return Err(Error::Config(
                "at least one of local and global message passing must be enabled".into(),
            ));
        }
        if !(self.leaky_slope.is_finite()) {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        self.graph.validate()
    }

    /// Width of one prediction row.
    pub fn prediction_width(&self) -> usize {
        match self.head {
            Head::Scalar => self.output_dim,
            Head::VectorMagnitude => 1,
            Head::Vector => 3,
        }
    }
}

/// Three residual MLPs followed by a three-layer output MLP.
#[derive(Debug, Clone)]
pub struct UpdateBlock {
    pub residual: [Mlp; 3],
    pub output: Mlp,
}

impl UpdateBlock {
    fn new(store: &mut ParameterStore, init: &mut Initializer, name: &str, f: usize) -> Result<Self> {
        let res = MlpSpec::uniform(&[f, f, f], Activation::Swish);
        let mut mk = |k: usize| Mlp::new(store, init, &format!("{name}.residual{k}"), &res);
        let residual = [mk(0)?, mk(1)?, mk(2)?];
        let out = MlpSpec {
            widths: vec![f, f, f, f],
            activations: vec![Activation::Swish, Activation::Swish, Activation::None],
            bias: true,
        };
        let output = Mlp::new(store, init, &format!("{name}.output"), &out)?;
        Ok(Self { residual, output })
    }

    /// Returns `(h_next, z)`. `h_in` is the message-block input, skip-connected
    /// to the output of the first residual block.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        h_in: Var,
        h_msg: Var,
    ) -> Result<(Var, Var)> {
        let mut h = h_msg;
        for (k, mlp) in self.residual.iter().enumerate() {
            let r = mlp.forward(tape, store, h)?;
            h = tape.add(h, r)?;
            if k == 0 {
                h = tape.add(h, h_in)?;
            }
        }
        let z = self.output.forward(tape, store, h)?;
        Ok((h, z))
    }
}

/// Message block and update block of one plex in one layer.
#[derive(Debug, Clone)]
pub struct PlexLayer {
    pub message: Mlp,
    pub phi_d: Linear,
    /// Angle filters for one-hop and two-hop terms; local plex only.
    pub phi_theta: Option<[Mlp; 2]>,
    pub update: UpdateBlock,
    pub attention: Linear,
    pub out: Linear,
}

impl PlexLayer {
    fn new(
        store: &mut ParameterStore,
        init: &mut Initializer,
        name: &str,
        cfg: &ModelConfig,
        n_angular: Option<usize>,
    ) -> Result<Self> {
        let f = cfg.hidden_dim;
        let message = Mlp::new(
            store,
            init,
            &format!("{name}.message"),
            &MlpSpec::uniform(&[3 * f, f, f], Activation::Swish),
        )?;
        let phi_d = Linear::new(store, init, &format!("{name}.phi_d"), f, f, false)?;
        let phi_theta = match n_angular {
            Some(n) => {
                let spec = MlpSpec::uniform(&[n, f, f], Activation::Swish);
                Some([
                    Mlp::new(store, init, &format!("{name}.phi_theta_onehop"), &spec)?,
                    Mlp::new(store, init, &format!("{name}.phi_theta_twohop"), &spec)?,
                ])
            }
            None => None,
        };
        let update = UpdateBlock::new(store, init, &format!("{name}.update"), f)?;
        let attention = Linear::new(store, init, &format!("{name}.attention"), f, 1, false)?;
        let out = Linear::new(store, init, &format!("{name}.out"), f, cfg.output_dim, false)?;
        Ok(Self {
            message,
            phi_d,
            phi_theta,
            update,
            attention,
            out,
        })
    }
}

/// Per-layer attention weights, indexed `[layer][node]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionState {
    pub global: Vec<Vec<f64>>,
    pub local: Vec<Vec<f64>>,
}

impl AttentionState {
    /// Mean `α_g` and `α_l` over all layers and nodes.
    pub fn means(&self) -> (f64, f64) {
        let mean = |v: &Vec<Vec<f64>>| {
            let n: usize = v.iter().map(Vec::len).sum();
            if n == 0 {
                0.0
            } else {
                v.iter().flatten().sum::<f64>() / n as f64
            }
        };
        (mean(&self.global), mean(&self.local))
    }
}

/// Instrumented counts from one forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardStats {
    /// Messages materialized in each layer.
    pub messages: Vec<MessageCounts>,
    /// One-hop and two-hop terms folded into each local edge's message.
    pub onehop_terms: Vec<usize>,
    pub twohop_terms: Vec<usize>,
}

#[derive(Debug)]
pub struct ForwardOutput {
    /// `[n_molecules, prediction_width]`.
    pub prediction: Var,
    /// Molecule-level vector `[n_molecules, 3]` for vector heads.
    pub vector: Option<Var>,
    pub attention: AttentionState,
    pub stats: ForwardStats,
}

/// Result of evaluating one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    /// Scalar outputs, or the vector norm for vector heads.
    pub values: Vec<f64>,
    pub vector: Option<[f64; 3]>,
}

struct PlexOut {
    h: Var,
    z: Var,
    v: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct PamNet {
    config: ModelConfig,
    featurizer: Featurizer,
    embedding: Embedding,
    rbf_global: Linear,
    rbf_local: Linear,
    global: Vec<PlexLayer>,
    local: Vec<PlexLayer>,
}

impl PamNet {
    /// Builds the network and a freshly initialized parameter store.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParameterStore)> {
        let mut store = ParameterStore::new();
        let model = Self::with_store(config, &mut store, &mut Initializer::new(seed))?;
        Ok((model, store))
    }

    fn with_store(
        config: ModelConfig,
        store: &mut ParameterStore,
        init: &mut Initializer,
    ) -> Result<Self> {
        config.validate()?;
        let featurizer = Featurizer::new(
            config.graph,
            config.n_radial_global,
            config.n_radial_local,
            config.n_spherical,
            config.n_radial_angular,
            config.envelope_exponent,
        )?;
        let f = config.hidden_dim;
        let embedding = Embedding::new(store, init, "embedding", MAX_ATOMIC_NUMBER as usize + 1, f)?;
        let rbf_global = Linear::new(store, init, "rbf_global", config.n_radial_global, f, false)?;
        let rbf_local = Linear::new(store, init, "rbf_local", config.n_radial_local, f, false)?;
        let n_ang = featurizer.angular.len();
        let mut global = Vec::new();
        let mut local = Vec::new();
        for t in 0..config.n_layers {
            global.push(PlexLayer::new(store, init, &format!("layer{t}.global"), &config, None)?);
            local.push(PlexLayer::new(store, init, &format!("layer{t}.local"), &config, Some(n_ang))?);
        }
        Ok(Self {
            config,
            featurizer,
            embedding,
            rbf_global,
            rbf_local,
            global,
            local,
        })
    }

    /// Rebuilds the layer structure of `config` against an existing store,
    /// checking that every parameter name and shape matches.
    pub fn from_store(config: ModelConfig, store: &ParameterStore) -> Result<Self> {
        let mut fresh = ParameterStore::new();
        let model = Self::with_store(config, &mut fresh, &mut Initializer::new(0))?;
        if fresh.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "config expects {} parameters, checkpoint has {}",
                fresh.len(),
                store.len()
            )));
        }
        for id in fresh.ids() {
            if fresh.name(id) != store.name(id) || fresh.value(id).shape() != store.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} does not match checkpoint entry {}",
                    fresh.name(id),
                    store.name(id)
                )));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn layers(&self) -> (&[PlexLayer], &[PlexLayer]) {
        (&self.global, &self.local)
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embedding.table
    }

    pub fn prepare(&self, s: &Structure) -> Result<Prepared> {
        self.featurizer.prepare(s)
    }

    fn message_embed(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        layer: &PlexLayer,
        h: Var,
        e: Var,
        src: &Arc<[usize]>,
        dst: &Arc<[usize]>,
    ) -> Result<Var> {
        let hj = tape.gather(h, src.clone())?;
        let hi = tape.gather(h, dst.clone())?;
        let x = tape.concat_cols(&[hj, hi, e])?;
        layer.message.forward(tape, store, x)
    }

    /// Projected radial features `(e_global, e_local)`.
    pub fn edge_embeddings(&self, tape: &mut Tape, store: &ParameterStore, batch: &Batch) -> Result<(Var, Var)> {
        let rbf_g = tape.constant(batch.rbf_global.clone());
        let e_g = self.rbf_global.forward(tape, store, rbf_g)?;
        let rbf_l = tape.constant(batch.rbf_local.clone());
        let e_l = self.rbf_local.forward(tape, store, rbf_l)?;
        Ok((e_g, e_l))
    }

    /// Global message block of layer `t`; returns `(h_msg, m)`.
    pub fn global_message(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        t: usize,
        batch: &Batch,
        h: Var,
        e: Var,
    ) -> Result<(Var, Var)> {
        let layer = &self.global[t];
        let m = self.message_embed(tape, store, layer, h, e, &batch.global_src, &batch.global_dst)?;
        let pe = layer.phi_d.forward(tape, store, e)?;
        let h_msg = aggregate(tape, h, m, pe, &batch.global_dst)?;
        Ok((h_msg, m))
    }

    fn global_layer(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        t: usize,
        batch: &Batch,
        h: Var,
        e: Var,
        counts: &mut MessageCounts,
    ) -> Result<PlexOut> {
        let (h_msg, m) = self.global_message(tape, store, t, batch, h, e)?;
        counts.global += tape.shape(m)[0];
        let (h_next, z) = self.global[t].update.forward(tape, store, h, h_msg)?;
        let v = if self.config.head == Head::Scalar {
            None
        } else {
            Some(geometric_vectors(tape, m, &batch.disp_global, &batch.global_dst, batch.n_nodes)?)
        };
        Ok(PlexOut { h: h_next, z, v })
    }

    /// Local message block of layer `t`; returns `(h_msg, m)` where `m` is
    /// the message embedding before the angle terms are added.
    #[allow(clippy::too_many_arguments)]
    pub fn local_message(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        t: usize,
        batch: &Batch,
        h: Var,
        e: Var,
        angular: [Var; 2],
        counts: &mut MessageCounts,
    ) -> Result<(Var, Var)> {
        let layer = &self.local[t];
        let m = self.message_embed(tape, store, layer, h, e, &batch.local_src, &batch.local_dst)?;
        let n_edges = tape.shape(m)[0];
        counts.local_base += n_edges;
        let pe = layer.phi_d.forward(tape, store, e)?;
        let weighted = tape.mul(m, pe)?;
        let phi_theta = layer
            .phi_theta
            .as_ref()
            .ok_or_else(|| Error::Config("local layer without angle filters".into()))?;
        let hops = [
            (&batch.onehop_src, &batch.onehop_dst),
            (&batch.twohop_src, &batch.twohop_dst),
        ];
        let mut m_new = m;
        for ((src, dst), (filter, a)) in hops.into_iter().zip(phi_theta.iter().zip(angular)) {
            let terms = tape.gather(weighted, src.clone())?;
            counts.local_angle += tape.shape(terms)[0];
            let pa = filter.forward(tape, store, a)?;
            let terms = tape.mul(terms, pa)?;
            let s = tape.scatter_add(terms, dst.clone(), n_edges)?;
            m_new = tape.add(m_new, s)?;
        }
        let h_msg = aggregate(tape, h, m_new, pe, &batch.local_dst)?;
        Ok((h_msg, m))
    }

    #[allow(clippy::too_many_arguments)]
    fn local_layer(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        t: usize,
        batch: &Batch,
        h: Var,
        e: Var,
        angular: [Var; 2],
        counts: &mut MessageCounts,
    ) -> Result<PlexOut> {
        let (h_msg, m) = self.local_message(tape, store, t, batch, h, e, angular, counts)?;
        let (h_next, z) = self.local[t].update.forward(tape, store, h, h_msg)?;
        let own_field = self.config.vector_source == VectorSource::PerPlex || !self.config.global_mp;
        let v = if self.config.head != Head::Scalar && own_field {
            Some(geometric_vectors(tape, m, &batch.disp_local, &batch.local_dst, batch.n_nodes)?)
        } else {
            None
        };
        Ok(PlexOut { h: h_next, z, v })
    }

    /// Attention weights `(α_g, α_l)`, each `[N, 1]`.
    pub fn attention_weights(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        layer: usize,
        z_g: Var,
        z_l: Var,
    ) -> Result<(Var, Var)> {
        let slope = self.config.leaky_slope;
        let s_g = self.global[layer].attention.forward(tape, store, z_g)?;
        let s_g = tape.leaky_relu(s_g, slope);
        let s_l = self.local[layer].attention.forward(tape, store, z_l)?;
        let s_l = tape.leaky_relu(s_l, slope);
        let diff = tape.sub(s_g, s_l)?;
        let a_g = tape.sigmoid(diff);
        let neg = tape.scale(diff, -1.0);
        let a_l = tape.sigmoid(neg);
        Ok((a_g, a_l))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, batch: &Batch) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let n = batch.n_nodes;
        let vector_head = cfg.head != Head::Scalar;
        let mut h = self.embedding.forward(tape, store, batch.species.clone())?;
        let (e_g, e_l) = self.edge_embeddings(tape, store, batch)?;
        let ang = [
            tape.constant(batch.ang_onehop.clone()),
            tape.constant(batch.ang_twohop.clone()),
        ];
        let half = tape.constant(Tensor::filled(n, 1, 0.5));
        let one = tape.constant(Tensor::filled(n, 1, 1.0));

        let mut attention = AttentionState::default();
        let mut stats = ForwardStats::default();
        let mut total: Option<Var> = None;
        for t in 0..cfg.n_layers {
            let mut counts = MessageCounts::default();
            let g = if cfg.global_mp {
                let out = self.global_layer(tape, store, t, batch, h, e_g, &mut counts)?;
                h = out.h;
                Some(out)
            } else {
                None
            };
            let l = if cfg.local_mp {
                let out = self.local_layer(tape, store, t, batch, h, e_l, ang, &mut counts)?;
                h = out.h;
                Some(out)
            } else {
                None
            };
            stats.messages.push(counts);

            let (a_g, a_l) = match (&g, &l) {
                (Some(g), Some(l)) if cfg.attention_pool => {
                    self.attention_weights(tape, store, t, g.z, l.z)?
                }
                (Some(_), Some(_)) => (half, half),
                (Some(_), None) => (one, tape.constant(Tensor::zeros(n, 1))),
                (None, _) => (tape.constant(Tensor::zeros(n, 1)), one),
            };
            attention.global.push(tape.value(a_g).data().to_vec());
            attention.local.push(tape.value(a_l).data().to_vec());

            let shared_v = g.as_ref().and_then(|g| g.v);
            let mut layer_out: Option<Var> = None;
            for (plex, layer, alpha) in [(&g, &self.global[t], a_g), (&l, &self.local[t], a_l)] {
                let Some(p) = plex else { continue };
                let q = layer.out.forward(tape, store, p.z)?;
                let term = if vector_head {
                    let v = p.v.or(shared_v).ok_or_else(|| {
                        Error::Config("vector head without geometric vectors".into())
                    })?;
                    let w = tape.mul(alpha, q)?;
                    tape.mul_column(w, v)?
                } else {
                    tape.mul_column(alpha, q)?
                };
                layer_out = Some(match layer_out {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
            let layer_out = layer_out.expect("at least one plex enabled");
            total = Some(match total {
                Some(acc) => tape.add(acc, layer_out)?,
                None => layer_out,
            });
        }
        stats.onehop_terms = count_terms(&batch.onehop_dst, batch.graph.local.len());
        stats.twohop_terms = count_terms(&batch.twohop_dst, batch.graph.local.len());

        let total = total.expect("n_layers >= 1");
        let mut y = tape.scatter_add(total, batch.molecule.clone(), batch.n_molecules)?;
        if cfg.readout == Readout::Mean {
            let inv = batch
                .atoms_per_molecule
                .iter()
                .map(|&k| 1.0 / k.max(1) as f64)
                .collect();
            let inv = tape.constant(Tensor::from_vec(batch.n_molecules, 1, inv)?);
            y = tape.mul_column(inv, y)?;
        }
        let (prediction, vector) = match cfg.head {
            Head::Scalar => (y, None),
            Head::VectorMagnitude => (tape.row_norm(y), Some(y)),
            Head::Vector => (y, Some(y)),
        };
        Ok(ForwardOutput {
            prediction,
            vector,
            attention,
            stats,
        })
    }

    /// Evaluates prepared molecules together and splits the rows back out.
    pub fn predict_prepared(&self, store: &ParameterStore, items: &[&Prepared]) -> Result<Vec<Prediction>> {
        let batch = Batch::new(items)?;
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, &batch)?;
        tape.check_finite()?;
        let pred = tape.value(out.prediction);
        Ok(items
            .iter()
            .enumerate()
            .map(|(m, p)| {
                let vector = out.vector.map(|v| {
                    let r = tape.value(v).row(m);
                    [r[0], r[1], r[2]]
                });
                let values = match self.config.head {
                    Head::Vector => vec![vector.map_or(0.0, crate::geometry::norm)],
                    _ => pred.row(m).to_vec(),
                };
                Prediction {
                    id: p.id.clone(),
                    values,
                    vector,
                }
            })
            .collect())
    }

    pub fn predict(&self, store: &ParameterStore, s: &Structure) -> Result<Prediction> {
        let p = self.prepare(s)?;
        Ok(self.predict_prepared(store, &[&p])?.remove(0))
    }
}

/// `h_i + Σ_j m_ji ⊙ φ_d(e_ji)` over the edges ending at `i`.
pub fn aggregate(tape: &mut Tape, h: Var, m: Var, pe: Var, dst: &Arc<[usize]>) -> Result<Var> {
    let n = tape.shape(h)[0];
    let w = tape.mul(m, pe)?;
    let agg = tape.scatter_add(w, dst.clone(), n)?;
    tape.add(h, agg)
}

/// `v_i = Σ_j (r_i − r_j)·‖m_ji‖` over incoming edges, with `disp` holding
/// `r_i − r_j` per edge.
pub fn geometric_vectors(
    tape: &mut Tape,
    m: Var,
    disp: &Tensor,
    dst: &Arc<[usize]>,
    n_nodes: usize,
) -> Result<Var> {
    let norms = tape.row_norm(m);
    let d = tape.constant(disp.clone());
    let w = tape.mul_column(norms, d)?;
    tape.scatter_add(w, dst.clone(), n_nodes)
}

fn count_terms(dst: &[usize], n_edges: usize) -> Vec<usize> {
    let mut c = vec![0; n_edges];
    for &e in dst {
        c[e] += 1;
    }
    c
}
