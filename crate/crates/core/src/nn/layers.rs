//! Linear layers, MLPs and the atom embedding table.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParameterStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Swish,
    LeakyRelu(f64),
    None,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Swish => tape.swish(x),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, s),
            Activation::None => x,
        }
    }
}

/// Layer widths `[in, h1, ..., out]` with one activation per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub bias: bool,
}

impl MlpSpec {
    /// Every layer followed by `act`.
    pub fn uniform(widths: &[usize], act: Activation) -> Self {
        Self {
            widths: widths.to_vec(),
            activations: vec![act; widths.len().saturating_sub(1)],
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("MLP needs at least one layer".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config(format!("MLP widths must be >= 1: {:?}", self.widths)));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(Error::Config(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.widths.len() - 1
            )));
        }
        Ok(())
    }
}

/// Seeded source of initial parameter values.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, bound: f64) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-bound..=bound))
            .collect();
        Tensor::from_vec(rows, cols, data).expect("shape")
    }

    /// Kaiming-uniform with `a = √5`, which reduces to bound `1/√fan_in`.
    pub fn kaiming_uniform(&mut self, out: usize, fan_in: usize) -> Tensor {
        self.uniform(out, fan_in, 1.0 / (fan_in as f64).sqrt())
    }

    /// Atom embedding table entries drawn from `U(−√3, √3)`.
    pub fn embedding(&mut self, rows: usize, cols: usize) -> Tensor {
        self.uniform(rows, cols, 3f64.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParameterStore,
        init: &mut Initializer,
        name: &str,
        fan_in: usize,
        out: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.weight"), init.kaiming_uniform(out, fan_in))?;
        let b = if bias {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Some(store.add(format!("{name}.bias"), init.uniform(1, out, bound))?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = tape.param(self.w, store.values());
        let b = self.b.map(|b| tape.param(b, store.values()));
        tape.linear(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.w];
        v.extend(self.b);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<(Linear, Activation)>,
}

impl Mlp {
    pub fn new(
        store: &mut ParameterStore,
        init: &mut Initializer,
        name: &str,
        spec: &MlpSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .zip(&spec.activations)
            .enumerate()
            .map(|(k, (w, &act))| {
                Linear::new(store, init, &format!("{name}.{k}"), w[0], w[1], spec.bias)
                    .map(|l| (l, act))
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, mut x: Var) -> Result<Var> {
        for (lin, act) in &self.layers {
            x = lin.forward(tape, store, x)?;
            x = act.apply(tape, x);
        }
        Ok(x)
    }

    pub fn layers(&self) -> &[(Linear, Activation)] {
        &self.layers
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|(l, _)| l.params()).collect()
    }

    /// Sets every weight and bias to zero.
    pub fn zero(&self, store: &mut ParameterStore) {
        for id in self.params() {
            store.value_mut(id).data_mut().fill(0.0);
        }
    }
}

/// Lookup table of per-element embeddings indexed by atomic number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(
        store: &mut ParameterStore,
        init: &mut Initializer,
        name: &str,
        rows: usize,
        dim: usize,
    ) -> Result<Self> {
        let table = store.add(format!("{name}.table"), init.embedding(rows, dim))?;
        Ok(Self { table })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, index: Arc<[usize]>) -> Result<Var> {
        let t = tape.param(self.table, store.values());
        tape.gather(t, index)
    }
}

/// Builds a fresh store holding a single MLP.
pub fn init_parameters(spec: &MlpSpec, seed: u64) -> Result<(ParameterStore, Mlp)> {
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(seed);
    let mlp = Mlp::new(&mut store, &mut init, "mlp", spec)?;
    Ok((store, mlp))
}
