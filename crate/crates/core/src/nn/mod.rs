//! Dense tensors, reverse-mode gradients, layers and optimizers.

pub mod checkpoint;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use layers::{init_parameters, Activation, Embedding, Initializer, Linear, Mlp, MlpSpec};
pub use optim::{adam_step, ema_update, AdamConfig};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tape::{BackwardStats, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
