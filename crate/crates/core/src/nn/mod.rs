//! Feed-forward engine: layers, forward/backward passes, SGD.

mod engine;
mod layer;
mod optim;

pub use engine::{
    accuracy, backward, forward, layer_preactivation, loss, predict, softmax_cross_entropy,
    GradSet, Traces,
};
pub use layer::{init_params, Activation, Layer, LayerKind, LayerSpec, Network, Padding};
pub use optim::{sgd_step, LrSchedule, OptimState};
