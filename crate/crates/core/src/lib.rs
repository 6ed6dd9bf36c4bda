//! Iterative magnitude-style pruning, dead-neuron instrumentation, and the
//! activating-while-pruning procedure, on a small deterministic f64 engine.

pub mod ap;
pub mod arch;
pub mod data;
pub mod dnr;
pub mod error;
pub mod fixtures;
pub mod ib;
pub mod mask;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod snapshot;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use mask::{MaskState, PruneAction, PruneMethod, WeightId};
pub use nn::{Activation, LayerSpec, Network};
pub use snapshot::{Snapshot, SnapshotTag};
pub use tensor::Tensor;
