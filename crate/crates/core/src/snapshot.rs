use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnapshotTag {
    /// Parameters at initialization.
    Init,
    /// Parameters after the given training epoch.
    Epoch(usize),
    /// Parameters at the best-validation epoch of a training run.
    Converged,
}

/// Captured parameter values for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub tag: SnapshotTag,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Option<Tensor>>,
}

impl Snapshot {
    pub fn weights(&self, layer: usize) -> &[f64] {
        self.weights[layer].data()
    }

    pub fn with_tag(mut self, tag: SnapshotTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn check_aligned(&self, net: &Network) -> Result<()> {
        if self.weights.len() != net.layers().len() || self.biases.len() != net.layers().len() {
            return Err(Error::Structure(format!(
                "snapshot has {} layers, network has {}",
                self.weights.len(),
                net.layers().len()
            )));
        }
        for (i, layer) in net.layers().iter().enumerate() {
            if self.weights[i].shape() != layer.weight().shape() {
                return Err(Error::Structure(format!(
                    "snapshot layer {i} weight shape {:?} != {:?}",
                    self.weights[i].shape(),
                    layer.weight().shape()
                )));
            }
            let bias_ok = match (&self.biases[i], layer.bias()) {
                (None, None) => true,
                (Some(a), Some(b)) => a.shape() == b.shape(),
                _ => false,
            };
            if !bias_ok {
                return Err(Error::Structure(format!("snapshot layer {i} bias mismatch")));
            }
        }
        Ok(())
    }
}
