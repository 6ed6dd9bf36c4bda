use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::snapshot::{Snapshot, SnapshotTag};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Weight layout `[inputs, outputs]`.
    Dense { inputs: usize, outputs: usize },
    /// Stride-1 convolution, weight layout `[out, in, kh, kw]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        padding: Padding,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { inputs, outputs },
            activation,
            has_bias: false,
        }
    }

    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
        activation: Activation,
    ) -> Self {
        Self {
            kind: LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel_h: kernel,
                kernel_w: kernel,
                padding,
            },
            activation,
            has_bias: false,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.has_bias = true;
        self
    }
}

/// One parameterized layer plus the spatial geometry resolved at build time.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    pub(crate) weight: Tensor,
    pub(crate) bias: Option<Tensor>,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
}

impl Layer {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn activation(&self) -> Activation {
        self.spec.activation
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn in_hw(&self) -> (usize, usize) {
        self.in_hw
    }

    pub fn out_hw(&self) -> (usize, usize) {
        self.out_hw
    }

    pub fn in_features(&self) -> usize {
        match self.spec.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv2d { in_channels, .. } => in_channels * self.in_hw.0 * self.in_hw.1,
        }
    }

    pub fn out_features(&self) -> usize {
        match self.spec.kind {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv2d { out_channels, .. } => {
                out_channels * self.out_hw.0 * self.out_hw.1
            }
        }
    }

    /// Neuron count: dense output units, or conv output channels.
    pub fn neurons(&self) -> usize {
        match self.spec.kind {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv2d { out_channels, .. } => out_channels,
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.spec.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv2d {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => in_channels * kernel_h * kernel_w,
        }
    }

    /// The neuron a flat weight index feeds.
    pub fn neuron_of_weight(&self, index: usize) -> usize {
        match self.spec.kind {
            LayerKind::Dense { outputs, .. } => index % outputs,
            LayerKind::Conv2d { .. } => index / self.fan_in(),
        }
    }

    /// Flat weight indices feeding `neuron`.
    pub fn incoming_weights(&self, neuron: usize) -> Vec<usize> {
        match self.spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                (0..inputs).map(|i| i * outputs + neuron).collect()
            }
            LayerKind::Conv2d { .. } => {
                let f = self.fan_in();
                (neuron * f..(neuron + 1) * f).collect()
            }
        }
    }

    /// Top/left zero padding for a conv layer.
    pub(crate) fn pad(&self) -> (usize, usize) {
        match self.spec.kind {
            LayerKind::Conv2d {
                kernel_h,
                kernel_w,
                padding: Padding::Same,
                ..
            } => ((kernel_h - 1) / 2, (kernel_w - 1) / 2),
            _ => (0, 0),
        }
    }
}

/// Feed-forward stack. The last layer produces logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds a zero-initialized network. `input_shape` is `[features]` or
    /// `[channels, height, width]`.
    pub fn new(input_shape: Vec<usize>, specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Structure("network needs at least one layer".into()));
        }
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Structure(format!(
                "input shape {input_shape:?} must be non-empty and positive"
            )));
        }
        let mut layers = Vec::with_capacity(specs.len());
        // (channels, h, w) while the stack is still spatial
        let mut spatial = match input_shape.as_slice() {
            [c, h, w] => Some((*c, *h, *w)),
            _ => None,
        };
        let mut features: usize = input_shape.iter().product();
        for (index, spec) in specs.iter().enumerate() {
            let layer = match spec.kind {
                LayerKind::Dense { inputs, outputs } => {
                    if inputs == 0 || outputs == 0 {
                        return Err(Error::Structure(format!("layer {index}: zero width")));
                    }
                    if inputs != features {
                        return Err(Error::Structure(format!(
                            "layer {index}: expects {inputs} inputs but previous layer yields {features}"
                        )));
                    }
                    spatial = None;
                    features = outputs;
                    Layer {
                        spec: *spec,
                        weight: Tensor::zeros(vec![inputs, outputs]),
                        bias: spec.has_bias.then(|| Tensor::zeros(vec![outputs])),
                        in_hw: (1, 1),
                        out_hw: (1, 1),
                    }
                }
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    padding,
                } => {
                    let Some((c, h, w)) = spatial else {
                        return Err(Error::Structure(format!(
                            "layer {index}: convolution needs a [c, h, w] input"
                        )));
                    };
                    if in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
                        return Err(Error::Structure(format!("layer {index}: zero dimension")));
                    }
                    if in_channels != c {
                        return Err(Error::Structure(format!(
                            "layer {index}: expects {in_channels} channels, input has {c}"
                        )));
                    }
                    let (oh, ow) = match padding {
                        Padding::Same => (h, w),
                        Padding::Valid => {
                            if kernel_h > h || kernel_w > w {
                                return Err(Error::Structure(format!(
                                    "layer {index}: kernel {kernel_h}x{kernel_w} exceeds input {h}x{w}"
                                )));
                            }
                            (h - kernel_h + 1, w - kernel_w + 1)
                        }
                    };
                    spatial = Some((out_channels, oh, ow));
                    features = out_channels * oh * ow;
                    Layer {
                        spec: *spec,
                        weight: Tensor::zeros(vec![out_channels, in_channels, kernel_h, kernel_w]),
                        bias: spec.has_bias.then(|| Tensor::zeros(vec![out_channels])),
                        in_hw: (h, w),
                        out_hw: (oh, ow),
                    }
                }
            };
            layers.push(layer);
        }
        Ok(Self {
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_features(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_features(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_features)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &Layer {
        &self.layers[index]
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Layers whose outputs are hidden (every layer but the last).
    pub fn hidden_layers(&self) -> std::ops::Range<usize> {
        0..self.layers.len().saturating_sub(1)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.as_ref().map_or(0, Tensor::len))
            .sum()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        self.layers[layer].weight.data()
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        self.layers[layer].weight.data_mut()
    }

    pub fn bias(&self, layer: usize) -> Option<&[f64]> {
        self.layers[layer].bias.as_ref().map(Tensor::data)
    }

    pub fn bias_mut(&mut self, layer: usize) -> Option<&mut [f64]> {
        self.layers[layer].bias.as_mut().map(Tensor::data_mut)
    }

    pub fn snapshot(&self, tag: SnapshotTag) -> Snapshot {
        Snapshot {
            tag,
            weights: self.layers.iter().map(|l| l.weight.clone()).collect(),
            biases: self.layers.iter().map(|l| l.bias.clone()).collect(),
        }
    }

    /// Overwrites every parameter with the snapshot's values.
    pub fn load_snapshot(&mut self, snapshot: &Snapshot) -> Result<()> {
        snapshot.check_aligned(self)?;
        for (layer, (w, b)) in self
            .layers
            .iter_mut()
            .zip(snapshot.weights.iter().zip(&snapshot.biases))
        {
            layer.weight.data_mut().copy_from_slice(w.data());
            if let (Some(dst), Some(src)) = (layer.bias.as_mut(), b.as_ref()) {
                dst.data_mut().copy_from_slice(src.data());
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.as_ref().map_or(true, Tensor::is_finite))
    }
}

/// Kaiming-style scaled uniform initialization: weights drawn from
/// `U(-s, s)` with `s = sqrt(2 / fan_in)` for ReLU layers and
/// `sqrt(1 / fan_in)` otherwise. Biases start at zero.
pub fn init_params(net: &mut Network, seed: u64) {
    let mut rng = seeded_rng(seed);
    for layer in &mut net.layers {
        let gain = match layer.spec.activation {
            Activation::Relu => 2.0,
            Activation::Gelu | Activation::Identity => 1.0,
        };
        let scale = (gain / layer.fan_in() as f64).sqrt();
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-scale..scale);
        }
        if let Some(b) = layer.bias.as_mut() {
            b.data_mut().fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp() -> Network {
        Network::new(
            vec![4],
            &[
                LayerSpec::dense(4, 3, Activation::Relu),
                LayerSpec::dense(3, 2, Activation::Identity),
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_width_mismatch() {
        let err = Network::new(
            vec![4],
            &[
                LayerSpec::dense(4, 3, Activation::Relu),
                LayerSpec::dense(5, 2, Activation::Identity),
            ],
        );
        assert!(matches!(err, Err(Error::Structure(_))));
    }

    #[test]
    fn conv_geometry() {
        let net = Network::new(
            vec![1, 6, 6],
            &[
                LayerSpec::conv(1, 2, 3, Padding::Valid, Activation::Relu),
                LayerSpec::conv(2, 3, 3, Padding::Same, Activation::Relu),
                LayerSpec::dense(3 * 4 * 4, 2, Activation::Identity),
            ],
        )
        .unwrap();
        assert_eq!(net.layer(0).out_hw(), (4, 4));
        assert_eq!(net.layer(1).out_hw(), (4, 4));
        assert_eq!(net.layer(1).fan_in(), 18);
        assert_eq!(net.layer(1).neuron_of_weight(20), 1);
        assert_eq!(net.layer(1).incoming_weights(2), (36..54).collect::<Vec<_>>());
    }

    #[test]
    fn conv_after_dense_rejected() {
        let err = Network::new(
            vec![1, 4, 4],
            &[
                LayerSpec::dense(16, 16, Activation::Relu),
                LayerSpec::conv(1, 1, 3, Padding::Same, Activation::Relu),
            ],
        );
        assert!(err.is_err());
    }

    #[test]
    fn same_seed_same_bytes_different_seed_differs() {
        let mut a = mlp();
        let mut b = mlp();
        let mut c = mlp();
        init_params(&mut a, 7);
        init_params(&mut b, 7);
        init_params(&mut c, 8);
        let bytes = |n: &Network| -> Vec<u64> {
            n.layers().iter().flat_map(|l| l.weight().data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn dense_init_stdev_matches_uniform_relation() {
        let mut net = Network::new(
            vec![100],
            &[
                LayerSpec::dense(100, 100, Activation::Relu),
                LayerSpec::dense(100, 2, Activation::Identity),
            ],
        )
        .unwrap();
        init_params(&mut net, 11);
        let w = net.weights(0);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        // U(-s, s) has standard deviation s / sqrt(3)
        let expected = (2.0f64 / 100.0).sqrt() / 3f64.sqrt();
        assert!((sd - expected).abs() / expected < 0.2, "sd {sd} vs {expected}");
    }

    #[test]
    fn dense_incoming_weights_are_a_column() {
        let net = mlp();
        assert_eq!(net.layer(0).incoming_weights(1), vec![1, 4, 7, 10]);
        assert!(net.layer(0).incoming_weights(1).iter().all(|&i| net.layer(0).neuron_of_weight(i) == 1));
    }
}
