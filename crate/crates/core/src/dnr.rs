//! Dead-neuron rate instrumentation.
//!
//! A hidden ReLU neuron is dead on a sample when its post-activation is
//! exactly zero. For a dense layer a neuron is one output unit; for a conv
//! layer it is one output channel, dead when every spatial output is zero.
//! A neuron is statically dead when all of its incoming weights are pruned
//! (and its bias, if any, is not positive); every other dead event is
//! dynamic. Rates are normalized by the neuron count of the unpruned network.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::MaskState;
use crate::nn::{forward, Activation, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub unit: usize,
}

/// Layer-specific static and dynamic rates, normalized by the layer width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDnr {
    pub layer: usize,
    pub neurons: usize,
    pub static_count: usize,
    /// Dead events on non-static neurons, summed over samples.
    pub dynamic_count: usize,
    pub s_dnr: f64,
    pub d_dnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnrReport {
    pub dnr: f64,
    pub static_dnr: f64,
    pub dynamic_dnr: f64,
    pub per_layer: Vec<LayerDnr>,
    pub n_samples: usize,
    /// Hidden ReLU neurons in the unpruned network.
    pub denominator: usize,
    pub static_count: usize,
    pub dynamic_count: usize,
}

impl DnrReport {
    /// Total dead (sample, neuron) events, static ones included.
    pub fn dead_events(&self) -> usize {
        self.static_count * self.n_samples + self.dynamic_count
    }
}

/// Hidden layers with ReLU activation.
pub fn relu_layers(net: &Network) -> Vec<usize> {
    net.hidden_layers()
        .filter(|&l| net.layer(l).activation() == Activation::Relu)
        .collect()
}

/// Statically dead hidden ReLU neurons.
pub fn classify_static(net: &Network, masks: &MaskState) -> Result<BTreeSet<NeuronId>> {
    masks.check_aligned(net)?;
    let mut out = BTreeSet::new();
    for layer in relu_layers(net) {
        let l = net.layer(layer);
        let keep = masks.layer(layer);
        for unit in 0..l.neurons() {
            let all_pruned = l.incoming_weights(unit).into_iter().all(|i| !keep[i]);
            let bias_off = l.bias().map_or(true, |b| b.data()[unit] <= 0.0);
            if all_pruned && bias_off {
                out.insert(NeuronId { layer, unit });
            }
        }
    }
    Ok(out)
}

/// Per layer, per neuron: number of samples on which the neuron is dead.
pub fn dead_sample_counts(net: &Network, inputs: &Tensor) -> Result<Vec<Vec<usize>>> {
    const CHUNK: usize = 512;
    let layers = relu_layers(net);
    let mut counts: Vec<Vec<usize>> = layers.iter().map(|&l| vec![0; net.layer(l).neurons()]).collect();
    let n = inputs.rows();
    let rows: Vec<usize> = (0..n).collect();
    for chunk in rows.chunks(CHUNK) {
        let x = if chunk.len() == n { inputs.clone() } else { inputs.select_rows(chunk) };
        let (_, traces) = forward(net, &x, true)?;
        let traces = traces.expect("recorded");
        for (slot, &layer) in layers.iter().enumerate() {
            let post = &traces.post[layer];
            let per_unit = post.row_len() / net.layer(layer).neurons();
            for b in 0..chunk.len() {
                for (unit, values) in post.row(b).chunks(per_unit).enumerate() {
                    if values.iter().all(|&v| v == 0.0) {
                        counts[slot][unit] += 1;
                    }
                }
            }
        }
    }
    Ok(counts)
}

pub fn compute_dnr(net: &Network, masks: &MaskState, inputs: &Tensor) -> Result<DnrReport> {
    let layers = relu_layers(net);
    if layers.is_empty() {
        return Err(Error::Degenerate("network has no hidden ReLU neurons".into()));
    }
    if inputs.rows() == 0 {
        return Err(Error::InvalidInput("DNR needs at least one sample".into()));
    }
    let statics = classify_static(net, masks)?;
    let counts = dead_sample_counts(net, inputs)?;
    let n = inputs.rows();
    let mut per_layer = Vec::with_capacity(layers.len());
    for (slot, &layer) in layers.iter().enumerate() {
        let neurons = net.layer(layer).neurons();
        let mut static_count = 0;
        let mut dynamic_count = 0;
        for (unit, &dead) in counts[slot].iter().enumerate() {
            if statics.contains(&NeuronId { layer, unit }) {
                if dead != n {
                    return Err(Error::Invariant(format!(
                        "statically dead neuron ({layer}, {unit}) active on {} samples",
                        n - dead
                    )));
                }
                static_count += 1;
            } else {
                dynamic_count += dead;
            }
        }
        per_layer.push(LayerDnr {
            layer,
            neurons,
            static_count,
            dynamic_count,
            s_dnr: static_count as f64 / neurons as f64,
            d_dnr: dynamic_count as f64 / (n * neurons) as f64,
        });
    }
    let denominator: usize = per_layer.iter().map(|l| l.neurons).sum();
    let static_count: usize = per_layer.iter().map(|l| l.static_count).sum();
    let dynamic_count: usize = per_layer.iter().map(|l| l.dynamic_count).sum();
    let static_dnr = static_count as f64 / denominator as f64;
    let dynamic_dnr = dynamic_count as f64 / (n * denominator) as f64;
    Ok(DnrReport {
        dnr: static_dnr + dynamic_dnr,
        static_dnr,
        dynamic_dnr,
        per_layer,
        n_samples: n,
        denominator,
        static_count,
        dynamic_count,
    })
}

/// `(S_DNR, D_DNR)` of one ReLU layer.
pub fn layer_dnr(net: &Network, masks: &MaskState, inputs: &Tensor, layer: usize) -> Result<(f64, f64)> {
    if !relu_layers(net).contains(&layer) {
        return Err(Error::InvalidInput(format!("layer {layer} is not a hidden ReLU layer")));
    }
    let report = compute_dnr(net, masks, inputs)?;
    let l = report
        .per_layer
        .iter()
        .find(|l| l.layer == layer)
        .expect("relu layer reported");
    Ok((l.s_dnr, l.d_dnr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityMeasures {
    pub hoyer_ratio: f64,
    pub gini: f64,
}

fn abs_total(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sparsity measure of an empty vector".into()));
    }
    let l1: f64 = values.iter().map(|v| v.abs()).sum();
    if l1 == 0.0 {
        return Err(Error::InvalidInput("sparsity measure undefined for an all-zero vector".into()));
    }
    Ok(l1)
}

/// L1 / L2 norm ratio of the absolute values.
pub fn hoyer(values: &[f64]) -> Result<f64> {
    let l1 = abs_total(values)?;
    let l2 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(l1 / l2)
}

/// Gini index of the absolute values:
/// `2 * sum_i i * x_(i) / (n * sum x) - (n + 1) / n`, `x` ascending, `i` 1-based.
pub fn gini(values: &[f64]) -> Result<f64> {
    let total = abs_total(values)?;
    let mut sorted: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum();
    Ok(2.0 * weighted / (n * total) - (n + 1.0) / n)
}

pub fn sparsity_measures(net: &Network) -> Result<SparsityMeasures> {
    let all: Vec<f64> = net.layers().iter().flat_map(|l| l.weight().data().iter().copied()).collect();
    Ok(SparsityMeasures {
        hoyer_ratio: hoyer(&all)?,
        gini: gini(&all)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    /// 1 input -> 2 hidden ReLU -> 1 output, hidden weights `w`.
    fn two_hidden(w: [f64; 2]) -> Network {
        let mut net = Network::new(
            vec![1],
            &[
                LayerSpec::dense(1, 2, Activation::Relu),
                LayerSpec::dense(2, 1, Activation::Identity),
            ],
        )
        .unwrap();
        net.weights_mut(0).copy_from_slice(&w);
        net.weights_mut(1).copy_from_slice(&[1.0, 1.0]);
        net
    }

    #[test]
    fn hand_enumerated_rate() {
        // neuron A = relu(x), dead for x = -1 only; B = relu(x + 2 * 0) never dead
        let mut net = Network::new(
            vec![2],
            &[
                LayerSpec::dense(2, 2, Activation::Relu),
                LayerSpec::dense(2, 1, Activation::Identity),
            ],
        )
        .unwrap();
        // W = [[1, 0], [0, 1]]: A = relu(x0), B = relu(x1)
        net.weights_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let masks = MaskState::new(&net);
        let x = Tensor::from_rows(&[vec![-1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let r = compute_dnr(&net, &masks, &x).unwrap();
        assert_eq!(r.dnr, 0.25);
        assert_eq!(r.static_dnr, 0.0);
        assert_eq!(r.dynamic_dnr, 0.25);
        assert_eq!(r.dead_events(), 1);
    }

    #[test]
    fn fully_static_layer() {
        let mut net = two_hidden([1.0, 2.0]);
        let mut masks = MaskState::new(&net);
        masks.prune(&mut net, 0, 0).unwrap();
        masks.prune(&mut net, 0, 1).unwrap();
        let x = Tensor::from_rows(&[vec![1.0], vec![-3.0], vec![0.5]]).unwrap();
        let r = compute_dnr(&net, &masks, &x).unwrap();
        assert_eq!((r.dnr, r.static_dnr, r.dynamic_dnr), (1.0, 1.0, 0.0));
        assert_eq!(classify_static(&net, &masks).unwrap().len(), 2);
    }

    #[test]
    fn static_classification() {
        let mut net = Network::new(
            vec![3],
            &[
                LayerSpec::dense(3, 4, Activation::Relu),
                LayerSpec::dense(4, 2, Activation::Identity),
            ],
        )
        .unwrap();
        net.weights_mut(0).fill(1.0);
        let mut masks = MaskState::new(&net);
        assert!(classify_static(&net, &masks).unwrap().is_empty());
        for i in net.layer(0).incoming_weights(3) {
            masks.prune(&mut net, 0, i).unwrap();
        }
        let s = classify_static(&net, &masks).unwrap();
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec![NeuronId { layer: 0, unit: 3 }]);
        // 1 of 4 static, others always active on positive inputs
        let x = Tensor::from_rows(&[vec![1.0, 1.0, 1.0], vec![0.5, 0.2, 0.1]]).unwrap();
        assert_eq!(layer_dnr(&net, &masks, &x, 0).unwrap(), (0.25, 0.0));
        assert!(layer_dnr(&net, &masks, &x, 1).is_err());
    }

    #[test]
    fn positive_bias_keeps_pruned_neuron_alive() {
        let mut net = Network::new(
            vec![1],
            &[
                LayerSpec::dense(1, 2, Activation::Relu).with_bias(),
                LayerSpec::dense(2, 1, Activation::Identity),
            ],
        )
        .unwrap();
        net.bias_mut(0).unwrap().copy_from_slice(&[0.5, -0.5]);
        let mut masks = MaskState::new(&net);
        masks.prune(&mut net, 0, 0).unwrap();
        masks.prune(&mut net, 0, 1).unwrap();
        let s = classify_static(&net, &masks).unwrap();
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec![NeuronId { layer: 0, unit: 1 }]);
    }

    #[test]
    fn no_relu_layers_is_degenerate() {
        let net = Network::new(
            vec![1],
            &[
                LayerSpec::dense(1, 2, Activation::Gelu),
                LayerSpec::dense(2, 1, Activation::Identity),
            ],
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            compute_dnr(&net, &MaskState::new(&net), &x),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn hoyer_and_gini_extremes() {
        let flat = [0.3; 4];
        assert!((hoyer(&flat).unwrap() - 2.0).abs() < 1e-15);
        assert!(gini(&flat).unwrap().abs() < 1e-15);
        let one_hot = [0.0, 0.0, 5.0, 0.0, 0.0];
        assert!((hoyer(&one_hot).unwrap() - 1.0).abs() < 1e-15);
        assert!((gini(&one_hot).unwrap() - 0.8).abs() < 1e-15);
        assert!(hoyer(&[0.0, 0.0]).is_err());
        assert!(gini(&[]).is_err());
    }

    #[test]
    fn conv_channel_dead_only_if_all_positions_zero() {
        use crate::nn::Padding;
        let mut net = Network::new(
            vec![1, 2, 2],
            &[
                LayerSpec::conv(1, 1, 1, Padding::Valid, Activation::Relu),
                LayerSpec::dense(4, 1, Activation::Identity),
            ],
        )
        .unwrap();
        net.weights_mut(0)[0] = 1.0;
        let masks = MaskState::new(&net);
        let x = Tensor::from_rows(&[vec![-1.0, -1.0, -1.0, 0.5], vec![-1.0, -2.0, -3.0, -4.0]]).unwrap();
        let r = compute_dnr(&net, &masks, &x).unwrap();
        assert_eq!(r.dynamic_count, 1);
        assert_eq!(r.denominator, 1);
    }
}
