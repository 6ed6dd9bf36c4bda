//! Weight masks, sparsity bookkeeping, and the baseline selection metrics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{backward, GradSet, Network};

/// Address of one weight: layer and flat index into its weight tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WeightId {
    pub layer: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PruneMethod {
    GlobalMagnitude,
    GlobalGradient,
    Lamp,
    /// Activating-while-pruning selection.
    Ap,
}

impl PruneMethod {
    pub fn name(self) -> &'static str {
        match self {
            PruneMethod::GlobalMagnitude => "global_magnitude",
            PruneMethod::GlobalGradient => "global_gradient",
            PruneMethod::Lamp => "lamp",
            PruneMethod::Ap => "ap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "global_magnitude" | "magnitude" | "imp" => Some(PruneMethod::GlobalMagnitude),
            "global_gradient" | "gradient" => Some(PruneMethod::GlobalGradient),
            "lamp" => Some(PruneMethod::Lamp),
            "ap" => Some(PruneMethod::Ap),
            _ => None,
        }
    }
}

/// One pruning decision; `selected` was unmasked before the action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneAction {
    pub method: PruneMethod,
    /// Percent of the base remaining-weight count this action targeted.
    pub fraction: f64,
    /// Target count `floor(fraction% * base)`.
    pub requested: usize,
    pub selected: Vec<WeightId>,
    pub cycle: usize,
    /// `requested - selected.len()` when the method ran out of candidates.
    pub shortfall: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityRecord {
    /// Percent of weights remaining.
    pub lambda_percent: f64,
    pub per_layer_lambda: Vec<f64>,
    pub remaining: usize,
    pub total: usize,
}

/// Per-weight keep bits. Biases are never masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskState {
    keep: Vec<Vec<bool>>,
    total: usize,
    pruned: usize,
}

impl MaskState {
    pub fn new(net: &Network) -> Self {
        let keep: Vec<Vec<bool>> = net.layers().iter().map(|l| vec![true; l.weight().len()]).collect();
        let total = keep.iter().map(Vec::len).sum();
        Self {
            keep,
            total,
            pruned: 0,
        }
    }

    /// Rebuilds a mask from raw keep bits.
    pub fn from_bits(keep: Vec<Vec<bool>>) -> Self {
        let total = keep.iter().map(Vec::len).sum();
        let pruned = keep.iter().flatten().filter(|k| !**k).count();
        Self { keep, total, pruned }
    }

    pub fn layer(&self, layer: usize) -> &[bool] {
        &self.keep[layer]
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.keep
    }

    pub fn is_kept(&self, id: WeightId) -> bool {
        self.keep[id.layer][id.index]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn pruned(&self) -> usize {
        self.pruned
    }

    pub fn remaining(&self) -> usize {
        self.total - self.pruned
    }

    pub fn remaining_in_layer(&self, layer: usize) -> usize {
        self.keep[layer].iter().filter(|k| **k).count()
    }

    /// Pruned count recomputed from the bits.
    pub fn recount_pruned(&self) -> usize {
        self.keep.iter().flatten().filter(|k| !**k).count()
    }

    pub fn check_aligned(&self, net: &Network) -> Result<()> {
        if self.keep.len() != net.layers().len() {
            return Err(Error::Structure(format!(
                "mask has {} layers, network has {}",
                self.keep.len(),
                net.layers().len()
            )));
        }
        for (i, (k, l)) in self.keep.iter().zip(net.layers()).enumerate() {
            if k.len() != l.weight().len() {
                return Err(Error::Structure(format!(
                    "mask layer {i} has {} bits for {} weights",
                    k.len(),
                    l.weight().len()
                )));
            }
        }
        Ok(())
    }

    /// Marks one weight pruned and zeroes it.
    pub fn prune(&mut self, net: &mut Network, layer: usize, index: usize) -> Result<()> {
        let bit = self
            .keep
            .get_mut(layer)
            .and_then(|l| l.get_mut(index))
            .ok_or_else(|| Error::InvalidInput(format!("no weight ({layer}, {index})")))?;
        if !*bit {
            return Err(Error::Invariant(format!("weight ({layer}, {index}) already pruned")));
        }
        *bit = false;
        self.pruned += 1;
        net.weights_mut(layer)[index] = 0.0;
        Ok(())
    }

    pub fn apply_action(&mut self, net: &mut Network, action: &PruneAction) -> Result<()> {
        self.check_aligned(net)?;
        for id in &action.selected {
            self.prune(net, id.layer, id.index)?;
        }
        Ok(())
    }

    /// Zeroes every masked weight.
    pub fn apply(&self, net: &mut Network) -> Result<()> {
        self.check_aligned(net)?;
        for (layer, keep) in self.keep.iter().enumerate() {
            for (w, &k) in net.weights_mut(layer).iter_mut().zip(keep) {
                if !k {
                    *w = 0.0;
                }
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> SparsityRecord {
        let remaining = self.remaining();
        SparsityRecord {
            lambda_percent: lambda_percent(remaining, self.total),
            per_layer_lambda: self
                .keep
                .iter()
                .map(|k| lambda_percent(k.iter().filter(|b| **b).count(), k.len()))
                .collect(),
            remaining,
            total: self.total,
        }
    }

    pub fn unmasked(&self) -> impl Iterator<Item = WeightId> + '_ {
        self.keep.iter().enumerate().flat_map(|(layer, k)| {
            k.iter()
                .enumerate()
                .filter(|(_, keep)| **keep)
                .map(move |(index, _)| WeightId { layer, index })
        })
    }
}

pub fn lambda_percent(remaining: usize, total: usize) -> f64 {
    if total == 0 {
        return 100.0;
    }
    100.0 * remaining as f64 / total as f64
}

/// `floor(fraction% * base)`, tolerant of representation error in `fraction`.
pub fn prune_count(fraction: f64, base: usize) -> usize {
    let exact = fraction * base as f64 / 100.0;
    ((exact + 1e-9).floor().max(0.0) as usize).min(base)
}

fn score_order(a: &(f64, WeightId), b: &(f64, WeightId)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` lowest-scoring candidates, ties broken by (layer, index), returned
/// in ascending order.
pub(crate) fn lowest_k(mut candidates: Vec<(f64, WeightId)>, k: usize) -> Vec<WeightId> {
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, score_order);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(score_order);
    candidates.into_iter().map(|(_, id)| id).collect()
}

fn check_prunable(net: &Network, masks: &MaskState, fraction: f64) -> Result<()> {
    masks.check_aligned(net)?;
    if !(fraction > 0.0 && fraction <= 100.0) {
        return Err(Error::InvalidInput(format!("fraction {fraction} not in (0, 100]")));
    }
    if masks.remaining() == 0 {
        return Err(Error::EmptyNetwork);
    }
    Ok(())
}

pub fn magnitude_candidates(net: &Network, masks: &MaskState) -> Vec<(f64, WeightId)> {
    masks
        .unmasked()
        .map(|id| (net.weights(id.layer)[id.index].abs(), id))
        .collect()
}

pub fn gradient_candidates(net: &Network, masks: &MaskState, grads: &GradSet) -> Vec<(f64, WeightId)> {
    masks
        .unmasked()
        .map(|id| {
            let w = net.weights(id.layer)[id.index];
            let g = grads.weights[id.layer].data()[id.index];
            ((w * g).abs(), id)
        })
        .collect()
}

/// Layer-adaptive magnitude scores: within each layer, unmasked weights are
/// sorted by ascending magnitude (ties by index) and weight `u` scores
/// `w_u^2 / sum_{v >= u} w_v^2`.
pub fn lamp_candidates(net: &Network, masks: &MaskState) -> Vec<(f64, WeightId)> {
    let mut out = Vec::with_capacity(masks.remaining());
    for layer in 0..net.layers().len() {
        let w = net.weights(layer);
        let mut order: Vec<usize> = (0..w.len()).filter(|&i| masks.layer(layer)[i]).collect();
        order.sort_unstable_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
        let mut tail = 0.0;
        let mut scores = vec![0.0; order.len()];
        for (rank, &i) in order.iter().enumerate().rev() {
            let sq = w[i] * w[i];
            tail += sq;
            scores[rank] = if tail > 0.0 { sq / tail } else { 0.0 };
        }
        out.extend(
            order
                .iter()
                .zip(scores)
                .map(|(&index, s)| (s, WeightId { layer, index })),
        );
    }
    out
}

fn action(method: PruneMethod, fraction: f64, requested: usize, selected: Vec<WeightId>) -> PruneAction {
    let shortfall = requested - selected.len();
    PruneAction {
        method,
        fraction,
        requested,
        selected,
        cycle: 0,
        shortfall,
    }
}

/// Selects the `floor(fraction% * remaining)` unmasked weights of smallest
/// magnitude network-wide; does not modify anything.
pub fn select_global_magnitude(net: &Network, masks: &MaskState, fraction: f64) -> Result<PruneAction> {
    check_prunable(net, masks, fraction)?;
    let k = prune_count(fraction, masks.remaining());
    Ok(action(PruneMethod::GlobalMagnitude, fraction, k, lowest_k(magnitude_candidates(net, masks), k)))
}

pub fn select_global_gradient(
    net: &Network,
    masks: &MaskState,
    fraction: f64,
    grads: &GradSet,
) -> Result<PruneAction> {
    check_prunable(net, masks, fraction)?;
    let k = prune_count(fraction, masks.remaining());
    Ok(action(
        PruneMethod::GlobalGradient,
        fraction,
        k,
        lowest_k(gradient_candidates(net, masks, grads), k),
    ))
}

pub fn select_lamp(net: &Network, masks: &MaskState, fraction: f64) -> Result<PruneAction> {
    check_prunable(net, masks, fraction)?;
    let k = prune_count(fraction, masks.remaining());
    Ok(action(PruneMethod::Lamp, fraction, k, lowest_k(lamp_candidates(net, masks), k)))
}

/// Selects an explicit count by a baseline metric.
pub fn select_count(
    method: PruneMethod,
    net: &Network,
    masks: &MaskState,
    count: usize,
    grads: Option<&GradSet>,
) -> Result<Vec<WeightId>> {
    masks.check_aligned(net)?;
    let candidates = match method {
        PruneMethod::GlobalMagnitude => magnitude_candidates(net, masks),
        PruneMethod::GlobalGradient => {
            let g = grads.ok_or_else(|| {
                Error::InvalidInput("global gradient pruning needs gradients".into())
            })?;
            gradient_candidates(net, masks, g)
        }
        PruneMethod::Lamp => lamp_candidates(net, masks),
        PruneMethod::Ap => {
            return Err(Error::InvalidInput(
                "AP selection needs snapshots; use ap::ap_select".into(),
            ))
        }
    };
    Ok(lowest_k(candidates, count.min(masks.remaining())))
}

pub fn prune_global_magnitude(net: &mut Network, masks: &mut MaskState, fraction: f64) -> Result<PruneAction> {
    let a = select_global_magnitude(net, masks, fraction)?;
    masks.apply_action(net, &a)?;
    Ok(a)
}

pub fn prune_global_gradient(
    net: &mut Network,
    masks: &mut MaskState,
    fraction: f64,
    grads: &GradSet,
) -> Result<PruneAction> {
    let a = select_global_gradient(net, masks, fraction, grads)?;
    masks.apply_action(net, &a)?;
    Ok(a)
}

pub fn prune_lamp(net: &mut Network, masks: &mut MaskState, fraction: f64) -> Result<PruneAction> {
    let a = select_lamp(net, masks, fraction)?;
    masks.apply_action(net, &a)?;
    Ok(a)
}

/// Gradient of the mean loss over a whole dataset, accumulated in
/// fixed-size chunks in index order.
pub fn dataset_gradients(net: &Network, masks: &MaskState, data: &Dataset) -> Result<GradSet> {
    const CHUNK: usize = 256;
    if data.is_empty() {
        return Err(Error::InvalidInput("gradient scoring set is empty".into()));
    }
    let mut total = GradSet::zeros_like(net);
    let n = data.len();
    let rows: Vec<usize> = (0..n).collect();
    for chunk in rows.chunks(CHUNK) {
        let x = data.features.select_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let (_, g) = backward(net, masks, &x, &y)?;
        total.add_scaled(&g, chunk.len() as f64 / n as f64);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};

    /// Chains `1 x n0`, `n0 x n1`, ... dense layers holding the given weights.
    fn net_with(layers: &[&[f64]]) -> Network {
        let mut chain = Vec::new();
        let mut width = 1;
        for w in layers {
            assert_eq!(w.len() % width, 0);
            let out = w.len() / width;
            chain.push(LayerSpec::dense(width, out, Activation::Identity));
            width = out;
        }
        let mut net = Network::new(vec![1], &chain).unwrap();
        for (i, w) in layers.iter().enumerate() {
            net.weights_mut(i).copy_from_slice(w);
        }
        net
    }

    #[test]
    fn magnitude_picks_smallest() {
        let net = net_with(&[&[0.5, -0.1, 2.0]]);
        let masks = MaskState::new(&net);
        // floor(34% of 3) = 1
        let a = select_global_magnitude(&net, &masks, 34.0).unwrap();
        assert_eq!(a.selected, vec![WeightId { layer: 0, index: 1 }]);
    }

    #[test]
    fn equal_magnitudes_tie_break_by_position() {
        let net = net_with(&[&[1.0, -1.0], &[1.0, 1.0, -1.0, 1.0]]);
        let masks = MaskState::new(&net);
        let a = select_global_magnitude(&net, &masks, 100.0 / 3.0 + 1e-6).unwrap();
        assert_eq!(
            a.selected,
            vec![WeightId { layer: 0, index: 0 }, WeightId { layer: 0, index: 1 }]
        );
    }

    #[test]
    fn gradient_scores_and_degenerate_case() {
        let net = net_with(&[&[1.0, -2.0, 3.0]]);
        let masks = MaskState::new(&net);
        let mut g = GradSet::zeros_like(&net);
        g.weights[0].data_mut().copy_from_slice(&[0.5, 0.1, -0.01]);
        let a = select_global_gradient(&net, &masks, 34.0, &g).unwrap();
        assert_eq!(a.selected, vec![WeightId { layer: 0, index: 2 }]);
        let zero = GradSet::zeros_like(&net);
        let b = select_global_gradient(&net, &masks, 67.0, &zero).unwrap();
        assert_eq!(b.selected, vec![WeightId { layer: 0, index: 0 }, WeightId { layer: 0, index: 1 }]);
    }

    #[test]
    fn lamp_scores_single_layer() {
        let net = net_with(&[&[1.0, 2.0, 3.0]]);
        let masks = MaskState::new(&net);
        let s = lamp_candidates(&net, &masks);
        let expect = [1.0 / 14.0, 4.0 / 13.0, 1.0];
        for ((v, _), e) in s.iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn lamp_prefers_the_crowded_layer() {
        // layer 0 holds [0.1, 0.1, 0.1]; layer 1 keeps [10, 10] after masking its third weight
        let mut net = net_with(&[&[0.1, 0.1, 0.1], &[10.0, 10.0, 5.0]]);
        let mut masks = MaskState::new(&net);
        masks.prune(&mut net, 1, 2).unwrap();
        let s = lamp_candidates(&net, &masks);
        assert!((s[0].0 - 1.0 / 3.0).abs() < 1e-12);
        assert!((s[3].0 - 0.5).abs() < 1e-15);
        let sel = select_count(PruneMethod::Lamp, &net, &masks, 1, None).unwrap();
        assert_eq!(sel, vec![WeightId { layer: 0, index: 0 }]);
    }

    #[test]
    fn lamp_single_weight_scores_one() {
        let net = net_with(&[&[3.0]]);
        let masks = MaskState::new(&net);
        assert_eq!(lamp_candidates(&net, &masks)[0].0, 1.0);
    }

    #[test]
    fn lambda_ladder_two_cycles() {
        let mut net = net_with(&[&(1..=25).map(f64::from).collect::<Vec<_>>()]);
        let mut masks = MaskState::new(&net);
        assert_eq!(masks.lambda().lambda_percent, 100.0);
        prune_global_magnitude(&mut net, &mut masks, 20.0).unwrap();
        prune_global_magnitude(&mut net, &mut masks, 20.0).unwrap();
        assert_eq!(masks.remaining(), 16);
        assert_eq!(masks.lambda().lambda_percent, 64.0);
        assert_eq!(masks.recount_pruned(), masks.pruned());
    }

    #[test]
    fn errors() {
        let mut net = net_with(&[&[1.0]]);
        let mut masks = MaskState::new(&net);
        masks.prune(&mut net, 0, 0).unwrap();
        assert!(matches!(prune_global_magnitude(&mut net, &mut masks, 20.0), Err(Error::EmptyNetwork)));
        assert!(masks.prune(&mut net, 0, 0).is_err());
        let other = net_with(&[&[1.0, 2.0]]);
        assert!(matches!(masks.apply(&mut other.clone()), Err(Error::Structure(_))));
    }

    #[test]
    fn prune_count_floor() {
        assert_eq!(prune_count(20.0, 5000), 1000);
        assert_eq!(prune_count(18.0, 4000), 720);
        assert_eq!(prune_count(2.0, 49), 0);
        assert_eq!(prune_count(100.0, 7), 7);
    }
}
