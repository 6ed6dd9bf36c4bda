use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{prune_count, MaskState, PruneAction, PruneMethod, WeightId};
use crate::nn::{Network, OptimState};
use crate::snapshot::Snapshot;

/// `|theta_final - theta_init|` for every unmasked weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MovementScore {
    pub entries: Vec<(WeightId, f64)>,
}

impl MovementScore {
    pub fn compute(init: &Snapshot, final_: &Snapshot, masks: &MaskState) -> Result<Self> {
        check_pair(init, final_, masks)?;
        let mut entries = Vec::with_capacity(masks.remaining());
        for id in masks.unmasked() {
            let a = init.weights(id.layer)[id.index];
            let b = final_.weights(id.layer)[id.index];
            entries.push((id, (b - a).abs()));
        }
        Ok(Self { entries })
    }

    /// Entries in ascending movement, ties by `(layer, index)`.
    pub fn ascending(mut self) -> Vec<(WeightId, f64)> {
        self.entries
            .sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        self.entries
    }
}

fn check_pair(init: &Snapshot, final_: &Snapshot, masks: &MaskState) -> Result<()> {
    let n = masks.layers().len();
    if init.weights.len() != n || final_.weights.len() != n {
        return Err(Error::Structure(format!(
            "snapshots have {} and {} layers, masks have {n}",
            init.weights.len(),
            final_.weights.len()
        )));
    }
    for (l, keep) in masks.layers().iter().enumerate() {
        if init.weights[l].len() != keep.len() || final_.weights[l].len() != keep.len() {
            return Err(Error::Structure(format!("snapshot layer {l} misaligned with its mask")));
        }
    }
    Ok(())
}

/// Scans unmasked weights in ascending movement and takes those whose final
/// value is negative until `quota` are taken. With `window_mode`, only the
/// first `quota` entries of the ordering are considered and the negatives
/// among them taken. Nothing is modified.
pub fn ap_select_count(
    init: &Snapshot,
    final_: &Snapshot,
    masks: &MaskState,
    quota: usize,
    window_mode: bool,
) -> Result<PruneAction> {
    let order = MovementScore::compute(init, final_, masks)?.ascending();
    let is_negative = |id: &WeightId| final_.weights(id.layer)[id.index] < 0.0;
    let selected: Vec<WeightId> = if window_mode {
        order.iter().take(quota).map(|e| e.0).filter(is_negative).collect()
    } else {
        order.iter().map(|e| e.0).filter(is_negative).take(quota).collect()
    };
    let base = masks.remaining().max(1) as f64;
    Ok(PruneAction {
        method: PruneMethod::Ap,
        fraction: 100.0 * quota as f64 / base,
        requested: quota,
        shortfall: quota - selected.len(),
        selected,
        cycle: 0,
    })
}

/// AP selection of `floor(q% * remaining)` weights.
pub fn ap_select(init: &Snapshot, final_: &Snapshot, masks: &MaskState, q: f64) -> Result<PruneAction> {
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidInput(format!("AP rate {q} outside [0, 100]")));
    }
    let quota = prune_count(q, masks.remaining());
    let mut action = ap_select_count(init, final_, masks, quota, false)?;
    action.fraction = q;
    Ok(action)
}

/// Resets every unmasked weight and every bias to `target`, leaves masked
/// weights at zero and clears momentum.
pub fn weight_rewind(
    net: &mut Network,
    target: &Snapshot,
    masks: &MaskState,
    optimizer: Option<&mut OptimState>,
) -> Result<()> {
    target.check_aligned(net)?;
    masks.check_aligned(net)?;
    for layer in 0..net.layers().len() {
        let keep = masks.layer(layer).to_vec();
        let src = target.weights(layer).to_vec();
        for ((w, s), k) in net.weights_mut(layer).iter_mut().zip(src).zip(keep) {
            *w = if k { s } else { 0.0 };
        }
        if let (Some(b), Some(t)) = (net.bias_mut(layer), target.biases[layer].as_ref()) {
            b.copy_from_slice(t.data());
        }
    }
    if let Some(state) = optimizer {
        state.reset();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApVariant {
    Lite,
    Pro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewindTarget {
    Init,
    /// Parameters after this many epochs of the first cycle's training.
    Epoch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    None,
    /// Skip the rewind before the AP retrain.
    NoWeightRewind,
    /// Every cycle prunes its full rate with the AP metric alone.
    ApSolo,
}

/// Which remaining-weight count the per-cycle AP quota is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuotaBase {
    /// Weights remaining when the cycle starts, so method X and AP together
    /// remove exactly `p%` per cycle.
    CycleStart,
    /// Weights remaining right after the same cycle's method-X prune.
    AfterX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetrainLr {
    FullSchedule,
    /// Constant rate equal to the schedule's value at its last epoch.
    ConstantFinal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub q: f64,
    pub variant: ApVariant,
    pub rewind_target: RewindTarget,
    pub ablation: Ablation,
    /// AP-Lite: size the final AP prune so the final remaining count equals
    /// the baseline ladder's.
    pub matched_sparsity: bool,
    pub window_mode: bool,
    pub quota_base: QuotaBase,
    pub retrain_lr: RetrainLr,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            q: 2.0,
            variant: ApVariant::Lite,
            rewind_target: RewindTarget::Init,
            ablation: Ablation::None,
            matched_sparsity: false,
            window_mode: false,
            quota_base: QuotaBase::CycleStart,
            retrain_lr: RetrainLr::FullSchedule,
        }
    }
}

impl ApConfig {
    pub fn validate(&self, p: f64, max_epochs: usize) -> Result<()> {
        if !(self.q >= 0.0 && self.q <= p) {
            return Err(Error::Config(format!("ap.q = {} must satisfy 0 <= q <= p = {p}", self.q)));
        }
        if let RewindTarget::Epoch(k) = self.rewind_target {
            if k > max_epochs {
                return Err(Error::Config(format!(
                    "rewind epoch {k} beyond the training budget of {max_epochs} epochs"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use crate::snapshot::SnapshotTag;
    use crate::tensor::Tensor;

    fn net3() -> Network {
        Network::new(vec![1], &[LayerSpec::dense(1, 3, Activation::Identity)]).unwrap()
    }

    fn snap(values: &[f64]) -> Snapshot {
        Snapshot {
            tag: SnapshotTag::Init,
            weights: vec![Tensor::new(vec![1, 3], values.to_vec()).unwrap()],
            biases: vec![None],
        }
    }

    #[test]
    fn takes_first_negative_in_movement_order() {
        let masks = MaskState::new(&net3());
        let a = ap_select_count(&snap(&[0.5, -0.5, 0.2]), &snap(&[0.6, -0.55, -0.9]), &masks, 1, false).unwrap();
        assert_eq!(a.selected, vec![WeightId { layer: 0, index: 1 }]);
        assert_eq!(a.shortfall, 0);
    }

    #[test]
    fn window_mode_only_looks_at_the_head() {
        let masks = MaskState::new(&net3());
        // order (1, 0, 2); the head of length 1 is index 1
        let init = snap(&[0.5, 0.5, 0.2]);
        let fin = snap(&[0.6, 0.55, -0.9]);
        let a = ap_select_count(&init, &fin, &masks, 1, true).unwrap();
        assert!(a.selected.is_empty());
        assert_eq!(a.shortfall, 1);
        let b = ap_select_count(&init, &fin, &masks, 1, false).unwrap();
        assert_eq!(b.selected, vec![WeightId { layer: 0, index: 2 }]);
    }

    #[test]
    fn zero_rate_and_no_negatives() {
        let masks = MaskState::new(&net3());
        let s = snap(&[0.1, 0.2, 0.3]);
        assert!(ap_select(&s, &s, &masks, 0.0).unwrap().selected.is_empty());
        let a = ap_select_count(&s, &s, &masks, 2, false).unwrap();
        assert_eq!((a.selected.len(), a.shortfall), (0, 2));
    }

    #[test]
    fn masked_weights_are_skipped() {
        let mut net = net3();
        net.weights_mut(0).copy_from_slice(&[-1.0, -1.0, -1.0]);
        let mut masks = MaskState::new(&net);
        masks.prune(&mut net, 0, 0).unwrap();
        let fin = snap(&[0.0, -1.0, -1.0]);
        let a = ap_select_count(&snap(&[0.0, 0.0, 0.0]), &fin, &masks, 5, false).unwrap();
        assert_eq!(a.selected.len(), 2);
        assert_eq!(a.shortfall, 3);
    }

    #[test]
    fn rewind_keeps_masked_weights_zero() {
        let mut net = net3();
        let theta0 = snap(&[0.5, -0.5, 0.2]);
        net.load_snapshot(&theta0).unwrap();
        let mut masks = MaskState::new(&net);
        masks.prune(&mut net, 0, 1).unwrap();
        net.weights_mut(0).copy_from_slice(&[9.0, 0.0, 9.0]);
        let mut opt = OptimState::new(&net);
        opt.velocity.weights[0].data_mut().fill(3.0);
        weight_rewind(&mut net, &theta0, &masks, Some(&mut opt)).unwrap();
        assert_eq!(net.weights(0), &[0.5, 0.0, 0.2]);
        assert!(opt.velocity.weights[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rewind_rejects_misaligned_snapshot() {
        let mut net = net3();
        let masks = MaskState::new(&net);
        let bad = Snapshot {
            tag: SnapshotTag::Init,
            weights: vec![Tensor::zeros(vec![1, 2])],
            biases: vec![None],
        };
        assert!(weight_rewind(&mut net, &bad, &masks, None).is_err());
    }

    #[test]
    fn config_bounds() {
        let mut c = ApConfig::default();
        assert!(c.validate(20.0, 10).is_ok());
        c.q = 21.0;
        assert!(c.validate(20.0, 10).is_err());
        c.q = 2.0;
        c.rewind_target = RewindTarget::Epoch(11);
        assert!(c.validate(20.0, 10).is_err());
    }
}
