use serde::{Deserialize, Serialize};

use super::engine::GradSet;
use super::layer::Network;
use crate::error::{Error, Result};
use crate::mask::MaskState;
use crate::train::TrainConfig;

/// Learning rate as a function of the (0-based) epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear warmup to `peak` over `warmup_epochs`, then divide by
    /// `drop_factor` at each epoch listed in `drop_epochs`.
    WarmupStep {
        peak: f64,
        warmup_epochs: usize,
        drop_epochs: Vec<usize>,
        drop_factor: f64,
    },
    /// Half-cosine from `initial` towards zero over `total_epochs`.
    CosineDecay { initial: f64, total_epochs: usize },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            LrSchedule::Constant(r) if *r > 0.0 && r.is_finite() => Ok(()),
            LrSchedule::Constant(r) => Err(Error::Config(format!("learning rate {r} must be > 0"))),
            LrSchedule::WarmupStep {
                peak,
                drop_epochs,
                drop_factor,
                ..
            } => {
                if !(*peak > 0.0 && peak.is_finite()) {
                    return Err(Error::Config(format!("peak rate {peak} must be > 0")));
                }
                if !(*drop_factor >= 1.0) {
                    return Err(Error::Config(format!("drop factor {drop_factor} must be >= 1")));
                }
                if drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config("drop epochs must be strictly increasing".into()));
                }
                Ok(())
            }
            LrSchedule::CosineDecay {
                initial,
                total_epochs,
            } => {
                if !(*initial > 0.0 && initial.is_finite()) || *total_epochs == 0 {
                    return Err(Error::Config("cosine decay needs rate > 0 and epochs > 0".into()));
                }
                Ok(())
            }
        }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant(r) => *r,
            LrSchedule::WarmupStep {
                peak,
                warmup_epochs,
                drop_epochs,
                drop_factor,
            } => {
                if epoch < *warmup_epochs {
                    return peak * (epoch + 1) as f64 / *warmup_epochs as f64;
                }
                let drops = drop_epochs.iter().filter(|&&d| d <= epoch).count();
                peak / drop_factor.powi(drops as i32)
            }
            LrSchedule::CosineDecay {
                initial,
                total_epochs,
            } => {
                // evaluated at mid-epoch so the last epoch keeps a positive rate
                let t = (epoch.min(total_epochs - 1) as f64 + 0.5) / *total_epochs as f64;
                initial * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub velocity: GradSet,
}

impl OptimState {
    pub fn new(net: &Network) -> Self {
        Self {
            velocity: GradSet::zeros_like(net),
        }
    }

    pub fn reset(&mut self) {
        for t in &mut self.velocity.weights {
            t.data_mut().fill(0.0);
        }
        for t in self.velocity.biases.iter_mut().flatten() {
            t.data_mut().fill(0.0);
        }
    }
}

/// One SGD-with-momentum step:
/// `v <- momentum * v + grad + weight_decay * w`, `w <- w - rate * v`.
/// Pruned weights and their buffers are held at exactly zero.
pub fn sgd_step(
    net: &mut Network,
    state: &mut OptimState,
    grads: &GradSet,
    rate: f64,
    config: &TrainConfig,
    masks: &MaskState,
) -> Result<()> {
    for (layer, g) in grads.weights.iter().enumerate() {
        if let Some(index) = g.first_non_finite() {
            return Err(Error::NonFinite {
                what: "weight gradient",
                layer,
                index,
            });
        }
        if let Some(index) = grads.biases[layer].as_ref().and_then(|b| b.first_non_finite()) {
            return Err(Error::NonFinite {
                what: "bias gradient",
                layer,
                index,
            });
        }
    }
    let m = config.momentum;
    let wd = config.weight_decay;
    for layer in 0..net.layers().len() {
        let keep = masks.layer(layer);
        let g = grads.weights[layer].data();
        let v = state.velocity.weights[layer].data_mut();
        let w = net.weights_mut(layer);
        for i in 0..w.len() {
            if keep[i] {
                v[i] = m * v[i] + g[i] + wd * w[i];
                w[i] -= rate * v[i];
            } else {
                v[i] = 0.0;
                w[i] = 0.0;
            }
        }
        if let (Some(gb), Some(vb)) = (
            grads.biases[layer].as_ref(),
            state.velocity.biases[layer].as_mut(),
        ) {
            let vb = vb.data_mut();
            let b = net.bias_mut(layer).expect("bias present");
            for i in 0..b.len() {
                vb[i] = m * vb[i] + gb.data()[i] + wd * b[i];
                b[i] -= rate * vb[i];
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use crate::tensor::Tensor;

    fn one_weight(w: f64) -> Network {
        let mut net = Network::new(vec![1], &[LayerSpec::dense(1, 1, Activation::Identity)]).unwrap();
        net.weights_mut(0)[0] = w;
        net
    }

    fn grads_of(net: &Network, g: f64) -> GradSet {
        let mut gs = GradSet::zeros_like(net);
        gs.weights[0].data_mut()[0] = g;
        gs
    }

    #[test]
    fn one_step_arithmetic() {
        let mut net = one_weight(1.0);
        let masks = MaskState::new(&net);
        let mut st = OptimState::new(&net);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let g = grads_of(&net, 1.0);
        sgd_step(&mut net, &mut st, &g, 0.1, &cfg, &masks).unwrap();
        assert!((net.weights(0)[0] - 0.9).abs() < 1e-15);
        assert_eq!(st.velocity.weights[0].data()[0], 1.0);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut net = one_weight(0.37);
        let masks = MaskState::new(&net);
        let mut st = OptimState::new(&net);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let g = grads_of(&net, 0.0);
        for _ in 0..5 {
            sgd_step(&mut net, &mut st, &g, 0.1, &cfg, &masks).unwrap();
        }
        assert_eq!(net.weights(0)[0], 0.37);
    }

    #[test]
    fn masked_weight_stays_zero() {
        let mut net = one_weight(0.5);
        let mut masks = MaskState::new(&net);
        masks.prune(&mut net, 0, 0).unwrap();
        let mut st = OptimState::new(&net);
        let g = grads_of(&net, 3.0);
        for _ in 0..100 {
            sgd_step(&mut net, &mut st, &g, 0.1, &TrainConfig::default(), &masks).unwrap();
        }
        assert_eq!(net.weights(0)[0].to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut net = one_weight(0.5);
        let masks = MaskState::new(&net);
        let mut st = OptimState::new(&net);
        let g = grads_of(&net, f64::NAN);
        let err = sgd_step(&mut net, &mut st, &g, 0.1, &TrainConfig::default(), &masks);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
        let _ = Tensor::zeros(vec![1]);
    }

    #[test]
    fn schedules() {
        let s = LrSchedule::WarmupStep {
            peak: 0.03,
            warmup_epochs: 3,
            drop_epochs: vec![55, 70],
            drop_factor: 10.0,
        };
        s.validate().unwrap();
        assert!((s.rate(0) - 0.01).abs() < 1e-15);
        assert_eq!(s.rate(10), 0.03);
        assert!((s.rate(55) - 0.003).abs() < 1e-15);
        assert!((s.rate(80) - 0.0003).abs() < 1e-15);
        let bad = LrSchedule::WarmupStep {
            peak: 0.03,
            warmup_epochs: 0,
            drop_epochs: vec![70, 55],
            drop_factor: 10.0,
        };
        assert!(bad.validate().is_err());
        let c = LrSchedule::CosineDecay {
            initial: 0.1,
            total_epochs: 10,
        };
        assert!(c.rate(0) < 0.1 && c.rate(0) > 0.099);
        assert!(c.rate(9) > 0.0 && c.rate(9) < c.rate(5));
        assert!(LrSchedule::Constant(0.0).validate().is_err());
    }
}
