//! Information-bottleneck bound on `I(X;T)` in terms of a layer's static and
//! dynamic dead-neuron rates, with an exact plug-in entropy check on
//! quantized activations. All logarithms are natural.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dnr::classify_static;
use crate::error::{Error, Result};
use crate::mask::MaskState;
use crate::nn::{forward, Activation, Network};
use crate::tensor::Tensor;

/// `x ln(1/x)`, zero at `x = 0`.
fn xlog_inv(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -x * x.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerDnrPair {
    pub s: f64,
    pub d: f64,
}

impl LayerDnrPair {
    pub fn new(s: f64, d: f64) -> Result<Self> {
        let ok = (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&d) && s + d <= 1.0 + 1e-12;
        if !ok {
            return Err(Error::InvalidInput(format!(
                "need S, D in [0, 1] with S + D <= 1, got S = {s}, D = {d}"
            )));
        }
        if s == 1.0 && d > 0.0 {
            return Err(Error::Invariant("S = 1 leaves no neuron to be dynamically dead".into()));
        }
        Ok(Self { s, d })
    }

    /// `D / (1 - S)`, zero for a fully static layer.
    pub fn d_prime(&self) -> f64 {
        if self.s >= 1.0 {
            0.0
        } else {
            (self.d / (1.0 - self.s)).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub dim_t: usize,
    /// Architecture constant in nats.
    pub c: f64,
}

impl BoundParams {
    pub fn new(dim_t: usize, c: f64) -> Result<Self> {
        if dim_t == 0 {
            return Err(Error::InvalidInput("dim(T) must be positive".into()));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!("C must be positive and finite, got {c}")));
        }
        Ok(Self { dim_t, c })
    }

    /// Parameters with `C` set to the analytic cap for `outcomes` levels.
    pub fn from_cap(dim_t: usize, outcomes: usize, p_s: f64) -> Result<Self> {
        Self::new(dim_t, c_upper_bound(outcomes, p_s)?)
    }
}

/// Activation quantizer: step `alpha`, cap `tau`, `N = ceil(tau / alpha)`
/// outcomes. Outcome 0 is an exact zero; a positive value `a` maps to
/// `min(ceil(a / alpha), N - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub tau: f64,
    pub alpha: f64,
}

impl Quantizer {
    pub fn new(tau: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
        }
        let q = Self { tau, alpha };
        if q.outcomes() < 2 {
            return Err(Error::InvalidInput(format!("tau / alpha = {} gives fewer than 2 outcomes", tau / alpha)));
        }
        Ok(q)
    }

    pub fn outcomes(&self) -> usize {
        (self.tau / self.alpha - 1e-9).ceil().max(1.0) as usize
    }

    pub fn bin(&self, a: f64) -> u32 {
        if a <= 0.0 {
            return 0;
        }
        let top = self.outcomes() - 1;
        ((a / self.alpha).ceil() as usize).clamp(1, top) as u32
    }
}

/// The bound in the cardinality-adjusted form
/// `C dim (1 - S) (1 - D' (1 - ln(1/D') / C))`, evaluated as
/// `dim (1 - S) (C (1 - D') + D' ln(1/D'))` so `D' -> 0` is the plain limit.
pub fn theorem1_bound(params: &BoundParams, pair: &LayerDnrPair) -> f64 {
    z_value(params.c, params.dim_t, pair.s, pair.d_prime())
}

fn z_value(c: f64, dim: usize, s: f64, d_prime: f64) -> f64 {
    dim as f64 * (1.0 - s) * (c * (1.0 - d_prime) + xlog_inv(d_prime))
}

/// The same bound written in `S` and `D` directly:
/// `C dim (1 - S - D (1 - ln((1 - S) / D) / C))`.
pub fn theorem1_bound_published(params: &BoundParams, pair: &LayerDnrPair) -> f64 {
    let (c, s, d) = (params.c, pair.s, pair.d);
    let log_term = if d == 0.0 { 0.0 } else { d * ((1.0 - s) / d).ln() / c };
    c * params.dim_t as f64 * (1.0 - s - d + log_term)
}

/// `ln((N - 1) / (1 - p_S))`.
pub fn c_upper_bound(outcomes: usize, p_s: f64) -> Result<f64> {
    if outcomes < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 outcomes, got {outcomes}")));
    }
    if !(0.0..1.0).contains(&p_s) {
        return Err(Error::InvalidInput(format!("p_S must lie in [0, 1), got {p_s}")));
    }
    Ok(((outcomes - 1) as f64 / (1.0 - p_s)).ln())
}

/// `C >= ln(1/D')`, the condition under which the bound decreases in `D`.
pub fn validity_holds(c: f64, pair: &LayerDnrPair) -> bool {
    let dp = pair.d_prime();
    dp > 0.0 && c >= (1.0 / dp).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub s: f64,
    pub d: f64,
    pub dz_ds: f64,
    pub dz_dd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub checked: Vec<GridPoint>,
    /// Points failing `C >= ln(1/D')` or too close to the domain edge.
    pub excluded: Vec<(f64, f64, String)>,
    pub violations: Vec<GridPoint>,
}

impl CorollaryReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Finite-difference signs of `dZ/dS` and `dZ/dD` over a grid of `(S, D)`.
pub fn corollary1_check(params: &BoundParams, grid: &[(f64, f64)], h: f64) -> Result<CorollaryReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput("finite-difference step must be positive".into()));
    }
    let z = |s: f64, d: f64| z_value(params.c, params.dim_t, s, d / (1.0 - s));
    let mut report = CorollaryReport {
        checked: Vec::new(),
        excluded: Vec::new(),
        violations: Vec::new(),
    };
    let tol = 1e-9 * params.c.max(1.0) * params.dim_t as f64;
    for &(s, d) in grid {
        let pair = match LayerDnrPair::new(s, d) {
            Ok(p) => p,
            Err(e) => {
                report.excluded.push((s, d, e.to_string()));
                continue;
            }
        };
        if !validity_holds(params.c, &pair) {
            report.excluded.push((s, d, format!("C = {} < ln(1/D') = {}", params.c, -(pair.d_prime()).ln())));
            continue;
        }
        if d - h <= 0.0 || s + d + 2.0 * h >= 1.0 {
            report.excluded.push((s, d, "within one step of the domain edge".into()));
            continue;
        }
        let (s_lo, s_span) = if s >= h { (s - h, 2.0 * h) } else { (s, h) };
        let point = GridPoint {
            s,
            d,
            dz_ds: (z(s + h, d) - z(s_lo, d)) / s_span,
            dz_dd: (z(s, d + h) - z(s, d - h)) / (2.0 * h),
        };
        if point.dz_ds > tol || point.dz_dd > tol {
            report.violations.push(point.clone());
        }
        report.checked.push(point);
    }
    Ok(report)
}

/// Plug-in Shannon entropy of a histogram.
pub fn entropy_from_counts<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts.iter().map(|&c| xlog_inv(c as f64 / n)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalLayerStats {
    pub dim_t: usize,
    pub outcomes: usize,
    pub n_samples: usize,
    pub static_units: Vec<usize>,
    pub active_units: Vec<usize>,
    /// Zero probability per active neuron.
    pub p: Vec<f64>,
    /// Outcome distribution per active neuron; `phi[i][0] == p[i]`.
    pub phi: Vec<Vec<f64>>,
    /// Activations at or above `tau`, folded into the top outcome.
    pub clipped: usize,
}

impl EmpiricalLayerStats {
    pub fn active(&self) -> usize {
        self.active_units.len()
    }

    pub fn s(&self) -> f64 {
        self.static_units.len() as f64 / self.dim_t as f64
    }

    /// Mean zero probability over active neurons.
    pub fn d_prime(&self) -> f64 {
        if self.p.is_empty() {
            0.0
        } else {
            self.p.iter().sum::<f64>() / self.p.len() as f64
        }
    }

    pub fn pair(&self) -> LayerDnrPair {
        let s = self.s();
        LayerDnrPair {
            s,
            d: self.d_prime() * (1.0 - s),
        }
    }

    /// `max_i sum_{j >= 1} phi_ij / (1 - p_i) ln(1/phi_ij)`; zero without active mass.
    pub fn c_hat(&self) -> f64 {
        self.phi
            .iter()
            .zip(&self.p)
            .map(|(phi, &p)| {
                if p >= 1.0 {
                    0.0
                } else {
                    phi[1..].iter().map(|&f| xlog_inv(f)).sum::<f64>() / (1.0 - p)
                }
            })
            .fold(0.0, f64::max)
    }

    /// `ln((N - 1) / (1 - p_S))` after confirming every `p_i <= p_S`.
    pub fn apriori_c(&self, p_s: f64) -> Result<f64> {
        if let Some((i, &p)) = self.p.iter().enumerate().find(|(_, &p)| p > p_s) {
            return Err(Error::InvalidInput(format!(
                "neuron {} has zero probability {p} above p_S = {p_s}",
                self.active_units[i]
            )));
        }
        c_upper_bound(self.outcomes, p_s)
    }

    pub fn marginal_entropies(&self) -> Vec<f64> {
        self.phi.iter().map(|phi| phi.iter().map(|&f| xlog_inv(f)).sum()).collect()
    }
}

/// Stats and joint entropy from quantized outcome tuples, one row per sample.
pub fn stats_from_tuples(
    tuples: &[Vec<u32>],
    outcomes: usize,
    static_units: &[usize],
    clipped: usize,
) -> Result<(f64, EmpiricalLayerStats)> {
    let n = tuples.len();
    if n == 0 {
        return Err(Error::InvalidInput("entropy of an empty sample set".into()));
    }
    let dim_t = tuples[0].len();
    if dim_t == 0 || tuples.iter().any(|t| t.len() != dim_t) {
        return Err(Error::InvalidInput("outcome tuples must share a positive width".into()));
    }
    if tuples.iter().flatten().any(|&b| b as usize >= outcomes) {
        return Err(Error::InvalidInput(format!("outcome index beyond {outcomes} levels")));
    }
    let mut joint: BTreeMap<&[u32], usize> = BTreeMap::new();
    for t in tuples {
        *joint.entry(t.as_slice()).or_default() += 1;
    }
    let h_t = entropy_from_counts(joint.into_values());
    let active_units: Vec<usize> = (0..dim_t).filter(|u| !static_units.contains(u)).collect();
    let mut phi = Vec::with_capacity(active_units.len());
    for &u in &active_units {
        let mut counts = vec![0usize; outcomes];
        for t in tuples {
            counts[t[u] as usize] += 1;
        }
        phi.push(counts.iter().map(|&c| c as f64 / n as f64).collect::<Vec<f64>>());
    }
    let p = phi.iter().map(|f| f[0]).collect();
    Ok((
        h_t,
        EmpiricalLayerStats {
            dim_t,
            outcomes,
            n_samples: n,
            static_units: static_units.to_vec(),
            active_units,
            p,
            phi,
            clipped,
        },
    ))
}

/// Quantized outcome tuples of a hidden ReLU layer, plus the clip count.
pub fn quantized_tuples(
    net: &Network,
    layer: usize,
    inputs: &Tensor,
    quantizer: &Quantizer,
) -> Result<(Vec<Vec<u32>>, usize)> {
    if !net.hidden_layers().contains(&layer) || net.layer(layer).activation() != Activation::Relu {
        return Err(Error::InvalidInput(format!("layer {layer} is not a hidden ReLU layer")));
    }
    let (_, traces) = forward(net, inputs, true)?;
    let post = &traces.expect("recorded").post[layer];
    if post.row_len() != net.layer(layer).neurons() {
        return Err(Error::InvalidInput("entropy checks support dense layers only".into()));
    }
    let mut clipped = 0;
    let tuples = (0..post.rows())
        .map(|b| {
            post.row(b)
                .iter()
                .map(|&a| {
                    clipped += usize::from(a >= quantizer.tau);
                    quantizer.bin(a)
                })
                .collect()
        })
        .collect();
    Ok((tuples, clipped))
}

/// `H(T)` of a quantized hidden ReLU layer and the per-neuron statistics.
pub fn empirical_entropy(
    net: &Network,
    masks: &MaskState,
    layer: usize,
    inputs: &Tensor,
    quantizer: &Quantizer,
) -> Result<(f64, EmpiricalLayerStats)> {
    let (tuples, clipped) = quantized_tuples(net, layer, inputs, quantizer)?;
    let statics: Vec<usize> = classify_static(net, masks)?
        .into_iter()
        .filter(|id| id.layer == layer)
        .map(|id| id.unit)
        .collect();
    stats_from_tuples(&tuples, quantizer.outcomes(), &statics, clipped)
}

/// Every link of `H(T) <= sum H(T_i) <= sum (p_i ln(1/p_i) + (1 - p_i) C)
/// <= k (D' ln(1/D') + C (1 - D')) = Z`, with `C = C_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEvaluation {
    pub h_t: f64,
    pub sum_marginals: f64,
    pub per_neuron_bound: f64,
    pub jensen_bound: f64,
    pub z: f64,
    pub c_hat: f64,
    /// `ln((N - 1) / (1 - max p_i))`, which `C_hat` never exceeds.
    pub c_cap: Option<f64>,
    pub s: f64,
    pub d_prime: f64,
}

impl BoundEvaluation {
    /// Smallest gap across the chain; negative means a broken link.
    pub fn min_slack(&self) -> f64 {
        let mut gaps = vec![
            self.sum_marginals - self.h_t,
            self.per_neuron_bound - self.sum_marginals,
            self.jensen_bound - self.per_neuron_bound,
            self.z - self.jensen_bound,
        ];
        if let Some(cap) = self.c_cap {
            gaps.push(cap - self.c_hat);
        }
        gaps.into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self, tolerance: f64) -> bool {
        self.min_slack() >= -tolerance
    }
}

pub fn evaluate_chain(h_t: f64, stats: &EmpiricalLayerStats) -> BoundEvaluation {
    let c = stats.c_hat();
    let k = stats.active() as f64;
    let dp = stats.d_prime();
    let sum_marginals = stats.marginal_entropies().iter().sum();
    let per_neuron_bound = stats.p.iter().map(|&p| xlog_inv(p) + (1.0 - p) * c).sum();
    let p_max = stats.p.iter().copied().fold(0.0, f64::max);
    BoundEvaluation {
        h_t,
        sum_marginals,
        per_neuron_bound,
        jensen_bound: k * (xlog_inv(dp) + c * (1.0 - dp)),
        z: z_value(c, stats.dim_t, stats.s(), dp),
        c_hat: c,
        c_cap: if stats.active() > 0 && p_max < 1.0 {
            c_upper_bound(stats.outcomes, p_max).ok()
        } else {
            None
        },
        s: stats.s(),
        d_prime: dp,
    }
}

pub fn verify_bound_chain(
    net: &Network,
    masks: &MaskState,
    layer: usize,
    inputs: &Tensor,
    quantizer: &Quantizer,
) -> Result<BoundEvaluation> {
    let (h_t, stats) = empirical_entropy(net, masks, layer, inputs, quantizer)?;
    Ok(evaluate_chain(h_t, &stats))
}
