//! `prunelab bound`: evaluates the entropy upper bound for one layer.

use serde::Serialize;

use prunelab_core::ib::{theorem1_bound, theorem1_bound_published, validity_holds, BoundParams, LayerDnrPair, Quantizer};

use crate::error::{CliError, CliResult};

/// Where `C` comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CSource {
    Direct(f64),
    /// `C = ln((N - 1) / (1 - p_S))` for `N` outcomes.
    Outcomes { n: usize, p_s: f64 },
    /// As `Outcomes` with `N` from the quantizer `(tau, alpha)`.
    Quantizer { tau: f64, alpha: f64, p_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub dim: usize,
    pub s: f64,
    pub d: f64,
    pub c: f64,
    pub outcomes: Option<usize>,
    pub d_prime: f64,
    pub z: f64,
    pub z_published: f64,
    /// `C >= ln(1/D')`, under which Z decreases in D.
    pub validity: bool,
}

pub fn evaluate(dim: usize, s: f64, d: f64, source: CSource) -> CliResult<BoundReport> {
    let pair = LayerDnrPair::new(s, d)?;
    let (params, outcomes) = match source {
        CSource::Direct(c) => (BoundParams::new(dim, c)?, None),
        CSource::Outcomes { n, p_s } => (BoundParams::from_cap(dim, n, p_s)?, Some(n)),
        CSource::Quantizer { tau, alpha, p_s } => {
            let n = Quantizer::new(tau, alpha)?.outcomes();
            (BoundParams::from_cap(dim, n, p_s)?, Some(n))
        }
    };
    let z = theorem1_bound(&params, &pair);
    let z_published = theorem1_bound_published(&params, &pair);
    if !z.is_finite() {
        return Err(CliError::Usage(format!("bound is not finite for S = {s}, D = {d}")));
    }
    Ok(BoundReport {
        dim,
        s,
        d,
        c: params.c,
        outcomes,
        d_prime: pair.d_prime(),
        z,
        z_published,
        validity: validity_holds(params.c, &pair),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_c_golden_value() {
        let r = evaluate(10, 0.5, 0.25, CSource::Direct(1.0)).unwrap();
        assert!((r.z - 4.232867951399863).abs() < 1e-12);
        assert!((r.z - r.z_published).abs() < 1e-12);
        assert!((r.d_prime - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantizer_matches_outcome_count() {
        let a = evaluate(4, 0.2, 0.3, CSource::Quantizer { tau: 1.0, alpha: 0.25, p_s: 0.2 }).unwrap();
        let b = evaluate(4, 0.2, 0.3, CSource::Outcomes { n: 4, p_s: 0.2 }).unwrap();
        assert_eq!(a.outcomes, Some(4));
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn rejects_inadmissible_pair() {
        assert!(evaluate(4, 0.7, 0.5, CSource::Direct(1.0)).is_err());
    }
}
