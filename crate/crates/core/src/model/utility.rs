use serde::{Deserialize, Serialize};

use super::params::{dot, ModelParams};
use crate::error::{Error, Result};
use crate::semantics::{SemanticVector, N_ATTRIBUTES};

/// Systematic utility split into its additive parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityBreakdown {
    pub v_numeric: f64,
    pub v_semantic: f64,
    /// `beta_t * s_t` in coefficient order; sums to `v_semantic`.
    pub per_attribute: [f64; N_ATTRIBUTES],
    pub v_residual: f64,
    pub v_total: f64,
}

/// Which utility terms to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub numeric: bool,
    pub residual: bool,
}

impl Terms {
    pub const FULL: Terms = Terms {
        numeric: true,
        residual: true,
    };
    /// Street-level utility: numeric attributes excluded.
    pub const STREET: Terms = Terms {
        numeric: false,
        residual: true,
    };
}

fn check_k(params: &ModelParams, z: &[f32]) -> Result<()> {
    if z.len() != params.k() {
        return Err(Error::DimensionMismatch {
            what: "embedding",
            expected: params.k(),
            found: z.len(),
        });
    }
    Ok(())
}

pub fn predict_semantics(params: &ModelParams, z: &[f32]) -> Result<SemanticVector> {
    check_k(params, z)?;
    Ok(SemanticVector::from_prediction(&params.head.forward(z)))
}

pub fn systematic_utility(
    params: &ModelParams,
    x: &[f64],
    s: &SemanticVector,
    z: &[f32],
    terms: Terms,
) -> Result<UtilityBreakdown> {
    check_k(params, z)?;
    if terms.numeric && x.len() != params.m() {
        return Err(Error::DimensionMismatch {
            what: "numeric attributes",
            expected: params.m(),
            found: x.len(),
        });
    }
    let values = s.to_array();
    if x.iter().any(|v| !v.is_finite())
        || values.iter().any(|v| !v.is_finite())
        || z.iter().any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("utility inputs".into()));
    }
    Ok(breakdown_unchecked(params, x, &values, z, terms))
}

pub(crate) fn breakdown_unchecked(
    params: &ModelParams,
    x: &[f64],
    s: &[f64; N_ATTRIBUTES],
    z: &[f32],
    terms: Terms,
) -> UtilityBreakdown {
    let v_numeric = if terms.numeric {
        params.beta_num.iter().zip(x).map(|(b, v)| b * v).sum()
    } else {
        0.0
    };
    let per_attribute: [f64; N_ATTRIBUTES] = std::array::from_fn(|t| params.beta_sem[t] * s[t]);
    let v_semantic = per_attribute.iter().sum();
    let v_residual = if terms.residual {
        dot(&params.beta_res, z)
    } else {
        0.0
    };
    UtilityBreakdown {
        v_numeric,
        v_semantic,
        per_attribute,
        v_residual,
        v_total: v_numeric + v_semantic + v_residual,
    }
}

/// Logit choice probabilities, evaluated after subtracting the largest
/// utility.
pub fn choice_probabilities(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::DimensionMismatch {
            what: "alternatives",
            expected: 2,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("utilities".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / sum).collect())
}

/// `log P_chosen`, floored at -745.
pub(crate) fn log_probability(v: &[f64], chosen: usize) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    (v[chosen] - lse).max(super::LOG_PROB_FLOOR)
}
