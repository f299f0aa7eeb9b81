use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::data::{ChoiceObservation, EmbeddingStore, SemanticStore};
use crate::error::{Error, Result};
use crate::model::{breakdown_unchecked, Groups, HeadCache, ModelParams, ParamGroup, Terms, LOG_PROB_FLOOR};
use crate::semantics::{prediction_jacobian, SemanticVector, N_ATTRIBUTES, N_TARGETS};

/// Gradient with the shape of [`ModelParams`]; frozen entries are exactly
/// zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub numeric: Vec<f64>,
    pub semantic: [f64; N_ATTRIBUTES],
    pub head: Vec<f64>,
    pub residual: Vec<f64>,
}

impl Gradient {
    pub fn zeros(params: &ModelParams) -> Self {
        Gradient {
            numeric: vec![0.0; params.m()],
            semantic: [0.0; N_ATTRIBUTES],
            head: vec![0.0; params.head.theta().len()],
            residual: vec![0.0; params.k()],
        }
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::Numeric => &self.numeric,
            ParamGroup::Semantic => &self.semantic,
            ParamGroup::Head => &self.head,
            ParamGroup::Residual => &self.residual,
        }
    }

    fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        match group {
            ParamGroup::Numeric => &mut self.numeric,
            ParamGroup::Semantic => &mut self.semantic,
            ParamGroup::Head => &mut self.head,
            ParamGroup::Residual => &mut self.residual,
        }
    }

    /// Entries of the trainable groups, in group order.
    pub fn flatten(&self, trainable: Groups) -> Vec<f64> {
        ParamGroup::ALL
            .iter()
            .filter(|g| trainable.contains(**g))
            .flat_map(|&g| self.group(g).iter().copied())
            .collect()
    }
}

/// Analytic gradient of the combined loss on `batch` with respect to every
/// trainable parameter.
///
/// The cross-entropy part uses `P - y` on the utilities, chained through the
/// clamp-and-renormalise map for the head. The RMSE part only reaches the
/// head. Weight decay is applied by [`sgd_step`], not here.
pub fn gradient<O: Borrow<ChoiceObservation>>(
    params: &ModelParams,
    batch: &[O],
    embeddings: &EmbeddingStore,
    labels: Option<&SemanticStore>,
    kappa: f64,
    trainable: Groups,
) -> Result<Gradient> {
    crate::model::check_kappa(kappa)?;
    if batch.is_empty() {
        return Err(Error::InvalidDataset("empty batch".into()));
    }
    let mut g = Gradient::zeros(params);
    let k = params.k();
    let n = batch.len() as f64;
    let mut cache = HeadCache::default();

    if kappa < 1.0 {
        let scale = (1.0 - kappa) / n;
        let mut v = Vec::with_capacity(2);
        let mut sem = Vec::with_capacity(2);
        for obs in batch {
            let obs = obs.borrow();
            v.clear();
            sem.clear();
            for alt in &obs.alternatives {
                let z = crate::model::embedding(embeddings, &alt.image_id, k)?;
                let raw = params.head.forward(z);
                let s = SemanticVector::from_prediction(&raw).to_array();
                v.push(breakdown_unchecked(params, &alt.numeric, &s, z, Terms::FULL).v_total);
                sem.push((raw, s));
            }
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = v.iter().map(|x| (x - max).exp()).sum();
            let log_p = v[obs.chosen] - max - denom.ln();
            if log_p < LOG_PROB_FLOOR {
                continue;
            }
            for (j, alt) in obs.alternatives.iter().enumerate() {
                let p = (v[j] - max).exp() / denom;
                let y = if j == obs.chosen { 1.0 } else { 0.0 };
                let dv = scale * (p - y);
                let z = crate::model::embedding(embeddings, &alt.image_id, k)?;
                let (raw, s) = &sem[j];
                if trainable.numeric {
                    for (gm, x) in g.numeric.iter_mut().zip(&alt.numeric) {
                        *gm += dv * x;
                    }
                }
                if trainable.semantic {
                    for (gt, st) in g.semantic.iter_mut().zip(s) {
                        *gt += dv * st;
                    }
                }
                if trainable.residual {
                    for (gk, &zk) in g.residual.iter_mut().zip(z) {
                        *gk += dv * zk as f64;
                    }
                }
                if trainable.head {
                    let jac = prediction_jacobian(raw);
                    let mut d_raw = [0.0; N_TARGETS];
                    for (t, row) in jac.iter().enumerate() {
                        let b = params.beta_sem[t];
                        if b == 0.0 {
                            continue;
                        }
                        for (d, &jv) in d_raw.iter_mut().zip(row) {
                            *d += dv * b * jv;
                        }
                    }
                    params.head.forward_cached(z, &mut cache);
                    params.head.backward(z, &cache, &d_raw, &mut g.head);
                }
            }
        }
    }

    if kappa > 0.0 && trainable.head {
        let labels = labels.ok_or_else(|| {
            Error::InvalidDataset("semantic labels are required when kappa > 0".into())
        })?;
        let w = &params.meta.rmse_weights;
        let mut residuals = Vec::with_capacity(batch.len() * 2);
        let mut sse = 0.0;
        for obs in batch {
            for alt in &obs.borrow().alternatives {
                let z = crate::model::embedding(embeddings, &alt.image_id, k)?;
                let y = crate::model::label(labels, &alt.image_id)?.targets();
                let raw = params.head.forward(z);
                let r: [f64; N_TARGETS] = std::array::from_fn(|t| y[t] - raw[t]);
                sse += r.iter().zip(w).map(|(r, w)| w * r * r).sum::<f64>();
                residuals.push((z, r));
            }
        }
        let count = (residuals.len() * N_TARGETS) as f64;
        let rmse = (sse / count).sqrt();
        if rmse > 0.0 {
            let scale = kappa / (count * rmse);
            for (z, r) in residuals {
                let d_raw: [f64; N_TARGETS] = std::array::from_fn(|t| -scale * w[t] * r[t]);
                params.head.forward_cached(z, &mut cache);
                params.head.backward(z, &cache, &d_raw, &mut g.head);
            }
        }
    }

    for (i, fixed) in params.fixed_sem.iter().enumerate() {
        if *fixed {
            g.semantic[i] = 0.0;
        }
    }
    for group in ParamGroup::ALL {
        if !trainable.contains(group) {
            g.group_mut(group).fill(0.0);
        } else if g.group(group).iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!("{group:?} gradient")));
        }
    }
    Ok(g)
}

/// Learning rate, weight decay and the groups an update may touch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub l2_groups: Groups,
    pub trainable: Groups,
}

/// `theta <- theta - lr * (g + lambda * theta)` on free entries of trainable
/// groups. Fixed coefficients, including the reference class, never move and
/// carry no weight decay.
pub fn sgd_step(params: &mut ModelParams, grad: &Gradient, step: &StepConfig) {
    for group in ParamGroup::ALL {
        if !step.trainable.contains(group) {
            continue;
        }
        let lambda = if step.l2_groups.contains(group) {
            step.l2_lambda
        } else {
            0.0
        };
        let fixed = params.fixed_sem;
        let values = params.group_mut(group);
        for (i, (theta, g)) in values.iter_mut().zip(grad.group(group)).enumerate() {
            if group == ParamGroup::Semantic && fixed[i] {
                continue;
            }
            *theta -= step.learning_rate * (g + lambda * *theta);
        }
    }
}
