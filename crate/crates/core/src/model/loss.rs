use std::borrow::Borrow;

use super::params::{LossComponents, ModelParams};
use super::utility::{breakdown_unchecked, log_probability, Terms};
use crate::data::{ChoiceObservation, EmbeddingStore, SemanticStore};
use crate::error::{Error, Result};
use crate::semantics::{SemanticVector, N_TARGETS};

pub(crate) fn embedding<'a>(store: &'a EmbeddingStore, id: &str, k: usize) -> Result<&'a [f32]> {
    let z = store
        .get(id)
        .ok_or_else(|| Error::MissingEmbedding(id.to_string()))?;
    if z.len() != k {
        return Err(Error::DimensionMismatch {
            what: "embedding",
            expected: k,
            found: z.len(),
        });
    }
    Ok(z)
}

/// Full systematic utilities of every alternative of one observation, using
/// predicted semantics.
pub(crate) fn observation_utilities(
    params: &ModelParams,
    obs: &ChoiceObservation,
    embeddings: &EmbeddingStore,
) -> Result<Vec<f64>> {
    obs.alternatives
        .iter()
        .map(|alt| {
            let z = embedding(embeddings, &alt.image_id, params.k())?;
            if alt.numeric.len() != params.m() {
                return Err(Error::DimensionMismatch {
                    what: "numeric attributes",
                    expected: params.m(),
                    found: alt.numeric.len(),
                });
            }
            let s = SemanticVector::from_prediction(&params.head.forward(z)).to_array();
            Ok(breakdown_unchecked(params, &alt.numeric, &s, z, Terms::FULL).v_total)
        })
        .collect()
}

/// Sum of log-probabilities of the chosen alternatives.
pub fn log_likelihood<O: Borrow<ChoiceObservation>>(
    params: &ModelParams,
    observations: &[O],
    embeddings: &EmbeddingStore,
) -> Result<f64> {
    let mut ll = 0.0;
    for obs in observations {
        let obs = obs.borrow();
        let v = observation_utilities(params, obs, embeddings)?;
        ll += log_probability(&v, obs.chosen);
    }
    Ok(ll)
}

/// Mean negative log-likelihood.
pub fn cross_entropy<O: Borrow<ChoiceObservation>>(
    params: &ModelParams,
    observations: &[O],
    embeddings: &EmbeddingStore,
) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::InvalidDataset("no observations".into()));
    }
    Ok(-log_likelihood(params, observations, embeddings)? / observations.len() as f64)
}

pub(crate) fn label<'a>(labels: &'a SemanticStore, id: &str) -> Result<&'a SemanticVector> {
    labels
        .get(id)
        .ok_or_else(|| Error::MissingLabel(id.to_string()))
}

/// Root mean squared error between ground-truth targets and raw head outputs
/// over all alternatives of all observations, each target scaled by its
/// configured weight.
pub fn semantic_rmse<O: Borrow<ChoiceObservation>>(
    params: &ModelParams,
    observations: &[O],
    embeddings: &EmbeddingStore,
    labels: &SemanticStore,
) -> Result<f64> {
    let mut sse = 0.0;
    let mut count = 0usize;
    let w = &params.meta.rmse_weights;
    for obs in observations {
        for alt in &obs.borrow().alternatives {
            let z = embedding(embeddings, &alt.image_id, params.k())?;
            let y = label(labels, &alt.image_id)?.targets();
            let raw = params.head.forward(z);
            for t in 0..N_TARGETS {
                let r = y[t] - raw[t];
                sse += w[t] * r * r;
            }
            count += N_TARGETS;
        }
    }
    if count == 0 {
        return Err(Error::InvalidDataset("no observations".into()));
    }
    Ok((sse / count as f64).sqrt())
}

pub(crate) fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::InvalidKappa(kappa));
    }
    Ok(())
}

/// `(1 - kappa) * cross_entropy + kappa * semantic_rmse`. The unused term is
/// not evaluated at either boundary, so labels are only needed for
/// `kappa > 0`.
pub fn combined_loss<O: Borrow<ChoiceObservation>>(
    params: &ModelParams,
    observations: &[O],
    embeddings: &EmbeddingStore,
    labels: Option<&SemanticStore>,
    kappa: f64,
) -> Result<f64> {
    Ok(loss_components(params, observations, embeddings, labels, kappa)?.combined)
}

pub fn loss_components<O: Borrow<ChoiceObservation>>(
    params: &ModelParams,
    observations: &[O],
    embeddings: &EmbeddingStore,
    labels: Option<&SemanticStore>,
    kappa: f64,
) -> Result<LossComponents> {
    check_kappa(kappa)?;
    let ce = if kappa < 1.0 {
        Some(cross_entropy(params, observations, embeddings)?)
    } else {
        None
    };
    let rmse = if kappa > 0.0 {
        let labels = labels.ok_or_else(|| {
            Error::InvalidDataset("semantic labels are required when kappa > 0".into())
        })?;
        Some(semantic_rmse(params, observations, embeddings, labels)?)
    } else {
        None
    };
    let combined = match (ce, rmse) {
        (Some(ce), None) => ce,
        (None, Some(rmse)) => rmse,
        (Some(ce), Some(rmse)) => (1.0 - kappa) * ce + kappa * rmse,
        (None, None) => unreachable!("kappa is both below and above its bounds"),
    };
    Ok(LossComponents {
        cross_entropy: ce,
        rmse,
        combined,
    })
}

/// McFadden's fit measure against the equal-shares null model:
/// `1 - ll / (n * ln(1/j))`.
pub fn rho_squared(ll: f64, n: usize, j: usize) -> Result<f64> {
    if ll > 0.0 {
        return Err(Error::PositiveLogLikelihood(ll));
    }
    if n == 0 || j < 2 {
        return Err(Error::InvalidDataset(format!(
            "rho squared needs n > 0 and j >= 2 (n={n}, j={j})"
        )));
    }
    let null = n as f64 * (1.0 / j as f64).ln();
    Ok(1.0 - ll / null)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Alternative;

    fn obs(id: &str, a: &str, b: &str, xa: f64, chosen: usize) -> ChoiceObservation {
        ChoiceObservation {
            obs_id: id.into(),
            respondent_id: "r".into(),
            alternatives: vec![
                Alternative {
                    image_id: a.into(),
                    numeric: vec![xa],
                },
                Alternative {
                    image_id: b.into(),
                    numeric: vec![0.0],
                },
            ],
            chosen,
        }
    }

    fn store() -> EmbeddingStore {
        EmbeddingStore::from_rows(2, [("a", vec![1.0f32, 0.0]), ("b", vec![0.0f32, 1.0])]).unwrap()
    }

    #[test]
    fn null_model_log_likelihood() {
        let p = ModelParams::new(2, vec!["x".into()]);
        let data = vec![obs("1", "a", "b", 1.0, 0), obs("2", "b", "a", 3.0, 1), obs("3", "a", "a", 0.0, 1)];
        let ll = log_likelihood(&p, &data, &store()).unwrap();
        assert!((ll - 3.0 * 0.5f64.ln()).abs() < 1e-12);
        let ce = cross_entropy(&p, &data, &store()).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((ce * 3.0 + ll).abs() <= 4.0 * f64::EPSILON * ll.abs());
    }

    #[test]
    fn near_deterministic_predictions() {
        let mut p = ModelParams::new(2, vec!["x".into()]);
        p.beta_num = vec![100.0];
        let data = vec![obs("1", "a", "b", 1.0, 0)];
        let ce = cross_entropy(&p, &data, &store()).unwrap();
        assert!((0.0..1e-40).contains(&ce));
        p.beta_num = vec![-1e6];
        let ll = log_likelihood(&p, &data, &store()).unwrap();
        assert_eq!(ll, crate::model::LOG_PROB_FLOOR);
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let p = ModelParams::new(2, vec!["x".into()]);
        let data = vec![obs("1", "a", "zzz", 1.0, 0)];
        assert!(matches!(
            log_likelihood(&p, &data, &store()),
            Err(Error::MissingEmbedding(id)) if id == "zzz"
        ));
    }

    #[test]
    fn rmse_of_one_off_target() {
        let p = ModelParams::new(2, vec!["x".into()]);
        let data = vec![obs("1", "a", "b", 1.0, 0)];
        let mut labels = SemanticStore::new();
        let mut off = SemanticVector::zero();
        off.car_count = 1.0;
        labels.insert("a".into(), off);
        labels.insert("b".into(), SemanticVector::zero());
        let r = semantic_rmse(&p, &data, &store(), &labels).unwrap();
        assert!((r - (1.0f64 / 20.0).sqrt()).abs() < 1e-15);
        let mut exact = labels.clone();
        exact.insert("a".into(), SemanticVector::zero());
        assert_eq!(semantic_rmse(&p, &data, &store(), &exact).unwrap(), 0.0);
        exact.shift_remove("b");
        assert!(matches!(
            semantic_rmse(&p, &data, &store(), &exact),
            Err(Error::MissingLabel(_))
        ));
    }

    #[test]
    fn kappa_boundaries_and_range() {
        let p = ModelParams::new(2, vec!["x".into()]);
        let data = vec![obs("1", "a", "b", 1.0, 0)];
        let mut labels = SemanticStore::new();
        labels.insert("a".into(), SemanticVector::from_labels("a", 1.0, [0.1; 9]).unwrap().vector);
        labels.insert("b".into(), SemanticVector::zero());
        let s = store();
        let ce = cross_entropy(&p, &data, &s).unwrap();
        let rmse = semantic_rmse(&p, &data, &s, &labels).unwrap();
        assert_eq!(combined_loss(&p, &data, &s, Some(&labels), 0.0).unwrap(), ce);
        assert_eq!(combined_loss(&p, &data, &s, None, 0.0).unwrap(), ce);
        assert_eq!(combined_loss(&p, &data, &s, Some(&labels), 1.0).unwrap(), rmse);
        let half = combined_loss(&p, &data, &s, Some(&labels), 0.5).unwrap();
        assert!((half - 0.5 * (ce + rmse)).abs() < 1e-15);
        assert!(matches!(
            combined_loss(&p, &data, &s, Some(&labels), 1.5),
            Err(Error::InvalidKappa(_))
        ));
        assert!(combined_loss(&p, &data, &s, None, 0.5).is_err());
    }

    #[test]
    fn rho_squared_values() {
        let n = 9784;
        assert!(rho_squared(n as f64 * 0.5f64.ln(), n, 2).unwrap().abs() < 1e-15);
        assert!((rho_squared(-5724.0, 9784, 2).unwrap() - 0.156).abs() < 1e-3);
        assert!((rho_squared(-1137.6, 1948, 2).unwrap() - 0.158).abs() < 1e-3);
        assert!(matches!(rho_squared(1.0, 10, 2), Err(Error::PositiveLogLikelihood(_))));
        assert!(rho_squared(-1.0, 0, 2).is_err());
        assert!(rho_squared(-1.0, 5, 1).is_err());
    }
}
