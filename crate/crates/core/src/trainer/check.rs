use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gradient::gradient;
use crate::data::{Alternative, ChoiceObservation, EmbeddingStore, SemanticStore};
use crate::error::Result;
use crate::model::{loss_components, Groups, HeadArchitecture, ModelParams, ParamGroup};
use crate::semantics::{Attribute, SemanticVector, N_CLASSES, N_TARGETS};

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error, so entries that are zero in
/// both gradients compare on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub entries: usize,
    pub max_relative_error: f64,
    pub worst_group: Option<ParamGroup>,
    pub worst_index: usize,
}

/// Compares the analytic gradient of the combined loss with central finite
/// differences on every free entry of the trainable groups.
pub fn check_gradient(
    params: &ModelParams,
    batch: &[ChoiceObservation],
    embeddings: &EmbeddingStore,
    labels: Option<&SemanticStore>,
    kappa: f64,
    trainable: Groups,
) -> Result<GradientCheck> {
    let analytic = gradient(params, batch, embeddings, labels, kappa, trainable)?;
    let loss = |p: &ModelParams| -> Result<f64> {
        Ok(loss_components(p, batch, embeddings, labels, kappa)?.combined)
    };
    let mut probe = params.clone();
    let mut out = GradientCheck {
        entries: 0,
        max_relative_error: 0.0,
        worst_group: None,
        worst_index: 0,
    };
    for group in ParamGroup::ALL {
        if !trainable.contains(group) {
            continue;
        }
        for i in 0..params.group(group).len() {
            if !params.is_free(group, i) {
                continue;
            }
            let theta = params.group(group)[i];
            probe.group_mut(group)[i] = theta + FD_STEP;
            let up = loss(&probe)?;
            probe.group_mut(group)[i] = theta - FD_STEP;
            let down = loss(&probe)?;
            probe.group_mut(group)[i] = theta;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic.group(group)[i], numeric);
            out.entries += 1;
            if err > out.max_relative_error || out.worst_group.is_none() {
                out.max_relative_error = out.max_relative_error.max(err);
                out.worst_group = Some(group);
                out.worst_index = i;
            }
        }
    }
    Ok(out)
}

/// One random model, batch and `kappa` for a gradient audit.
#[derive(Debug, Clone)]
pub struct AuditCase {
    pub params: ModelParams,
    pub batch: Vec<ChoiceObservation>,
    pub embeddings: EmbeddingStore,
    pub labels: SemanticStore,
    pub kappa: f64,
}

/// Draws a random case whose raw head outputs sit away from the kinks of the
/// clamp map: either every proportion well inside `(0, 1)` with a sum well
/// below 1, or a sum well above 1 (the renormalised branch).
pub fn random_case(rng: &mut ChaCha8Rng) -> Result<AuditCase> {
    let k = rng.random_range(3..=6);
    let hidden = rng.random_bool(0.3);
    let arch = if hidden {
        HeadArchitecture::Hidden { width: 3 }
    } else {
        HeadArchitecture::Affine
    };
    let names = vec!["x1".to_string(), "x2".to_string()];
    let mut params = ModelParams::with_head(arch, k, names);
    for b in &mut params.beta_num {
        *b = rng.random_range(-1.5..1.5);
    }
    for a in Attribute::ALL {
        if a != Attribute::Building {
            params.beta_sem[a.index()] = rng.random_range(-1.5..1.5);
        }
    }
    for b in &mut params.beta_res {
        *b = rng.random_range(-0.5..0.5);
    }
    let share = if rng.random_bool(0.5) { 0.05 } else { 0.15 };
    let theta = params.head.theta_mut();
    let n = theta.len();
    let n_first = match arch {
        HeadArchitecture::Hidden { width } => width * k + width,
        HeadArchitecture::Affine => 0,
    };
    for (i, w) in theta.iter_mut().enumerate() {
        *w = if i < n_first {
            rng.random_range(-1.0..1.0)
        } else if i >= n - N_TARGETS {
            if i == n - N_TARGETS {
                2.0
            } else {
                share
            }
        } else {
            rng.random_range(-0.005..0.005)
        };
    }

    let n_obs = rng.random_range(1..=8);
    let mut rows = Vec::new();
    let mut labels = SemanticStore::new();
    let mut batch = Vec::with_capacity(n_obs);
    for o in 0..n_obs {
        let mut alternatives = Vec::with_capacity(2);
        for j in 0..2 {
            let id = format!("i{o}_{j}");
            rows.push((id.clone(), (0..k).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>()));
            let props: [f64; N_CLASSES] = std::array::from_fn(|_| rng.random_range(0.0..0.11));
            let s = SemanticVector::from_labels(&id, rng.random_range(0.0..5.0), props)?.vector;
            labels.insert(id.clone(), s);
            alternatives.push(Alternative {
                image_id: id,
                numeric: vec![rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)],
            });
        }
        batch.push(ChoiceObservation {
            obs_id: o.to_string(),
            respondent_id: "r".into(),
            alternatives,
            chosen: rng.random_range(0..2),
        });
    }
    let kappa = match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..1.0),
    };
    Ok(AuditCase {
        params,
        batch,
        embeddings: EmbeddingStore::from_rows(k, rows)?,
        labels,
        kappa,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub cases: usize,
    pub entries: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Runs [`check_gradient`] on `cases` random cases drawn from `seed`.
pub fn gradient_audit(cases: usize, seed: u64, tolerance: f64) -> Result<AuditReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let c = random_case(&mut rng)?;
        let r = check_gradient(&c.params, &c.batch, &c.embeddings, Some(&c.labels), c.kappa, Groups::ALL)?;
        entries += r.entries;
        worst = worst.max(r.max_relative_error);
    }
    Ok(AuditReport {
        cases,
        entries,
        max_relative_error: worst,
        tolerance,
        passed: worst < tolerance,
    })
}
