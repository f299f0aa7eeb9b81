use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Groups, HeadArchitecture, ParamGroup};
use crate::semantics::{Attribute, N_TARGETS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub kappa: f64,
    pub max_epochs: usize,
    /// Overrides [`TrainConfig::learning_rate`] for this phase.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub trainable: Groups,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            kappa: 0.0,
            max_epochs: 500,
            learning_rate: None,
            trainable: Groups::NONE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    /// Groups the weight decay applies to.
    pub l2_groups: Groups,
    pub phases: [PhaseConfig; 3],
    /// Epochs without a `min_delta` improvement of the monitored loss before
    /// a phase stops.
    pub patience: usize,
    pub min_delta: f64,
    /// Largest per-epoch drop of the training log-likelihood tolerated in
    /// phase 3.
    pub ll_tolerance: f64,
    pub rng_seed: u64,
    pub head: HeadArchitecture,
    pub reference_class: Attribute,
    pub rmse_weights: [f64; N_TARGETS],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            learning_rate: 5e-5,
            l2_lambda: 0.1,
            l2_groups: Groups::ALL,
            phases: [
                PhaseConfig {
                    kappa: 1.0,
                    trainable: Groups::only(&[ParamGroup::Head]),
                    ..PhaseConfig::default()
                },
                PhaseConfig {
                    kappa: 0.0,
                    trainable: Groups::only(&[ParamGroup::Numeric, ParamGroup::Semantic]),
                    ..PhaseConfig::default()
                },
                PhaseConfig {
                    kappa: 0.0,
                    trainable: Groups::only(&[ParamGroup::Residual]),
                    ..PhaseConfig::default()
                },
            ],
            patience: 20,
            min_delta: 1e-6,
            ll_tolerance: 1e-6,
            rng_seed: 0,
            head: HeadArchitecture::Affine,
            reference_class: Attribute::Building,
            rmse_weights: [1.0; N_TARGETS],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad(format!("l2_lambda must be non-negative, got {}", self.l2_lambda));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.kappa) {
                return Err(Error::InvalidKappa(p.kappa));
            }
            if let Some(lr) = p.learning_rate {
                if !(lr >= 0.0 && lr.is_finite()) {
                    return bad(format!("phase {} learning_rate must be non-negative", i + 1));
                }
            }
        }
        if !self.reference_class.is_proportion() {
            return bad(format!("reference class {} is not a proportion", self.reference_class));
        }
        if self.rmse_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("rmse_weights must be finite and non-negative".into());
        }
        if let HeadArchitecture::Hidden { width: 0 } = self.head {
            return bad("hidden head width must be positive".into());
        }
        Ok(())
    }

    pub fn phase(&self, phase: u8) -> &PhaseConfig {
        &self.phases[usize::from(phase - 1)]
    }

    pub fn phase_learning_rate(&self, phase: u8) -> f64 {
        self.phase(phase).learning_rate.unwrap_or(self.learning_rate)
    }
}
