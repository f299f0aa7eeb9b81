//! Semantic predictions, systematic utilities, choice probabilities, losses
//! and fit metrics.

mod fit;
mod loss;
mod params;
mod utility;

pub use fit::{evaluate_split, FitReport, ParamRow, SplitFit};
pub use loss::{
    combined_loss, cross_entropy, log_likelihood, loss_components, rho_squared, semantic_rmse,
};
pub use params::{
    Groups, HeadArchitecture, HeadCache, HistoryEntry, LossComponents, ModelMeta, ModelParams,
    ParamGroup, SemanticHead,
};
pub use utility::{choice_probabilities, predict_semantics, systematic_utility, Terms, UtilityBreakdown};

pub(crate) use loss::{check_kappa, embedding, label};
pub(crate) use utility::breakdown_unchecked;

use crate::semantics::{Attribute, N_ATTRIBUTES};

/// Lower bound applied to `log P` so degenerate fixtures stay finite.
pub const LOG_PROB_FLOOR: f64 = -745.0;

/// Reported estimates of the semantic model on the residential choice data,
/// in coefficient order. Handy as a realistic coefficient regime.
pub const REPORTED_BETA_SEM: [f64; N_ATTRIBUTES] = [
    -0.25, // car_count
    -0.59, // p_car
    0.0,   // p_building (reference)
    0.96,  // p_grass
    -0.59, // p_road
    1.42,  // p_sky
    1.40,  // p_trees
    1.05,  // p_plants
    -0.81, // p_fence
    0.13,  // p_water
    -0.25, // unsegmented
];

/// Housing cost and commute travel time coefficients.
pub const REPORTED_BETA_NUM: [f64; 2] = [-0.94, -0.24];

/// A model carrying the reported coefficients, a zero head and zero residual.
pub fn reported_params(k: usize) -> ModelParams {
    let mut p = ModelParams::new(k, vec!["hhcost".into(), "tt".into()]);
    p.beta_num = REPORTED_BETA_NUM.to_vec();
    p.beta_sem = REPORTED_BETA_SEM;
    debug_assert_eq!(p.beta_sem[Attribute::Building.index()], 0.0);
    p
}
