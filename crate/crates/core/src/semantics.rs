//! Semantic attributes attached to a street-level image.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of pixel-proportion classes read from segmentation output.
pub const N_CLASSES: usize = 9;
/// Targets predicted by the semantic head: car count plus the nine proportions.
pub const N_TARGETS: usize = 10;
/// Attributes entering utility: targets plus the derived unsegmented remainder.
pub const N_ATTRIBUTES: usize = 11;

/// Proportion sums in `(1, 1 + OVER_COVERAGE_TOLERANCE]` are renormalised,
/// anything above is rejected.
pub const OVER_COVERAGE_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    CarCount,
    #[serde(rename = "p_car")]
    Car,
    #[serde(rename = "p_building")]
    Building,
    #[serde(rename = "p_grass")]
    Grass,
    #[serde(rename = "p_road")]
    Road,
    #[serde(rename = "p_sky")]
    Sky,
    #[serde(rename = "p_trees")]
    Trees,
    #[serde(rename = "p_plants")]
    Plants,
    #[serde(rename = "p_fence")]
    Fence,
    #[serde(rename = "p_water")]
    Water,
    Unsegmented,
}

impl Attribute {
    /// All attributes in coefficient order.
    pub const ALL: [Attribute; N_ATTRIBUTES] = [
        Attribute::CarCount,
        Attribute::Car,
        Attribute::Building,
        Attribute::Grass,
        Attribute::Road,
        Attribute::Sky,
        Attribute::Trees,
        Attribute::Plants,
        Attribute::Fence,
        Attribute::Water,
        Attribute::Unsegmented,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Attribute> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::CarCount => "car_count",
            Attribute::Car => "p_car",
            Attribute::Building => "p_building",
            Attribute::Grass => "p_grass",
            Attribute::Road => "p_road",
            Attribute::Sky => "p_sky",
            Attribute::Trees => "p_trees",
            Attribute::Plants => "p_plants",
            Attribute::Fence => "p_fence",
            Attribute::Water => "p_water",
            Attribute::Unsegmented => "unsegmented",
        }
    }

    /// Whether the attribute is measured as a share of image pixels (every
    /// attribute except the car count).
    pub fn is_proportion(self) -> bool {
        self != Attribute::CarCount
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown attribute {s:?}")))
    }
}

/// Car count, nine class proportions and the unsegmented remainder.
///
/// The nine proportions and the remainder always lie on the unit simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticVector {
    pub car_count: f64,
    pub proportions: [f64; N_CLASSES],
    pub unsegmented: f64,
}

/// Outcome of validating one row of segmentation output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelOutcome {
    pub vector: SemanticVector,
    /// Set when the raw proportions over-covered the image and were rescaled.
    pub renormalised: bool,
}

impl SemanticVector {
    pub fn zero() -> Self {
        SemanticVector {
            car_count: 0.0,
            proportions: [0.0; N_CLASSES],
            unsegmented: 1.0,
        }
    }

    /// Builds a vector from segmentation output, deriving the unsegmented
    /// remainder and applying the over-coverage rule.
    pub fn from_labels(
        image_id: &str,
        car_count: f64,
        proportions: [f64; N_CLASSES],
    ) -> Result<LabelOutcome> {
        if !car_count.is_finite() || proportions.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("semantic label {image_id}")));
        }
        if car_count < 0.0 {
            return Err(Error::NegativeValue {
                image_id: image_id.to_string(),
                field: "car_count".into(),
            });
        }
        if let Some(i) = proportions.iter().position(|&p| p < 0.0) {
            return Err(Error::NegativeValue {
                image_id: image_id.to_string(),
                field: Attribute::ALL[i + 1].name().into(),
            });
        }
        let sum: f64 = proportions.iter().sum();
        if sum > 1.0 + OVER_COVERAGE_TOLERANCE {
            return Err(Error::OverCoverage {
                image_id: image_id.to_string(),
                sum,
            });
        }
        if sum > 1.0 {
            let mut scaled = proportions;
            for p in &mut scaled {
                *p /= sum;
            }
            return Ok(LabelOutcome {
                vector: SemanticVector {
                    car_count,
                    proportions: scaled,
                    unsegmented: remainder(&scaled),
                },
                renormalised: true,
            });
        }
        Ok(LabelOutcome {
            vector: SemanticVector {
                car_count,
                proportions,
                unsegmented: 1.0 - sum,
            },
            renormalised: false,
        })
    }

    /// Maps raw head outputs onto a valid vector: car count floored at zero,
    /// proportions clamped to `[0, 1]`, remainder derived, and the simplex
    /// rescaled if the clamped proportions over-cover the image.
    pub fn from_prediction(raw: &[f64; N_TARGETS]) -> Self {
        let car_count = raw[0].max(0.0);
        let mut proportions = [0.0; N_CLASSES];
        for (p, &r) in proportions.iter_mut().zip(&raw[1..]) {
            *p = r.clamp(0.0, 1.0);
        }
        let sum: f64 = proportions.iter().sum();
        if sum > 1.0 {
            for p in &mut proportions {
                *p /= sum;
            }
            SemanticVector {
                car_count,
                proportions,
                unsegmented: 0.0,
            }
        } else {
            SemanticVector {
                car_count,
                proportions,
                unsegmented: 1.0 - sum,
            }
        }
    }

    /// Values in coefficient order.
    pub fn to_array(&self) -> [f64; N_ATTRIBUTES] {
        let mut out = [0.0; N_ATTRIBUTES];
        out[0] = self.car_count;
        out[1..=N_CLASSES].copy_from_slice(&self.proportions);
        out[N_ATTRIBUTES - 1] = self.unsegmented;
        out
    }

    /// The ten quantities the semantic head is trained to predict.
    pub fn targets(&self) -> [f64; N_TARGETS] {
        let mut out = [0.0; N_TARGETS];
        out[0] = self.car_count;
        out[1..].copy_from_slice(&self.proportions);
        out
    }

    pub fn get(&self, attribute: Attribute) -> f64 {
        self.to_array()[attribute.index()]
    }

    pub fn proportion_sum(&self) -> f64 {
        self.proportions.iter().sum::<f64>() + self.unsegmented
    }
}

fn remainder(proportions: &[f64; N_CLASSES]) -> f64 {
    (1.0 - proportions.iter().sum::<f64>()).max(0.0)
}

/// Jacobian of [`SemanticVector::from_prediction`] with respect to the raw
/// head outputs, in coefficient order (11 rows by 10 columns).
///
/// At clamp boundaries the one-sided derivative of the inactive side is used.
pub fn prediction_jacobian(raw: &[f64; N_TARGETS]) -> [[f64; N_TARGETS]; N_ATTRIBUTES] {
    let mut jac = [[0.0; N_TARGETS]; N_ATTRIBUTES];
    if raw[0] > 0.0 {
        jac[0][0] = 1.0;
    }
    let mut clamped = [0.0; N_CLASSES];
    let mut active = [0.0; N_CLASSES];
    for c in 0..N_CLASSES {
        let r = raw[c + 1];
        clamped[c] = r.clamp(0.0, 1.0);
        if r > 0.0 && r < 1.0 {
            active[c] = 1.0;
        }
    }
    let sum: f64 = clamped.iter().sum();
    if sum > 1.0 {
        // q_c = p_c / S, unsegmented fixed at zero.
        for c in 0..N_CLASSES {
            for d in 0..N_CLASSES {
                let delta = if c == d { 1.0 / sum } else { 0.0 };
                jac[c + 1][d + 1] = (delta - clamped[c] / (sum * sum)) * active[d];
            }
        }
    } else {
        for c in 0..N_CLASSES {
            jac[c + 1][c + 1] = active[c];
            jac[N_ATTRIBUTES - 1][c + 1] = -active[c];
        }
    }
    jac
}
