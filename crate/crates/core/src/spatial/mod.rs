//! City-wide application of a trained model: street-level scores per image,
//! zone aggregation, deviation decomposition and joint-distribution
//! statistics.

mod decompose;
mod export;
mod stats;

pub use decompose::{decompose_all, decompose_zone, Bar, Decomposition};
pub use export::{
    join_geojson, write_decomposition, write_image_scores, write_zone_scores, GeoJoin,
    ZONE_SCORES_HEADER,
};
pub use stats::{joint_distribution_stats, pearson, JointStats, VariableSummary};

use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingStore, ZoneMap};
use crate::error::{Error, Result};
use crate::model::{breakdown_unchecked, ModelParams, Terms, UtilityBreakdown};
use crate::semantics::{SemanticVector, N_ATTRIBUTES};

/// Zones with fewer images than this are flagged as low-confidence.
pub const DEFAULT_MIN_ZONE_COUNT: usize = 5;

/// Street-level score of one image: predicted semantics and the utility with
/// the numeric attributes left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub semantics: SemanticVector,
    pub utility: UtilityBreakdown,
}

fn score_one(params: &ModelParams, terms: Terms, image_id: &str, z: &[f32]) -> ImageScore {
    let semantics = SemanticVector::from_prediction(&params.head.forward(z));
    let utility = breakdown_unchecked(params, &[], &semantics.to_array(), z, terms);
    ImageScore {
        image_id: image_id.to_string(),
        semantics,
        utility,
    }
}

/// Scores every image of the store, in store order.
///
/// The residual term is included unless `include_residual` is false. With
/// the `parallel` feature, images are scored on the current rayon pool;
/// the output is the same either way.
pub fn score_images(
    params: &ModelParams,
    embeddings: &EmbeddingStore,
    include_residual: bool,
) -> Result<Vec<ImageScore>> {
    if embeddings.k() != params.k() {
        return Err(Error::DimensionMismatch {
            what: "embedding",
            expected: params.k(),
            found: embeddings.k(),
        });
    }
    let terms = Terms {
        numeric: false,
        residual: include_residual,
    };
    let ids: Vec<(&String, usize)> = embeddings.index().iter().map(|(id, &row)| (id, row)).collect();
    let score = |&(id, row): &(&String, usize)| score_one(params, terms, id, embeddings.row(row));

    #[cfg(feature = "parallel")]
    let scores: Vec<ImageScore> = {
        use rayon::prelude::*;
        ids.par_iter().with_min_len(1024).map(score).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let scores: Vec<ImageScore> = ids.iter().map(score).collect();

    if let Some(bad) = scores.iter().find(|s| !s.utility.v_total.is_finite()) {
        return Err(Error::NonFinite(format!("utility of image {}", bad.image_id)));
    }
    Ok(scores)
}

/// Arithmetic means over a group of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub image_count: usize,
    pub mean_utility: f64,
    /// Mean of each attribute, in coefficient order.
    pub mean_attributes: [f64; N_ATTRIBUTES],
    pub mean_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneReport {
    pub zone_id: String,
    #[serde(flatten)]
    pub means: GroupMeans,
    pub median_utility: f64,
    /// Fewer images than the configured minimum.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    /// Sorted by zone id.
    pub zones: Vec<ZoneReport>,
    /// Means over every mapped image.
    pub citywide: GroupMeans,
    /// Scored images without a zone, sorted.
    pub unmapped: Vec<String>,
    pub min_zone_count: usize,
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    utility: f64,
    attributes: [f64; N_ATTRIBUTES],
    residual: f64,
    utilities: Vec<f64>,
}

impl Accumulator {
    fn add(&mut self, s: &ImageScore) {
        self.n += 1;
        self.utility += s.utility.v_total;
        for (a, v) in self.attributes.iter_mut().zip(s.semantics.to_array()) {
            *a += v;
        }
        self.residual += s.utility.v_residual;
        self.utilities.push(s.utility.v_total);
    }

    fn means(&self) -> GroupMeans {
        let n = self.n as f64;
        GroupMeans {
            image_count: self.n,
            mean_utility: self.utility / n,
            mean_attributes: self.attributes.map(|a| a / n),
            mean_residual: self.residual / n,
        }
    }

    fn median(&mut self) -> f64 {
        self.utilities.sort_by(f64::total_cmp);
        let n = self.utilities.len();
        if n % 2 == 1 {
            self.utilities[n / 2]
        } else {
            (self.utilities[n / 2 - 1] + self.utilities[n / 2]) / 2.0
        }
    }
}

/// Groups scores by zone and averages them.
///
/// Images are accumulated in image-id order, so the result does not depend
/// on the order of `scores`. Unmapped images are left out of every mean and
/// listed in the result.
pub fn aggregate_zones(scores: &[ImageScore], zones: &ZoneMap, min_zone_count: usize) -> Result<Aggregation> {
    if zones.is_empty() {
        return Err(Error::EmptyZoneMap);
    }
    let mut sorted: Vec<&ImageScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let mut groups: std::collections::BTreeMap<&str, Accumulator> = Default::default();
    let mut city = Accumulator::default();
    let mut unmapped = Vec::new();
    for s in sorted {
        match zones.get(&s.image_id) {
            Some(entry) => {
                groups.entry(entry.zone_id.as_str()).or_default().add(s);
                city.add(s);
            }
            None => unmapped.push(s.image_id.clone()),
        }
    }
    if city.n == 0 {
        return Err(Error::InvalidDataset("no scored image maps to a zone".into()));
    }
    let zones = groups
        .into_iter()
        .map(|(zone_id, mut acc)| ZoneReport {
            zone_id: zone_id.to_string(),
            means: acc.means(),
            median_utility: acc.median(),
            low_confidence: acc.n < min_zone_count,
        })
        .collect();
    Ok(Aggregation {
        zones,
        citywide: city.means(),
        unmapped,
        min_zone_count,
    })
}
