//! Synthetic datasets generated from known coefficients, and the recovery
//! experiment that fits a model to them and compares.

use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Gumbel, Normal, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{
    write_choice_data, write_semantic_labels, write_split, write_zone_map, Alternative,
    ChoiceData, ChoiceObservation, DatasetSplit, EmbeddingStore, Manifest, SemanticStore,
    ZoneEntry, ZoneMap,
};
use crate::error::{Error, Result};
use crate::model::{
    evaluate_split, rho_squared, ModelParams, SplitFit, REPORTED_BETA_NUM,
    REPORTED_BETA_SEM,
};
use crate::semantics::{Attribute, SemanticVector, N_ATTRIBUTES, N_CLASSES, N_TARGETS};
use crate::trainer::{train_sequential, PhaseResult, TrainConfig, TrainingInput};

/// Largest absolute coefficient error the recovery experiment accepts.
pub const RECOVERY_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceMode {
    /// Draw the choice from the logit probabilities.
    Probability,
    /// Add independent Gumbel(0, 1) errors and take the argmax.
    Gumbel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    /// Gaussian rows made orthonormal by Gram-Schmidt.
    Orthonormal,
    /// Identity in the first ten embedding dimensions, zeros elsewhere.
    IdentityPadded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub numeric_attributes: Vec<String>,
    pub numeric_units: Vec<String>,
    pub true_beta_num: Vec<f64>,
    /// Coefficient order of [`Attribute::ALL`].
    pub true_beta_sem: [f64; N_ATTRIBUTES],
    pub reference_class: Attribute,
    /// Uniform sampling range of each numeric attribute.
    pub numeric_ranges: Vec<[f64; 2]>,
    pub n_observations: usize,
    /// Defaults to `n_observations`.
    pub n_images: Option<usize>,
    /// Share of observations (and of images) placed in the test split.
    pub test_fraction: f64,
    pub k: usize,
    pub dirichlet_alpha: f64,
    /// Expected unsegmented share of an image.
    pub unsegmented_mean: f64,
    pub car_count_mean: f64,
    pub encoder: Encoder,
    pub sigma_z: f64,
    pub choice_mode: ChoiceMode,
    /// Zones form a `grid_side` x `grid_side` grid over the bounding box.
    pub grid_side: usize,
    pub bbox: [f64; 4],
    /// Consecutive tasks answered by the same respondent.
    pub tasks_per_respondent: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            numeric_attributes: vec!["hhcost".into(), "tt".into()],
            numeric_units: vec!["scaled".into(), "scaled".into()],
            true_beta_num: REPORTED_BETA_NUM.to_vec(),
            true_beta_sem: REPORTED_BETA_SEM,
            reference_class: Attribute::Building,
            numeric_ranges: vec![[0.0, 2.0], [0.0, 2.0]],
            n_observations: 1000,
            n_images: None,
            test_fraction: 0.2,
            k: 16,
            dirichlet_alpha: 2.0,
            unsegmented_mean: 0.15,
            car_count_mean: 3.0,
            encoder: Encoder::Orthonormal,
            sigma_z: 0.0,
            choice_mode: ChoiceMode::Probability,
            grid_side: 4,
            bbox: [4.40, 51.85, 4.60, 51.98],
            tasks_per_respondent: 15,
            seed: 0,
        }
    }
}

/// Independent random streams, one per generator stage.
#[derive(Clone, Copy)]
enum Stream {
    Semantics = 1,
    Encoder = 2,
    Noise = 3,
    Choices = 4,
    Zones = 5,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let m = self.numeric_attributes.len();
        if self.true_beta_num.len() != m || self.numeric_ranges.len() != m || self.numeric_units.len() != m {
            return bad("numeric attribute names, coefficients, units and ranges differ in length".into());
        }
        if !self.reference_class.is_proportion() {
            return bad("the reference class must be a proportion".into());
        }
        if self.true_beta_sem[self.reference_class.index()] != 0.0 {
            return bad(format!("true coefficient of {} must be 0", self.reference_class));
        }
        if self.true_beta_num.iter().chain(&self.true_beta_sem).any(|b| !b.is_finite()) {
            return bad("true coefficients must be finite".into());
        }
        if self.numeric_ranges.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return bad("numeric ranges must be finite with low <= high".into());
        }
        if !(self.sigma_z >= 0.0 && self.sigma_z.is_finite()) {
            return bad("sigma_z must be >= 0".into());
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return bad("dirichlet_alpha must be > 0".into());
        }
        if !(self.unsegmented_mean > 0.0 && self.unsegmented_mean < 1.0) {
            return bad("unsegmented_mean must lie in (0, 1)".into());
        }
        if !(self.car_count_mean > 0.0 && self.car_count_mean.is_finite()) {
            return bad("car_count_mean must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)".into());
        }
        if self.k == 0 {
            return Err(Error::ZeroDimension);
        }
        if self.n_observations == 0 || self.grid_side == 0 || self.tasks_per_respondent == 0 {
            return bad("n_observations, grid_side and tasks_per_respondent must be positive".into());
        }
        let (train, test) = self.pool_sizes();
        if train < 2 || (self.n_test_observations() > 0 && test < 2) {
            return bad("each split needs at least two images".into());
        }
        let [x0, y0, x1, y1] = self.bbox;
        if !(x0 < x1 && y0 < y1) {
            return bad("bbox must be [min_lon, min_lat, max_lon, max_lat]".into());
        }
        Ok(())
    }

    pub fn n_images(&self) -> usize {
        self.n_images.unwrap_or(self.n_observations)
    }

    fn n_test_observations(&self) -> usize {
        (self.n_observations as f64 * self.test_fraction).round() as usize
    }

    /// Image pool sizes of the train and test splits.
    fn pool_sizes(&self) -> (usize, usize) {
        let n = self.n_images();
        if self.n_test_observations() == 0 {
            return (n, 0);
        }
        let test = (n as f64 * self.test_fraction).round() as usize;
        (n - test, test)
    }

    /// Recovery regime: the default coefficients with sparse, nearly one-hot
    /// class proportions, which maximises the information each choice
    /// carries about the proportion coefficients.
    pub fn recovery(n_observations: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_observations,
            dirichlet_alpha: 0.05,
            seed,
            ..SyntheticSpec::default()
        }
    }

    fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        rng
    }

    /// Dirichlet concentration of the unsegmented component, chosen so that
    /// its expected share is `unsegmented_mean`.
    pub fn unsegmented_alpha(&self) -> f64 {
        N_CLASSES as f64 * self.dirichlet_alpha * self.unsegmented_mean / (1.0 - self.unsegmented_mean)
    }

    /// The true coefficients as a model with an oracle head.
    pub fn true_params(&self, encoder: &EncoderMatrix) -> Result<ModelParams> {
        let mut p = ModelParams::new(self.k, self.numeric_attributes.clone());
        p.set_reference_class(self.reference_class)?;
        p.beta_num = self.true_beta_num.clone();
        p.beta_sem = self.true_beta_sem;
        p.meta.numeric_units = self.numeric_units.clone();
        let rows: Vec<[f64; N_TARGETS]> = (0..self.k)
            .map(|k| std::array::from_fn(|t| encoder.rows[t][k]))
            .collect();
        p.head.set_affine(&rows, [0.0; N_TARGETS])?;
        Ok(p)
    }
}

fn image_id(i: usize) -> String {
    format!("img{i:06}")
}

/// Draws `n_images` semantic vectors with ids `img000000`, `img000001`, ...
///
/// The nine class proportions and the unsegmented remainder are one draw
/// from a ten-component Dirichlet; the car count is Poisson.
pub fn simulate_semantics(spec: &SyntheticSpec, n_images: usize) -> Result<(Vec<String>, SemanticStore)> {
    let mut rng = spec.rng(Stream::Semantics);
    let class = Gamma::new(spec.dirichlet_alpha, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let rest = Gamma::new(spec.unsegmented_alpha(), 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let cars = Poisson::new(spec.car_count_mean).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut ids = Vec::with_capacity(n_images);
    let mut labels = SemanticStore::with_capacity(n_images);
    for i in 0..n_images {
        let (g, u) = loop {
            let g: [f64; N_CLASSES] = std::array::from_fn(|_| class.sample(&mut rng));
            let u = rest.sample(&mut rng);
            if g.iter().sum::<f64>() + u > 0.0 {
                break (g, u);
            }
        };
        let total = g.iter().sum::<f64>() + u;
        let proportions = g.map(|x| x / total);
        let sum: f64 = proportions.iter().sum();
        let vector = SemanticVector {
            car_count: cars.sample(&mut rng),
            proportions,
            unsegmented: (1.0 - sum).max(0.0),
        };
        let id = image_id(i);
        ids.push(id.clone());
        labels.insert(id, vector);
    }
    Ok((ids, labels))
}

/// Mixing matrix mapping the ten semantic targets into embedding space, one
/// row per target.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderMatrix {
    pub rows: Vec<Vec<f64>>,
    /// Rows do not span ten dimensions, so semantics are not decodable.
    pub rank_deficient: bool,
}

pub fn encoder_matrix(spec: &SyntheticSpec) -> EncoderMatrix {
    let k = spec.k;
    match spec.encoder {
        Encoder::IdentityPadded => {
            let rows = (0..N_TARGETS)
                .map(|t| (0..k).map(|j| if j == t { 1.0 } else { 0.0 }).collect())
                .collect();
            EncoderMatrix { rows, rank_deficient: k < N_TARGETS }
        }
        Encoder::Orthonormal => {
            let mut rng = spec.rng(Stream::Encoder);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(N_TARGETS);
            let mut rank_deficient = false;
            for _ in 0..N_TARGETS {
                let mut v: Vec<f64> = (0..k).map(|_| normal.sample(&mut rng)).collect();
                let start: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for _ in 0..2 {
                    for r in &rows {
                        let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                        v.iter_mut().zip(r).for_each(|(x, a)| *x -= d * a);
                    }
                }
                let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm <= 1e-10 * start.max(1.0) {
                    rank_deficient = true;
                    v.fill(0.0);
                } else {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                rows.push(v);
            }
            EncoderMatrix { rows, rank_deficient }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedEmbeddings {
    pub store: EmbeddingStore,
    pub encoder: EncoderMatrix,
}

/// `z = A^T t + noise`, where `t` holds the ten semantic targets of an image.
///
/// A rank-deficient encoder is logged; with `sigma_z = 0` the semantics are
/// then not recoverable from the embeddings.
pub fn simulate_embeddings(spec: &SyntheticSpec, labels: &SemanticStore) -> Result<SimulatedEmbeddings> {
    let encoder = encoder_matrix(spec);
    if encoder.rank_deficient {
        log::warn!(
            "encoder has rank < {N_TARGETS} (k = {}); semantics are not linearly decodable{}",
            spec.k,
            if spec.sigma_z == 0.0 { " even without noise" } else { "" }
        );
    }
    let mut rng = spec.rng(Stream::Noise);
    let noise = Normal::new(0.0, spec.sigma_z).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let rows = labels.iter().map(|(id, s)| {
        let t = s.targets();
        let z: Vec<f32> = (0..spec.k)
            .map(|j| {
                let clean: f64 = (0..N_TARGETS).map(|i| encoder.rows[i][j] * t[i]).sum();
                let eps = if spec.sigma_z > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                (clean + eps) as f32
            })
            .collect();
        (id.clone(), z)
    });
    let store = EmbeddingStore::from_rows(spec.k, rows)?;
    Ok(SimulatedEmbeddings { store, encoder })
}

/// Index of the chosen alternative under logit choice with utilities `v`.
pub fn sample_choice<R: Rng + ?Sized>(v: &[f64], mode: ChoiceMode, rng: &mut R) -> usize {
    match mode {
        ChoiceMode::Probability => {
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
            let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    return i;
                }
                u -= wi;
            }
            v.len() - 1
        }
        ChoiceMode::Gumbel => {
            let gumbel = Gumbel::new(0.0, 1.0).expect("standard Gumbel");
            let mut best = (0, f64::NEG_INFINITY);
            for (i, x) in v.iter().enumerate() {
                let u = x + gumbel.sample(rng);
                if u > best.1 {
                    best = (i, u);
                }
            }
            best.0
        }
    }
}

/// True systematic utility of one alternative (no residual term).
pub fn true_utility(spec: &SyntheticSpec, x: &[f64], s: &SemanticVector) -> f64 {
    let num: f64 = spec.true_beta_num.iter().zip(x).map(|(b, v)| b * v).sum();
    let sem: f64 = spec.true_beta_sem.iter().zip(s.to_array()).map(|(b, v)| b * v).sum();
    num + sem
}

/// Draws choice tasks. Training observations pair images from `train_pool`,
/// test observations from `test_pool`, so the two splits share no image.
pub fn simulate_choices(
    spec: &SyntheticSpec,
    train_pool: &[String],
    test_pool: &[String],
    labels: &SemanticStore,
) -> Result<(ChoiceData, DatasetSplit)> {
    let n_test = spec.n_test_observations();
    let n_train = spec.n_observations - n_test;
    if train_pool.len() < 2 || (n_test > 0 && test_pool.len() < 2) {
        return Err(Error::InvalidConfig("each split needs at least two images".into()));
    }
    let mut rng = spec.rng(Stream::Choices);
    let mut observations = Vec::with_capacity(spec.n_observations);
    let mut split = DatasetSplit::default();
    for n in 0..spec.n_observations {
        let pool = if n < n_train { train_pool } else { test_pool };
        let a = rng.random_range(0..pool.len());
        let mut b = rng.random_range(0..pool.len() - 1);
        if b >= a {
            b += 1;
        }
        let mut alternatives = Vec::with_capacity(2);
        let mut v = [0.0; 2];
        for (j, idx) in [a, b].into_iter().enumerate() {
            let numeric: Vec<f64> = spec
                .numeric_ranges
                .iter()
                .map(|&[lo, hi]| if hi > lo { rng.random_range(lo..hi) } else { lo })
                .collect();
            let id = &pool[idx];
            let s = labels.get(id).ok_or_else(|| Error::MissingLabel(id.clone()))?;
            v[j] = true_utility(spec, &numeric, s);
            alternatives.push(Alternative { image_id: id.clone(), numeric });
        }
        let chosen = sample_choice(&v, spec.choice_mode, &mut rng);
        let obs_id = format!("obs{n:06}");
        if n < n_train {
            split.train.push(obs_id.clone());
        } else {
            split.test.push(obs_id.clone());
        }
        observations.push(ChoiceObservation {
            obs_id,
            respondent_id: format!("resp{:05}", n / spec.tasks_per_respondent),
            alternatives,
            chosen,
        });
    }
    let choices = ChoiceData {
        attribute_names: spec.numeric_attributes.clone(),
        observations,
    };
    Ok((choices, split))
}

fn zone_id(row: usize, col: usize) -> String {
    format!("Z{row:02}{col:02}")
}

/// Scatters images uniformly over the bounding box and assigns each to the
/// grid cell it falls in.
pub fn simulate_zones(spec: &SyntheticSpec, image_ids: &[String]) -> ZoneMap {
    let mut rng = spec.rng(Stream::Zones);
    let [x0, y0, x1, y1] = spec.bbox;
    let side = spec.grid_side;
    let cell = |v: f64, lo: f64, hi: f64| (((v - lo) / (hi - lo) * side as f64) as usize).min(side - 1);
    image_ids
        .iter()
        .map(|id| {
            let lon = rng.random_range(x0..x1);
            let lat = rng.random_range(y0..y1);
            let entry = ZoneEntry {
                zone_id: zone_id(cell(lat, y0, y1), cell(lon, x0, x1)),
                lon: Some(lon),
                lat: Some(lat),
            };
            (id.clone(), entry)
        })
        .collect()
}

/// GeoJSON feature collection with one rectangular polygon per grid zone.
pub fn zone_grid_geojson(spec: &SyntheticSpec) -> Value {
    let [x0, y0, x1, y1] = spec.bbox;
    let side = spec.grid_side;
    let dx = (x1 - x0) / side as f64;
    let dy = (y1 - y0) / side as f64;
    let mut features = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let (a, b) = (x0 + col as f64 * dx, y0 + row as f64 * dy);
            let (c, d) = (a + dx, b + dy);
            features.push(json!({
                "type": "Feature",
                "properties": { "zone_id": zone_id(row, col) },
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[a, b], [c, b], [c, d], [a, d], [a, b]]]
                }
            }));
        }
    }
    json!({ "type": "FeatureCollection", "features": features })
}

/// Ground truth written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta_num: IndexMap<String, f64>,
    pub beta_sem: IndexMap<Attribute, f64>,
    pub reference_class: Attribute,
    pub encoder_rank_deficient: bool,
    pub spec: SyntheticSpec,
}

/// A complete synthetic dataset held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub choices: ChoiceData,
    pub embeddings: EmbeddingStore,
    pub encoder: EncoderMatrix,
    pub labels: SemanticStore,
    pub zones: ZoneMap,
    pub split: DatasetSplit,
    pub geometry: Value,
}

pub fn simulate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let (ids, labels) = simulate_semantics(spec, spec.n_images())?;
    let SimulatedEmbeddings { store, encoder } = simulate_embeddings(spec, &labels)?;
    let (n_train_images, _) = spec.pool_sizes();
    let (train_pool, test_pool) = ids.split_at(n_train_images);
    let (choices, split) = simulate_choices(spec, train_pool, test_pool, &labels)?;
    let zones = simulate_zones(spec, &ids);
    Ok(SyntheticDataset {
        spec: spec.clone(),
        choices,
        embeddings: store,
        encoder,
        labels,
        zones,
        split,
        geometry: zone_grid_geojson(spec),
    })
}

impl SyntheticDataset {
    pub fn truth(&self) -> Truth {
        let spec = &self.spec;
        Truth {
            beta_num: spec
                .numeric_attributes
                .iter()
                .cloned()
                .zip(spec.true_beta_num.iter().copied())
                .collect(),
            beta_sem: Attribute::ALL.iter().map(|&a| (a, spec.true_beta_sem[a.index()])).collect(),
            reference_class: spec.reference_class,
            encoder_rank_deficient: self.encoder.rank_deficient,
            spec: spec.clone(),
        }
    }

    pub fn true_params(&self) -> Result<ModelParams> {
        self.spec.true_params(&self.encoder)
    }

    pub fn training_input(&self) -> TrainingInput<'_> {
        TrainingInput {
            choices: &self.choices,
            embeddings: &self.embeddings,
            labels: Some(&self.labels),
            split: Some(&self.split),
            units: &self.spec.numeric_units,
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            choices: "choices.csv".into(),
            embeddings: "embeddings.bin".into(),
            embedding_index: "embeddings.idx.csv".into(),
            semantics: Some("semantics.csv".into()),
            zones: Some("zones.csv".into()),
            split: Some("split.csv".into()),
            geometry: Some("zones.geojson".into()),
            k: self.spec.k,
            units: self
                .spec
                .numeric_attributes
                .iter()
                .cloned()
                .zip(self.spec.numeric_units.iter().cloned())
                .collect(),
        }
    }

    /// Writes the dataset files, `manifest.json` and `truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = self.manifest();
        write_choice_data(&dir.join(&m.choices), &self.choices)?;
        self.embeddings.write(&dir.join(&m.embeddings), &dir.join(&m.embedding_index))?;
        write_semantic_labels(&dir.join("semantics.csv"), &self.labels)?;
        write_zone_map(&dir.join("zones.csv"), &self.zones)?;
        write_split(&dir.join("split.csv"), &self.split)?;
        crate::json::write_file(&dir.join("zones.geojson"), &self.geometry)?;
        crate::json::write_file(&dir.join("truth.json"), &self.truth())?;
        crate::json::write_file(&dir.join("manifest.json"), &m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecovery {
    pub name: String,
    pub truth: f64,
    pub estimate: f64,
    pub abs_error: f64,
    /// Asymptotic standard error of the maximum-likelihood estimate at the
    /// true coefficients on the training sample.
    pub standard_error: Option<f64>,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub n_observations: usize,
    pub tolerance: f64,
    pub coefficients: Vec<CoefficientRecovery>,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    pub all_within_tolerance: bool,
    pub train: SplitFit,
    pub test: Option<SplitFit>,
    /// Test cross-entropy of the generating model.
    pub bayes_cross_entropy: Option<f64>,
    pub bayes_rho_squared: Option<f64>,
    pub truth_semantic_rmse: Option<f64>,
    pub phases: Vec<PhaseResult>,
}

#[derive(Debug, Clone)]
pub struct RecoveryOutcome {
    pub report: RecoveryReport,
    pub params: ModelParams,
}

/// Training settings used by the recovery experiment: no weight decay, so the
/// estimates target the maximum-likelihood solution, and step sizes large
/// enough for the phases to converge within their epoch budget.
pub fn recovery_train_config(seed: u64) -> TrainConfig {
    let mut config = TrainConfig {
        l2_lambda: 0.0,
        rng_seed: seed,
        ..TrainConfig::default()
    };
    config.phases[0].learning_rate = Some(2e-3);
    config.phases[0].max_epochs = 200;
    config.phases[1].learning_rate = Some(1e-2);
    config.phases[1].max_epochs = 300;
    config.phases[2].learning_rate = Some(1e-5);
    config.phases[2].max_epochs = 20;
    config
}

/// Asymptotic standard errors of the free coefficients (numeric first, then
/// the free semantic ones in coefficient order) from the Fisher information
/// of the true model. `None` when the information matrix is singular.
pub fn standard_errors(
    spec: &SyntheticSpec,
    observations: &[&ChoiceObservation],
    labels: &SemanticStore,
) -> Option<Vec<f64>> {
    let free: Vec<usize> = (0..N_ATTRIBUTES).filter(|&i| i != spec.reference_class.index()).collect();
    let m = spec.true_beta_num.len();
    let dim = m + free.len();
    let mut info = DMatrix::<f64>::zeros(dim, dim);
    let mut d = DVector::<f64>::zeros(dim);
    for obs in observations {
        let [a0, a1] = [&obs.alternatives[0], &obs.alternatives[1]];
        let s0 = labels.get(&a0.image_id)?.to_array();
        let s1 = labels.get(&a1.image_id)?.to_array();
        for i in 0..m {
            d[i] = a0.numeric[i] - a1.numeric[i];
        }
        for (j, &t) in free.iter().enumerate() {
            d[m + j] = s0[t] - s1[t];
        }
        let dv = true_utility(spec, &a0.numeric, labels.get(&a0.image_id)?)
            - true_utility(spec, &a1.numeric, labels.get(&a1.image_id)?);
        let p = 1.0 / (1.0 + (-dv).exp());
        info.ger(p * (1.0 - p), &d, &d, 1.0);
    }
    let cov = info.try_inverse()?;
    Some((0..dim).map(|i| cov[(i, i)].max(0.0).sqrt()).collect())
}

/// Simulates a dataset, trains on it and compares the estimates with the
/// generating coefficients.
pub fn parameter_recovery_experiment(spec: &SyntheticSpec, config: &TrainConfig) -> Result<RecoveryOutcome> {
    let data = simulate(spec)?;
    recover_from(&data, config)
}

pub fn recover_from(data: &SyntheticDataset, config: &TrainConfig) -> Result<RecoveryOutcome> {
    let spec = &data.spec;
    let outcome = train_sequential(&data.training_input(), config)?;
    let params = outcome.params;

    let by_id = data.choices.by_id();
    let pick = |ids: &[String]| -> Vec<&ChoiceObservation> {
        ids.iter().map(|id| by_id[id.as_str()]).collect()
    };
    let train = pick(&data.split.train);
    let test = pick(&data.split.test);
    let ses = standard_errors(spec, &train, &data.labels);

    let mut coefficients = Vec::new();
    let mut se_iter = ses.as_ref().map(|v| v.iter().copied());
    let mut next_se = || se_iter.as_mut().and_then(|it| it.next());
    for (i, name) in spec.numeric_attributes.iter().enumerate() {
        coefficients.push((format!("beta_{name}"), spec.true_beta_num[i], params.beta_num[i], next_se()));
    }
    for a in Attribute::ALL {
        if a == spec.reference_class {
            continue;
        }
        coefficients.push((a.name().to_string(), spec.true_beta_sem[a.index()], params.beta_sem[a.index()], next_se()));
    }
    let coefficients: Vec<CoefficientRecovery> = coefficients
        .into_iter()
        .map(|(name, truth, estimate, standard_error)| {
            let abs_error = (estimate - truth).abs();
            CoefficientRecovery {
                name,
                truth,
                estimate,
                abs_error,
                standard_error,
                within_tolerance: abs_error <= RECOVERY_TOLERANCE,
            }
        })
        .collect();
    let n_coef = coefficients.len() as f64;
    let mean_abs_error = coefficients.iter().map(|c| c.abs_error).sum::<f64>() / n_coef;
    let max_abs_error = coefficients.iter().map(|c| c.abs_error).fold(0.0, f64::max);

    let truth = data.true_params()?;
    let (bayes_ce, bayes_rho) = if test.is_empty() {
        (None, None)
    } else {
        let ll = bayes_log_likelihood(spec, &test, &data.labels)?;
        (Some(-ll / test.len() as f64), Some(rho_squared(ll, test.len(), 2)?))
    };
    let truth_fit = evaluate_split(&truth, &train, &data.embeddings, Some(&data.labels))?;
    let report = RecoveryReport {
        n_observations: spec.n_observations,
        tolerance: RECOVERY_TOLERANCE,
        all_within_tolerance: coefficients.iter().all(|c| c.within_tolerance),
        coefficients,
        mean_abs_error,
        max_abs_error,
        train: outcome.fit.train,
        test: outcome.fit.test,
        bayes_cross_entropy: bayes_ce,
        bayes_rho_squared: bayes_rho,
        truth_semantic_rmse: truth_fit.semantic_rmse,
        phases: outcome.phases,
    };
    Ok(RecoveryOutcome { report, params })
}

/// Log-likelihood of the observed choices under the generating model,
/// evaluated on the true semantic labels.
pub fn bayes_log_likelihood(
    spec: &SyntheticSpec,
    observations: &[&ChoiceObservation],
    labels: &SemanticStore,
) -> Result<f64> {
    let mut ll = 0.0;
    for obs in observations {
        let v = obs
            .alternatives
            .iter()
            .map(|a| {
                let s = labels.get(&a.image_id).ok_or_else(|| Error::MissingLabel(a.image_id.clone()))?;
                Ok(true_utility(spec, &a.numeric, s))
            })
            .collect::<Result<Vec<f64>>>()?;
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        ll += v[obs.chosen] - lse;
    }
    Ok(ll)
}
