use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::semantics::{Attribute, N_ATTRIBUTES, N_TARGETS};

/// Shape of the map from feature map to predicted semantic targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum HeadArchitecture {
    #[default]
    Affine,
    /// One tanh hidden layer of the given width.
    Hidden { width: usize },
}

/// Semantic head with all weights in one flat vector.
///
/// Affine layout: `W` (10 x K, target-major) then bias (10).
/// Hidden layout: `W1` (H x K), `b1` (H), `W2` (10 x H), `b2` (10).
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticHead {
    arch: HeadArchitecture,
    k: usize,
    theta: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct HeadCache {
    hidden: Vec<f64>,
}

impl SemanticHead {
    pub fn zeros(arch: HeadArchitecture, k: usize) -> Self {
        let len = match arch {
            HeadArchitecture::Affine => N_TARGETS * k + N_TARGETS,
            HeadArchitecture::Hidden { width } => width * k + width + N_TARGETS * width + N_TARGETS,
        };
        SemanticHead {
            arch,
            k,
            theta: vec![0.0; len],
        }
    }

    pub fn architecture(&self) -> HeadArchitecture {
        self.arch
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Affine weight for target `t` and feature `k`.
    pub fn weight(&self, t: usize, k: usize) -> f64 {
        debug_assert!(matches!(self.arch, HeadArchitecture::Affine));
        self.theta[t * self.k + k]
    }

    pub fn set_affine(&mut self, weights: &[[f64; N_TARGETS]], bias: [f64; N_TARGETS]) -> Result<()> {
        if self.arch != HeadArchitecture::Affine {
            return Err(Error::InvalidConfig("head is not affine".into()));
        }
        if weights.len() != self.k {
            return Err(Error::DimensionMismatch {
                what: "head weights",
                expected: self.k,
                found: weights.len(),
            });
        }
        for (k, row) in weights.iter().enumerate() {
            for (t, &w) in row.iter().enumerate() {
                self.theta[t * self.k + k] = w;
            }
        }
        self.theta[N_TARGETS * self.k..].copy_from_slice(&bias);
        Ok(())
    }

    pub fn bias(&self) -> &[f64] {
        &self.theta[self.theta.len() - N_TARGETS..]
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        let n = self.theta.len();
        &mut self.theta[n - N_TARGETS..]
    }

    fn randomize(&mut self, rng: &mut ChaCha8Rng) {
        match self.arch {
            HeadArchitecture::Affine => {
                for w in &mut self.theta {
                    *w = rng.random_range(-0.01..0.01);
                }
            }
            HeadArchitecture::Hidden { width } => {
                let scale = 1.0 / (self.k as f64).sqrt();
                let n1 = width * self.k;
                for (i, w) in self.theta.iter_mut().enumerate() {
                    *w = if i < n1 {
                        rng.random_range(-scale..scale)
                    } else {
                        rng.random_range(-0.01..0.01)
                    };
                }
            }
        }
    }

    /// Raw (pre-clamp) predictions of the ten targets.
    pub fn forward(&self, z: &[f32]) -> [f64; N_TARGETS] {
        self.forward_cached(z, &mut HeadCache::default())
    }

    pub fn forward_cached(&self, z: &[f32], cache: &mut HeadCache) -> [f64; N_TARGETS] {
        let k = self.k;
        let mut out = [0.0; N_TARGETS];
        match self.arch {
            HeadArchitecture::Affine => {
                let bias = &self.theta[N_TARGETS * k..];
                for (t, o) in out.iter_mut().enumerate() {
                    *o = bias[t] + dot(&self.theta[t * k..(t + 1) * k], z);
                }
            }
            HeadArchitecture::Hidden { width } => {
                let (w1, rest) = self.theta.split_at(width * k);
                let (b1, rest) = rest.split_at(width);
                let (w2, b2) = rest.split_at(N_TARGETS * width);
                cache.hidden.clear();
                cache
                    .hidden
                    .extend((0..width).map(|h| (b1[h] + dot(&w1[h * k..(h + 1) * k], z)).tanh()));
                for (t, o) in out.iter_mut().enumerate() {
                    *o = b2[t]
                        + w2[t * width..(t + 1) * width]
                            .iter()
                            .zip(&cache.hidden)
                            .map(|(w, a)| w * a)
                            .sum::<f64>();
                }
            }
        }
        out
    }

    /// Accumulates `d_raw` (gradient w.r.t. raw outputs) into `grad`, which has
    /// the layout of `theta`.
    pub fn backward(&self, z: &[f32], cache: &HeadCache, d_raw: &[f64; N_TARGETS], grad: &mut [f64]) {
        let k = self.k;
        match self.arch {
            HeadArchitecture::Affine => {
                for (t, &d) in d_raw.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (g, &zk) in grad[t * k..(t + 1) * k].iter_mut().zip(z) {
                        *g += d * zk as f64;
                    }
                    grad[N_TARGETS * k + t] += d;
                }
            }
            HeadArchitecture::Hidden { width } => {
                let w2 = &self.theta[width * k + width..width * k + width + N_TARGETS * width];
                let (g1, rest) = grad.split_at_mut(width * k);
                let (gb1, rest) = rest.split_at_mut(width);
                let (gw2, gb2) = rest.split_at_mut(N_TARGETS * width);
                let mut d_hidden = vec![0.0; width];
                for (t, &d) in d_raw.iter().enumerate() {
                    gb2[t] += d;
                    for h in 0..width {
                        gw2[t * width + h] += d * cache.hidden[h];
                        d_hidden[h] += d * w2[t * width + h];
                    }
                }
                for h in 0..width {
                    let a = cache.hidden[h];
                    let d_pre = d_hidden[h] * (1.0 - a * a);
                    gb1[h] += d_pre;
                    for (g, &zk) in g1[h * k..(h + 1) * k].iter_mut().zip(z) {
                        *g += d_pre * zk as f64;
                    }
                }
            }
        }
    }
}

pub(crate) fn dot(w: &[f64], z: &[f32]) -> f64 {
    w.iter().zip(z).map(|(a, &b)| a * b as f64).sum()
}

/// Parameter groups that training phases freeze or release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Numeric,
    Semantic,
    Head,
    Residual,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Numeric,
        ParamGroup::Semantic,
        ParamGroup::Head,
        ParamGroup::Residual,
    ];
}

/// Set of parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Groups {
    pub numeric: bool,
    pub semantic: bool,
    pub head: bool,
    pub residual: bool,
}

impl Groups {
    pub const ALL: Groups = Groups {
        numeric: true,
        semantic: true,
        head: true,
        residual: true,
    };
    pub const NONE: Groups = Groups {
        numeric: false,
        semantic: false,
        head: false,
        residual: false,
    };

    pub fn only(groups: &[ParamGroup]) -> Self {
        let mut g = Groups::NONE;
        for &p in groups {
            *g.get_mut(p) = true;
        }
        g
    }

    pub fn contains(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Numeric => self.numeric,
            ParamGroup::Semantic => self.semantic,
            ParamGroup::Head => self.head,
            ParamGroup::Residual => self.residual,
        }
    }

    fn get_mut(&mut self, group: ParamGroup) -> &mut bool {
        match group {
            ParamGroup::Numeric => &mut self.numeric,
            ParamGroup::Semantic => &mut self.semantic,
            ParamGroup::Head => &mut self.head,
            ParamGroup::Residual => &mut self.residual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cross_entropy: Option<f64>,
    pub rmse: Option<f64>,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub phase: u8,
    pub epoch: usize,
    pub train: LossComponents,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<LossComponents>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub reference_class: Attribute,
    pub seed: u64,
    /// Per-target weights inside the semantic RMSE (car count first).
    pub rmse_weights: [f64; N_TARGETS],
    pub numeric_attributes: Vec<String>,
    pub numeric_units: Vec<String>,
    pub history: Vec<HistoryEntry>,
    /// Effective configuration the model was trained with.
    pub config: Option<serde_json::Value>,
}

/// All model coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelFile", try_from = "ModelFile")]
pub struct ModelParams {
    pub beta_num: Vec<f64>,
    pub beta_sem: [f64; N_ATTRIBUTES],
    /// Coefficients held at their current value during training.
    pub fixed_sem: [bool; N_ATTRIBUTES],
    pub head: SemanticHead,
    pub beta_res: Vec<f64>,
    pub meta: ModelMeta,
}

impl ModelParams {
    /// All-zero model with an affine head and `p_building` as reference class.
    pub fn new(k: usize, numeric_attributes: Vec<String>) -> Self {
        Self::with_head(HeadArchitecture::Affine, k, numeric_attributes)
    }

    pub fn with_head(arch: HeadArchitecture, k: usize, numeric_attributes: Vec<String>) -> Self {
        let m = numeric_attributes.len();
        let mut fixed_sem = [false; N_ATTRIBUTES];
        fixed_sem[Attribute::Building.index()] = true;
        ModelParams {
            beta_num: vec![0.0; m],
            beta_sem: [0.0; N_ATTRIBUTES],
            fixed_sem,
            head: SemanticHead::zeros(arch, k),
            beta_res: vec![0.0; k],
            meta: ModelMeta {
                reference_class: Attribute::Building,
                seed: 0,
                rmse_weights: [1.0; N_TARGETS],
                numeric_units: vec![String::new(); m],
                numeric_attributes,
                history: Vec::new(),
                config: None,
            },
        }
    }

    /// Draws head weights from a seeded uniform(-0.01, 0.01).
    pub fn init_head(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.head.randomize(&mut rng);
        self.meta.seed = seed;
    }

    pub fn k(&self) -> usize {
        self.head.k()
    }

    pub fn m(&self) -> usize {
        self.beta_num.len()
    }

    /// Moves the normalisation to another proportion class. The previous
    /// reference is released, the new one fixed at zero.
    pub fn set_reference_class(&mut self, reference: Attribute) -> Result<()> {
        if !reference.is_proportion() {
            return Err(Error::InvalidConfig(format!(
                "reference class must be a proportion, not {reference}"
            )));
        }
        self.fixed_sem[self.meta.reference_class.index()] = false;
        self.meta.reference_class = reference;
        self.fixed_sem[reference.index()] = true;
        self.beta_sem[reference.index()] = 0.0;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.meta.reference_class;
        if !r.is_proportion() {
            return Err(Error::InvalidConfig(format!("reference class {r} is not a proportion")));
        }
        if !self.fixed_sem[r.index()] || self.beta_sem[r.index()] != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "reference class {r} must be fixed at exactly zero"
            )));
        }
        if self.beta_res.len() != self.head.k() {
            return Err(Error::DimensionMismatch {
                what: "residual coefficients",
                expected: self.head.k(),
                found: self.beta_res.len(),
            });
        }
        if self.meta.numeric_attributes.len() != self.beta_num.len() {
            return Err(Error::DimensionMismatch {
                what: "numeric attribute names",
                expected: self.beta_num.len(),
                found: self.meta.numeric_attributes.len(),
            });
        }
        let all_finite = self
            .beta_num
            .iter()
            .chain(&self.beta_sem)
            .chain(self.head.theta())
            .chain(&self.beta_res)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::Numeric => &self.beta_num,
            ParamGroup::Semantic => &self.beta_sem,
            ParamGroup::Head => self.head.theta(),
            ParamGroup::Residual => &self.beta_res,
        }
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        match group {
            ParamGroup::Numeric => &mut self.beta_num,
            ParamGroup::Semantic => &mut self.beta_sem,
            ParamGroup::Head => self.head.theta_mut(),
            ParamGroup::Residual => &mut self.beta_res,
        }
    }

    /// Whether entry `i` of `group` may move during training.
    pub fn is_free(&self, group: ParamGroup, i: usize) -> bool {
        group != ParamGroup::Semantic || !self.fixed_sem[i]
    }

    /// SHA-256 over the little-endian bit patterns of a group.
    pub fn checksum(&self, group: ParamGroup) -> String {
        let mut hasher = Sha256::new();
        for v in self.group(group) {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn checksums(&self) -> IndexMap<ParamGroup, String> {
        ParamGroup::ALL
            .iter()
            .map(|&g| (g, self.checksum(g)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
enum HeadFile {
    Affine {
        /// K rows of 10 target weights.
        weights: Vec<[f64; N_TARGETS]>,
        bias: [f64; N_TARGETS],
    },
    Hidden {
        width: usize,
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<Vec<f64>>,
        b2: [f64; N_TARGETS],
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    k: usize,
    m: usize,
    t: usize,
    reference_class: Attribute,
    numeric_attributes: Vec<String>,
    numeric_units: Vec<String>,
    beta_num: Vec<f64>,
    beta_sem: IndexMap<Attribute, f64>,
    fixed_sem: Vec<Attribute>,
    head: HeadFile,
    beta_res: Vec<f64>,
    rmse_weights: IndexMap<Attribute, f64>,
    seed: u64,
    #[serde(default)]
    config: Option<serde_json::Value>,
    history: Vec<HistoryEntry>,
}

const MODEL_FORMAT: &str = "streetdcm-model";

impl From<ModelParams> for ModelFile {
    fn from(p: ModelParams) -> Self {
        let k = p.head.k();
        let head = match p.head.arch {
            HeadArchitecture::Affine => HeadFile::Affine {
                weights: (0..k)
                    .map(|kk| std::array::from_fn(|t| p.head.weight(t, kk)))
                    .collect(),
                bias: p.head.bias().try_into().unwrap(),
            },
            HeadArchitecture::Hidden { width } => {
                let th = p.head.theta();
                let (w1, rest) = th.split_at(width * k);
                let (b1, rest) = rest.split_at(width);
                let (w2, b2) = rest.split_at(N_TARGETS * width);
                HeadFile::Hidden {
                    width,
                    w1: w1.chunks(k).map(<[f64]>::to_vec).collect(),
                    b1: b1.to_vec(),
                    w2: w2.chunks(width).map(<[f64]>::to_vec).collect(),
                    b2: b2.try_into().unwrap(),
                }
            }
        };
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: 1,
            k,
            m: p.beta_num.len(),
            t: N_ATTRIBUTES,
            reference_class: p.meta.reference_class,
            numeric_attributes: p.meta.numeric_attributes,
            numeric_units: p.meta.numeric_units,
            beta_num: p.beta_num,
            beta_sem: Attribute::ALL.iter().map(|&a| (a, p.beta_sem[a.index()])).collect(),
            fixed_sem: Attribute::ALL
                .iter()
                .copied()
                .filter(|a| p.fixed_sem[a.index()])
                .collect(),
            head,
            beta_res: p.beta_res,
            rmse_weights: Attribute::ALL[..N_TARGETS]
                .iter()
                .map(|&a| (a, p.meta.rmse_weights[a.index()]))
                .collect(),
            seed: p.meta.seed,
            config: p.meta.config,
            history: p.meta.history,
        }
    }
}

impl TryFrom<ModelFile> for ModelParams {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT || f.version != 1 {
            return Err(Error::InvalidConfig(format!(
                "unsupported model format {} v{}",
                f.format, f.version
            )));
        }
        if f.t != N_ATTRIBUTES {
            return Err(Error::DimensionMismatch {
                what: "T",
                expected: N_ATTRIBUTES,
                found: f.t,
            });
        }
        let mut beta_sem = [0.0; N_ATTRIBUTES];
        for a in Attribute::ALL {
            beta_sem[a.index()] = *f
                .beta_sem
                .get(&a)
                .ok_or_else(|| Error::InvalidConfig(format!("beta_sem missing {a}")))?;
        }
        let mut fixed_sem = [false; N_ATTRIBUTES];
        for a in &f.fixed_sem {
            fixed_sem[a.index()] = true;
        }
        let mut rmse_weights = [1.0; N_TARGETS];
        for (a, w) in &f.rmse_weights {
            if a.index() >= N_TARGETS {
                return Err(Error::InvalidConfig(format!("{a} is not a predicted target")));
            }
            rmse_weights[a.index()] = *w;
        }
        let k = f.k;
        let head = match f.head {
            HeadFile::Affine { weights, bias } => {
                let mut head = SemanticHead::zeros(HeadArchitecture::Affine, k);
                head.set_affine(&weights, bias)?;
                head
            }
            HeadFile::Hidden { width, w1, b1, w2, b2 } => {
                let mut head = SemanticHead::zeros(HeadArchitecture::Hidden { width }, k);
                let mut theta: Vec<f64> = Vec::with_capacity(head.theta.len());
                let shape_ok = w1.len() == width
                    && w1.iter().all(|r| r.len() == k)
                    && b1.len() == width
                    && w2.len() == N_TARGETS
                    && w2.iter().all(|r| r.len() == width);
                if !shape_ok {
                    return Err(Error::InvalidConfig("hidden head has inconsistent shapes".into()));
                }
                theta.extend(w1.into_iter().flatten());
                theta.extend(b1);
                theta.extend(w2.into_iter().flatten());
                theta.extend(b2);
                head.theta = theta;
                head
            }
        };
        let params = ModelParams {
            beta_num: f.beta_num,
            beta_sem,
            fixed_sem,
            head,
            beta_res: f.beta_res,
            meta: ModelMeta {
                reference_class: f.reference_class,
                seed: f.seed,
                rmse_weights,
                numeric_attributes: f.numeric_attributes,
                numeric_units: f.numeric_units,
                history: f.history,
                config: f.config,
            },
        };
        if params.beta_num.len() != f.m {
            return Err(Error::DimensionMismatch {
                what: "M",
                expected: f.m,
                found: params.beta_num.len(),
            });
        }
        params.validate()?;
        Ok(params)
    }
}
