use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("observation {obs_id}: expected 2 alternatives, found {count}")]
    AlternativeCount { obs_id: String, count: usize },

    #[error("observation {obs_id}: chosen-count is {count}, expected 1")]
    ChosenCount { obs_id: String, count: usize },

    #[error("observation {obs_id}: duplicate alternative {alt_id}")]
    DuplicateAlternative { obs_id: String, alt_id: usize },

    #[error("embedding matrix: bad magic bytes")]
    BadMagic,

    #[error("embedding matrix: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("embedding matrix: K must be positive")]
    ZeroDimension,

    #[error("embedding matrix: payload of {bytes} bytes is not a whole number of rows of K={k}")]
    TruncatedMatrix { bytes: usize, k: usize },

    #[error("embedding index: {image_id} references row {row}, index out of range for {rows} rows")]
    IndexOutOfRange {
        image_id: String,
        row: usize,
        rows: usize,
    },

    #[error("duplicate key {0}")]
    DuplicateKey(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{image_id}: negative {field}")]
    NegativeValue { image_id: String, field: String },

    #[error("{image_id}: proportions sum to {sum}, above tolerance")]
    OverCoverage { image_id: String, sum: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("missing embedding for image {0}")]
    MissingEmbedding(String),

    #[error("missing semantic label for image {0}")]
    MissingLabel(String),

    #[error("kappa {0} outside [0, 1]")]
    InvalidKappa(f64),

    #[error("log-likelihood {0} is positive")]
    PositiveLogLikelihood(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("zone map is empty")]
    EmptyZoneMap,

    #[error("need at least {needed} zones, found {found}")]
    TooFewZones { needed: usize, found: usize },

    #[error("malformed GeoJSON: {0}")]
    MalformedGeoJson(String),

    #[error("duplicate zone_id feature {0}")]
    DuplicateZoneFeature(String),

    #[error("non-finite intermediate in {0}")]
    NumericalFailure(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data or configuration, as opposed
    /// to I/O or numerical failures while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } | Error::NumericalFailure(_) => false,
            Error::Csv(e) => !e.is_io_error(),
            Error::Json(e) => !e.is_io(),
            _ => true,
        }
    }
}
