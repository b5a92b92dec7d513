use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: image '{image_id}': feature dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: u64,
        image_id: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate image_id '{image_id}'")]
    DuplicateImageId { line: u64, image_id: String },
    #[error("line {line}: image '{image_id}': category {category} out of range (num_classes {num_classes})")]
    CategoryOutOfRange {
        line: u64,
        image_id: String,
        category: i64,
        num_classes: usize,
    },
    #[error("line {line}: image '{image_id}': score {score} outside [0, 1]")]
    ScoreOutOfRange {
        line: u64,
        image_id: String,
        score: f64,
    },
    #[error("pool contains no images")]
    EmptyPool,
    #[error("labeled stats: {0}")]
    Stats(String),
    #[error("probability {0} outside [0, 1]")]
    Domain(f64),
    #[error("vector dimensions differ: {0} vs {1}")]
    VectorDimension(usize, usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("pool too large for ub_pairwise: {images} images (limit {limit}); pass --force to override")]
    PoolTooLarge { images: usize, limit: usize },
    #[error("unknown policy '{0}'")]
    UnknownPolicy(String),
    #[error("infeasible simulation spec: {0}")]
    InfeasibleSpec(String),
    #[error("selection: {0}")]
    Selection(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Malformed { .. } => "malformed_record",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DuplicateImageId { .. } => "duplicate_image_id",
            Error::CategoryOutOfRange { .. } => "category_out_of_range",
            Error::ScoreOutOfRange { .. } => "score_out_of_range",
            Error::EmptyPool => "empty_pool",
            Error::Stats(_) => "labeled_stats",
            Error::Domain(_) => "domain",
            Error::VectorDimension(..) => "vector_dimension",
            Error::Config(_) => "invalid_config",
            Error::PoolTooLarge { .. } => "pool_too_large",
            Error::UnknownPolicy(_) => "unknown_policy",
            Error::InfeasibleSpec(_) => "infeasible_spec",
            Error::Selection(_) => "selection",
            Error::Json(_) => "json",
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
