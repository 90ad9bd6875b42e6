use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mesh construction failed: {0}")]
    Mesh(String),

    #[error("triangle {index} has zero or negative area ({area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("inner Newton iteration did not converge after {iterations} iterations (max |gradient| = {gradient_norm:e})")]
    NewtonDiverged { iterations: usize, gradient_norm: f64 },

    #[error("hyperparameter optimisation failed: {0}")]
    Optimization(String),

    #[error("unattainable prior specification: {0}")]
    Prior(String),

    #[error("region not found for point ({lon}, {lat})")]
    RegionNotFound { lon: f64, lat: f64 },

    #[error("no population for region {region:?} in year {year}")]
    MissingPopulation { region: String, year: i32 },

    #[error("no population for {} region-year pairs: {}", .0.len(), format_pairs(.0))]
    MissingPopulations(Vec<(String, i32)>),

    #[error("missing required column {0:?}")]
    MissingColumn(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wraps the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag used by the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Mesh(_) => "mesh",
            Error::DegenerateTriangle { .. } => "degenerate_triangle",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Dimension(_) => "dimension",
            Error::NewtonDiverged { .. } => "newton_diverged",
            Error::Optimization(_) => "optimization",
            Error::Prior(_) => "prior",
            Error::RegionNotFound { .. } => "region_not_found",
            Error::MissingPopulation { .. } => "missing_population",
            Error::MissingPopulations(_) => "missing_population",
            Error::MissingColumn(_) => "missing_column",
            Error::Stage { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

fn format_pairs(pairs: &[(String, i32)]) -> String {
    pairs
        .iter()
        .map(|(r, y)| format!("{r}/{y}"))
        .collect::<Vec<_>>()
        .join(", ")
}
