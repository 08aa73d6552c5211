use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the estimation pipeline can report.
///
/// Variants fall into two families: data errors (malformed or inconsistent
/// input) and numerical errors (well-formed input on which a computation
/// cannot proceed). The CLI maps them to exit codes 2 and 3 respectively.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unbalanced panel: missing cell (unit {unit}, time {time})")]
    UnbalancedPanel { unit: String, time: String },

    #[error("duplicate cell (unit {unit}, time {time})")]
    DuplicateCell { unit: String, time: String },

    #[error("inconsistent value of `{column}` across rows sharing key {key}")]
    InconsistentAggregate { column: String, key: String },

    #[error("non-finite value in {context}")]
    NonFiniteValue { context: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("instrument D_i Z_t is collinear with the fixed effects")]
    CollinearInstrument,

    #[error("deterministic regressors are rank deficient: {0}")]
    RankDeficientPsi(String),

    #[error("instrument lies in the span of the deterministic regressors over the pre-period")]
    ColinearInstrumentPre,

    #[error("regression design is collinear: {0}")]
    CollinearDesign(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("instrument residuals vanish over the post-period")]
    DegenerateInstrument,

    #[error("weight constraints are infeasible: {0}")]
    InfeasibleConstraints(String),

    #[error("KKT system is numerically singular")]
    SingularKkt,

    #[error("active-set solver hit its iteration cap ({iterations}); KKT residual {residual:e}")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("requested rank {rank} is not below min(n, T) = {max}")]
    RankTooLarge { rank: usize, max: usize },

    #[error("{failures} of {reps} Monte Carlo replications failed")]
    MonteCarloUnstable { failures: usize, reps: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnbalancedPanel { .. } => "UnbalancedPanel",
            Error::DuplicateCell { .. } => "DuplicateCell",
            Error::InconsistentAggregate { .. } => "InconsistentAggregate",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::InvalidInput(_) => "InvalidInput",
            Error::DegenerateScale(_) => "DegenerateScale",
            Error::CollinearInstrument => "CollinearInstrument",
            Error::RankDeficientPsi(_) => "RankDeficientPsi",
            Error::ColinearInstrumentPre => "ColinearInstrumentPre",
            Error::CollinearDesign(_) => "CollinearDesign",
            Error::DegenerateSeries(_) => "DegenerateSeries",
            Error::DegenerateInstrument => "DegenerateInstrument",
            Error::InfeasibleConstraints(_) => "InfeasibleConstraints",
            Error::SingularKkt => "SingularKKT",
            Error::MaxIterations { .. } => "MaxIterations",
            Error::RankTooLarge { .. } => "RankTooLarge",
            Error::MonteCarloUnstable { .. } => "MonteCarloUnstable",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }

    /// True for errors caused by the input data rather than by the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::UnbalancedPanel { .. }
                | Error::DuplicateCell { .. }
                | Error::InconsistentAggregate { .. }
                | Error::NonFiniteValue { .. }
                | Error::InvalidInput(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_data_error() {
            2
        } else {
            3
        }
    }
}
