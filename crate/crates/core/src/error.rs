use thiserror::Error;

/// Domain and validation errors of the game layer.
#[derive(Debug, Error)]
pub enum GameError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("index {index} out of range for {len} agents")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mask belongs to ego {mask_ego} but agent {ego} was given")]
    MaskEgoMismatch { mask_ego: usize, ego: usize },
    #[error("mask is not binary")]
    MaskNotBinary,
    #[error("parse error: {0}")]
    Parse(String),
}

/// Failures of the equilibrium solver. Non-convergence is not an error — the
/// solution is returned with `converged = false` — but a singular system is.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("singular KKT system at outer iteration {iteration}")]
    SingularKkt { iteration: usize },
    #[error("first-order-condition Jacobian is singular at the solution (cond ~ {cond_estimate:.3e})")]
    SingularSensitivity { cond_estimate: f64 },
    #[error("sensitivity requires a converged solution")]
    NotConverged,
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Training failures.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("relaxed-game solve did not converge")]
    SolveNotConverged,
    #[error("{skipped} of {total} samples skipped at epoch {epoch}; solver likely misconfigured")]
    TooManySkipped { epoch: usize, skipped: usize, total: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Checkpoint encode/decode failures.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a valid checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Trajectory-file ingestion failures.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed row at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("non-monotone timestamps for agent {agent} at line {line}")]
    NonMonotone { agent: String, line: usize },
    #[error("agents share no common time range")]
    NoCommonClock,
    #[error("too few frames after resampling: got {got}, need at least {need}")]
    TooShort { got: usize, need: usize },
}

/// Harness-level failures (scenario generation, dataset generation,
/// benchmarking).
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario sampling exceeded {attempts} attempts; arena too tight")]
    SamplingBudget { attempts: usize },
    #[error("{dropped} of {total} scenarios failed to converge (> {permitted_percent}% permitted)")]
    DropRate { dropped: usize, total: usize, permitted_percent: u32 },
    #[error("unknown selection method `{0}`")]
    UnknownMethod(String),
    #[error("rollout failed: {0}")]
    Rollout(String),
    #[error("method `{method}` needs parameter `{param}`")]
    MissingParameter { method: String, param: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("parse error: {0}")]
    Parse(String),
}
