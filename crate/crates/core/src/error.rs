use std::path::PathBuf;

/// Errors detected before any voxel is read.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("invalid window parameters w={window} s={stride} p={padding}: {reason}")]
    InvalidWindow {
        window: usize,
        stride: usize,
        padding: usize,
        reason: &'static str,
    },
    #[error("stage `{stage}`: window {window} is smaller than kernel depth {kernel_depth}")]
    WindowBelowKernel {
        stage: String,
        window: usize,
        kernel_depth: usize,
    },
    #[error("stage `{stage}`: input depth {depth} is smaller than kernel depth {kernel_depth}")]
    DepthBelowKernel {
        stage: String,
        depth: usize,
        kernel_depth: usize,
    },
    #[error(
        "stage `{stage}`: chunk adapter needs {required} bytes for its chunk layers but the budget is {budget} bytes"
    )]
    ChunkLayersExceedBudget {
        stage: String,
        required: u64,
        budget: u64,
    },
    #[error("slice metadata mismatch: {0}")]
    MetaMismatch(String),
    #[error("invalid pipeline graph: {0}")]
    InvalidGraph(String),
    #[error("stage `{stage}`: {reason}")]
    InvalidStage { stage: String, reason: String },
    #[error("no input slices found in {0}")]
    EmptyInput(PathBuf),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("planning error: {0}")]
    Plan(#[from] PlanError),
    #[error("stage `{stage}` failed at slice {index}: {source}")]
    Stage {
        stage: String,
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("zip depth mismatch: stream {shorter} ended after {depth} slices while the other continued")]
    DepthMismatch { shorter: &'static str, depth: usize },
    #[error("{path}: expected {expected} bytes, found {found}")]
    ShortFile {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("insufficient temporary disk space in {dir}: {required} bytes required")]
    TempSpace { dir: PathBuf, required: u64 },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0} holds an incomplete output (partial marker present)")]
    PartialOutput(PathBuf),
    #[error("{0}")]
    Data(String),
    #[error("upstream stage failed")]
    Upstream,
}

impl Error {
    pub fn is_planning(&self) -> bool {
        match self {
            Error::Plan(_) => true,
            Error::Stage { source, .. } => source.is_planning(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &str, index: usize) -> Self {
        match self {
            // keep the innermost stage attribution
            e @ Error::Stage { .. } => e,
            Error::Upstream => Error::Upstream,
            e => Error::Stage {
                stage: stage.to_string(),
                index,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
