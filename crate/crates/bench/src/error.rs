use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Store(#[from] remixdb::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error("divergence in trial {trial} (replay seed {seed}): {detail}")]
    Divergence { trial: usize, seed: u64, detail: String },
}

pub type Result<T> = std::result::Result<T, BenchError>;
