use std::path::{Path, PathBuf};

/// Process exit codes.
pub mod code {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const MISSING_INPUT: u8 = 3;
    pub const IO: u8 = 4;
    pub const INVALID_DATA: u8 = 5;
    pub const NON_FINITE_LOSS: u8 = 6;
    pub const NOT_CONVERGED: u8 = 7;
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing {what}: {} ({hint})", path.display())]
    MissingInput { path: PathBuf, what: &'static str, hint: String },

    #[error("{0}")]
    Core(#[from] mlmunmix::Error),

    #[error("not converged: {0}")]
    NotConverged(String),
}

impl Failure {
    pub fn missing(path: &Path, what: &'static str) -> Self {
        Failure::MissingInput {
            path: path.to_path_buf(),
            what,
            hint: "check the path".into(),
        }
    }

    pub fn missing_stage(path: &Path, what: &'static str, stage: &str) -> Self {
        Failure::MissingInput {
            path: path.to_path_buf(),
            what,
            hint: format!("run `{stage}` first"),
        }
    }

    pub fn exit_code(&self) -> u8 {
        use mlmunmix::Error as E;
        match self {
            Failure::Config(_) => code::CONFIG,
            Failure::MissingInput { .. } => code::MISSING_INPUT,
            Failure::NotConverged(_) => code::NOT_CONVERGED,
            Failure::Core(e) => match e {
                E::Io { .. } | E::Format { .. } => code::IO,
                E::NonFiniteLoss { .. } => code::NON_FINITE_LOSS,
                E::Usage(_) => code::CONFIG,
                _ => code::INVALID_DATA,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct_per_stage() {
        let loss = Failure::Core(mlmunmix::Error::NonFiniteLoss { epoch: 1, batch: 2, loss: f64::NAN });
        assert_eq!(loss.exit_code(), code::NON_FINITE_LOSS);
        assert_eq!(Failure::missing(Path::new("x"), "cube").exit_code(), code::MISSING_INPUT);
        assert_eq!(Failure::NotConverged("mlmp".into()).exit_code(), code::NOT_CONVERGED);
        let arch = Failure::Core(mlmunmix::Error::Architecture("block 2".into()));
        assert_eq!(arch.exit_code(), code::INVALID_DATA);
    }
}
