//! Command-line pipeline: corpus synthesis, training, enhancement,
//! evaluation and the generalization-bound diagnostic.

pub mod commands;
pub mod config;

use daptain::Error;

pub use commands::{
    cmd_bound, cmd_enhance, cmd_evaluate, cmd_synth, cmd_train, BoundReport, EnhanceInput, EvalSummary,
    PairedTest, SynthSummary,
};
pub use config::{EvalOptions, Overrides, RunConfig, RESOLVED_CONFIG};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_TRAINING: u8 = 4;
pub const EXIT_INTEGRITY: u8 = 5;

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::Unsupported { .. } => EXIT_IO,
        Error::Integrity(_) => EXIT_INTEGRITY,
        Error::TrainingFailure { .. }
        | Error::NonFinite { .. }
        | Error::Numerical(_)
        | Error::NonConvergence(_)
        | Error::DegenerateWeights(_)
        | Error::InfiniteDivergence(_) => EXIT_TRAINING,
        Error::Config(_)
        | Error::Manifest(_)
        | Error::DegenerateInput(_)
        | Error::Shape(_)
        | Error::UndefinedMetric(_)
        | Error::DegenerateTest(_)
        | Error::Domain(_) => EXIT_CONFIG,
    }
}
