//! Configuration loading and subcommands behind the `mixforge` binary.

pub mod commands;
pub mod config;
pub mod report;

use mixforge::Error;

pub use commands::{cmd_ablate_k, cmd_augment, cmd_eval, cmd_train, evaluate_model, initial_model, AblationRow, EvalReport};
pub use config::{load_config, DatasetConfig, Datasets, ModelConfig, RunConfig, SslSection};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Process exit code for an error: 2 configuration, 3 data or I/O,
/// 4 numerical failure.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_)
        | Error::Shape(_)
        | Error::Weight(_)
        | Error::RangeTag(_)
        | Error::InvalidValue(_)
        | Error::EmptyInput(_) => EXIT_CONFIG,
        Error::Format(_) | Error::EmptyDataset | Error::Io { .. } => EXIT_DATA,
        Error::Numerics(_) => EXIT_NUMERIC,
    }
}
