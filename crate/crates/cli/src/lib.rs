//! Experiment driver for the `bayes-fwi` command-line tool.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod scenes;

use bayes_fwi::FwiError;

/// Process exit code for an error: 2 for configuration problems, 3 for
/// numerical failures, 4 for I/O.
pub fn exit_code(e: &FwiError) -> i32 {
    match e {
        FwiError::Config(_) | FwiError::Geometry(_) | FwiError::Shape(_) | FwiError::Input(_) => 2,
        FwiError::Precondition(_)
        | FwiError::Bounds(_)
        | FwiError::Domain(_)
        | FwiError::Calibration(_)
        | FwiError::Optimization(_)
        | FwiError::LinearAlgebra(_)
        | FwiError::Indefinite(_) => 3,
        FwiError::Io(_) => 4,
    }
}
