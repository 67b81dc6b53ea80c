//! Error type shared across the pipeline stages.

use alloc::string::String;
use core::fmt;

/// Failures surfaced by orbit integration, frame propagation, and the
/// shadowing sweeps. Pure contractions and averages do not fail.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// The integrator produced a non-finite state at the given step.
    IntegrationDiverged { step: usize },
    /// QR renormalization hit an (effectively) zero column/row.
    DegenerateFrame { step: usize },
    /// The frame pairing matrix is numerically singular at an orbit index;
    /// carries the condition estimate at the failure point.
    Tangency { index: usize, cond: f64 },
    /// The declared unstable dimension is inconsistent with the measured
    /// growth rates.
    UnstableDimMismatch { declared: usize, detail: String },
    /// A (covector, scalar) source pair violates the compatibility condition
    /// required by the shadowing operator.
    RejectedPair { defect: f64, tol: f64 },
    /// A shadowing accumulator exceeded the stability bound.
    ShadowInstability { index: usize, norm: f64 },
    /// The orbit is too short for the requested windows/batches.
    InsufficientOrbit { needed: usize, available: usize },
    /// No builtin system with this name.
    UnknownSystem { name: String },
    /// A system or run parameter is missing or out of range.
    InvalidParameter { name: String, reason: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::IntegrationDiverged { step } => {
                write!(f, "integration diverged (non-finite state) at step {step}")
            }
            Error::DegenerateFrame { step } => {
                write!(f, "frame rank collapse during renormalization at step {step}")
            }
            Error::Tangency { index, cond } => {
                write!(f, "near-tangent frame pairing at orbit index {index} (cond {cond:.3e})")
            }
            Error::UnstableDimMismatch { declared, detail } => {
                write!(f, "declared unstable dimension {declared} inconsistent: {detail}")
            }
            Error::RejectedPair { defect, tol } => {
                write!(
                    f,
                    "source pair rejected: compatibility defect {defect:.3e} exceeds {tol:.3e}"
                )
            }
            Error::ShadowInstability { index, norm } => {
                write!(f, "shadowing accumulator unstable at index {index} (norm {norm:.3e})")
            }
            Error::InsufficientOrbit { needed, available } => {
                write!(f, "orbit too short: need {needed} interior steps, have {available}")
            }
            Error::UnknownSystem { name } => write!(f, "unknown builtin system `{name}`"),
            Error::InvalidParameter { name, reason } => {
                write!(f, "invalid parameter `{name}`: {reason}")
            }
        }
    }
}

impl core::error::Error for Error {}
