//! Linear response of chaotic ODE flows by equivariant divergence contractions
//! and adjoint shadowing, sampled recursively along a single orbit.
//!
//! The pipeline: integrate an orbit of the base field, propagate `u` unstable
//! tangent vectors forward and `u + 1` adjoint covectors backward, build the
//! dual co-frame at every step, contract Jacobians/Hessians against it to get
//! the equivariant divergences, run two split-propagate shadowing sweeps, and
//! average the shadowing (SC) and unstable (UC) contributions. A direct
//! finite-difference oracle and a truncated-ensemble comparator validate the
//! result.
//!
//! The crate is `no_std` (with `alloc`); all IO lives in the companion CLI
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dynsys;
pub mod equivdiv;
pub mod error;
pub mod frames;
pub mod linalg;
pub mod response;
pub mod shadow;
pub mod stats;
pub mod validate;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
