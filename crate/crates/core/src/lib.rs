//! Differentiable optimal control.
//!
//! A parameterized optimal control system is solved in a forward pass
//! (iLQR or plain rollout), and the derivative of its trajectory with respect
//! to the tunable parameters is recovered exactly in a backward pass by
//! solving an auxiliary linear-quadratic control problem built from the
//! differentiated Pontryagin conditions.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. File formats, configuration and the command line live in the
//! companion `pdp-cli` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod auxsys;
pub mod diffkit;
pub mod envs;
mod error;
pub mod linalg;
pub mod modes;
pub mod ocp;
pub mod policies;
pub mod solvers;

pub use error::{Error, Result};

pub use auxsys::{AuxCoefficients, PolicyJacobians, RiccatiState, Sensitivity};
pub use diffkit::{DiffScalarFn, DiffVectorFn, FnDims, HyperDual, Scalar, ScalarModel, VectorModel};
pub use ocp::{CostateSeq, ParamOCSystem, ThetaVector, Trajectory};
