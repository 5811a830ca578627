//! Throughput and delay analysis of inhomogeneous persistent CSMA with
//! symmetric multi-packet reception (MPR).
//!
//! The crate bundles four independent views of the same protocol:
//!
//! * [`meanfield`] and [`delay`]: the analytical engine (finite-N formulas,
//!   the limiting rate function, equilibrium classification, delay formulas).
//! * [`phy`]: Monte Carlo estimation of the MPR success probabilities `q_L`
//!   for several multi-user decoders over Rayleigh fading.
//! * [`sim`]: a slot-level simulator of the protocol.
//! * [`oracle`]: exact stationary analysis of tiny systems with capped buffers.
//!
//! Data-parallel loops go through [`exec`], which runs on rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod config;
pub mod delay;
pub mod error;
pub mod exec;
pub mod meanfield;
pub mod model;
pub mod oracle;
pub mod phy;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    AllOrNothingMpr, ClassSpec, GeneralSymmetricMpr, Mode, MprModel, Population, Scenario,
    UtilizationVector, Violation,
};
