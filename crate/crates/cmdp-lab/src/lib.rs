//! Offline constrained-MDP optimization with deviation-controlled
//! primal-dual learning.
//!
//! The crate is organized around a pipeline: exact models and LP oracles
//! provide ground truth ([`model`], [`lp`]), offline samplers produce
//! datasets ([`dataset`], [`chain`]), the stochastic saddle-point solver
//! consumes them ([`dpdl`]), statistical certification and the adaptive
//! driver sit on top ([`verify`], [`adaptive`]), and [`instances`] builds the
//! benchmark families used to exercise everything end to end.

pub mod adaptive;
pub mod chain;
pub mod dataset;
pub mod dpdl;
pub mod error;
pub mod instances;
pub mod lp;
pub mod model;
pub mod report;
pub mod rng;
pub mod tol;
pub mod verify;

pub use error::{Error, Result};
pub use model::{CmdpModel, ModelDims, OccupancyMeasure, Policy};
pub use tol::NumericConfig;
