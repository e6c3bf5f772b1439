//! Analysis toolkit for a one-dimensional biomass / water / toxicity
//! vegetation model: homogeneous equilibria and Turing loci, method-of-lines
//! simulation, and pseudo-arclength continuation of patterned steady states.
//!
//! The algebraic layers ([`model`], [`stability`], [`banded`]) are generic
//! over [`Real`]; the spatial layers work in `f64`. Concrete aliases for the
//! `f64` instantiation live at the crate root.

pub mod banded;
pub mod continuation;
pub mod discretization;
pub mod error;
pub mod integrate;
pub mod model;
pub mod presets;
pub mod scalar;
pub mod stability;
pub mod symmetry;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Params = model::ModelParams<f64>;
pub type Equilibrium = model::HomogeneousState<f64>;
