//! Bit-flip operations on period-doubled states.
//!
//! Two driven-dissipative models share a Heun stepper and a piecewise drive:
//! the thermal parametric pendulum ([`po`]) and the open Dicke model
//! ([`odm`]). [`analysis`] turns trajectories into subharmonic phases, flip
//! outcomes and half-winding numbers; [`sweep`] runs ensembles over grids.

pub mod analysis;
pub mod drive;
pub mod error;
pub mod integrator;
pub mod odm;
pub mod po;
pub mod sweep;
pub mod trajectory;

pub use error::{Error, Result};
