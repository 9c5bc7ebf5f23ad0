//! Space-time Galerkin POD for the one-shot suboptimal control of the 1D
//! Burgers equation, together with a classical snapshot-POD/BFGS baseline.
//!
//! Pipeline: [`full_order`] trajectories are turned into space-time
//! [`measurements`], from which [`pod`] extracts optimal reduced space and
//! time bases. [`galerkin`] projects the operators onto those bases and
//! [`control`] solves the coupled reduced state/costate system in one shot.
//! [`baseline`] implements the method-of-lines comparison and [`bench`]
//! drives the experiment sweeps.

pub mod baseline;
pub mod bench;
pub mod control;
pub mod error;
pub mod fem_space;
pub mod full_order;
pub mod galerkin;
pub mod io;
pub mod linalg;
pub mod measurements;
pub mod pod;
pub mod time_basis;

pub use error::{Error, Result};
pub use fem_space::{FemSpace, SpatialOperators};
pub use full_order::{BurgersModel, ControlFunction, Trajectory};
pub use time_basis::TimeBasis;
