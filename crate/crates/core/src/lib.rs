//! Indirect-method solvers for the planar lunar soft-landing problem.
//!
//! The time-optimal landing is solved by shooting on the touchdown co-state,
//! propagating states and co-states backward from the surface; the
//! fuel-optimal landing is reached from it by continuation on the cost
//! weighting and on the throttle smoothing.

pub mod dynamics;
pub mod homotopy;
pub mod integrator;
pub mod montecarlo;
pub mod rootfind;
pub mod scaling;
pub mod shooting;
