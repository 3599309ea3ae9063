//! Single-track (bicycle-like) car model with longitudinal load transfer.
//!
//! The crate is organized bottom-up:
//!
//! * [`tire`]: combined-slip magic-formula friction coefficients and the
//!   steered-frame rotation of the front pair.
//! * [`vehicle`]: body-frame dynamics with the normal loads solved jointly
//!   with the accelerations, plus the fixed-load bicycle variant.
//! * [`manifold`]: steady-cornering equilibria as a one-dimensional manifold
//!   in (lateral acceleration, sideslip, steer, rear slip), traced by
//!   predictor-corrector continuation at fixed speed.
//! * [`trajopt`]: trajectory tracking as a projection operator (closed-loop
//!   integration under a time-varying LQR gain) and a projection-operator
//!   Newton descent on the projected cost.
//! * [`explore`]: reference-path geometry, quasi-static desired curves built
//!   from manifold solves, and exploration schedules that continue optimal
//!   trajectories through a family of desired curves.
//!
//! The crate is `no_std` (with `alloc`) so the dynamics and solvers can run
//! embedded; file formats and the command-line front end live in a companion
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod explore;
pub mod manifold;
pub mod presets;
pub mod tire;
pub mod trajopt;
pub mod vehicle;
