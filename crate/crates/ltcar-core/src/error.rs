//! Failure modes shared by the dynamics evaluations and the solvers above
//! them.

use core::fmt;

/// Reasons a single dynamics evaluation can fail.
///
/// These are physical or numerical degeneracies, not programming errors:
/// callers integrating flows or tracing manifolds are expected to catch them
/// and back off (halve a step, stop a branch, report the failure time).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DynamicsError {
    /// A wheel's normal load reached zero (wheelie or stoppie): the rigid
    /// ground-contact model no longer holds. `margin` is the signed
    /// well-posedness slack in newtons at the failing evaluation (negative
    /// or zero here by definition).
    IllPosed { margin: f64 },
    /// Forward speed at or below the slip floor; sideslip angles are
    /// undefined near standstill.
    DegenerateSpeed { vx: f64 },
    /// A non-finite value reached an evaluation input.
    NonFinite,
    /// The linear system for the accelerations and loads lost rank beyond
    /// what the closed-form well-posedness test predicts; kept as a backstop
    /// for pathological parameter sets.
    SingularSystem,
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsError::IllPosed { margin } => {
                write!(f, "ill-posed model: normal-load margin {margin:.3} N")
            }
            DynamicsError::DegenerateSpeed { vx } => {
                write!(f, "degenerate speed: vx = {vx:.3} m/s at or below the slip floor")
            }
            DynamicsError::NonFinite => write!(f, "non-finite input"),
            DynamicsError::SingularSystem => write!(f, "singular acceleration/load system"),
        }
    }
}

impl core::error::Error for DynamicsError {}
