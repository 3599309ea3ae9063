//! Magic-formula tire friction: pure slip, combined slip, the steered-frame
//! rotation, and the linear simplification.
//!
//! All outputs are dimensionless force coefficients per unit normal load.
//! The tangent force on an axle is `f = -f_z * mu` with `f_z < 0` in the
//! z-down body frame, so positive `mu_x` drives the car forward.

use crate::error::DynamicsError;

/// Shape coefficients of the sine-of-arctangent force curves plus the
/// combined-slip loss coefficients, for one axle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TireParams {
    /// Longitudinal peak, shape, stiffness and curvature factors.
    pub d_x: f64,
    pub c_x: f64,
    pub b_x: f64,
    pub e_x: f64,
    /// Lateral peak, shape, stiffness and curvature factors.
    pub d_y: f64,
    pub c_y: f64,
    pub b_y: f64,
    pub e_y: f64,
    /// Loss of longitudinal force under sideslip.
    pub c_xb: f64,
    pub r_bx1: f64,
    pub r_bx2: f64,
    /// Loss of lateral force under longitudinal slip.
    pub c_yk: f64,
    pub r_by1: f64,
    pub r_by2: f64,
}

impl TireParams {
    /// Checks the sign constraints the formulas rely on: positive peaks and
    /// stiffnesses, nonnegative loss coefficients.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [self.d_x, self.c_x, self.b_x, self.d_y, self.c_y, self.b_y];
        let nonnegative = [self.r_bx1, self.r_bx2, self.r_by1, self.r_by2];
        let all = [
            self.d_x, self.c_x, self.b_x, self.e_x, self.d_y, self.c_y, self.b_y, self.e_y,
            self.c_xb, self.r_bx1, self.r_bx2, self.c_yk, self.r_by1, self.r_by2,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        if positive.iter().any(|&v| v <= 0.0) || nonnegative.iter().any(|&v| v < 0.0) {
            return Err(DynamicsError::NonFinite);
        }
        Ok(())
    }

    /// Cornering stiffness of the lateral curve at zero slip, `d_y*c_y*b_y`
    /// (per unit normal load, per radian). Used as the default linear-tire
    /// stiffness so the linear curve is tangent to the magic formula at the
    /// origin.
    pub fn cornering_stiffness(&self) -> f64 {
        self.d_y * self.c_y * self.b_y
    }
}

/// Slip state at one contact point. `delta` is the steer angle of this wheel
/// (zero for the rear) and only participates in the frame rotation, not in
/// the friction magnitudes themselves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlipState {
    /// Longitudinal slip, normalized wheel-speed excess; > -1.
    pub kappa: f64,
    /// Lateral slip angle, rad. The curves evaluate it literally; callers
    /// working from a velocity sideslip convert with [`slip_angle`].
    pub beta: f64,
    /// Steer angle, rad.
    pub delta: f64,
}

impl SlipState {
    fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.kappa.is_finite() && self.beta.is_finite() && self.delta.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        Ok(())
    }
}

/// Dimensionless force coefficients in the frame they were evaluated in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrictionPair {
    pub mu_x: f64,
    pub mu_y: f64,
}

/// Lateral curve argument for a contact point whose velocity has sideslip
/// `atan(vy/vx)`. The lateral curve is calibrated on the slip angle with the
/// opposite sign, so that a contact point drifting to one side feels a force
/// pulling it back toward pure rolling. Feeding the raw sideslip instead
/// flips every lateral force and makes straight rolling unstable.
pub fn slip_angle(sideslip: f64) -> f64 {
    -sideslip
}

fn magic(slip: f64, d: f64, c: f64, b: f64, e: f64) -> f64 {
    let bs = b * slip;
    d * libm::sin(c * libm::atan(bs - e * (bs - libm::atan(bs))))
}

/// Pure longitudinal force coefficient `f_x0(kappa)`.
pub fn pure_longitudinal(kappa: f64, p: &TireParams) -> Result<f64, DynamicsError> {
    if !kappa.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    Ok(magic(kappa, p.d_x, p.c_x, p.b_x, p.e_x))
}

/// Pure lateral force coefficient `f_y0(beta)`.
pub fn pure_lateral(beta: f64, p: &TireParams) -> Result<f64, DynamicsError> {
    if !beta.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    Ok(magic(beta, p.d_y, p.c_y, p.b_y, p.e_y))
}

/// Combined-slip coefficients: each pure curve scaled by a cosine-of-arctan
/// loss in the other slip. The losses are even in both arguments and equal
/// one when the cross slip vanishes, so the pure curves are recovered on the
/// axes.
pub fn combined(slip: &SlipState, p: &TireParams) -> Result<FrictionPair, DynamicsError> {
    slip.validate()?;
    let (kappa, beta) = (slip.kappa, slip.beta);
    let g_xb = libm::cos(p.c_xb * libm::atan(beta * p.r_bx1 / (1.0 + (p.r_bx2 * kappa) * (p.r_bx2 * kappa))));
    let g_yk = libm::cos(p.c_yk * libm::atan(kappa * p.r_by1 / (1.0 + (p.r_by2 * beta) * (p.r_by2 * beta))));
    Ok(FrictionPair {
        mu_x: magic(kappa, p.d_x, p.c_x, p.b_x, p.e_x) * g_xb,
        mu_y: magic(beta, p.d_y, p.c_y, p.b_y, p.e_y) * g_yk,
    })
}

/// Rotates tire-frame coefficients into the body frame of a wheel steered by
/// `delta`. A plain planar rotation, so the combined-grip magnitude is
/// preserved.
pub fn steered_frame(pair: FrictionPair, delta: f64) -> FrictionPair {
    let (s, c) = (libm::sin(delta), libm::cos(delta));
    FrictionPair {
        mu_x: pair.mu_x * c - pair.mu_y * s,
        mu_y: pair.mu_x * s + pair.mu_y * c,
    }
}

/// Linear lateral coefficient `stiffness * beta`, with no saturation. Under
/// the linear model the longitudinal coefficient is not produced by a slip
/// curve at all: it is commanded directly, so there is no longitudinal
/// companion here.
pub fn linear_lateral(beta: f64, stiffness: f64) -> f64 {
    stiffness * beta
}

/// Tire model selector for one axle.
///
/// `Linear` reinterprets the longitudinal slip input as the commanded
/// longitudinal force coefficient itself and drops both the lateral
/// saturation and the combined-slip coupling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TireModel {
    Pacejka(TireParams),
    Linear { stiffness: f64 },
}

impl TireModel {
    /// Force coefficients in the tire frame for the given slip state.
    pub fn friction(&self, slip: &SlipState) -> Result<FrictionPair, DynamicsError> {
        match self {
            TireModel::Pacejka(p) => combined(slip, p),
            TireModel::Linear { stiffness } => {
                slip.validate()?;
                Ok(FrictionPair {
                    mu_x: slip.kappa,
                    mu_y: linear_lateral(slip.beta, *stiffness),
                })
            }
        }
    }
}

/// Front and rear tire models of one car.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TirePair {
    pub front: TireModel,
    pub rear: TireModel,
}

impl TirePair {
    pub fn pacejka(front: TireParams, rear: TireParams) -> Self {
        TirePair { front: TireModel::Pacejka(front), rear: TireModel::Pacejka(rear) }
    }

    /// Linear tires with the given cornering stiffnesses per axle.
    pub fn linear(front_stiffness: f64, rear_stiffness: f64) -> Self {
        TirePair {
            front: TireModel::Linear { stiffness: front_stiffness },
            rear: TireModel::Linear { stiffness: rear_stiffness },
        }
    }

    /// Linear counterpart of a Pacejka pair: stiffnesses taken from the
    /// slope of each lateral curve at the origin.
    pub fn linearized(front: &TireParams, rear: &TireParams) -> Self {
        TirePair::linear(front.cornering_stiffness(), rear.cornering_stiffness())
    }

    /// This pair with every magic-formula axle replaced by its zero-slip
    /// tangent; axles that are already linear pass through unchanged.
    pub fn to_linear(&self) -> TirePair {
        let lin = |m: &TireModel| match m {
            TireModel::Pacejka(p) => TireModel::Linear { stiffness: p.cornering_stiffness() },
            TireModel::Linear { stiffness } => TireModel::Linear { stiffness: *stiffness },
        };
        TirePair { front: lin(&self.front), rear: lin(&self.rear) }
    }
}
