//! Body-frame equations of motion of a single-track car whose normal loads
//! are unknowns of the motion rather than constants.
//!
//! The ground contact is rigid: pitch is constrained to zero, and the two
//! normal forces enter the force balance as Lagrange-multiplier-like
//! unknowns. Each evaluation therefore solves one small linear system for
//! the accelerations and the loads jointly, in either body-velocity chart:
//!
//! * `(v_x, v_y)` components of the rear-contact velocity, or
//! * `(v, beta)` speed and vehicle sideslip.
//!
//! The frame is forward/right/down, so normal forces are negative when the
//! car is on its wheels and the physical load magnitudes are `-f_fz`,
//! `-f_rz`. Positive yaw rate turns right.

use nalgebra::{Matrix3, Matrix5, Vector3, Vector5, Vector6};

use crate::error::DynamicsError;
use crate::tire::{self, FrictionPair, SlipState, TirePair};

/// Speed floor below which sideslip extraction refuses to evaluate.
pub const DEFAULT_VX_MIN: f64 = 0.5;

/// Relative residual bound a successful linear solve must meet.
const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// Condition-number proxy above which a solve is treated as singular.
const CONDITION_LIMIT: f64 = 1e12;

/// Chassis and inertia parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleParams {
    /// Mass, kg.
    pub m: f64,
    /// Center of mass to front contact, m.
    pub a: f64,
    /// Rear contact to center of mass, m.
    pub b: f64,
    /// Center-of-mass height, m. Zero is allowed and turns load transfer
    /// off, which is the degenerate limit the bicycle model lives in.
    pub h: f64,
    /// Yaw inertia about the body z axis, kg m^2.
    pub i_zz: f64,
    /// Cross inertia coupling yaw rate into the pitch balance, kg m^2.
    pub i_xz: f64,
    /// Pitch inertia, kg m^2. Stored for completeness; the reduced equations
    /// cancel it.
    pub i_yy: f64,
    /// Gravity, m/s^2.
    pub g: f64,
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.a + self.b
    }

    /// Static front/rear load magnitudes with the car at rest.
    pub fn static_loads(&self) -> NormalLoads {
        let l = self.wheelbase();
        NormalLoads {
            ffz: -self.m * self.g * self.b / l,
            frz: -self.m * self.g * self.a / l,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let all = [self.m, self.a, self.b, self.h, self.i_zz, self.i_xz, self.i_yy, self.g];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        if self.m <= 0.0 || self.a <= 0.0 || self.b <= 0.0 || self.h < 0.0 || self.g <= 0.0 || self.i_zz <= 0.0 {
            return Err(DynamicsError::NonFinite);
        }
        Ok(())
    }
}

/// Full pose-and-velocity state. `(x, y)` locate the rear contact point in
/// the inertial frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub psidot: f64,
}

impl CarState {
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        CarState { x: v[0], y: v[1], psi: v[2], vx: v[3], vy: v[4], psidot: v[5] }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.x, self.y, self.psi, self.vx, self.vy, self.psidot)
    }

    /// The `(v, beta)` view of the body velocity; `None` at `vx = 0` where
    /// the sideslip is undefined.
    pub fn speed_slip(&self) -> Option<SpeedSlipState> {
        if self.vx == 0.0 {
            return None;
        }
        Some(SpeedSlipState {
            v: libm::hypot(self.vx, self.vy),
            beta: libm::atan(self.vy / self.vx),
            psidot: self.psidot,
        })
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        let all = [self.x, self.y, self.psi, self.vx, self.vy, self.psidot];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        Ok(())
    }
}

/// Body velocity in the speed/sideslip chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedSlipState {
    pub v: f64,
    pub beta: f64,
    pub psidot: f64,
}

impl SpeedSlipState {
    pub fn vx(&self) -> f64 {
        self.v * libm::cos(self.beta)
    }

    pub fn vy(&self) -> f64 {
        self.v * libm::sin(self.beta)
    }
}

/// Control inputs: steer angle and the two longitudinal slips.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CarInput {
    pub delta: f64,
    pub kappa_r: f64,
    pub kappa_f: f64,
}

impl CarInput {
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        CarInput { delta: v[0], kappa_r: v[1], kappa_f: v[2] }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.delta, self.kappa_r, self.kappa_f)
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.delta.is_finite() && self.kappa_r.is_finite() && self.kappa_f.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        Ok(())
    }
}

/// Signed normal forces, negative on the wheels (z points down).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalLoads {
    pub ffz: f64,
    pub frz: f64,
}

impl NormalLoads {
    /// Physical front load magnitude, N.
    pub fn front_magnitude(&self) -> f64 {
        -self.ffz
    }

    /// Physical rear load magnitude, N.
    pub fn rear_magnitude(&self) -> f64 {
        -self.frz
    }
}

/// Outcome of the well-posedness test: the signed slack, in newtons, of the
/// binding no-lift-off inequality. Positive means both wheels stay loaded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WellPosedness {
    pub margin: f64,
}

impl WellPosedness {
    pub fn is_well_posed(&self) -> bool {
        self.margin > 0.0
    }
}

/// Body-frame accelerations in the `(v_x, v_y)` chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyAccel {
    pub vx_dot: f64,
    pub vy_dot: f64,
    pub psi_ddot: f64,
}

/// Accelerations in the `(v, beta)` chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedSlipAccel {
    pub v_dot: f64,
    pub beta_dot: f64,
    pub psi_ddot: f64,
}

/// Tests the strict no-lift-off inequalities for the given body-frame
/// longitudinal coefficients and yaw rate.
///
/// The rear wheel lifts when `mu_rx` reaches `i_xz*psidot^2/(m g h) + b/h`,
/// the front when `mu_fx` drops to `i_xz*psidot^2/(m g h) - a/h`. The margin
/// is the smaller slack scaled by `m g h / (a + b)`, which converts it to
/// newtons of remaining load on the endangered wheel; with everything at
/// rest it equals the static load of the lighter end.
///
/// `h = 0` has no lift-off mechanism at all and reports the margin of the
/// static split.
pub fn well_posed(mu_fx: f64, mu_rx: f64, psidot: f64, p: &VehicleParams) -> WellPosedness {
    let mgh = p.m * p.g * p.h;
    let scale = p.m * p.g / p.wheelbase();
    if p.h == 0.0 {
        return WellPosedness { margin: scale * p.a.min(p.b) };
    }
    let c = p.i_xz * psidot * psidot / mgh;
    let slack_rear = c + p.b / p.h - mu_rx;
    let slack_front = mu_fx - (c - p.a / p.h);
    WellPosedness { margin: slack_rear.min(slack_front) * scale * p.h }
}

/// Closed-form normal loads for given body-frame longitudinal coefficients
/// and yaw rate. Errors with the (nonpositive) margin when a wheel would
/// leave the ground.
pub fn normal_loads(
    mu_fx: f64,
    mu_rx: f64,
    psidot: f64,
    p: &VehicleParams,
) -> Result<NormalLoads, DynamicsError> {
    let wp = well_posed(mu_fx, mu_rx, psidot, p);
    if !wp.is_well_posed() {
        return Err(DynamicsError::IllPosed { margin: wp.margin });
    }
    let (m, g, h) = (p.m, p.g, p.h);
    let denom = h * (mu_rx - mu_fx) - p.wheelbase();
    let yaw2 = p.i_xz * psidot * psidot;
    Ok(NormalLoads {
        ffz: (m * g * p.b - m * g * h * mu_rx + yaw2) / denom,
        frz: (m * g * p.a + m * g * h * mu_fx - yaw2) / denom,
    })
}

/// Sideslip angles at the two contact points plus the commanded slips.
///
/// The rear contact is the body origin, so its sideslip is the vehicle
/// sideslip; the front contact adds the yaw-rate-induced lateral velocity
/// over the wheelbase and subtracts the steer angle to express the slip in
/// the tire frame.
pub fn contact_slips(
    s: &CarState,
    u: &CarInput,
    p: &VehicleParams,
) -> Result<(SlipState, SlipState), DynamicsError> {
    contact_slips_with_floor(s, u, p, DEFAULT_VX_MIN)
}

/// As [`contact_slips`] with an explicit forward-speed floor.
pub fn contact_slips_with_floor(
    s: &CarState,
    u: &CarInput,
    p: &VehicleParams,
    vx_min: f64,
) -> Result<(SlipState, SlipState), DynamicsError> {
    s.validate()?;
    u.validate()?;
    if s.vx <= vx_min {
        return Err(DynamicsError::DegenerateSpeed { vx: s.vx });
    }
    let rear = SlipState { kappa: u.kappa_r, beta: libm::atan(s.vy / s.vx), delta: 0.0 };
    let front = SlipState {
        kappa: u.kappa_f,
        beta: libm::atan((s.vy + p.wheelbase() * s.psidot) / s.vx) - u.delta,
        delta: u.delta,
    };
    Ok((rear, front))
}

/// Friction coefficients in the body frame: rear pair as evaluated (the rear
/// wheel is not steered), front pair rotated by the steer angle.
///
/// The contact sideslips are converted with [`tire::slip_angle`] before
/// hitting the curves, so the lateral force opposes the drift of each
/// contact point.
fn body_frictions(
    s: &CarState,
    u: &CarInput,
    p: &VehicleParams,
    t: &TirePair,
) -> Result<(FrictionPair, FrictionPair), DynamicsError> {
    let (rear_slip, front_slip) = contact_slips(s, u, p)?;
    let rear = t.rear.friction(&SlipState {
        beta: tire::slip_angle(rear_slip.beta),
        ..rear_slip
    })?;
    let front_tire = t.front.friction(&SlipState {
        beta: tire::slip_angle(front_slip.beta),
        ..front_slip
    })?;
    let front = tire::steered_frame(front_tire, u.delta);
    Ok((front, rear))
}

fn check_solution5(m: &Matrix5<f64>, rhs: &Vector5<f64>, x: &Vector5<f64>) -> Result<(), DynamicsError> {
    let residual = (m * x - rhs).norm();
    let scale = rhs.norm().max(m.norm() * x.norm()).max(1.0);
    if !residual.is_finite() || residual > SOLVE_RESIDUAL_TOL * scale {
        return Err(DynamicsError::SingularSystem);
    }
    Ok(())
}

fn solve5(m: Matrix5<f64>, rhs: Vector5<f64>) -> Result<Vector5<f64>, DynamicsError> {
    let lu = m.lu();
    let u_diag = lu.u().diagonal();
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0_f64);
    for i in 0..5 {
        let d = u_diag[i].abs();
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    if dmin == 0.0 || dmax / dmin > CONDITION_LIMIT {
        return Err(DynamicsError::SingularSystem);
    }
    let x = lu.solve(&rhs).ok_or(DynamicsError::SingularSystem)?;
    check_solution5(&m, &rhs, &x)?;
    Ok(x)
}

/// Accelerations and loads in the `(v_x, v_y)` chart.
///
/// Solves the five-equation balance (three momentum rows, the load-sum
/// constraint, and the pitch balance) for
/// `(v̇_x, v̇_y, ψ̈, f_fz, f_rz)` jointly. The loads it returns agree with
/// [`normal_loads`] evaluated at the same friction coefficients.
pub fn dynamics_vxvy(
    s: &CarState,
    u: &CarInput,
    p: &VehicleParams,
    t: &TirePair,
) -> Result<(BodyAccel, NormalLoads), DynamicsError> {
    let (front, rear) = body_frictions(s, u, p, t)?;
    let wp = well_posed(front.mu_x, rear.mu_x, s.psidot, p);
    if !wp.is_well_posed() {
        return Err(DynamicsError::IllPosed { margin: wp.margin });
    }

    let (m, b, h, g) = (p.m, p.b, p.h, p.g);
    let l = p.wheelbase();
    let j = p.i_zz + m * b * b;
    let (vx, vy, pd) = (s.vx, s.vy, s.psidot);

    #[rustfmt::skip]
    let mat = Matrix5::new(
        m,        0.0,      0.0, front.mu_x,     rear.mu_x,
        0.0,      m,        m*b, front.mu_y,     rear.mu_y,
        0.0,      m*b,      j,   l * front.mu_y, 0.0,
        0.0,      0.0,      0.0, -1.0,           -1.0,
        -m*h,     0.0,      0.0, l,              0.0,
    );
    let rhs = Vector5::new(
        m * b * pd * pd + m * vy * pd,
        -m * vx * pd,
        -m * b * vx * pd,
        m * g,
        -(p.i_xz + m * h * b) * pd * pd - m * h * vy * pd - m * g * b,
    );

    let x = solve5(mat, rhs)?;
    Ok((
        BodyAccel { vx_dot: x[0], vy_dot: x[1], psi_ddot: x[2] },
        NormalLoads { ffz: x[3], frz: x[4] },
    ))
}

/// Accelerations and loads in the `(v, beta)` chart.
///
/// Same balance as [`dynamics_vxvy`] expressed in speed/sideslip velocities.
/// The second-row Coriolis term is `+m v ψ̇ cos β` (the image of
/// `+m v_x ψ̇` under the change of chart); the cross-chart agreement test
/// below pins this sign.
pub fn dynamics_vbeta(
    s: &SpeedSlipState,
    u: &CarInput,
    p: &VehicleParams,
    t: &TirePair,
) -> Result<(SpeedSlipAccel, NormalLoads), DynamicsError> {
    if !(s.v.is_finite() && s.beta.is_finite() && s.psidot.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    if s.v <= 0.0 {
        return Err(DynamicsError::DegenerateSpeed { vx: s.v });
    }
    let (cb, sb) = (libm::cos(s.beta), libm::sin(s.beta));
    let cart = CarState { x: 0.0, y: 0.0, psi: 0.0, vx: s.v * cb, vy: s.v * sb, psidot: s.psidot };
    let (front, rear) = body_frictions(&cart, u, p, t)?;
    let wp = well_posed(front.mu_x, rear.mu_x, s.psidot, p);
    if !wp.is_well_posed() {
        return Err(DynamicsError::IllPosed { margin: wp.margin });
    }

    let (m, b, h, g, v) = (p.m, p.b, p.h, p.g, s.v);
    let l = p.wheelbase();
    let j = p.i_zz + m * b * b;
    let pd = s.psidot;

    #[rustfmt::skip]
    let mat = Matrix5::new(
        m*cb,     -m*v*sb,   0.0, front.mu_x,     rear.mu_x,
        m*sb,     m*v*cb,    m*b, front.mu_y,     rear.mu_y,
        m*b*sb,   m*b*v*cb,  j,   l * front.mu_y, 0.0,
        0.0,      0.0,       0.0, -1.0,           -1.0,
        -m*h*cb,  m*h*v*sb,  0.0, l,              0.0,
    );
    let rhs = Vector5::new(
        m * v * pd * sb + m * b * pd * pd,
        -m * v * pd * cb,
        -m * b * v * pd * cb,
        m * g,
        -(p.i_xz + m * h * b) * pd * pd - m * h * v * pd * sb - m * g * b,
    );

    let x = solve5(mat, rhs)?;
    Ok((
        SpeedSlipAccel { v_dot: x[0], beta_dot: x[1], psi_ddot: x[2] },
        NormalLoads { ffz: x[3], frz: x[4] },
    ))
}

fn kinematics(s: &CarState) -> (f64, f64) {
    let (sp, cp) = (libm::sin(s.psi), libm::cos(s.psi));
    (s.vx * cp - s.vy * sp, s.vx * sp + s.vy * cp)
}

/// Six-state derivative `(ẋ, ẏ, ψ̇, v̇_x, v̇_y, ψ̈)` with load transfer.
pub fn full_dynamics(
    s: &CarState,
    u: &CarInput,
    p: &VehicleParams,
    t: &TirePair,
) -> Result<(Vector6<f64>, NormalLoads), DynamicsError> {
    let (accel, loads) = dynamics_vxvy(s, u, p, t)?;
    let (xdot, ydot) = kinematics(s);
    Ok((
        Vector6::new(xdot, ydot, s.psidot, accel.vx_dot, accel.vy_dot, accel.psi_ddot),
        loads,
    ))
}

/// Six-state derivative of the fixed-load (bicycle) reference model: same
/// momentum balance with the normal loads frozen at the static split, so no
/// lift-off is possible.
pub fn bicycle_dynamics(
    s: &CarState,
    u: &CarInput,
    p: &VehicleParams,
    t: &TirePair,
) -> Result<(Vector6<f64>, NormalLoads), DynamicsError> {
    let (front, rear) = body_frictions(s, u, p, t)?;
    let loads = p.static_loads();

    let (m, b) = (p.m, p.b);
    let l = p.wheelbase();
    let j = p.i_zz + m * b * b;
    let (vx, vy, pd) = (s.vx, s.vy, s.psidot);

    #[rustfmt::skip]
    let mat = Matrix3::new(
        m,   0.0, 0.0,
        0.0, m,   m*b,
        0.0, m*b, j,
    );
    let rhs = Vector3::new(
        m * b * pd * pd + m * vy * pd - front.mu_x * loads.ffz - rear.mu_x * loads.frz,
        -m * vx * pd - front.mu_y * loads.ffz - rear.mu_y * loads.frz,
        -m * b * vx * pd - l * front.mu_y * loads.ffz,
    );
    let accel = mat.lu().solve(&rhs).ok_or(DynamicsError::SingularSystem)?;
    let (xdot, ydot) = kinematics(s);
    Ok((Vector6::new(xdot, ydot, s.psidot, accel[0], accel[1], accel[2]), loads))
}

/// Which load model closes the momentum balance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Chassis {
    /// Loads solved jointly with the accelerations.
    LoadTransfer,
    /// Loads frozen at the static split.
    StaticLoads,
}

/// A complete evaluatable car: chassis parameters, tire pair, and load
/// model. This is the object the integrators and optimizers consume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Model {
    pub params: VehicleParams,
    pub tires: TirePair,
    pub chassis: Chassis,
}

impl Model {
    pub fn new(params: VehicleParams, tires: TirePair) -> Self {
        Model { params, tires, chassis: Chassis::LoadTransfer }
    }

    pub fn with_chassis(self, chassis: Chassis) -> Self {
        Model { chassis, ..self }
    }

    /// Six-state derivative plus the loads used to produce it.
    pub fn derivative(
        &self,
        s: &CarState,
        u: &CarInput,
    ) -> Result<(Vector6<f64>, NormalLoads), DynamicsError> {
        match self.chassis {
            Chassis::LoadTransfer => full_dynamics(s, u, &self.params, &self.tires),
            Chassis::StaticLoads => bicycle_dynamics(s, u, &self.params, &self.tires),
        }
    }

    /// Vector-in, vector-out form for integrators and finite differencing.
    pub fn derivative_vec(
        &self,
        x: &Vector6<f64>,
        u: &Vector3<f64>,
    ) -> Result<Vector6<f64>, DynamicsError> {
        self.derivative(&CarState::from_vector(x), &CarInput::from_vector(u))
            .map(|(dx, _)| dx)
    }
}
