//! Cornering equilibria and one-dimensional slices of the equilibrium
//! manifold.
//!
//! A cornering equilibrium is a steady state of the speed/sideslip dynamics:
//! constant `(v, beta, psidot)` with constant inputs, i.e. a circular path.
//! At fixed speed the equilibria form curves in the unknowns
//! `(a_lat, beta, delta, kappa_r)`, where `a_lat = v psidot` is the lateral
//! acceleration; the front longitudinal slip is held at zero (rear-wheel
//! drive). Three balance equations in four unknowns leave one degree of
//! freedom, and [`trace_branch`] follows it with an Euler predictor and a
//! pseudoinverse Newton corrector, through folds, until steering saturates
//! or a wheel would lift.
//!
//! The unknowns live on disparate scales, so all stepping, arclength, and
//! tangent computations happen in scaled coordinates ([`UNKNOWN_SCALE`]);
//! residuals stay in raw newtons.

use alloc::vec::Vec;

use nalgebra::{Matrix3, SMatrix, Vector3, Vector4};

use crate::error::DynamicsError;
use crate::tire::{self, SlipState, TirePair};
use crate::vehicle::{CarInput, CarState, NormalLoads, VehicleParams, DEFAULT_VX_MIN};

/// Per-component scale of the equilibrium unknowns: lateral acceleration is
/// measured in tens of m/s², the angles and the rear slip in tenths.
pub const UNKNOWN_SCALE: [f64; 4] = [10.0, 0.1, 0.1, 0.1];

/// Residual norm (newtons) below which an iterate counts as an equilibrium.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// Unknowns of the cornering-equilibrium system at fixed speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquilibriumUnknowns {
    /// Lateral acceleration `v·psidot`, m/s².
    pub a_lat: f64,
    /// Vehicle sideslip, rad.
    pub beta: f64,
    /// Steer angle, rad.
    pub delta: f64,
    /// Rear longitudinal slip.
    pub kappa_r: f64,
}

impl EquilibriumUnknowns {
    pub const ZERO: Self =
        EquilibriumUnknowns { a_lat: 0.0, beta: 0.0, delta: 0.0, kappa_r: 0.0 };

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        EquilibriumUnknowns { a_lat: v[0], beta: v[1], delta: v[2], kappa_r: v[3] }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.a_lat, self.beta, self.delta, self.kappa_r)
    }

    /// The image under the left/right mirror map: the turn direction flips,
    /// the drive slip needed to hold the circle does not.
    pub fn mirrored(&self) -> Self {
        EquilibriumUnknowns {
            a_lat: -self.a_lat,
            beta: -self.beta,
            delta: -self.delta,
            kappa_r: self.kappa_r,
        }
    }
}

/// A converged equilibrium at one speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquilibriumPoint {
    pub unknowns: EquilibriumUnknowns,
    /// Speed the equilibrium was solved at, m/s.
    pub v: f64,
    /// Normal loads in the steady turn (signed, negative on the wheels).
    pub loads: NormalLoads,
    /// Norm of the accepted residual, N.
    pub residual_norm: f64,
}

impl EquilibriumPoint {
    pub fn yaw_rate(&self) -> f64 {
        self.unknowns.a_lat / self.v
    }

    /// Radius of the steady circle, m (infinite at a_lat = 0).
    pub fn turn_radius(&self) -> f64 {
        self.v * self.v / self.unknowns.a_lat
    }

    /// Rear and front tire sideslips implied by the equilibrium state.
    pub fn slip_angles(&self, p: &VehicleParams) -> (f64, f64) {
        let x = &self.unknowns;
        let (sb, cb) = (libm::sin(x.beta), libm::cos(x.beta));
        let front = libm::atan(
            (self.v * sb + p.wheelbase() * self.yaw_rate()) / (self.v * cb),
        ) - x.delta;
        (x.beta, front)
    }

    /// Rear longitudinal force coefficient at the equilibrium slips.
    pub fn rear_longitudinal_coefficient(
        &self,
        t: &TirePair,
    ) -> Result<f64, DynamicsError> {
        let slip = SlipState {
            kappa: self.unknowns.kappa_r,
            beta: tire::slip_angle(self.unknowns.beta),
            delta: 0.0,
        };
        Ok(t.rear.friction(&slip)?.mu_x)
    }

    /// The body-frame simulation state sitting on this equilibrium (at the
    /// origin, heading along x).
    pub fn car_state(&self) -> CarState {
        let x = &self.unknowns;
        CarState {
            x: 0.0,
            y: 0.0,
            psi: 0.0,
            vx: self.v * libm::cos(x.beta),
            vy: self.v * libm::sin(x.beta),
            psidot: self.yaw_rate(),
        }
    }

    pub fn car_input(&self) -> CarInput {
        CarInput { delta: self.unknowns.delta, kappa_r: self.unknowns.kappa_r, kappa_f: 0.0 }
    }
}

/// One traced slice of the equilibrium manifold at fixed speed.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldBranch {
    pub points: Vec<EquilibriumPoint>,
    pub v: f64,
    /// Cumulative distance along the branch in the scaled metric, expressed
    /// in lateral-acceleration units (a pure a_lat move of 1 m/s² adds 1).
    pub arclength: Vec<f64>,
    /// Sign of the seed tangent's a_lat component.
    pub orientation: f64,
    /// Unit tangents (scaled coordinates) used to leave each point; one
    /// fewer entry than points.
    pub tangents: Vec<Vector4<f64>>,
    /// Wheelbase of the traced vehicle, m; kept so understeer diagnostics
    /// can form the Ackermann gradient without the full parameter set.
    pub wheelbase: f64,
}

impl ManifoldBranch {
    /// Index and value of the largest a_lat on the branch.
    pub fn max_a_lat(&self) -> Option<(usize, f64)> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.unknowns.a_lat * self.orientation))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(i, a)| (i, a * self.orientation))
    }

    /// Index of the first point whose outgoing tangent reverses the a_lat
    /// direction: the fold, where the branch turns back in a_lat.
    pub fn fold_index(&self) -> Option<usize> {
        let first = self.tangents.first()?[0];
        self.tangents.iter().position(|t| t[0] * first < 0.0)
    }
}

/// Settings for predictor-corrector branch tracing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuationOptions {
    /// Predictor step in scaled units.
    pub initial_step: f64,
    /// Residual acceptance tolerance, N.
    pub tolerance: f64,
    pub max_corrector_iterations: usize,
    pub max_points: usize,
    /// Branch stops when |delta| would exceed this, rad.
    pub max_steer: f64,
    /// Step-halving floor; the branch stops once the step falls below it.
    pub min_step: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            initial_step: 0.05,
            tolerance: DEFAULT_TOLERANCE,
            max_corrector_iterations: 20,
            max_points: 2000,
            max_steer: core::f64::consts::FRAC_PI_2,
            min_step: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ManifoldError {
    /// Tire or load evaluation failed (ill-posed loads, degenerate speed…).
    Dynamics(DynamicsError),
    /// Unknowns outside the model domain (non-finite, or kappa_r ≤ −1).
    Domain,
    /// The Jacobian lost rank: tangent or corrector system is singular.
    SingularPoint,
    /// Newton failed to reach the tolerance.
    NoConvergence { iterations: usize, residual_norm: f64 },
    /// trace_branch was seeded with a non-equilibrium.
    InvalidSeed { residual_norm: f64 },
    /// An understeer window spans the fold, where delta(a_lat) is two-valued.
    FoldInWindow,
    /// Not enough branch points for the requested diagnostic.
    InsufficientData,
    /// A sweep value produces invalid vehicle geometry.
    InvalidParameter,
}

impl From<DynamicsError> for ManifoldError {
    fn from(e: DynamicsError) -> Self {
        ManifoldError::Dynamics(e)
    }
}

impl core::fmt::Display for ManifoldError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ManifoldError::Dynamics(e) => write!(f, "dynamics evaluation failed: {e}"),
            ManifoldError::Domain => write!(f, "unknowns outside the model domain"),
            ManifoldError::SingularPoint => write!(f, "singular point: equilibrium Jacobian lost rank"),
            ManifoldError::NoConvergence { iterations, residual_norm } => write!(
                f,
                "corrector did not converge in {iterations} iterations (residual {residual_norm:.3e} N)"
            ),
            ManifoldError::InvalidSeed { residual_norm } => {
                write!(f, "seed is not an equilibrium (residual {residual_norm:.3e} N)")
            }
            ManifoldError::FoldInWindow => {
                write!(f, "requested window spans a fold of the branch")
            }
            ManifoldError::InsufficientData => write!(f, "branch too short for the diagnostic"),
            ManifoldError::InvalidParameter => write!(f, "sweep value yields invalid geometry"),
        }
    }
}

impl core::error::Error for ManifoldError {}

fn scale_to_raw(y: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(
        y[0] * UNKNOWN_SCALE[0],
        y[1] * UNKNOWN_SCALE[1],
        y[2] * UNKNOWN_SCALE[2],
        y[3] * UNKNOWN_SCALE[3],
    )
}

fn raw_to_scale(x: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(
        x[0] / UNKNOWN_SCALE[0],
        x[1] / UNKNOWN_SCALE[1],
        x[2] / UNKNOWN_SCALE[2],
        x[3] / UNKNOWN_SCALE[3],
    )
}

/// Normal loads in a steady turn, in closed form: the pitch balance with
/// zero chart accelerations pins the transfer directly from
/// `(a_lat, beta, psidot)`, without reference to the friction coefficients.
pub fn equilibrium_loads(
    a_lat: f64,
    beta: f64,
    v: f64,
    p: &VehicleParams,
) -> Result<NormalLoads, ManifoldError> {
    let l = p.wheelbase();
    let psidot = a_lat / v;
    let transfer =
        ((p.i_xz + p.m * p.h * p.b) * psidot * psidot + a_lat * p.m * p.h * libm::sin(beta)) / l;
    let front = p.m * p.g * p.b / l + transfer;
    let rear = p.m * p.g * p.a / l - transfer;
    if front <= 0.0 || rear <= 0.0 {
        return Err(ManifoldError::Dynamics(DynamicsError::IllPosed {
            margin: front.min(rear),
        }));
    }
    Ok(NormalLoads { ffz: -front, frz: -rear })
}

fn residual_impl(
    x: &EquilibriumUnknowns,
    v: f64,
    p: &VehicleParams,
    t: &TirePair,
) -> Result<(Vector3<f64>, NormalLoads), ManifoldError> {
    if !(v > 0.0) {
        return Err(ManifoldError::Dynamics(DynamicsError::DegenerateSpeed { vx: v }));
    }
    let vec = x.to_vector();
    if vec.iter().any(|c| !c.is_finite()) || x.kappa_r <= -1.0 {
        return Err(ManifoldError::Domain);
    }
    let (sb, cb) = (libm::sin(x.beta), libm::cos(x.beta));
    let vx = v * cb;
    if vx <= DEFAULT_VX_MIN {
        return Err(ManifoldError::Dynamics(DynamicsError::DegenerateSpeed { vx }));
    }

    let psidot = x.a_lat / v;
    let loads = equilibrium_loads(x.a_lat, x.beta, v, p)?;

    let l = p.wheelbase();
    let beta_f = libm::atan((v * sb + l * psidot) / vx) - x.delta;
    let rear = t.rear.friction(&SlipState {
        kappa: x.kappa_r,
        beta: tire::slip_angle(x.beta),
        delta: 0.0,
    })?;
    let front_tire = t.front.friction(&SlipState {
        kappa: 0.0,
        beta: tire::slip_angle(beta_f),
        delta: x.delta,
    })?;
    let front = tire::steered_frame(front_tire, x.delta);

    let a_x = -x.a_lat * sb;
    let a_y = x.a_lat * cb;
    let r = Vector3::new(
        p.m * a_x - p.m * p.b * psidot * psidot + front.mu_x * loads.ffz + rear.mu_x * loads.frz,
        p.m * a_y + front.mu_y * loads.ffz + rear.mu_y * loads.frz,
        p.m * p.b * a_y + l * front.mu_y * loads.ffz,
    );
    if !(r[0].is_finite() && r[1].is_finite() && r[2].is_finite()) {
        return Err(ManifoldError::Dynamics(DynamicsError::NonFinite));
    }
    Ok((r, loads))
}

/// The three-equation cornering-equilibrium residual, in newtons.
pub fn residual(
    x: &EquilibriumUnknowns,
    v: f64,
    p: &VehicleParams,
    t: &TirePair,
) -> Result<Vector3<f64>, ManifoldError> {
    residual_impl(x, v, p, t).map(|(r, _)| r)
}

/// Residual Jacobian with respect to the four unknowns, by central finite
/// differences with per-component steps.
pub fn jacobian(
    x: &EquilibriumUnknowns,
    v: f64,
    p: &VehicleParams,
    t: &TirePair,
) -> Result<SMatrix<f64, 3, 4>, ManifoldError> {
    let base = x.to_vector();
    let mut j = SMatrix::<f64, 3, 4>::zeros();
    for col in 0..4 {
        let h = 1e-6 * base[col].abs().max(1.0);
        let mut fwd = base;
        let mut bwd = base;
        fwd[col] += h;
        bwd[col] -= h;
        let rf = residual(&EquilibriumUnknowns::from_vector(&fwd), v, p, t)?;
        let rb = residual(&EquilibriumUnknowns::from_vector(&bwd), v, p, t)?;
        j.set_column(col, &((rf - rb) / (2.0 * h)));
    }
    Ok(j)
}

fn scaled_jacobian(j: &SMatrix<f64, 3, 4>) -> SMatrix<f64, 3, 4> {
    let mut js = *j;
    for col in 0..4 {
        let mut c = js.column_mut(col);
        c *= UNKNOWN_SCALE[col];
    }
    js
}

/// Ratio of smallest to largest singular value; zero for a rank-deficient
/// matrix.
fn inverse_condition(js: &SMatrix<f64, 3, 4>) -> f64 {
    let sv = js.singular_values();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..3 {
        lo = lo.min(sv[i]);
        hi = hi.max(sv[i]);
    }
    if hi == 0.0 {
        return 0.0;
    }
    lo / hi
}

/// Unit kernel vector of the scaled Jacobian, solved through the
/// best-conditioned 3×3 column subsystem.
fn kernel_vector(js: &SMatrix<f64, 3, 4>) -> Result<Vector4<f64>, ManifoldError> {
    if inverse_condition(js) < 1e-10 {
        return Err(ManifoldError::SingularPoint);
    }
    let mut best: Option<(usize, f64, Matrix3<f64>)> = None;
    for skip in 0..4 {
        let mut m = Matrix3::<f64>::zeros();
        let mut out = 0;
        for col in 0..4 {
            if col == skip {
                continue;
            }
            m.set_column(out, &js.column(col).into_owned());
            out += 1;
        }
        let d = m.determinant().abs();
        if best.as_ref().map(|(_, bd, _)| d > *bd).unwrap_or(true) {
            best = Some((skip, d, m));
        }
    }
    let (skip, det, m) = best.expect("four candidate subsystems");
    if det == 0.0 {
        return Err(ManifoldError::SingularPoint);
    }
    let rhs = -js.column(skip).into_owned();
    let sol = m.lu().solve(&rhs).ok_or(ManifoldError::SingularPoint)?;
    let mut k = Vector4::zeros();
    k[skip] = 1.0;
    let mut out = 0;
    for col in 0..4 {
        if col == skip {
            continue;
        }
        k[col] = sol[out];
        out += 1;
    }
    Ok(k / k.norm())
}

/// Unit tangent of the branch in scaled coordinates: the kernel direction of
/// the (column-scaled) Jacobian, oriented to continue `prev`, or toward
/// positive a_lat on the first call.
pub fn tangent(
    j: &SMatrix<f64, 3, 4>,
    prev: Option<&Vector4<f64>>,
) -> Result<Vector4<f64>, ManifoldError> {
    let js = scaled_jacobian(j);
    let mut k = kernel_vector(&js)?;
    let orient = match prev {
        Some(p) => k.dot(p),
        None => k[0],
    };
    if orient < 0.0 {
        k = -k;
    }
    Ok(k)
}

fn build_point(
    x: &EquilibriumUnknowns,
    v: f64,
    residual_norm: f64,
    loads: NormalLoads,
) -> EquilibriumPoint {
    EquilibriumPoint { unknowns: *x, v, loads, residual_norm }
}

/// Pseudoinverse Newton corrector: from `alpha`, iterate
/// `x ← x − Df(x)† f(x)` (in the scaled metric) until the residual norm
/// falls below `nu`. Converges to the equilibrium nearest `alpha` in the
/// scaled Euclidean norm, to first order.
pub fn newton_correct(
    alpha: &EquilibriumUnknowns,
    v: f64,
    p: &VehicleParams,
    t: &TirePair,
    nu: f64,
    max_iter: usize,
) -> Result<EquilibriumPoint, ManifoldError> {
    let mut x = alpha.to_vector();
    let mut last_norm = f64::INFINITY;
    for _ in 0..=max_iter {
        let current = EquilibriumUnknowns::from_vector(&x);
        let (f, loads) = residual_impl(&current, v, p, t)?;
        last_norm = f.norm();
        if last_norm <= nu {
            return Ok(build_point(&current, v, last_norm, loads));
        }
        let j = jacobian(&current, v, p, t)?;
        let js = scaled_jacobian(&j);
        if inverse_condition(&js) < 1e-12 {
            return Err(ManifoldError::SingularPoint);
        }
        // Minimum-norm step in scaled coordinates: dy = −Jsᵀ (Js Jsᵀ)⁻¹ f.
        let gram = js * js.transpose();
        let w = gram.lu().solve(&f).ok_or(ManifoldError::SingularPoint)?;
        let dy = -(js.transpose() * w);
        x += scale_to_raw(&dy);
    }
    Err(ManifoldError::NoConvergence { iterations: max_iter, residual_norm: last_norm })
}

/// Traces the branch through the seed in the positive-a_lat direction.
pub fn trace_branch(
    seed: &EquilibriumUnknowns,
    v: f64,
    p: &VehicleParams,
    t: &TirePair,
    opts: &ContinuationOptions,
) -> Result<ManifoldBranch, ManifoldError> {
    trace_branch_directed(seed, v, p, t, opts, 1.0)
}

/// Traces the branch through the seed; `orientation` (±1) selects which of
/// the two directions along the branch the first predictor step takes.
pub fn trace_branch_directed(
    seed: &EquilibriumUnknowns,
    v: f64,
    p: &VehicleParams,
    t: &TirePair,
    opts: &ContinuationOptions,
    orientation: f64,
) -> Result<ManifoldBranch, ManifoldError> {
    let (f0, loads0) = residual_impl(seed, v, p, t)?;
    if f0.norm() > opts.tolerance {
        return Err(ManifoldError::InvalidSeed { residual_norm: f0.norm() });
    }

    let mut branch = ManifoldBranch {
        points: alloc::vec![build_point(seed, v, f0.norm(), loads0)],
        v,
        arclength: alloc::vec![0.0],
        orientation: if orientation < 0.0 { -1.0 } else { 1.0 },
        tangents: Vec::new(),
        wheelbase: p.wheelbase(),
    };

    let mut x = seed.to_vector();
    let mut prev_tangent: Option<Vector4<f64>> = None;
    let mut eps = opts.initial_step;

    'outer: while branch.points.len() < opts.max_points {
        let current = EquilibriumUnknowns::from_vector(&x);
        let t_hat = match jacobian(&current, v, p, t).and_then(|j| tangent(&j, prev_tangent.as_ref())) {
            Ok(mut k) => {
                if prev_tangent.is_none() && branch.orientation < 0.0 {
                    k = -k;
                }
                k
            }
            Err(e) => {
                if branch.points.len() >= 2 {
                    break 'outer;
                }
                return Err(e);
            }
        };

        // Predict along the tangent, correct back to the manifold, halving
        // the step until the corrector lands close to the prediction.
        loop {
            if eps < opts.min_step {
                if branch.points.len() >= 2 {
                    break 'outer;
                }
                return Err(ManifoldError::NoConvergence {
                    iterations: opts.max_corrector_iterations,
                    residual_norm: f64::NAN,
                });
            }
            let predicted = x + scale_to_raw(&(t_hat * eps));
            let corrected = newton_correct(
                &EquilibriumUnknowns::from_vector(&predicted),
                v,
                p,
                t,
                opts.tolerance,
                opts.max_corrector_iterations,
            );
            match corrected {
                Ok(point) => {
                    let x_new = point.unknowns.to_vector();
                    let correction = raw_to_scale(&(x_new - predicted)).norm();
                    if correction > 2.0 * eps {
                        eps *= 0.5;
                        continue;
                    }
                    if point.unknowns.delta.abs() > opts.max_steer {
                        break 'outer;
                    }
                    let step = raw_to_scale(&(x_new - x)).norm() * UNKNOWN_SCALE[0];
                    let total = branch.arclength.last().copied().unwrap_or(0.0) + step;
                    branch.points.push(point);
                    branch.arclength.push(total);
                    branch.tangents.push(t_hat);
                    prev_tangent = Some(t_hat);
                    x = x_new;
                    eps = (eps * 2.0).min(opts.initial_step);
                    break;
                }
                Err(_) => {
                    eps *= 0.5;
                }
            }
        }
    }
    Ok(branch)
}

/// Square Newton solve for the equilibrium at prescribed speed and lateral
/// acceleration, from a guess for `(beta, delta, kappa_r)`. No convergence
/// means `(v, a_lat)` is outside the achievable region (or the guess is in
/// no solution's basin); two solutions coexist below the fold and the guess
/// picks between them.
pub fn solve_point(
    v: f64,
    a_lat: f64,
    guess: (f64, f64, f64),
    p: &VehicleParams,
    t: &TirePair,
) -> Result<EquilibriumPoint, ManifoldError> {
    solve_point_with(v, a_lat, guess, p, t, DEFAULT_TOLERANCE, 20)
}

pub fn solve_point_with(
    v: f64,
    a_lat: f64,
    guess: (f64, f64, f64),
    p: &VehicleParams,
    t: &TirePair,
    nu: f64,
    max_iter: usize,
) -> Result<EquilibriumPoint, ManifoldError> {
    let mut z = Vector3::new(guess.0, guess.1, guess.2);
    let mut last_norm = f64::INFINITY;
    for iter in 0..=max_iter {
        let x = EquilibriumUnknowns { a_lat, beta: z[0], delta: z[1], kappa_r: z[2] };
        let evaluated = residual_impl(&x, v, p, t);
        let (f, loads) = match evaluated {
            Ok(pair) => pair,
            // A failed probe after the first iterate means Newton wandered
            // out of the model domain: report no-convergence so callers can
            // treat (v, a_lat) as infeasible.
            Err(e) if iter == 0 => return Err(e),
            Err(_) => {
                return Err(ManifoldError::NoConvergence {
                    iterations: iter,
                    residual_norm: last_norm,
                })
            }
        };
        last_norm = f.norm();
        if last_norm <= nu {
            return Ok(build_point(&x, v, last_norm, loads));
        }
        let j4 = match jacobian(&x, v, p, t) {
            Ok(j) => j,
            Err(e) if iter == 0 => return Err(e),
            Err(_) => {
                return Err(ManifoldError::NoConvergence {
                    iterations: iter,
                    residual_norm: last_norm,
                })
            }
        };
        let mut jz = Matrix3::<f64>::zeros();
        for (out, col) in (1..4).enumerate() {
            jz.set_column(out, &(j4.column(col) * UNKNOWN_SCALE[col]));
        }
        let dz_scaled = match jz.lu().solve(&(-f)) {
            Some(d) => d,
            None => return Err(ManifoldError::SingularPoint),
        };
        // Cap the scaled step; wild first steps from a coarse guess would
        // otherwise jump basins.
        let norm = dz_scaled.norm();
        let capped = if norm > 0.5 { dz_scaled * (0.5 / norm) } else { dz_scaled };
        for (out, col) in (1..4).enumerate() {
            z[out] += capped[out] * UNKNOWN_SCALE[col];
        }
    }
    Err(ManifoldError::NoConvergence { iterations: max_iter, residual_norm: last_norm })
}

/// Ackermann steer-angle gradient: the kinematic part of d(delta)/d(a_lat).
pub fn ackermann_gradient(v: f64, p: &VehicleParams) -> f64 {
    p.wheelbase() / (v * v)
}

/// One understeer-gradient sample along a branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UndersteerSample {
    pub a_lat: f64,
    pub k_us: f64,
}

fn monotone_prefix_len(branch: &ManifoldBranch) -> usize {
    let pts = &branch.points;
    let mut n = 1;
    while n < pts.len() {
        let step = (pts[n].unknowns.a_lat - pts[n - 1].unknowns.a_lat) * branch.orientation;
        if step <= 0.0 {
            break;
        }
        n += 1;
    }
    n
}

/// Understeer gradient K_us = d(delta)/d(a_lat) − K_a sampled by centered
/// differences along the branch's pre-fold segment (where delta is a
/// function of a_lat).
pub fn understeer_gradient(
    branch: &ManifoldBranch,
) -> Result<Vec<UndersteerSample>, ManifoldError> {
    let n = monotone_prefix_len(branch);
    if n < 3 {
        return Err(ManifoldError::InsufficientData);
    }
    let k_a = branch.wheelbase / (branch.v * branch.v);
    let pts = &branch.points;
    let mut out = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        let da = pts[i + 1].unknowns.a_lat - pts[i - 1].unknowns.a_lat;
        let dd = pts[i + 1].unknowns.delta - pts[i - 1].unknowns.delta;
        out.push(UndersteerSample { a_lat: pts[i].unknowns.a_lat, k_us: dd / da - k_a });
    }
    Ok(out)
}

/// As [`understeer_gradient`], restricted to samples with a_lat in
/// `[lo, hi]`; the window must not reach past the fold.
pub fn understeer_gradient_window(
    branch: &ManifoldBranch,
    lo: f64,
    hi: f64,
) -> Result<Vec<UndersteerSample>, ManifoldError> {
    let n = monotone_prefix_len(branch);
    if n < 3 {
        return Err(ManifoldError::InsufficientData);
    }
    let reach = branch.points[n - 1].unknowns.a_lat * branch.orientation;
    if hi * branch.orientation > reach {
        return Err(ManifoldError::FoldInWindow);
    }
    let samples = understeer_gradient(branch)?;
    Ok(samples.into_iter().filter(|s| s.a_lat >= lo && s.a_lat <= hi).collect())
}

/// Vehicle parameter swept branch-by-branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParameter {
    /// Rear-contact-to-CoM distance b, holding the wheelbase fixed
    /// (a = wheelbase − b).
    RearDistance,
}

/// Traces one branch per parameter value from the straight-running seed.
/// Individual failures do not abort the sweep.
pub fn sweep_parameter(
    param: SweepParameter,
    values: &[f64],
    v: f64,
    p: &VehicleParams,
    t: &TirePair,
    opts: &ContinuationOptions,
) -> Vec<(f64, Result<ManifoldBranch, ManifoldError>)> {
    values
        .iter()
        .map(|&value| {
            let result = match param {
                SweepParameter::RearDistance => {
                    if !(value > 0.0 && value < p.wheelbase()) {
                        Err(ManifoldError::InvalidParameter)
                    } else {
                        // Shift a by the same amount b moved so the nominal
                        // value reproduces the nominal geometry bit-exactly.
                        let swept = VehicleParams { a: p.a + (p.b - value), b: value, ..*p };
                        trace_branch(&EquilibriumUnknowns::ZERO, v, &swept, t, opts)
                    }
                }
            };
            (value, result)
        })
        .collect()
}
