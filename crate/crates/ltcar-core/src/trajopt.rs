//! Trajectory integration and least-squares trajectory optimization.
//!
//! The optimizer works on the manifold of bounded trajectories: a curve
//! (state and input samples on a uniform grid) is mapped onto the manifold
//! by a projection operator built from time-varying tracking gains, and a
//! Newton-type iteration descends the tracking cost by solving a
//! linear-quadratic subproblem on the linearized dynamics at each iterate.
//!
//! The flow is: [`integrate`] produces trajectories, [`design_gain`] builds
//! the tracking gains around one, [`project`] wraps closed-loop integration
//! into the projection operator, [`descent_direction`] and [`line_search`]
//! produce a damped Newton step, and [`po_newton`] ties them into the full
//! iteration with a per-iterate log.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SMatrix, Vector3, Vector6};

use crate::error::DynamicsError;
use crate::vehicle::{CarInput, CarState, Model, SpeedSlipState};

/// Default sample period of the uniform grid, s.
pub const DEFAULT_DT: f64 = 0.01;
/// Per-step scaled defect bound a curve must satisfy to count as a
/// trajectory of the model.
pub const TRAJECTORY_DEFECT_TOL: f64 = 1e-6;
/// Per-step scaled defect bound on descent directions against the
/// linearized dynamics.
pub const TANGENT_DEFECT_TOL: f64 = 1e-8;
/// Armijo sufficient-decrease fraction used by the line search.
pub const ARMIJO_SIGMA: f64 = 0.4;
/// The line search halves the step at most this many times.
pub const MAX_BACKTRACKS: u32 = 12;

const FD_STEP: f64 = 1e-6;

type StateMat = SMatrix<f64, 6, 6>;
type InputMat = SMatrix<f64, 6, 3>;
type GainMat = SMatrix<f64, 3, 6>;

/// Failures of integration, gain design, and the optimization loop.
#[derive(Clone, Debug, PartialEq)]
pub enum TrajoptError {
    /// The car model failed while evaluating the flow, at this time.
    Dynamics { time: f64, source: DynamicsError },
    /// Curves do not share a grid (period and sample count).
    GridMismatch,
    /// Fewer than two samples, or mismatched array lengths.
    MalformedCurve,
    /// A weight matrix failed its definiteness or symmetry requirement.
    BadWeights { what: &'static str },
    /// The Riccati sweep left the finite range at this time.
    RiccatiDiverged { time: f64 },
    /// The curve does not satisfy the dynamics; worst scaled defect.
    NotATrajectory { defect: f64 },
    /// The supplied direction does not predict a cost decrease.
    NonDescent,
    /// No step length satisfied the sufficient-decrease condition.
    Stalled,
}

impl core::fmt::Display for TrajoptError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrajoptError::Dynamics { time, source } => {
                write!(f, "dynamics failure at t = {time} s: {source}")
            }
            TrajoptError::GridMismatch => write!(f, "curves are on different grids"),
            TrajoptError::MalformedCurve => {
                write!(f, "need at least two samples with equal array lengths")
            }
            TrajoptError::BadWeights { what } => write!(f, "invalid weights: {what}"),
            TrajoptError::RiccatiDiverged { time } => {
                write!(f, "Riccati sweep diverged at t = {time} s")
            }
            TrajoptError::NotATrajectory { defect } => {
                write!(f, "curve violates the dynamics, scaled defect {defect:.3e}")
            }
            TrajoptError::NonDescent => write!(f, "direction predicts no decrease"),
            TrajoptError::Stalled => write!(f, "line search exhausted without decrease"),
        }
    }
}

impl core::error::Error for TrajoptError {}

/// State and input samples on a uniform time grid starting at zero.
///
/// States are in the body-velocity chart (x, y, psi, vx, vy, psidot);
/// the sideslip view is available through [`Curve::speed_slip_states`].
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    dt: f64,
    states: Vec<CarState>,
    inputs: Vec<CarInput>,
}

impl Curve {
    pub fn new(
        dt: f64,
        states: Vec<CarState>,
        inputs: Vec<CarInput>,
    ) -> Result<Self, TrajoptError> {
        if !(dt > 0.0) || !dt.is_finite() || states.len() < 2 || states.len() != inputs.len() {
            return Err(TrajoptError::MalformedCurve);
        }
        Ok(Curve { dt, states, inputs })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of samples (one more than the number of steps).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn duration(&self) -> f64 {
        self.dt * (self.states.len() - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    pub fn states(&self) -> &[CarState] {
        &self.states
    }

    pub fn inputs(&self) -> &[CarInput] {
        &self.inputs
    }

    /// The (v, beta) view of every state sample; fails on a sample with no
    /// forward motion, where the sideslip is undefined.
    pub fn speed_slip_states(&self) -> Result<Vec<SpeedSlipState>, DynamicsError> {
        self.states
            .iter()
            .map(|s| s.speed_slip().ok_or(DynamicsError::DegenerateSpeed { vx: s.vx }))
            .collect()
    }

    /// Linear resampling onto a new period over the same span, truncated to
    /// the last full step of the new grid.
    pub fn resample(&self, dt_new: f64) -> Result<Curve, TrajoptError> {
        if !(dt_new > 0.0) || !dt_new.is_finite() {
            return Err(TrajoptError::MalformedCurve);
        }
        let span = self.duration();
        let steps = (span / dt_new + 1e-9) as usize;
        if steps < 1 {
            return Err(TrajoptError::MalformedCurve);
        }
        let mut states = Vec::with_capacity(steps + 1);
        let mut inputs = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = (k as f64 * dt_new).min(span);
            let pos = t / self.dt;
            let i = (pos as usize).min(self.states.len() - 2);
            let s = pos - i as f64;
            let x = self.states[i].to_vector() * (1.0 - s) + self.states[i + 1].to_vector() * s;
            let u = self.inputs[i].to_vector() * (1.0 - s) + self.inputs[i + 1].to_vector() * s;
            states.push(CarState::from_vector(&x));
            inputs.push(CarInput::from_vector(&u));
        }
        Curve::new(dt_new, states, inputs)
    }
}

/// A curve that satisfies the model dynamics: re-integrating its inputs
/// from its initial state reproduces the state samples within
/// [`TRAJECTORY_DEFECT_TOL`] per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory(Curve);

impl Trajectory {
    /// Validates the defect invariant against the model.
    pub fn from_curve(curve: Curve, model: &Model) -> Result<Self, TrajoptError> {
        let worst = defect(&curve, model)?;
        if worst > TRAJECTORY_DEFECT_TOL {
            return Err(TrajoptError::NotATrajectory { defect: worst });
        }
        Ok(Trajectory(curve))
    }

    pub fn curve(&self) -> &Curve {
        &self.0
    }

    pub fn into_curve(self) -> Curve {
        self.0
    }
}

impl core::ops::Deref for Trajectory {
    type Target = Curve;

    fn deref(&self) -> &Curve {
        &self.0
    }
}

/// Worst per-step scaled defect of the curve against the model's one-step
/// map: how far each stored sample lies from the integrated successor of
/// the previous one.
pub fn defect(curve: &Curve, model: &Model) -> Result<f64, TrajoptError> {
    let mut worst = 0.0_f64;
    for k in 0..curve.len() - 1 {
        let next = step_map(model, &curve.states[k].to_vector(), &curve.inputs[k].to_vector(), curve.dt)
            .map_err(|source| TrajoptError::Dynamics { time: curve.time(k), source })?;
        let stored = curve.states[k + 1].to_vector();
        for j in 0..6 {
            worst = worst.max((stored[j] - next[j]).abs() / (1.0 + stored[j].abs()));
        }
    }
    Ok(worst)
}

/// Quadratic weights of the tracking problem and of the regulator used for
/// gain design.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    /// Running state weight.
    pub q: StateMat,
    /// Running input weight; strictly positive definite.
    pub r: SMatrix<f64, 3, 3>,
    /// Terminal state weight.
    pub p1: StateMat,
    /// Regulator state weight for gain design.
    pub q_k: StateMat,
    /// Regulator input weight for gain design; strictly positive definite.
    pub r_k: SMatrix<f64, 3, 3>,
}

impl Default for Weights {
    /// Positions weighted an order of magnitude above the motion states;
    /// the same pair drives the regulator.
    fn default() -> Self {
        let q = StateMat::from_diagonal(&Vector6::new(10.0, 10.0, 1.0, 1.0, 1.0, 1.0));
        let r = SMatrix::<f64, 3, 3>::from_diagonal_element(0.1);
        Weights { q, r, p1: q, q_k: q, r_k: r }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<(), TrajoptError> {
        fn psd(m: &StateMat, what: &'static str) -> Result<(), TrajoptError> {
            if (m - m.transpose()).abs().max() > 1e-9 * (1.0 + m.abs().max()) {
                return Err(TrajoptError::BadWeights { what });
            }
            let eig = m.symmetric_eigenvalues();
            if eig.min() < -1e-9 * (1.0 + eig.abs().max()) {
                return Err(TrajoptError::BadWeights { what });
            }
            Ok(())
        }
        fn pd(m: &SMatrix<f64, 3, 3>, what: &'static str) -> Result<(), TrajoptError> {
            if (m - m.transpose()).abs().max() > 1e-9 * (1.0 + m.abs().max()) {
                return Err(TrajoptError::BadWeights { what });
            }
            nalgebra::linalg::Cholesky::new(*m)
                .map(|_| ())
                .ok_or(TrajoptError::BadWeights { what })
        }
        psd(&self.q, "Q must be symmetric PSD")?;
        psd(&self.p1, "P1 must be symmetric PSD")?;
        psd(&self.q_k, "Q_K must be symmetric PSD")?;
        pd(&self.r, "R must be symmetric positive definite")?;
        pd(&self.r_k, "R_K must be symmetric positive definite")
    }
}

/// Per-sample tracking feedback matrices on a trajectory's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GainSchedule {
    dt: f64,
    gains: Vec<GainMat>,
}

impl GainSchedule {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn gains(&self) -> &[GainMat] {
        &self.gains
    }
}

fn same_grid(a: &Curve, b: &Curve) -> bool {
    a.dt == b.dt && a.len() == b.len()
}

/// One fourth-order step of the model under a held input.
fn step_map(
    model: &Model,
    x: &Vector6<f64>,
    u: &Vector3<f64>,
    dt: f64,
) -> Result<Vector6<f64>, DynamicsError> {
    let k1 = model.derivative_vec(x, u)?;
    let k2 = model.derivative_vec(&(x + k1 * (dt / 2.0)), u)?;
    let k3 = model.derivative_vec(&(x + k2 * (dt / 2.0)), u)?;
    let k4 = model.derivative_vec(&(x + k3 * dt), u)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Integrates the model from `x0` under the per-sample inputs, held
/// constant within each step. The final input participates in no step but
/// stays with the trajectory for cost evaluation.
pub fn integrate(
    x0: &CarState,
    inputs: &[CarInput],
    dt: f64,
    model: &Model,
) -> Result<Trajectory, TrajoptError> {
    if inputs.len() < 2 || !(dt > 0.0) || !dt.is_finite() {
        return Err(TrajoptError::MalformedCurve);
    }
    let mut states = Vec::with_capacity(inputs.len());
    states.push(*x0);
    let mut x = x0.to_vector();
    for (k, u) in inputs[..inputs.len() - 1].iter().enumerate() {
        x = step_map(model, &x, &u.to_vector(), dt)
            .map_err(|source| TrajoptError::Dynamics { time: dt * k as f64, source })?;
        states.push(CarState::from_vector(&x));
    }
    // By construction the defect is zero; skip re-validation.
    Ok(Trajectory(Curve { dt, states, inputs: inputs.to_vec() }))
}

/// Central finite-difference Jacobians of the continuous dynamics.
fn continuous_jacobians(
    model: &Model,
    x: &Vector6<f64>,
    u: &Vector3<f64>,
) -> Result<(StateMat, InputMat), DynamicsError> {
    let mut a = StateMat::zeros();
    for j in 0..6 {
        let h = FD_STEP * (1.0 + x[j].abs());
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let col = (model.derivative_vec(&xp, u)? - model.derivative_vec(&xm, u)?) / (2.0 * h);
        a.set_column(j, &col);
    }
    let mut b = InputMat::zeros();
    for j in 0..3 {
        let h = FD_STEP * (1.0 + u[j].abs());
        let mut up = *u;
        let mut um = *u;
        up[j] += h;
        um[j] -= h;
        let col = (model.derivative_vec(x, &up)? - model.derivative_vec(x, &um)?) / (2.0 * h);
        b.set_column(j, &col);
    }
    Ok((a, b))
}

/// Exact Jacobians of the one-step map, chained through the four stages
/// (the stage Jacobians themselves come from finite differences).
fn step_jacobians(
    model: &Model,
    x: &Vector6<f64>,
    u: &Vector3<f64>,
    dt: f64,
) -> Result<(StateMat, InputMat), DynamicsError> {
    let k1 = model.derivative_vec(x, u)?;
    let x2 = x + k1 * (dt / 2.0);
    let k2 = model.derivative_vec(&x2, u)?;
    let x3 = x + k2 * (dt / 2.0);
    let k3 = model.derivative_vec(&x3, u)?;
    let x4 = x + k3 * dt;

    let (a1, b1) = continuous_jacobians(model, x, u)?;
    let (a2, b2) = continuous_jacobians(model, &x2, u)?;
    let (a3, b3) = continuous_jacobians(model, &x3, u)?;
    let (a4, b4) = continuous_jacobians(model, &x4, u)?;

    let id = StateMat::identity();
    let dk1 = a1;
    let dk2 = a2 * (id + dk1 * (dt / 2.0));
    let dk3 = a3 * (id + dk2 * (dt / 2.0));
    let dk4 = a4 * (id + dk3 * dt);
    let phi = id + (dk1 + dk2 * 2.0 + dk3 * 2.0 + dk4) * (dt / 6.0);

    let du1 = b1;
    let du2 = a2 * du1 * (dt / 2.0) + b2;
    let du3 = a3 * du2 * (dt / 2.0) + b3;
    let du4 = a4 * du3 * dt + b4;
    let gamma = (du1 + du2 * 2.0 + du3 * 2.0 + du4) * (dt / 6.0);

    Ok((phi, gamma))
}

/// Matrix exponential by scaling and squaring with a degree-13 Pade
/// approximant.
fn expm(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let norm = (0..n)
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    if !norm.is_finite() {
        return None;
    }
    let theta = 5.371920351148152;
    let mut s = 0u32;
    if norm > theta {
        let mut scale = norm / theta;
        while scale > 1.0 {
            scale *= 0.5;
            s += 1;
        }
    }
    let a = m * libm::exp2(-(s as f64));

    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9])
        + &a6 * B[7]
        + &a4 * B[5]
        + &a2 * B[3]
        + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8])
        + &a6 * B[6]
        + &a4 * B[4]
        + &a2 * B[2]
        + &id * B[0];
    let mut e = nalgebra::linalg::LU::new(&v - &u).solve(&(&v + &u))?;
    for _ in 0..s {
        e = &e * &e;
    }
    if e.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some(e)
}

/// Solves the finite-horizon regulator Riccati equation backward along a
/// sampled linearization and returns the value matrices on the same grid.
///
/// Each interval propagates the value matrix exactly for coefficients
/// frozen at the interval midpoint, through the exponential of the
/// associated Hamiltonian flow. That sidesteps the step-size limit an
/// explicit scheme would hit in the stiff terminal boundary layer of the
/// sweep. Terminal condition is `p_terminal`. Generic over the state and
/// input dimensions so small analytic problems exercise the identical
/// solver as the car.
pub fn riccati_sweep(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_terminal: &DMatrix<f64>,
    dt: f64,
) -> Result<Vec<DMatrix<f64>>, TrajoptError> {
    let n = a.len();
    if n < 2 || b.len() != n || !(dt > 0.0) {
        return Err(TrajoptError::MalformedCurve);
    }
    let ns = q.nrows();
    let nu = r.nrows();
    if q.ncols() != ns
        || p_terminal.shape() != (ns, ns)
        || r.ncols() != nu
        || a.iter().any(|m| m.shape() != (ns, ns))
        || b.iter().any(|m| m.shape() != (ns, nu))
    {
        return Err(TrajoptError::GridMismatch);
    }
    let r_inv = nalgebra::linalg::Cholesky::new(r.clone())
        .ok_or(TrajoptError::BadWeights { what: "regulator input weight must be PD" })?
        .inverse();

    let mut out = alloc::vec![DMatrix::zeros(ns, ns); n];
    out[n - 1] = p_terminal.clone();
    for k in (0..n - 1).rev() {
        let a_mid = (&a[k] + &a[k + 1]) * 0.5;
        let b_mid = (&b[k] + &b[k + 1]) * 0.5;
        let g = &b_mid * &r_inv * b_mid.transpose();

        // Backward flow of [X; Y] with P = Y X^-1: the Hamiltonian times
        // minus the step, exponentiated exactly.
        let mut h = DMatrix::zeros(2 * ns, 2 * ns);
        h.view_mut((0, 0), (ns, ns)).copy_from(&(&a_mid * -dt));
        h.view_mut((0, ns), (ns, ns)).copy_from(&(&g * dt));
        h.view_mut((ns, 0), (ns, ns)).copy_from(&(q * dt));
        h.view_mut((ns, ns), (ns, ns)).copy_from(&(a_mid.transpose() * dt));
        let e = expm(&h).ok_or(TrajoptError::RiccatiDiverged { time: dt * k as f64 })?;

        let p1 = &out[k + 1];
        let x = e.view((0, 0), (ns, ns)).clone_owned() + e.view((0, ns), (ns, ns)) * p1;
        let y = e.view((ns, 0), (ns, ns)).clone_owned() + e.view((ns, ns), (ns, ns)) * p1;
        let p = nalgebra::linalg::LU::new(x.transpose())
            .solve(&y.transpose())
            .ok_or(TrajoptError::RiccatiDiverged { time: dt * k as f64 })?
            .transpose();
        let p = (&p + &p.transpose()) * 0.5;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(TrajoptError::RiccatiDiverged { time: dt * k as f64 });
        }
        out[k] = p;
    }
    Ok(out)
}

/// Tracking gains about an arbitrary curve. The schedule is only as good
/// as the curve is close to the trajectory manifold; [`design_gain`] is the
/// checked entry point for genuine trajectories.
///
/// The value matrices come from the continuous regulator sweep. The gain
/// itself is assembled as the exact one-step minimizer of the held-input
/// problem against that cost-to-go,
/// `K = (R_K dt + Gamma' P Gamma)^-1 Gamma' P Phi`,
/// which tends to the continuous `R_K^-1 B' P` as the period shrinks. The
/// correction term matters here: with an inexpensive input weight the
/// continuous-form gain asks for loop rates beyond what the grid's hold
/// pattern can realize, and feeding it back at the sample rate destabilizes
/// the very rollout the schedule exists to stabilize.
pub fn design_gain_about(
    curve: &Curve,
    w: &Weights,
    model: &Model,
) -> Result<GainSchedule, TrajoptError> {
    w.validate()?;
    let n = curve.len();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for k in 0..n {
        let (ak, bk) =
            continuous_jacobians(model, &curve.states[k].to_vector(), &curve.inputs[k].to_vector())
                .map_err(|source| TrajoptError::Dynamics { time: curve.time(k), source })?;
        a.push(DMatrix::from_iterator(6, 6, ak.iter().copied()));
        b.push(DMatrix::from_iterator(6, 3, bk.iter().copied()));
    }
    let q = DMatrix::from_iterator(6, 6, w.q_k.iter().copied());
    let r = DMatrix::from_iterator(3, 3, w.r_k.iter().copied());
    let p = riccati_sweep(&a, &b, &q, &r, &q, curve.dt)?;
    let mut gains = Vec::with_capacity(n);
    for k in 0..n {
        let (phi, gamma) = step_jacobians(
            model,
            &curve.states[k].to_vector(),
            &curve.inputs[k].to_vector(),
            curve.dt,
        )
        .map_err(|source| TrajoptError::Dynamics { time: curve.time(k), source })?;
        // The value matrix one step ahead; the final sample pairs with the
        // terminal value, and its gain only shapes the stored last input.
        let p_ahead = &p[(k + 1).min(n - 1)];
        let mut pm = StateMat::zeros();
        for i in 0..6 {
            for j in 0..6 {
                pm[(i, j)] = p_ahead[(i, j)];
            }
        }
        let w_mat = w.r_k * curve.dt + gamma.transpose() * pm * gamma;
        let chol = nalgebra::linalg::Cholesky::new(w_mat)
            .ok_or(TrajoptError::RiccatiDiverged { time: curve.time(k) })?;
        gains.push(chol.solve(&(gamma.transpose() * pm * phi)));
    }
    Ok(GainSchedule { dt: curve.dt, gains })
}

/// Tracking gains about a trajectory: regulator weights (Q_K, R_K) with
/// terminal value Q_K, solved backward along the linearized dynamics.
pub fn design_gain(
    traj: &Trajectory,
    w: &Weights,
    model: &Model,
) -> Result<GainSchedule, TrajoptError> {
    design_gain_about(traj.curve(), w, model)
}

/// The projection operator: closed-loop integration of the tracking law
/// `u = mu + K (alpha - x)` from the curve's initial state. The stored
/// inputs are the realized closed-loop inputs, so the output satisfies the
/// trajectory invariant by construction.
pub fn project(
    xi: &Curve,
    k: &GainSchedule,
    model: &Model,
) -> Result<Trajectory, TrajoptError> {
    if k.dt != xi.dt || k.gains.len() != xi.len() {
        return Err(TrajoptError::GridMismatch);
    }
    let n = xi.len();
    let mut states = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    let mut x = xi.states[0].to_vector();
    states.push(xi.states[0]);
    for i in 0..n {
        let alpha = xi.states[i].to_vector();
        let u = xi.inputs[i].to_vector() + k.gains[i] * (alpha - x);
        inputs.push(CarInput::from_vector(&u));
        if i + 1 < n {
            x = step_map(model, &x, &u, xi.dt)
                .map_err(|source| TrajoptError::Dynamics { time: xi.time(i), source })?;
            states.push(CarState::from_vector(&x));
        }
    }
    Ok(Trajectory(Curve { dt: xi.dt, states, inputs }))
}

fn trapezoid_weight(k: usize, n: usize) -> f64 {
    if k == 0 || k == n - 1 {
        0.5
    } else {
        1.0
    }
}

/// Tracking cost: trapezoidal quadrature of the running quadratic error
/// plus the terminal term.
pub fn cost(xi: &Trajectory, xi_d: &Curve, w: &Weights) -> Result<f64, TrajoptError> {
    if !same_grid(xi.curve(), xi_d) {
        return Err(TrajoptError::GridMismatch);
    }
    let n = xi.len();
    let mut total = 0.0;
    for k in 0..n {
        let e = xi.states[k].to_vector() - xi_d.states[k].to_vector();
        let f = xi.inputs[k].to_vector() - xi_d.inputs[k].to_vector();
        let running = (w.q * e).dot(&e) + (w.r * f).dot(&f);
        total += 0.5 * trapezoid_weight(k, n) * xi.dt * running;
    }
    let e_n = xi.states[n - 1].to_vector() - xi_d.states[n - 1].to_vector();
    total += 0.5 * (w.p1 * e_n).dot(&e_n);
    Ok(total)
}

/// Directional derivative of the tracking cost along a tangent curve,
/// using the same quadrature as [`cost`].
pub fn cost_directional(
    xi: &Trajectory,
    xi_d: &Curve,
    w: &Weights,
    zeta: &Curve,
) -> Result<f64, TrajoptError> {
    if !same_grid(xi.curve(), xi_d) || !same_grid(xi.curve(), zeta) {
        return Err(TrajoptError::GridMismatch);
    }
    let n = xi.len();
    let mut total = 0.0;
    for k in 0..n {
        let e = xi.states[k].to_vector() - xi_d.states[k].to_vector();
        let f = xi.inputs[k].to_vector() - xi_d.inputs[k].to_vector();
        let zx = zeta.states[k].to_vector();
        let zu = zeta.inputs[k].to_vector();
        total += trapezoid_weight(k, n) * xi.dt * ((w.q * e).dot(&zx) + (w.r * f).dot(&zu));
    }
    let e_n = xi.states[n - 1].to_vector() - xi_d.states[n - 1].to_vector();
    total += (w.p1 * e_n).dot(&zeta.states[n - 1].to_vector());
    Ok(total)
}

/// Second-differential model for the descent subproblem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianMode {
    /// Quadratic cost curvature only; always positive semidefinite, so the
    /// subproblem always yields a descent direction.
    GaussNewton,
    /// Adds the adjoint-weighted curvature of the dynamics. Falls back to
    /// Gauss-Newton when the reduced Hessian loses definiteness.
    FullNewton,
}

/// A tangent-space descent direction and its predicted first-order
/// decrease.
#[derive(Clone, Debug, PartialEq)]
pub struct Descent {
    /// Tangent curve: state rows satisfy the linearized dynamics, starting
    /// from zero.
    pub zeta: Curve,
    /// First-order change of the cost along `zeta`; negative away from
    /// stationary points.
    pub predicted_decrease: f64,
    /// Whether full-Newton curvature was discarded for definiteness.
    pub fell_back: bool,
}

struct StageData {
    phi: Vec<StateMat>,
    gamma: Vec<InputMat>,
    a_lin: Vec<Vector6<f64>>,
    b_lin: Vec<Vector3<f64>>,
    /// Input error at the last sample, whose perturbation decouples from
    /// the dynamics.
    f_last: Vector3<f64>,
}

fn stage_data(
    xi: &Trajectory,
    xi_d: &Curve,
    w: &Weights,
    model: &Model,
) -> Result<StageData, TrajoptError> {
    let n = xi.len();
    let steps = n - 1;
    let mut phi = Vec::with_capacity(steps);
    let mut gamma = Vec::with_capacity(steps);
    for k in 0..steps {
        let (p, g) = step_jacobians(
            model,
            &xi.states[k].to_vector(),
            &xi.inputs[k].to_vector(),
            xi.dt,
        )
        .map_err(|source| TrajoptError::Dynamics { time: xi.time(k), source })?;
        phi.push(p);
        gamma.push(g);
    }
    let mut a_lin = Vec::with_capacity(n);
    let mut b_lin = Vec::with_capacity(n);
    for k in 0..n {
        let e = xi.states[k].to_vector() - xi_d.states[k].to_vector();
        let f = xi.inputs[k].to_vector() - xi_d.inputs[k].to_vector();
        let c = trapezoid_weight(k, n) * xi.dt;
        let mut a = w.q * e * c;
        if k == n - 1 {
            a += w.p1 * e;
        }
        a_lin.push(a);
        b_lin.push(w.r * f * c);
    }
    let f_last = xi.inputs[n - 1].to_vector() - xi_d.inputs[n - 1].to_vector();
    Ok(StageData { phi, gamma, a_lin, b_lin, f_last })
}

/// Adjoint-weighted curvature blocks of the dynamics at one sample.
fn curvature_blocks(
    model: &Model,
    x: &Vector6<f64>,
    u: &Vector3<f64>,
    lambda: &Vector6<f64>,
    dt: f64,
) -> Result<SMatrix<f64, 9, 9>, DynamicsError> {
    // Columns of the Hessian of lambda' f via finite differences of the
    // first-derivative blocks, scaled by dt to approximate the curvature of
    // the one-step map.
    let mut z = SMatrix::<f64, 9, 9>::zeros();
    for j in 0..9 {
        let (mut xp, mut up) = (*x, *u);
        let (mut xm, mut um) = (*x, *u);
        let h = if j < 6 {
            let h = FD_STEP * (1.0 + x[j].abs());
            xp[j] += h;
            xm[j] -= h;
            h
        } else {
            let h = FD_STEP * (1.0 + u[j - 6].abs());
            up[j - 6] += h;
            um[j - 6] -= h;
            h
        };
        let (ap, bp) = continuous_jacobians(model, &xp, &up)?;
        let (am, bm) = continuous_jacobians(model, &xm, &um)?;
        let da = (ap - am) / (2.0 * h);
        let db = (bp - bm) / (2.0 * h);
        for i in 0..6 {
            z[(i, j)] = da.column(i).dot(lambda);
        }
        for i in 0..3 {
            z[(6 + i, j)] = db.column(i).dot(lambda);
        }
    }
    z = (z + z.transpose()) * (0.5 * dt);
    Ok(z)
}

fn descent_recursion(
    xi: &Trajectory,
    w: &Weights,
    data: &StageData,
    curvature: Option<&[SMatrix<f64, 9, 9>]>,
) -> Option<(Vec<CarState>, Vec<CarInput>, f64)> {
    let n = xi.len();
    let steps = n - 1;
    let dt = xi.dt;

    // Backward value recursion on the discrete linearization.
    let mut p_next: StateMat = w.q * (trapezoid_weight(n - 1, n) * dt) + w.p1;
    let mut p_vec_next: Vector6<f64> = data.a_lin[n - 1];
    let mut feedback = alloc::vec![GainMat::zeros(); steps];
    let mut feedforward = alloc::vec![Vector3::zeros(); steps];
    for k in (0..steps).rev() {
        let c = trapezoid_weight(k, n) * dt;
        let mut q_blk: StateMat = w.q * c;
        let mut r_blk: SMatrix<f64, 3, 3> = w.r * c;
        let mut cross = GainMat::zeros();
        if let Some(z) = curvature {
            q_blk += z[k].fixed_view::<6, 6>(0, 0).into_owned();
            r_blk += z[k].fixed_view::<3, 3>(6, 6).into_owned();
            cross += z[k].fixed_view::<3, 6>(6, 0).into_owned();
        }
        let (phi, gam) = (&data.phi[k], &data.gamma[k]);
        let wmat = r_blk + gam.transpose() * p_next * gam;
        let chol = nalgebra::linalg::Cholesky::new(wmat)?;
        let s_full = gam.transpose() * p_next * phi + cross;
        let wvec = data.b_lin[k] + gam.transpose() * p_vec_next;
        let kk = chol.solve(&s_full);
        let dk = chol.solve(&wvec);
        p_next = q_blk + phi.transpose() * p_next * phi - s_full.transpose() * kk;
        p_next = (p_next + p_next.transpose()) * 0.5;
        p_vec_next = data.a_lin[k] + phi.transpose() * p_vec_next - s_full.transpose() * dk;
        feedback[k] = kk;
        feedforward[k] = dk;
    }

    // Forward rollout from zero.
    let mut zx = Vector6::zeros();
    let mut states = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    let mut dgz = 0.0;
    for k in 0..steps {
        let zu = -(feedback[k] * zx) - feedforward[k];
        states.push(CarState::from_vector(&zx));
        inputs.push(CarInput::from_vector(&zu));
        dgz += data.a_lin[k].dot(&zx) + data.b_lin[k].dot(&zu);
        zx = data.phi[k] * zx + data.gamma[k] * zu;
    }
    // The final input couples to no dynamics; its optimal perturbation
    // cancels the input error regardless of the weights.
    let zu_last = -data.f_last;
    states.push(CarState::from_vector(&zx));
    inputs.push(CarInput::from_vector(&zu_last));
    dgz += data.a_lin[n - 1].dot(&zx) + data.b_lin[n - 1].dot(&zu_last);
    Some((states, inputs, dgz))
}

/// Solves the linear-quadratic subproblem on the linearization along the
/// trajectory and returns the tangent-space direction together with its
/// predicted decrease.
///
/// `k` fixes the projection the caller pairs the direction with; only its
/// grid is consulted here, because on the tangent space the projection
/// differential is the identity for any stabilizing schedule and the
/// subproblem re-linearizes the dynamics itself.
pub fn descent_direction(
    xi: &Trajectory,
    xi_d: &Curve,
    k: &GainSchedule,
    w: &Weights,
    model: &Model,
) -> Result<Descent, TrajoptError> {
    descent_direction_with(xi, xi_d, k, w, model, HessianMode::GaussNewton)
}

/// As [`descent_direction`] with an explicit second-differential model.
pub fn descent_direction_with(
    xi: &Trajectory,
    xi_d: &Curve,
    k: &GainSchedule,
    w: &Weights,
    model: &Model,
    mode: HessianMode,
) -> Result<Descent, TrajoptError> {
    if !same_grid(xi.curve(), xi_d) || k.dt != xi.dt || k.gains.len() != xi.len() {
        return Err(TrajoptError::GridMismatch);
    }
    w.validate()?;
    let data = stage_data(xi, xi_d, w, model)?;
    let n = xi.len();

    let mut fell_back = false;
    let result = match mode {
        HessianMode::GaussNewton => descent_recursion(xi, w, &data, None),
        HessianMode::FullNewton => {
            // Adjoint along the trajectory, then curvature per stage.
            let mut lambda = alloc::vec![Vector6::zeros(); n];
            lambda[n - 1] = data.a_lin[n - 1];
            for k in (0..n - 1).rev() {
                lambda[k] = data.a_lin[k] + data.phi[k].transpose() * lambda[k + 1];
            }
            let mut curvature = Vec::with_capacity(n - 1);
            for k in 0..n - 1 {
                let z = curvature_blocks(
                    model,
                    &xi.states[k].to_vector(),
                    &xi.inputs[k].to_vector(),
                    &lambda[k + 1],
                    xi.dt,
                )
                .map_err(|source| TrajoptError::Dynamics { time: xi.time(k), source })?;
                curvature.push(z);
            }
            match descent_recursion(xi, w, &data, Some(&curvature)) {
                Some(ok) => Some(ok),
                None => {
                    fell_back = true;
                    descent_recursion(xi, w, &data, None)
                }
            }
        }
    };
    // The Gauss-Newton reduced Hessian is positive definite whenever R is,
    // so the recursion cannot fail there.
    let (states, inputs, dgz) =
        result.ok_or(TrajoptError::BadWeights { what: "reduced Hessian not PD" })?;
    let zeta = Curve { dt: xi.dt, states, inputs };
    Ok(Descent { zeta, predicted_decrease: dgz, fell_back })
}

/// Worst per-step scaled defect of a tangent curve against the discrete
/// linearization along the trajectory.
pub fn tangent_defect(
    zeta: &Curve,
    xi: &Trajectory,
    model: &Model,
) -> Result<f64, TrajoptError> {
    if !same_grid(zeta, xi.curve()) {
        return Err(TrajoptError::GridMismatch);
    }
    let mut worst = 0.0_f64;
    for k in 0..zeta.len() - 1 {
        let (phi, gamma) = step_jacobians(
            model,
            &xi.states[k].to_vector(),
            &xi.inputs[k].to_vector(),
            xi.dt,
        )
        .map_err(|source| TrajoptError::Dynamics { time: xi.time(k), source })?;
        let predicted = phi * zeta.states[k].to_vector() + gamma * zeta.inputs[k].to_vector();
        let stored = zeta.states[k + 1].to_vector();
        for j in 0..6 {
            worst = worst.max((stored[j] - predicted[j]).abs() / (1.0 + stored[j].abs()));
        }
    }
    Ok(worst)
}

/// Adds `gamma * zeta` to the curve samples.
pub fn offset_curve(base: &Curve, gamma: f64, zeta: &Curve) -> Result<Curve, TrajoptError> {
    if !same_grid(base, zeta) {
        return Err(TrajoptError::GridMismatch);
    }
    let states = base
        .states
        .iter()
        .zip(&zeta.states)
        .map(|(s, z)| CarState::from_vector(&(s.to_vector() + z.to_vector() * gamma)))
        .collect();
    let inputs = base
        .inputs
        .iter()
        .zip(&zeta.inputs)
        .map(|(u, z)| CarInput::from_vector(&(u.to_vector() + z.to_vector() * gamma)))
        .collect();
    Ok(Curve { dt: base.dt, states, inputs })
}

/// Accepted step of the backtracking search.
#[derive(Clone, Debug)]
pub struct LineSearchStep {
    /// Accepted fraction of the full step.
    pub gamma: f64,
    /// Projection of the stepped curve, already integrated.
    pub trajectory: Trajectory,
    /// Its tracking cost.
    pub cost: f64,
}

/// Backtracking line search with sufficient decrease: the largest step in
/// {1, 1/2, ..., 2^-12} whose projected candidate drops the cost by at
/// least `ARMIJO_SIGMA * gamma * predicted_decrease`. Candidates whose
/// projection leaves the model's domain are skipped as rejections.
pub fn line_search(
    xi: &Trajectory,
    zeta: &Curve,
    predicted_decrease: f64,
    xi_d: &Curve,
    k: &GainSchedule,
    w: &Weights,
    model: &Model,
) -> Result<LineSearchStep, TrajoptError> {
    if !(predicted_decrease < 0.0) {
        return Err(TrajoptError::NonDescent);
    }
    let base_cost = cost(xi, xi_d, w)?;
    let mut gamma = 1.0_f64;
    for _ in 0..=MAX_BACKTRACKS {
        let candidate = offset_curve(xi.curve(), gamma, zeta)?;
        match project(&candidate, k, model) {
            Ok(traj) => {
                let c = cost(&traj, xi_d, w)?;
                if c <= base_cost + ARMIJO_SIGMA * gamma * predicted_decrease {
                    return Ok(LineSearchStep { gamma, trajectory: traj, cost: c });
                }
            }
            Err(TrajoptError::Dynamics { .. }) => {}
            Err(other) => return Err(other),
        }
        gamma *= 0.5;
    }
    Err(TrajoptError::Stalled)
}

/// Stopping rule of the optimization loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopCriteria {
    /// Relative gradient threshold: stop once
    /// `|predicted_decrease| <= grad_tol * (1 + cost)`.
    pub grad_tol: f64,
    /// Maximum number of accepted steps.
    pub max_iter: usize,
}

impl Default for StopCriteria {
    fn default() -> Self {
        StopCriteria { grad_tol: 1e-6, max_iter: 50 }
    }
}

/// Why the optimization loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// The predicted decrease fell under the relative threshold.
    GradientTolerance,
    /// The accepted-step budget ran out.
    MaxIterations,
    /// The line search found no acceptable step.
    Stalled,
}

/// One row of the optimization log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Iterate {
    pub iter: usize,
    /// Cost at the start of the iterate.
    pub cost: f64,
    /// Predicted decrease of the direction computed at this iterate.
    pub grad_zeta: f64,
    /// Accepted step fraction; absent when the loop stopped here.
    pub gamma: Option<f64>,
}

/// Result of [`po_newton`].
#[derive(Clone, Debug)]
pub struct PoNewtonOutcome {
    pub trajectory: Trajectory,
    pub cost: f64,
    pub iterates: Vec<Iterate>,
    pub reason: StopReason,
}

/// Projection-operator Newton iteration: per iterate, design tracking
/// gains, solve the descent subproblem, pick a step by backtracking, and
/// project. The cost sequence is nonincreasing by construction.
///
/// Uses the Gauss-Newton model, which is the right default: it guarantees
/// descent and converges quadratically when the reference is attainable.
/// For references the car cannot follow exactly the residual stays finite
/// at the minimizer and Gauss-Newton degrades to a linear rate; switch to
/// [`po_newton_with`] and [`HessianMode::FullNewton`] there.
pub fn po_newton(
    xi0: &Trajectory,
    xi_d: &Curve,
    w: &Weights,
    model: &Model,
    stop: &StopCriteria,
) -> Result<PoNewtonOutcome, TrajoptError> {
    po_newton_with(xi0, xi_d, w, model, stop, HessianMode::GaussNewton)
}

/// [`po_newton`] with an explicit choice of second-order model. Full
/// Newton folds the curvature of the dynamics, weighted by the adjoint,
/// into the subproblem; iterates where that model loses positive
/// definiteness fall back to Gauss-Newton automatically, so descent is
/// preserved either way.
pub fn po_newton_with(
    xi0: &Trajectory,
    xi_d: &Curve,
    w: &Weights,
    model: &Model,
    stop: &StopCriteria,
    mode: HessianMode,
) -> Result<PoNewtonOutcome, TrajoptError> {
    let mut xi = xi0.clone();
    let mut g = cost(&xi, xi_d, w)?;
    let mut iterates = Vec::new();
    let mut iter = 0;
    let reason = loop {
        let k = design_gain(&xi, w, model)?;
        let descent = descent_direction_with(&xi, xi_d, &k, w, model, mode)?;
        iterates.push(Iterate {
            iter,
            cost: g,
            grad_zeta: descent.predicted_decrease,
            gamma: None,
        });
        if descent.predicted_decrease.abs() <= stop.grad_tol * (1.0 + g) {
            break StopReason::GradientTolerance;
        }
        if iter >= stop.max_iter {
            break StopReason::MaxIterations;
        }
        match line_search(&xi, &descent.zeta, descent.predicted_decrease, xi_d, &k, w, model) {
            Ok(step) => {
                iterates.last_mut().expect("just pushed").gamma = Some(step.gamma);
                xi = step.trajectory;
                g = step.cost;
            }
            Err(TrajoptError::Stalled) => break StopReason::Stalled,
            Err(other) => return Err(other),
        }
        iter += 1;
    };
    Ok(PoNewtonOutcome { trajectory: xi, cost: g, iterates, reason })
}
