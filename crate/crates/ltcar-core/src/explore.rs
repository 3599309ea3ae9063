//! Reference-path geometry and the exploration strategy.
//!
//! The pipeline starts from a track described by its curvature over
//! arclength ([`PathSpec`]) and a speed profile ([`SpeedProfile`]). From
//! those, [`path_to_pose`] samples the path pose over time and
//! [`quasi_static`] turns every sample into a steady-cornering equilibrium,
//! producing a desired [`Curve`] the optimizer can chase. [`morph_family`]
//! builds an ordered family of such curves along a continuation schedule,
//! and [`explore`] walks the family, warm-starting each leg's optimization
//! from the previous optimum.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::manifold::{self, ManifoldError};
use crate::tire::TirePair;
use crate::trajopt::{
    design_gain_about, po_newton, project, Curve, PoNewtonOutcome, StopCriteria, Trajectory,
    TrajoptError, Weights,
};
use crate::vehicle::{CarInput, CarState, Model, VehicleParams};

/// Failures of path construction, curve generation, and exploration.
#[derive(Clone, Debug)]
pub enum ExploreError {
    /// Invalid path geometry (breakpoints, segments, or waypoints).
    BadPath { what: &'static str },
    /// Invalid speed profile (nonpositive or non-finite speeds).
    BadSpeed { what: &'static str },
    /// Invalid argument outside path or speed data.
    BadInput { what: &'static str },
    /// A quasi-static sample has no equilibrium under the active tires.
    InfeasibleSample { time: f64, source: ManifoldError },
    /// A family builder failed at this schedule parameter.
    BuilderFailed { parameter: f64, source: Box<ExploreError> },
    /// An exploration leg failed; every finished leg is preserved.
    LegFailed { parameter: f64, completed: Vec<LegOutcome>, source: TrajoptError },
    /// A curve file violates the expected schema at this line.
    MalformedFile { line: usize, what: &'static str },
    /// The time column must increase strictly; first offense at this line.
    NonMonotoneTime { line: usize },
    /// Plumbing failure in the trajectory layer.
    Trajopt(TrajoptError),
}

impl core::fmt::Display for ExploreError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ExploreError::BadPath { what } => write!(f, "invalid path: {what}"),
            ExploreError::BadSpeed { what } => write!(f, "invalid speed profile: {what}"),
            ExploreError::BadInput { what } => write!(f, "invalid input: {what}"),
            ExploreError::InfeasibleSample { time, source } => {
                write!(f, "no equilibrium at t = {time} s: {source}")
            }
            ExploreError::BuilderFailed { parameter, source } => {
                write!(f, "family builder failed at parameter {parameter}: {source}")
            }
            ExploreError::LegFailed { parameter, completed, source } => write!(
                f,
                "exploration leg at parameter {parameter} failed after {} finished legs: {source}",
                completed.len()
            ),
            ExploreError::MalformedFile { line, what } => {
                write!(f, "malformed curve file at line {line}: {what}")
            }
            ExploreError::NonMonotoneTime { line } => {
                write!(f, "time must increase strictly (line {line})")
            }
            ExploreError::Trajopt(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for ExploreError {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            ExploreError::InfeasibleSample { source, .. } => Some(source),
            ExploreError::BuilderFailed { source, .. } => Some(source.as_ref()),
            ExploreError::LegFailed { source, .. } => Some(source),
            ExploreError::Trajopt(e) => Some(e),
            _ => None,
        }
    }
}

impl From<TrajoptError> for ExploreError {
    fn from(e: TrajoptError) -> Self {
        ExploreError::Trajopt(e)
    }
}

/// Planar pose of the path start.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Tangent direction, rad.
    pub heading: f64,
}

impl Pose {
    pub const ORIGIN: Pose = Pose { x: 0.0, y: 0.0, heading: 0.0 };
}

/// One building block of a track, measured along arclength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Segment {
    /// Zero curvature over `length` meters.
    Straight { length: f64 },
    /// Constant curvature (1/m, positive turns left) over `length` meters.
    Arc { length: f64, curvature: f64 },
    /// Curvature ramping linearly `from` one value `to` another.
    Ramp { length: f64, from: f64, to: f64 },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length }
            | Segment::Arc { length, .. }
            | Segment::Ramp { length, .. } => length,
        }
    }

    fn endpoints(&self) -> (f64, f64) {
        match *self {
            Segment::Straight { .. } => (0.0, 0.0),
            Segment::Arc { curvature, .. } => (curvature, curvature),
            Segment::Ramp { from, to, .. } => (from, to),
        }
    }
}

/// A track: curvature as a continuous piecewise-linear function of
/// arclength, anchored at a starting pose.
///
/// The tangent heading is the exact integral of the curvature, so it is a
/// piecewise-quadratic function of arclength; positions follow from
/// quadrature of the unit tangent in [`path_to_pose`].
#[derive(Clone, Debug, PartialEq)]
pub struct PathSpec {
    origin: Pose,
    /// (arclength, curvature) knots; arclength strictly increasing from 0.
    breakpoints: Vec<(f64, f64)>,
    /// Exact cumulative heading at each knot.
    theta: Vec<f64>,
}

impl PathSpec {
    /// Builds a path from explicit curvature knots.
    pub fn new(origin: Pose, breakpoints: Vec<(f64, f64)>) -> Result<Self, ExploreError> {
        if breakpoints.len() < 2 {
            return Err(ExploreError::BadPath { what: "need at least two curvature knots" });
        }
        if breakpoints[0].0 != 0.0 {
            return Err(ExploreError::BadPath { what: "arclength must start at zero" });
        }
        for pair in breakpoints.windows(2) {
            if !(pair[1].0 > pair[0].0) {
                return Err(ExploreError::BadPath { what: "arclength must increase strictly" });
            }
        }
        if breakpoints.iter().any(|(s, k)| !s.is_finite() || !k.is_finite())
            || !origin.x.is_finite()
            || !origin.y.is_finite()
            || !origin.heading.is_finite()
        {
            return Err(ExploreError::BadPath { what: "non-finite geometry" });
        }
        let mut theta = Vec::with_capacity(breakpoints.len());
        theta.push(origin.heading);
        for pair in breakpoints.windows(2) {
            let ds = pair[1].0 - pair[0].0;
            let last = *theta.last().expect("seeded above");
            theta.push(last + 0.5 * (pair[0].1 + pair[1].1) * ds);
        }
        Ok(PathSpec { origin, breakpoints, theta })
    }

    /// Concatenates segments into a path. Adjacent segments must agree on
    /// the curvature at their shared point so the profile stays continuous.
    pub fn from_segments(origin: Pose, segments: &[Segment]) -> Result<Self, ExploreError> {
        if segments.is_empty() {
            return Err(ExploreError::BadPath { what: "need at least one segment" });
        }
        let mut bps: Vec<(f64, f64)> = Vec::with_capacity(segments.len() + 1);
        let mut s = 0.0;
        for seg in segments {
            if !(seg.length() > 0.0) {
                return Err(ExploreError::BadPath { what: "segment lengths must be positive" });
            }
            let (start, end) = seg.endpoints();
            match bps.last() {
                None => bps.push((0.0, start)),
                Some(&(_, prev)) => {
                    if (prev - start).abs() > 1e-12 {
                        return Err(ExploreError::BadPath {
                            what: "curvature jumps between segments",
                        });
                    }
                }
            }
            s += seg.length();
            bps.push((s, end));
        }
        PathSpec::new(origin, bps)
    }

    /// Fits a path through waypoints: natural cubic splines in a
    /// chord-length parameter, curvature taken analytically from the fit
    /// and resampled over arclength.
    pub fn from_waypoints(points: &[(f64, f64)]) -> Result<Self, ExploreError> {
        if points.len() < 4 {
            return Err(ExploreError::BadPath { what: "need at least four waypoints" });
        }
        let n = points.len();
        let mut t = Vec::with_capacity(n);
        t.push(0.0);
        for pair in points.windows(2) {
            let d = libm::hypot(pair[1].0 - pair[0].0, pair[1].1 - pair[0].1);
            if !(d > 1e-9) {
                return Err(ExploreError::BadPath { what: "coincident waypoints" });
            }
            t.push(t.last().expect("seeded") + d);
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let mx = natural_spline_moments(&t, &xs);
        let my = natural_spline_moments(&t, &ys);

        // Dense sweep of the fit: arclength by chord accumulation and the
        // analytic curvature of a regular parametric curve.
        let per = 24usize;
        let mut bps = Vec::with_capacity((n - 1) * per + 1);
        let mut s = 0.0;
        let (mut px, mut py) = (xs[0], ys[0]);
        for i in 0..n - 1 {
            let steps = if i == n - 2 { per + 1 } else { per };
            for j in 0..steps {
                let u = t[i] + (t[i + 1] - t[i]) * (j as f64) / (per as f64);
                let (x, dx, ddx) = spline_eval(&t, &xs, &mx, i, u);
                let (y, dy, ddy) = spline_eval(&t, &ys, &my, i, u);
                if !(i == 0 && j == 0) {
                    s += libm::hypot(x - px, y - py);
                }
                px = x;
                py = y;
                let speed2 = dx * dx + dy * dy;
                let kappa = (dx * ddy - dy * ddx) / (speed2 * libm::sqrt(speed2));
                bps.push((s, kappa));
            }
        }
        let (dx0, dy0) = {
            let (_, dx, _) = spline_eval(&t, &xs, &mx, 0, 0.0);
            let (_, dy, _) = spline_eval(&t, &ys, &my, 0, 0.0);
            (dx, dy)
        };
        let origin = Pose { x: xs[0], y: ys[0], heading: libm::atan2(dy0, dx0) };
        PathSpec::new(origin, bps)
    }

    pub fn origin(&self) -> Pose {
        self.origin
    }

    /// Total arclength, m.
    pub fn length(&self) -> f64 {
        self.breakpoints.last().expect("validated nonempty").0
    }

    /// Curvature at arclength `s`, clamped to the end values outside the
    /// profile.
    pub fn curvature(&self, s: f64) -> f64 {
        let bps = &self.breakpoints;
        if s <= 0.0 {
            return bps[0].1;
        }
        if s >= self.length() {
            return bps[bps.len() - 1].1;
        }
        let i = self.piece(s);
        let (s0, k0) = bps[i];
        let (s1, k1) = bps[i + 1];
        k0 + (k1 - k0) * (s - s0) / (s1 - s0)
    }

    /// Tangent heading at arclength `s`: the exact integral of the
    /// curvature, extended with constant end curvature outside the profile.
    pub fn heading(&self, s: f64) -> f64 {
        let bps = &self.breakpoints;
        if s <= 0.0 {
            return self.theta[0] + bps[0].1 * s;
        }
        let l = self.length();
        if s >= l {
            return self.theta[self.theta.len() - 1] + bps[bps.len() - 1].1 * (s - l);
        }
        let i = self.piece(s);
        let (s0, k0) = bps[i];
        let (s1, k1) = bps[i + 1];
        let u = s - s0;
        self.theta[i] + k0 * u + 0.5 * (k1 - k0) / (s1 - s0) * u * u
    }

    /// Index of the piece containing `s`, for `0 <= s < length`.
    fn piece(&self, s: f64) -> usize {
        let bps = &self.breakpoints;
        match bps.binary_search_by(|probe| probe.0.partial_cmp(&s).expect("finite")) {
            Ok(i) => i.min(bps.len() - 2),
            Err(i) => i - 1,
        }
    }
}

/// Second-derivative knot values of the natural cubic spline through
/// `(t, f)`, by the tridiagonal (Thomas) solve.
fn natural_spline_moments(t: &[f64], f: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut diag = alloc::vec![1.0; n];
    let mut upper = alloc::vec![0.0; n];
    let mut rhs = alloc::vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = t[i] - t[i - 1];
        let h1 = t[i + 1] - t[i];
        let lower = h0;
        diag[i] = 2.0 * (h0 + h1);
        upper[i] = h1;
        rhs[i] = 6.0 * ((f[i + 1] - f[i]) / h1 - (f[i] - f[i - 1]) / h0);
        // Forward elimination against the already-reduced previous row.
        let w = lower / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut m = alloc::vec![0.0; n];
    for i in (1..n - 1).rev() {
        m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
    }
    m
}

/// Value and first two derivatives of the natural spline on piece `i`.
fn spline_eval(t: &[f64], f: &[f64], m: &[f64], i: usize, u: f64) -> (f64, f64, f64) {
    let h = t[i + 1] - t[i];
    let a = t[i + 1] - u;
    let b = u - t[i];
    let value = m[i] * a * a * a / (6.0 * h)
        + m[i + 1] * b * b * b / (6.0 * h)
        + (f[i] / h - m[i] * h / 6.0) * a
        + (f[i + 1] / h - m[i + 1] * h / 6.0) * b;
    let deriv = -m[i] * a * a / (2.0 * h) + m[i + 1] * b * b / (2.0 * h)
        - (f[i] / h - m[i] * h / 6.0)
        + (f[i + 1] / h - m[i + 1] * h / 6.0);
    let second = (m[i] * a + m[i + 1] * b) / h;
    (value, deriv, second)
}

/// Target speed as a continuous piecewise-linear function of arclength,
/// strictly positive everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedProfile {
    breakpoints: Vec<(f64, f64)>,
}

impl SpeedProfile {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self, ExploreError> {
        if breakpoints.is_empty() {
            return Err(ExploreError::BadSpeed { what: "need at least one speed knot" });
        }
        for pair in breakpoints.windows(2) {
            if !(pair[1].0 > pair[0].0) {
                return Err(ExploreError::BadSpeed { what: "arclength must increase strictly" });
            }
        }
        if breakpoints.iter().any(|(s, v)| !s.is_finite() || !v.is_finite() || *v <= 0.0) {
            return Err(ExploreError::BadSpeed { what: "speeds must be finite and positive" });
        }
        Ok(SpeedProfile { breakpoints })
    }

    /// The same speed everywhere.
    pub fn constant(v: f64) -> Result<Self, ExploreError> {
        SpeedProfile::new(alloc::vec![(0.0, v)])
    }

    /// Speed at arclength `s`, clamped to the end values outside the knots.
    pub fn value(&self, s: f64) -> f64 {
        let bps = &self.breakpoints;
        if s <= bps[0].0 {
            return bps[0].1;
        }
        let last = bps[bps.len() - 1];
        if s >= last.0 {
            return last.1;
        }
        let i = match bps.binary_search_by(|probe| probe.0.partial_cmp(&s).expect("finite")) {
            Ok(i) => i.min(bps.len() - 2),
            Err(i) => i - 1,
        };
        let (s0, v0) = bps[i];
        let (s1, v1) = bps[i + 1];
        v0 + (v1 - v0) * (s - s0) / (s1 - s0)
    }

    /// Arclength-weighted mean speed over the knot span (the knot value for
    /// a single-knot profile).
    pub fn mean(&self) -> f64 {
        let bps = &self.breakpoints;
        if bps.len() == 1 {
            return bps[0].1;
        }
        let mut area = 0.0;
        for pair in bps.windows(2) {
            area += 0.5 * (pair[0].1 + pair[1].1) * (pair[1].0 - pair[0].0);
        }
        area / (bps[bps.len() - 1].0 - bps[0].0)
    }

    /// Scales the deviation of the profile from its mean by
    /// `percent / 100`, preserving the mean speed. 100 returns the profile
    /// unchanged; smaller values flatten it toward the mean.
    pub fn with_aggressiveness(&self, percent: f64) -> Result<SpeedProfile, ExploreError> {
        if !(percent.is_finite() && percent > 0.0) {
            return Err(ExploreError::BadSpeed { what: "aggressiveness must be positive" });
        }
        let gain = percent / 100.0;
        let mean = self.mean();
        let scaled = self
            .breakpoints
            .iter()
            .map(|&(s, v)| (s, mean + gain * (v - mean)))
            .collect();
        SpeedProfile::new(scaled)
    }
}

/// One time sample of the reference path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    /// Time since the path start, s.
    pub t: f64,
    /// Arclength consumed, m.
    pub s: f64,
    pub x: f64,
    pub y: f64,
    /// Path tangent, rad.
    pub heading: f64,
    /// Path curvature, 1/m.
    pub curvature: f64,
    /// Profile speed, m/s.
    pub speed: f64,
}

/// Samples the path pose over time on a uniform grid: arclength advances by
/// the profile speed per step, the heading is the exact curvature integral,
/// and positions come from per-step Simpson quadrature of the unit tangent.
pub fn path_to_pose(
    spec: &PathSpec,
    profile: &SpeedProfile,
    dt: f64,
) -> Result<Vec<PoseSample>, ExploreError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ExploreError::BadInput { what: "grid period must be positive" });
    }
    let l = spec.length();
    let mut samples = Vec::new();
    let (mut s, mut t) = (0.0_f64, 0.0_f64);
    let (mut x, mut y) = (spec.origin.x, spec.origin.y);
    loop {
        samples.push(PoseSample {
            t,
            s,
            x,
            y,
            heading: spec.heading(s),
            curvature: spec.curvature(s),
            speed: profile.value(s),
        });
        if s >= l - 1e-9 {
            break;
        }
        if samples.len() > 4_000_000 {
            return Err(ExploreError::BadInput { what: "path needs too many samples" });
        }
        let ds = profile.value(s) * dt;
        let th0 = spec.heading(s);
        let th1 = spec.heading(s + 0.5 * ds);
        let th2 = spec.heading(s + ds);
        x += ds / 6.0 * (libm::cos(th0) + 4.0 * libm::cos(th1) + libm::cos(th2));
        y += ds / 6.0 * (libm::sin(th0) + 4.0 * libm::sin(th1) + libm::sin(th2));
        s += ds;
        t += dt;
    }
    Ok(samples)
}

/// Tire treatment for quasi-static curve generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TireMode {
    /// Use the pair as given.
    Pacejka,
    /// Replace magic-formula axles by their zero-slip tangents; used when
    /// the demanded lateral acceleration exceeds what the saturating curves
    /// can hold.
    Linear,
}

/// Builds the quasi-static desired curve: every time sample is the steady
/// cornering equilibrium at that sample's speed and lateral acceleration
/// `v^2 * curvature`, warm-started along the path.
///
/// The state places the car on the path with its velocity vector tangent to
/// it: the heading is the path tangent minus the equilibrium sideslip. Under
/// `TireMode::Pacejka` a sample beyond the saturating tires' reach fails
/// with the first infeasible time, and the caller may retry in
/// `TireMode::Linear`.
pub fn quasi_static(
    spec: &PathSpec,
    profile: &SpeedProfile,
    params: &VehicleParams,
    tires: &TirePair,
    mode: TireMode,
    dt: f64,
) -> Result<Curve, ExploreError> {
    let active = match mode {
        TireMode::Pacejka => *tires,
        TireMode::Linear => tires.to_linear(),
    };
    let samples = path_to_pose(spec, profile, dt)?;
    let mut states = Vec::with_capacity(samples.len());
    let mut inputs = Vec::with_capacity(samples.len());
    let mut guess = (0.0, 0.0, 0.0);
    for sample in &samples {
        let v = sample.speed;
        let a_lat = v * v * sample.curvature;
        let point = manifold::solve_point(v, a_lat, guess, params, &active)
            .map_err(|source| ExploreError::InfeasibleSample { time: sample.t, source })?;
        let u = &point.unknowns;
        states.push(CarState {
            x: sample.x,
            y: sample.y,
            psi: sample.heading - u.beta,
            vx: v * libm::cos(u.beta),
            vy: v * libm::sin(u.beta),
            psidot: v * sample.curvature,
        });
        inputs.push(CarInput { delta: u.delta, kappa_r: u.kappa_r, kappa_f: 0.0 });
        guess = (u.beta, u.delta, u.kappa_r);
    }
    Ok(Curve::new(dt, states, inputs)?)
}

/// A desired curve tagged with its continuation parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedCurve {
    pub parameter: f64,
    pub curve: Curve,
}

/// Ordered family of desired curves; the last element is the actual target.
#[derive(Clone, Debug, PartialEq)]
pub struct DesiredCurveFamily {
    pub legs: Vec<TaggedCurve>,
}

/// Aggressiveness continuation: percent of the target speed-profile
/// deviation, ramped in ten-point steps.
pub const AGGRESSIVENESS_SCHEDULE: [f64; 6] = [50.0, 60.0, 70.0, 80.0, 90.0, 100.0];

/// Constant-speed continuation: meters per second, ramped in unit steps.
pub const SPEED_SCHEDULE: [f64; 6] = [25.0, 26.0, 27.0, 28.0, 29.0, 30.0];

/// Builds the ordered family by running `builder` over the schedule. A
/// builder failure aborts and reports the offending parameter.
pub fn morph_family<F>(schedule: &[f64], mut builder: F) -> Result<DesiredCurveFamily, ExploreError>
where
    F: FnMut(f64) -> Result<Curve, ExploreError>,
{
    if schedule.is_empty() {
        return Err(ExploreError::BadInput { what: "empty continuation schedule" });
    }
    let mut legs = Vec::with_capacity(schedule.len());
    for &parameter in schedule {
        let curve = builder(parameter)
            .map_err(|e| ExploreError::BuilderFailed { parameter, source: Box::new(e) })?;
        legs.push(TaggedCurve { parameter, curve });
    }
    Ok(DesiredCurveFamily { legs })
}

/// One finished exploration leg.
#[derive(Clone, Debug)]
pub struct LegOutcome {
    pub parameter: f64,
    pub outcome: PoNewtonOutcome,
}

/// Result of [`explore`]: one outcome per family leg, in order.
#[derive(Clone, Debug)]
pub struct Exploration {
    pub legs: Vec<LegOutcome>,
}

impl Exploration {
    /// The optimum of the last leg, i.e. of the actual target curve.
    pub fn final_trajectory(&self) -> &Trajectory {
        &self.legs.last().expect("explore returns at least one leg").outcome.trajectory
    }
}

/// Resamples a curve onto `n` samples of the same period by linear
/// interpolation in normalized sample position. With `n` equal to the
/// curve's length this is an exact copy.
fn stretched(curve: &Curve, n: usize) -> Curve {
    let m = curve.len();
    if n == m {
        return curve.clone();
    }
    let states = curve.states();
    let inputs = curve.inputs();
    let mut new_states = Vec::with_capacity(n);
    let mut new_inputs = Vec::with_capacity(n);
    for j in 0..n {
        let tau = (j as f64) * ((m - 1) as f64) / ((n - 1) as f64);
        let i = (tau as usize).min(m - 2);
        let w = tau - i as f64;
        let sv = states[i].to_vector() * (1.0 - w) + states[i + 1].to_vector() * w;
        let uv = inputs[i].to_vector() * (1.0 - w) + inputs[i + 1].to_vector() * w;
        new_states.push(CarState::from_vector(&sv));
        new_inputs.push(CarInput::from_vector(&uv));
    }
    Curve::new(curve.dt(), new_states, new_inputs).expect("same period, n >= 2")
}

/// Walks the family in order, optimizing each leg and warm-starting from
/// the previous optimum (the first leg starts at the projection of its own
/// desired curve). A failing leg aborts with all finished legs preserved in
/// the error.
pub fn explore(
    family: &DesiredCurveFamily,
    w: &Weights,
    model: &Model,
    stop: &StopCriteria,
) -> Result<Exploration, ExploreError> {
    if family.legs.is_empty() {
        return Err(ExploreError::BadInput { what: "empty desired-curve family" });
    }
    let dt = family.legs[0].curve.dt();
    if family.legs.iter().any(|leg| leg.curve.dt() != dt) {
        return Err(ExploreError::BadInput { what: "family legs use different grid periods" });
    }

    let mut legs: Vec<LegOutcome> = Vec::new();
    for (i, leg) in family.legs.iter().enumerate() {
        // Warm start: previous optimum, stretched onto this leg's grid (an
        // exact copy when the grids already agree), re-projected so the
        // initial iterate is a trajectory.
        let alpha = if i == 0 {
            leg.curve.clone()
        } else {
            stretched(legs[i - 1].outcome.trajectory.curve(), leg.curve.len())
        };
        let run = || -> Result<PoNewtonOutcome, TrajoptError> {
            let gains = design_gain_about(&alpha, w, model)?;
            let xi0 = project(&alpha, &gains, model)?;
            po_newton(&xi0, &leg.curve, w, model, stop)
        };
        match run() {
            Ok(outcome) => legs.push(LegOutcome { parameter: leg.parameter, outcome }),
            Err(source) => {
                return Err(ExploreError::LegFailed {
                    parameter: leg.parameter,
                    completed: legs,
                    source,
                })
            }
        }
    }
    Ok(Exploration { legs })
}

/// Parses a curve from trajectory CSV text and resamples it onto a uniform
/// grid of period `dt` by linear interpolation (exact at matching sample
/// times).
///
/// The header must contain `t,x,y,psi,vx,vy,psidot`; the input columns
/// `delta,kappa_r,kappa_f` are optional and default to zero, and unknown
/// columns are ignored. The time column must increase strictly.
pub fn parse_trajectory_csv(text: &str, dt: f64) -> Result<Curve, ExploreError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ExploreError::BadInput { what: "grid period must be positive" });
    }
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or(ExploreError::MalformedFile { line: 1, what: "empty file" })?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| names.iter().position(|n| *n == name);
    let required = ["t", "x", "y", "psi", "vx", "vy", "psidot"];
    let mut idx = [0usize; 7];
    for (k, name) in required.iter().enumerate() {
        idx[k] = col(name).ok_or(ExploreError::MalformedFile {
            line: 1,
            what: "missing a required column",
        })?;
    }
    let input_idx = [col("delta"), col("kappa_r"), col("kappa_f")];

    let mut times: Vec<f64> = Vec::new();
    let mut rows: Vec<([f64; 6], [f64; 3])> = Vec::new();
    for (lineno, line) in lines {
        let line_display = lineno + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(ExploreError::MalformedFile {
                line: line_display,
                what: "wrong field count",
            });
        }
        let parse = |i: usize| -> Result<f64, ExploreError> {
            let v: f64 = fields[i].parse().map_err(|_| ExploreError::MalformedFile {
                line: line_display,
                what: "unparsable number",
            })?;
            if !v.is_finite() {
                return Err(ExploreError::MalformedFile {
                    line: line_display,
                    what: "non-finite number",
                });
            }
            Ok(v)
        };
        let t = parse(idx[0])?;
        if let Some(&prev) = times.last() {
            if !(t > prev) {
                return Err(ExploreError::NonMonotoneTime { line: line_display });
            }
        }
        let mut state = [0.0; 6];
        for (k, slot) in state.iter_mut().enumerate() {
            *slot = parse(idx[k + 1])?;
        }
        let mut input = [0.0; 3];
        for (k, slot) in input.iter_mut().enumerate() {
            if let Some(i) = input_idx[k] {
                *slot = parse(i)?;
            }
        }
        times.push(t);
        rows.push((state, input));
    }
    if times.len() < 2 {
        return Err(ExploreError::MalformedFile { line: 1, what: "need at least two samples" });
    }

    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let n = (libm::floor(span / dt + 1e-9) as usize) + 1;
    if n < 2 {
        return Err(ExploreError::MalformedFile {
            line: 1,
            what: "curve shorter than one grid step",
        });
    }
    let mut states = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    let mut cursor = 0usize;
    for j in 0..n {
        let tq = t0 + (j as f64) * dt;
        while cursor + 2 < times.len() && times[cursor + 1] < tq {
            cursor += 1;
        }
        let (ta, tb) = (times[cursor], times[cursor + 1]);
        let w = if tq <= ta {
            0.0
        } else if tq >= tb {
            1.0
        } else {
            (tq - ta) / (tb - ta)
        };
        let (sa, ua) = &rows[cursor];
        let (sb, ub) = &rows[cursor + 1];
        let mut state = [0.0; 6];
        let mut input = [0.0; 3];
        if w == 0.0 {
            state = *sa;
            input = *ua;
        } else if w == 1.0 {
            state = *sb;
            input = *ub;
        } else {
            for k in 0..6 {
                state[k] = sa[k] + (sb[k] - sa[k]) * w;
            }
            for k in 0..3 {
                input[k] = ua[k] + (ub[k] - ua[k]) * w;
            }
        }
        states.push(CarState {
            x: state[0],
            y: state[1],
            psi: state[2],
            vx: state[3],
            vy: state[4],
            psidot: state[5],
        });
        inputs.push(CarInput { delta: input[0], kappa_r: input[1], kappa_f: input[2] });
    }
    Ok(Curve::new(dt, states, inputs)?)
}

/// The built-in chicane: straight approach, a left arc, a curvature
/// reversal, a tighter right arc, and a straight exit, 500 m in total.
pub fn chicane() -> PathSpec {
    PathSpec::from_segments(
        Pose::ORIGIN,
        &[
            Segment::Straight { length: 90.0 },
            Segment::Ramp { length: 30.0, from: 0.0, to: 1.0 / 75.0 },
            Segment::Arc { length: 110.0, curvature: 1.0 / 75.0 },
            Segment::Ramp { length: 50.0, from: 1.0 / 75.0, to: -0.02 },
            Segment::Arc { length: 100.0, curvature: -0.02 },
            Segment::Ramp { length: 30.0, from: -0.02, to: 0.0 },
            Segment::Straight { length: 90.0 },
        ],
    )
    .expect("fixed geometry")
}

/// The target speed profile paired with [`chicane`]: fast on the straights,
/// slowing for each arc, with the tight right arc taken slowest. Braking
/// zones sit before the turn-in points and in the low-curvature reversal,
/// where longitudinal grip is free. The aggressiveness schedule scales the
/// profile's deviation from the mean.
pub fn chicane_speeds() -> SpeedProfile {
    SpeedProfile::new(alloc::vec![
        (0.0, 33.0),
        (55.0, 33.0),
        (90.0, 26.0),
        (235.0, 26.0),
        (265.0, 22.0),
        (390.0, 22.0),
        (460.0, 33.0),
        (500.0, 33.0),
    ])
    .expect("fixed profile")
}

/// The built-in closed course: three gentle left corners and one tight
/// final corner whose lateral demand at 30 m/s exceeds what the saturating
/// tires hold in steady state, forcing the linear-tire fallback there.
/// The last two straights are solved so the course closes on its start.
pub fn loop_course() -> PathSpec {
    let corner = |curvature: f64| -> [Segment; 3] {
        let quarter = core::f64::consts::FRAC_PI_2;
        let ramp = 10.0;
        let arc = (quarter - ramp * curvature) / curvature;
        [
            Segment::Ramp { length: ramp, from: 0.0, to: curvature },
            Segment::Arc { length: arc, curvature },
            Segment::Ramp { length: ramp, from: curvature, to: 0.0 },
        ]
    };
    let gentle = 0.012;
    let tight = 0.022;
    let build = |s3: f64, s4: f64| -> PathSpec {
        let mut segments = Vec::new();
        segments.push(Segment::Straight { length: 150.0 });
        segments.extend_from_slice(&corner(gentle));
        segments.push(Segment::Straight { length: 80.0 });
        segments.extend_from_slice(&corner(gentle));
        segments.push(Segment::Straight { length: s3 });
        segments.extend_from_slice(&corner(gentle));
        segments.push(Segment::Straight { length: s4 });
        segments.extend_from_slice(&corner(tight));
        PathSpec::from_segments(Pose::ORIGIN, &segments).expect("fixed geometry")
    };
    // Endpoint displacement is affine in the two unknown straight lengths,
    // whose directions at those points are exactly -x and -y.
    let probe = build(1.0, 1.0);
    let (ex, ey) = endpoint(&probe);
    build(ex + 1.0, ey + 1.0)
}

/// Terminal position of the path by fine quadrature of the unit tangent.
fn endpoint(spec: &PathSpec) -> (f64, f64) {
    let l = spec.length();
    let steps = (l / 0.05) as usize + 1;
    let h = l / steps as f64;
    let (mut x, mut y) = (spec.origin.x, spec.origin.y);
    for i in 0..steps {
        let s = i as f64 * h;
        let th0 = spec.heading(s);
        let th1 = spec.heading(s + 0.5 * h);
        let th2 = spec.heading(s + h);
        x += h / 6.0 * (libm::cos(th0) + 4.0 * libm::cos(th1) + libm::cos(th2));
        y += h / 6.0 * (libm::sin(th0) + 4.0 * libm::sin(th1) + libm::sin(th2));
    }
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::trajopt::{integrate, StopReason, DEFAULT_DT};
    use alloc::string::String;
    use alloc::vec;
    use core::fmt::Write as _;

    fn sports_model() -> Model {
        let preset = presets::sports();
        Model::new(preset.vehicle, preset.tires())
    }

    /// A short chicane for optimizer tests: same structure as the 500 m
    /// track at a fraction of the length.
    fn desk_chicane() -> (PathSpec, SpeedProfile) {
        let spec = PathSpec::from_segments(
            Pose::ORIGIN,
            &[
                Segment::Straight { length: 10.0 },
                Segment::Ramp { length: 8.0, from: 0.0, to: 0.035 },
                Segment::Arc { length: 14.0, curvature: 0.035 },
                Segment::Ramp { length: 10.0, from: 0.035, to: -0.045 },
                Segment::Arc { length: 12.0, curvature: -0.045 },
                Segment::Ramp { length: 6.0, from: -0.045, to: 0.0 },
                Segment::Straight { length: 4.0 },
            ],
        )
        .unwrap();
        let speeds = SpeedProfile::new(vec![
            (0.0, 16.0),
            (10.0, 16.0),
            (18.0, 13.0),
            (40.0, 13.0),
            (52.0, 12.0),
            (58.0, 16.0),
            (64.0, 16.0),
        ])
        .unwrap();
        (spec, speeds)
    }

    #[test]
    fn straight_path_is_a_straight_line() {
        let spec =
            PathSpec::from_segments(Pose::ORIGIN, &[Segment::Straight { length: 50.0 }]).unwrap();
        let profile = SpeedProfile::constant(20.0).unwrap();
        let samples = path_to_pose(&spec, &profile, 0.01).unwrap();
        let last = samples.last().unwrap();
        assert!((last.s - 50.0).abs() < 1e-9);
        assert!((last.x - last.s).abs() < 1e-10, "x {} s {}", last.x, last.s);
        for sample in &samples {
            assert_eq!(sample.heading, 0.0);
            assert_eq!(sample.curvature, 0.0);
            assert!(sample.y.abs() < 1e-12);
            assert_eq!(sample.speed, 20.0);
        }
    }

    #[test]
    fn constant_curvature_traces_a_circle() {
        let radius = 40.0;
        let length = 60.0;
        let spec = PathSpec::from_segments(
            Pose { x: 3.0, y: -2.0, heading: 0.4 },
            &[Segment::Arc { length, curvature: 1.0 / radius }],
        )
        .unwrap();
        let profile = SpeedProfile::constant(15.0).unwrap();
        let samples = path_to_pose(&spec, &profile, 0.01).unwrap();
        let last = samples.last().unwrap();
        // Chord of a circular arc subtending s / R.
        let chord = 2.0 * radius * libm::sin(last.s / (2.0 * radius));
        let measured = libm::hypot(last.x - 3.0, last.y + 2.0);
        assert!(
            (measured - chord).abs() < 1e-8,
            "chord {chord} measured {measured}"
        );
        assert!((last.heading - (0.4 + last.s / radius)).abs() < 1e-12);
    }

    #[test]
    fn chicane_samples_match_fine_quadrature() {
        let spec = chicane();
        let profile = chicane_speeds();
        let samples = path_to_pose(&spec, &profile, 0.01).unwrap();
        assert!(samples.len() > 1000);

        // Oracle: re-integrate position to selected arclengths with Simpson
        // steps ten times finer than the sampler's.
        for probe in samples.iter().step_by(400) {
            let steps = 10 * (probe.s / (profile.value(0.0) * 0.01)).ceil() as usize + 10;
            let h = probe.s / steps as f64;
            let (mut x, mut y) = (0.0, 0.0);
            for i in 0..steps {
                let s = i as f64 * h;
                x += h / 6.0
                    * (libm::cos(spec.heading(s))
                        + 4.0 * libm::cos(spec.heading(s + 0.5 * h))
                        + libm::cos(spec.heading(s + h)));
                y += h / 6.0
                    * (libm::sin(spec.heading(s))
                        + 4.0 * libm::sin(spec.heading(s + 0.5 * h))
                        + libm::sin(spec.heading(s + h)));
            }
            // The sampler's per-step quadrature error accumulates roughly
            // linearly along the 500 m track; sub-micrometer agreement is
            // what the step size delivers.
            assert!(
                libm::hypot(probe.x - x, probe.y - y) < 5e-7,
                "s {} sampled ({}, {}) oracle ({}, {})",
                probe.s,
                probe.x,
                probe.y,
                x,
                y
            );
        }
    }

    #[test]
    fn chicane_is_five_hundred_meters_with_opposing_arcs() {
        let spec = chicane();
        assert!((spec.length() - 500.0).abs() < 1e-9);
        assert_eq!(spec.curvature(0.0), 0.0);
        assert_eq!(spec.curvature(500.0), 0.0);
        let samples: Vec<f64> = (0..=1000).map(|i| spec.curvature(i as f64 * 0.5)).collect();
        let max = samples.iter().cloned().fold(f64::MIN, f64::max);
        let min = samples.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max > 0.01, "left arc missing, max curvature {max}");
        assert!(min < -0.015, "right arc missing, min curvature {min}");
        // Heading stays continuous: successive half-meter samples can move
        // by at most the curvature bound times the step.
        for i in 1..=1000 {
            let dh = spec.heading(i as f64 * 0.5) - spec.heading((i - 1) as f64 * 0.5);
            assert!(dh.abs() <= 0.021 * 0.5 + 1e-12);
        }
    }

    #[test]
    fn straight_quasi_static_has_zero_inputs() {
        let preset = presets::sports();
        let spec =
            PathSpec::from_segments(Pose::ORIGIN, &[Segment::Straight { length: 40.0 }]).unwrap();
        let profile = SpeedProfile::constant(22.0).unwrap();
        let curve = quasi_static(
            &spec,
            &profile,
            &preset.vehicle,
            &preset.tires(),
            TireMode::Pacejka,
            DEFAULT_DT,
        )
        .unwrap();
        for (state, input) in curve.states().iter().zip(curve.inputs()) {
            assert!(input.delta.abs() < 1e-10);
            assert!(input.kappa_r.abs() < 1e-10);
            assert_eq!(input.kappa_f, 0.0);
            assert!(state.psi.abs() < 1e-10);
            assert!(state.vy.abs() < 1e-9);
            assert!((state.vx - 22.0).abs() < 1e-9);
        }
    }

    #[test]
    fn arc_quasi_static_matches_the_manifold_point() {
        let preset = presets::sports();
        let tires = preset.tires();
        let sigma = 0.008;
        let v = 25.0;
        let spec = PathSpec::new(
            Pose::ORIGIN,
            vec![(0.0, sigma), (60.0, sigma)],
        )
        .unwrap();
        let profile = SpeedProfile::constant(v).unwrap();
        let curve = quasi_static(
            &spec,
            &profile,
            &preset.vehicle,
            &tires,
            TireMode::Pacejka,
            DEFAULT_DT,
        )
        .unwrap();
        let reference = manifold::solve_point(
            v,
            v * v * sigma,
            (0.0, 0.0, 0.0),
            &preset.vehicle,
            &tires,
        )
        .unwrap();
        let ru = &reference.unknowns;
        for (k, (state, input)) in curve.states().iter().zip(curve.inputs()).enumerate() {
            assert!((input.delta - ru.delta).abs() < 1e-9, "sample {k}");
            assert!((input.kappa_r - ru.kappa_r).abs() < 1e-9, "sample {k}");
            let beta = libm::atan2(state.vy, state.vx);
            assert!((beta - ru.beta).abs() < 1e-9, "sample {k}");
            assert!((state.psidot - v * sigma).abs() < 1e-12, "sample {k}");
            // Velocity tangent to the path: heading plus sideslip equals
            // the path tangent at this sample's arclength.
            let s = k as f64 * DEFAULT_DT * v;
            assert!((state.psi + beta - spec.heading(s)).abs() < 1e-6, "sample {k}");
        }
    }

    #[test]
    fn quasi_static_samples_satisfy_the_equilibrium_residual() {
        let preset = presets::sports();
        let tires = preset.tires();
        let (spec, speeds) = desk_chicane();
        let curve = quasi_static(
            &spec,
            &speeds,
            &preset.vehicle,
            &tires,
            TireMode::Pacejka,
            DEFAULT_DT,
        )
        .unwrap();
        for (state, input) in curve.states().iter().zip(curve.inputs()) {
            let v = libm::hypot(state.vx, state.vy);
            let unknowns = crate::manifold::EquilibriumUnknowns {
                a_lat: v * state.psidot,
                beta: libm::atan2(state.vy, state.vx),
                delta: input.delta,
                kappa_r: input.kappa_r,
            };
            let r = manifold::residual(&unknowns, v, &preset.vehicle, &tires).unwrap();
            assert!(r.norm() <= 1e-7, "residual {}", r.norm());
        }
    }

    #[test]
    fn quasi_static_warm_start_moves_smoothly() {
        let preset = presets::sports();
        let (spec, speeds) = desk_chicane();
        let curve = quasi_static(
            &spec,
            &speeds,
            &preset.vehicle,
            &preset.tires(),
            TireMode::Pacejka,
            DEFAULT_DT,
        )
        .unwrap();
        let states = curve.states();
        let inputs = curve.inputs();
        for k in 1..curve.len() {
            let (sa, sb) = (&states[k - 1], &states[k]);
            let (ua, ub) = (&inputs[k - 1], &inputs[k]);
            let va = libm::hypot(sa.vx, sa.vy);
            let vb = libm::hypot(sb.vx, sb.vy);
            let da = (vb * sb.psidot - va * sa.psidot).abs() + (vb - va).abs();
            let beta_a = libm::atan2(sa.vy, sa.vx);
            let beta_b = libm::atan2(sb.vy, sb.vx);
            let step = (beta_b - beta_a).abs().max((ub.delta - ua.delta).abs());
            let step = step.max((ub.kappa_r - ua.kappa_r).abs());
            assert!(
                step <= 0.05 * da + 1e-9,
                "sample {k}: unknowns moved {step} for a demand change of {da}"
            );
        }
    }

    #[test]
    fn infeasible_arc_reports_first_failing_time_then_linear_succeeds() {
        let preset = presets::sports();
        let tires = preset.tires();
        let v = 30.0;
        // Demand ramps to v^2 * 0.022 = 19.8 m/s^2, past the saturating
        // tires' steady-state ceiling near 16.
        let spec = PathSpec::from_segments(
            Pose::ORIGIN,
            &[
                Segment::Straight { length: 30.0 },
                Segment::Ramp { length: 10.0, from: 0.0, to: 0.022 },
                Segment::Arc { length: 60.0, curvature: 0.022 },
            ],
        )
        .unwrap();
        let profile = SpeedProfile::constant(v).unwrap();
        let err = quasi_static(
            &spec,
            &profile,
            &preset.vehicle,
            &tires,
            TireMode::Pacejka,
            DEFAULT_DT,
        )
        .unwrap_err();
        match err {
            ExploreError::InfeasibleSample { time, .. } => {
                // The straight is feasible; failure lands inside the ramp,
                // where the demand crosses the ceiling, on a grid time.
                assert!(time > 30.0 / v && time < 45.0 / v, "failing time {time}");
                let steps = time / DEFAULT_DT;
                assert!((steps - libm::round(steps)).abs() < 1e-9);
            }
            other => panic!("unexpected error {other:?}"),
        }
        let linear = quasi_static(
            &spec,
            &profile,
            &preset.vehicle,
            &tires,
            TireMode::Linear,
            DEFAULT_DT,
        )
        .unwrap();
        assert!(linear.len() > 2);
        let worst = linear
            .inputs()
            .iter()
            .map(|u| u.delta.abs())
            .fold(0.0, f64::max);
        assert!(worst.is_finite() && worst > 0.0);
    }

    #[test]
    fn aggressiveness_scaling_preserves_the_mean() {
        let profile = chicane_speeds();
        let mean = profile.mean();
        for percent in AGGRESSIVENESS_SCHEDULE {
            let scaled = profile.with_aggressiveness(percent).unwrap();
            assert!((scaled.mean() - mean).abs() < 1e-9);
        }
        let flat = profile.with_aggressiveness(1e-12);
        assert!(flat.is_ok(), "tiny aggressiveness still a valid profile");
        let full = profile.with_aggressiveness(100.0).unwrap();
        for (a, b) in full.breakpoints.iter().zip(profile.breakpoints.iter()) {
            assert!((a.1 - b.1).abs() < 1e-12);
        }
        let half = profile.with_aggressiveness(50.0).unwrap();
        for (scaled, original) in half.breakpoints.iter().zip(profile.breakpoints.iter()) {
            let expected = mean + 0.5 * (original.1 - mean);
            assert!((scaled.1 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn morph_family_runs_the_builtin_schedules() {
        let base = integrate(
            &CarState { x: 0.0, y: 0.0, psi: 0.0, vx: 20.0, vy: 0.0, psidot: 0.0 },
            &vec![CarInput { delta: 0.0, kappa_r: 0.0, kappa_f: 0.0 }; 30],
            DEFAULT_DT,
            &sports_model(),
        )
        .unwrap();

        let family = morph_family(&SPEED_SCHEDULE, |_| Ok(base.curve().clone())).unwrap();
        assert_eq!(family.legs.len(), 6);
        assert_eq!(family.legs[0].parameter, 25.0);
        assert_eq!(family.legs[5].parameter, 30.0);
        for pair in family.legs.windows(2) {
            assert!(pair[1].parameter > pair[0].parameter);
        }

        let family = morph_family(&AGGRESSIVENESS_SCHEDULE, |_| Ok(base.curve().clone())).unwrap();
        assert_eq!(family.legs.len(), 6);
        assert_eq!(family.legs[0].parameter, 50.0);
        assert_eq!(family.legs[5].parameter, 100.0);

        // A single-element schedule is the family of just the target.
        let single = morph_family(&[100.0], |_| Ok(base.curve().clone())).unwrap();
        assert_eq!(single.legs.len(), 1);
        assert_eq!(single.legs[0].curve, *base.curve());
    }

    #[test]
    fn morph_family_surfaces_builder_failures() {
        let err = morph_family(&AGGRESSIVENESS_SCHEDULE, |p| {
            if p >= 70.0 {
                Err(ExploreError::BadInput { what: "synthetic failure" })
            } else {
                let states = vec![CarState::default(); 2];
                let inputs = vec![CarInput::default(); 2];
                Ok(Curve::new(DEFAULT_DT, states, inputs).unwrap())
            }
        })
        .unwrap_err();
        match err {
            ExploreError::BuilderFailed { parameter, .. } => assert_eq!(parameter, 70.0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn explore_returns_a_family_of_one_trajectory_unchanged() {
        let model = sports_model();
        let inputs: Vec<CarInput> = (0..80)
            .map(|k| CarInput {
                delta: 0.01 * libm::sin(k as f64 * DEFAULT_DT),
                kappa_r: 0.002,
                kappa_f: 0.0,
            })
            .collect();
        let traj = integrate(
            &CarState { x: 0.0, y: 0.0, psi: 0.0, vx: 25.0, vy: 0.0, psidot: 0.0 },
            &inputs,
            DEFAULT_DT,
            &model,
        )
        .unwrap();
        let family = DesiredCurveFamily {
            legs: vec![TaggedCurve { parameter: 100.0, curve: traj.curve().clone() }],
        };
        let out = explore(&family, &Weights::default(), &model, &StopCriteria::default()).unwrap();
        assert_eq!(out.legs.len(), 1);
        assert_eq!(out.legs[0].outcome.reason, StopReason::GradientTolerance);
        assert!(out.legs[0].outcome.cost <= 1e-12);
        assert_eq!(out.final_trajectory().curve(), traj.curve());
    }

    #[test]
    fn explore_improves_on_bare_projection_along_the_desk_chicane() {
        let preset = presets::sports();
        let model = sports_model();
        let w = Weights::default();
        let (spec, speeds) = desk_chicane();
        let family = morph_family(&[60.0, 100.0], |percent| {
            quasi_static(
                &spec,
                &speeds.with_aggressiveness(percent)?,
                &preset.vehicle,
                &preset.tires(),
                TireMode::Pacejka,
                DEFAULT_DT,
            )
        })
        .unwrap();
        let stop = StopCriteria { grad_tol: 1e-6, max_iter: 25 };
        let out = explore(&family, &w, &model, &stop).unwrap();
        assert_eq!(out.legs.len(), 2);

        // Each leg's iteration is monotone.
        for leg in &out.legs {
            for pair in leg.outcome.iterates.windows(2) {
                assert!(pair[1].cost <= pair[0].cost + 1e-12);
            }
        }

        // The optimizer must beat the bare projection of the target curve
        // in RMS position error against the desired path.
        let target = &family.legs[1].curve;
        let gains = design_gain_about(target, &w, &model).unwrap();
        let bare = project(target, &gains, &model).unwrap();
        let rms = |traj: &Trajectory| -> f64 {
            let mut acc = 0.0;
            for (a, b) in traj.curve().states().iter().zip(target.states()) {
                acc += (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y);
            }
            libm::sqrt(acc / traj.curve().len() as f64)
        };
        let optimal = rms(out.final_trajectory());
        let projected = rms(&bare);
        assert!(
            optimal < projected,
            "optimal RMS {optimal} not below projection RMS {projected}"
        );
    }

    #[test]
    fn explore_reports_the_failing_leg_and_preserves_finished_ones() {
        let preset = presets::sports();
        let model = Model::new(preset.vehicle, preset.linear_tires());

        // Leg 1 is benign. Leg 2 carries stored inputs far past the
        // load-transfer pitch-over bound, so its projection rollout fails
        // on the first step.
        let straight = integrate(
            &CarState { x: 0.0, y: 0.0, psi: 0.0, vx: 20.0, vy: 0.0, psidot: 0.0 },
            &vec![CarInput::default(); 40],
            DEFAULT_DT,
            &model,
        )
        .unwrap();
        let family = DesiredCurveFamily {
            legs: vec![TaggedCurve { parameter: 1.0, curve: straight.curve().clone() }],
        };
        let ok = explore(&family, &Weights::default(), &model, &StopCriteria::default()).unwrap();
        assert_eq!(ok.legs.len(), 1);

        let poisoned = Curve::new(
            DEFAULT_DT,
            straight.curve().states().to_vec(),
            vec![CarInput { delta: 0.0, kappa_r: 3.0, kappa_f: 0.0 }; 40],
        )
        .unwrap();
        let family = DesiredCurveFamily {
            legs: vec![TaggedCurve { parameter: 1.0, curve: poisoned }],
        };
        let err =
            explore(&family, &Weights::default(), &model, &StopCriteria::default()).unwrap_err();
        match err {
            ExploreError::LegFailed { parameter, completed, source } => {
                assert_eq!(parameter, 1.0);
                assert!(completed.is_empty());
                assert!(matches!(source, TrajoptError::Dynamics { .. }));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn external_curve_roundtrip_is_exact() {
        let model = sports_model();
        let inputs: Vec<CarInput> = (0..25)
            .map(|k| CarInput {
                delta: 0.015 * libm::sin(0.7 * k as f64),
                kappa_r: 0.003,
                kappa_f: 0.0005,
            })
            .collect();
        let traj = integrate(
            &CarState { x: 1.0, y: -2.0, psi: 0.1, vx: 24.0, vy: 0.1, psidot: 0.05 },
            &inputs,
            DEFAULT_DT,
            &model,
        )
        .unwrap();
        let mut text = String::from("t,x,y,psi,vx,vy,psidot,delta,kappa_r,kappa_f\n");
        for (k, (s, u)) in traj.curve().states().iter().zip(traj.curve().inputs()).enumerate() {
            writeln!(
                text,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                k as f64 * DEFAULT_DT,
                s.x,
                s.y,
                s.psi,
                s.vx,
                s.vy,
                s.psidot,
                u.delta,
                u.kappa_r,
                u.kappa_f
            )
            .unwrap();
        }
        let parsed = parse_trajectory_csv(&text, DEFAULT_DT).unwrap();
        assert_eq!(parsed, *traj.curve());
    }

    #[test]
    fn external_curve_fills_missing_inputs_with_zeros() {
        let text = "t,x,y,psi,vx,vy,psidot\n0.0,0,0,0,20,0,0\n0.5,10,0,0,20,0,0\n";
        let curve = parse_trajectory_csv(text, 0.25).unwrap();
        assert_eq!(curve.len(), 3);
        for input in curve.inputs() {
            assert_eq!(input.delta, 0.0);
            assert_eq!(input.kappa_r, 0.0);
            assert_eq!(input.kappa_f, 0.0);
        }
        assert!((curve.states()[1].x - 5.0).abs() < 1e-12, "midpoint interpolated");
    }

    #[test]
    fn external_curve_rejects_schema_violations() {
        let missing = "t,x,y,psi,vx,vy\n0,0,0,0,20,0\n";
        assert!(matches!(
            parse_trajectory_csv(missing, 0.01),
            Err(ExploreError::MalformedFile { line: 1, .. })
        ));

        let backwards = "t,x,y,psi,vx,vy,psidot\n0,0,0,0,20,0,0\n0.2,1,0,0,20,0,0\n0.1,2,0,0,20,0,0\n";
        assert!(matches!(
            parse_trajectory_csv(backwards, 0.01),
            Err(ExploreError::NonMonotoneTime { line: 4 })
        ));

        let garbled = "t,x,y,psi,vx,vy,psidot\n0,0,0,0,twenty,0,0\n0.1,1,0,0,20,0,0\n";
        assert!(matches!(
            parse_trajectory_csv(garbled, 0.01),
            Err(ExploreError::MalformedFile { line: 2, .. })
        ));
    }

    #[test]
    fn perturbed_external_curve_projects_clean() {
        let model = sports_model();
        let traj = integrate(
            &CarState { x: 0.0, y: 0.0, psi: 0.0, vx: 22.0, vy: 0.0, psidot: 0.0 },
            &vec![CarInput { delta: 0.01, kappa_r: 0.002, kappa_f: 0.0 }; 30],
            DEFAULT_DT,
            &model,
        )
        .unwrap();
        let mut text = String::from("t,x,y,psi,vx,vy,psidot,delta,kappa_r,kappa_f\n");
        for (k, (s, u)) in traj.curve().states().iter().zip(traj.curve().inputs()).enumerate() {
            // A deliberate kink in the lateral position mid-curve.
            let y = if k == 15 { s.y + 0.02 } else { s.y };
            writeln!(
                text,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                k as f64 * DEFAULT_DT,
                s.x,
                y,
                s.psi,
                s.vx,
                s.vy,
                s.psidot,
                u.delta,
                u.kappa_r,
                u.kappa_f
            )
            .unwrap();
        }
        let loaded = parse_trajectory_csv(&text, DEFAULT_DT).unwrap();
        assert!(
            Trajectory::from_curve(loaded.clone(), &model).is_err(),
            "the kinked curve must not pass the trajectory check"
        );
        let gains = design_gain_about(&loaded, &Weights::default(), &model).unwrap();
        let projected = project(&loaded, &gains, &model).unwrap();
        // The projection is a trajectory again and the validated wrapper
        // accepts its curve verbatim.
        assert!(Trajectory::from_curve(projected.curve().clone(), &model).is_ok());
    }

    #[test]
    fn waypoints_recover_circle_curvature() {
        let radius = 30.0;
        let points: Vec<(f64, f64)> = (0..28)
            .map(|i| {
                let phi = i as f64 * 0.15;
                (radius * libm::sin(phi), radius * (1.0 - libm::cos(phi)))
            })
            .collect();
        let spec = PathSpec::from_waypoints(&points).unwrap();
        let l = spec.length();
        let arc = radius * 27.0 * 0.15;
        assert!((l - arc).abs() / arc < 0.01, "length {l} arc {arc}");
        // Away from the free ends the fitted curvature approaches 1/R.
        let mut s = 0.2 * l;
        while s < 0.8 * l {
            let k = spec.curvature(s);
            assert!(
                (k - 1.0 / radius).abs() < 0.02 / radius,
                "curvature {k} at s = {s}"
            );
            s += l / 40.0;
        }
        // The natural end condition straightens the first piece, so the
        // start tangent is the loosest part of the fit.
        assert!(spec.origin().heading.abs() < 0.1);
    }

    #[test]
    fn loop_course_closes_and_saturates_only_the_last_turn() {
        let preset = presets::sports();
        let spec = loop_course();
        let (ex, ey) = endpoint(&spec);
        assert!(
            libm::hypot(ex, ey) < 1e-6,
            "loop endpoint ({ex}, {ey}) is not the start"
        );
        let l = spec.length();
        assert!(
            (spec.heading(l) - 2.0 * core::f64::consts::PI).abs() < 1e-9,
            "full turn, heading {}",
            spec.heading(l)
        );

        // The tightest curvature lives in the final quarter of the lap.
        let mut tight_s = 0.0;
        let mut tight_k = 0.0;
        let mut s = 0.0;
        while s < l {
            let k = spec.curvature(s).abs();
            if k > tight_k {
                tight_k = k;
                tight_s = s;
            }
            s += 0.5;
        }
        assert!(tight_s > 0.75 * l, "tight turn at {tight_s} of {l}");
        assert!((tight_k - 0.022).abs() < 1e-12);

        // At 30 m/s the demand in that turn exceeds the saturating tires'
        // reach, and the linear fallback absorbs it.
        let profile = SpeedProfile::constant(30.0).unwrap();
        let err = quasi_static(
            &spec,
            &profile,
            &preset.vehicle,
            &preset.tires(),
            TireMode::Pacejka,
            DEFAULT_DT,
        )
        .unwrap_err();
        assert!(matches!(err, ExploreError::InfeasibleSample { .. }));
        let fallback = quasi_static(
            &spec,
            &profile,
            &preset.vehicle,
            &preset.tires(),
            TireMode::Linear,
            DEFAULT_DT,
        );
        assert!(fallback.is_ok());

        // At the schedule's first speed the saturating model still holds.
        let gentle = SpeedProfile::constant(SPEED_SCHEDULE[0]).unwrap();
        assert!(quasi_static(
            &spec,
            &gentle,
            &preset.vehicle,
            &preset.tires(),
            TireMode::Pacejka,
            DEFAULT_DT,
        )
        .is_ok());
    }

    #[test]
    fn stretched_copies_matching_grids_exactly() {
        let model = sports_model();
        let traj = integrate(
            &CarState { x: 0.0, y: 0.0, psi: 0.0, vx: 20.0, vy: 0.0, psidot: 0.0 },
            &vec![CarInput { delta: 0.005, kappa_r: 0.001, kappa_f: 0.0 }; 20],
            DEFAULT_DT,
            &model,
        )
        .unwrap();
        let same = stretched(traj.curve(), 20);
        assert_eq!(same, *traj.curve());

        let longer = stretched(traj.curve(), 33);
        assert_eq!(longer.len(), 33);
        assert_eq!(longer.states()[0], traj.curve().states()[0]);
        assert_eq!(longer.states()[32], traj.curve().states()[19]);
        let shorter = stretched(traj.curve(), 11);
        assert_eq!(shorter.len(), 11);
        assert_eq!(shorter.states()[10], traj.curve().states()[19]);
    }
}
