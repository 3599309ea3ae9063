//! Run configuration: one TOML file, flag and environment overrides, and
//! the canonical hash recorded in every output sidecar.
//!
//! Every section and field has a default, so the smallest valid config is
//! an empty file; `[simulate]` is the one section a command insists on
//! because an initial state cannot be guessed. Unknown keys are rejected
//! with the line and field named, which catches typos before a long run.

use std::path::{Path, PathBuf};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ltcar_core::explore::{PathSpec, Pose, Segment, SpeedProfile};
use ltcar_core::manifold::{ContinuationOptions, DEFAULT_TOLERANCE};
use ltcar_core::presets::{self, CarPreset};
use ltcar_core::tire::TirePair;
use ltcar_core::trajopt::{StopCriteria, Weights, DEFAULT_DT};
use ltcar_core::vehicle::{Chassis, Model, VehicleParams};

use crate::{CliError, RunArgs};

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub car: CarConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tire_sweep: Option<TireSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibria: Option<EquilibriaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore: Option<ExploreConfig>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CarConfig {
    /// Preset name: "sports" or "adams".
    #[serde(default = "default_preset")]
    pub preset: String,
    /// Drop load transfer: zero CoM height and cross inertia, loads frozen
    /// at the static split.
    #[serde(default)]
    pub bicycle: bool,
    /// Tire model: "pacejka" (magic formula) or "linear" (zero-slip
    /// tangents).
    #[serde(default)]
    pub tires: TireKind,
}

impl Default for CarConfig {
    fn default() -> Self {
        CarConfig { preset: default_preset(), bicycle: false, tires: TireKind::Pacejka }
    }
}

fn default_preset() -> String {
    "sports".to_string()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TireKind {
    #[default]
    Pacejka,
    Linear,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Trajectory grid period in seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Optimizer stop: descent-direction gradient tolerance.
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    /// Optimizer stop: iteration budget.
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Initial continuation arclength step for branch tracing.
    #[serde(default = "default_continuation_step")]
    pub continuation_step: f64,
    /// Corrector residual tolerance for equilibrium solves.
    #[serde(default = "default_residual_tolerance")]
    pub residual_tolerance: f64,
    /// Maximum points per traced branch.
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    /// Cost and regulator weight diagonals; anything omitted keeps the
    /// built-in default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsConfig>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: default_dt(),
            grad_tol: default_grad_tol(),
            max_iter: default_max_iter(),
            continuation_step: default_continuation_step(),
            residual_tolerance: default_residual_tolerance(),
            max_points: default_max_points(),
            weights: None,
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_grad_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    50
}

fn default_continuation_step() -> f64 {
    0.05
}

fn default_residual_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_max_points() -> usize {
    2000
}

/// Diagonals of the quadratic weights. Six entries for state matrices
/// (x, y, psi, vx, vy, psidot), three for input matrices (delta, kappa_r,
/// kappa_f).
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_k: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_k: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory, created if missing.
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Overwrite outputs left by a run with a different config.
    #[serde(default)]
    pub force: bool,
    /// Seed for test perturbations; nothing else draws randomness.
    #[serde(default)]
    pub seed: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out_dir(), force: false, seed: 0 }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridConfig {
    pub fn values(&self, what: &str) -> Result<Vec<f64>, CliError> {
        if self.n == 0 {
            return Err(CliError::config(format!("{what} grid is empty (n = 0)")));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(CliError::config(format!("{what} grid bounds are not ordered")));
        }
        if self.n == 1 {
            return Ok(vec![0.5 * (self.lo + self.hi)]);
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        Ok((0..self.n).map(|i| self.lo + step * i as f64).collect())
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TireSweepConfig {
    /// Longitudinal slip grid for the f_x table.
    #[serde(default = "default_kappa_grid")]
    pub kappa: GridConfig,
    /// Sideslip grid in radians for the f_y table.
    #[serde(default = "default_beta_grid")]
    pub beta: GridConfig,
    /// Normal loads in kilonewtons, one force column per load.
    #[serde(default = "default_loads_kn")]
    pub loads_kn: Vec<f64>,
    /// Add the zero-slip tangent forces as extra columns.
    #[serde(default)]
    pub linear_overlay: bool,
    /// Slip-vector magnitudes for the combined-slip envelope sweep.
    #[serde(default = "default_ellipse_magnitudes")]
    pub ellipse_magnitudes: Vec<f64>,
    /// Angular resolution of the envelope sweep.
    #[serde(default = "default_ellipse_points")]
    pub ellipse_points: usize,
}

impl Default for TireSweepConfig {
    fn default() -> Self {
        TireSweepConfig {
            kappa: default_kappa_grid(),
            beta: default_beta_grid(),
            loads_kn: default_loads_kn(),
            linear_overlay: false,
            ellipse_magnitudes: default_ellipse_magnitudes(),
            ellipse_points: default_ellipse_points(),
        }
    }
}

fn default_kappa_grid() -> GridConfig {
    GridConfig { lo: -1.0, hi: 1.0, n: 201 }
}

fn default_beta_grid() -> GridConfig {
    GridConfig { lo: -0.5, hi: 0.5, n: 201 }
}

fn default_loads_kn() -> Vec<f64> {
    vec![2.0, 4.0, 6.0]
}

fn default_ellipse_magnitudes() -> Vec<f64> {
    vec![0.05, 0.1, 0.2, 0.4]
}

fn default_ellipse_points() -> usize {
    181
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaConfig {
    /// Speeds to trace branches at, meters per second.
    #[serde(default = "default_speeds")]
    pub speeds: Vec<f64>,
    /// Optional rear-axle-distance sweep (meters). The wheelbase is held
    /// fixed by moving the center of mass, so a = wheelbase - b.
    #[serde(default)]
    pub rear_axle_sweep: Vec<f64>,
    /// Upper edge of the lateral-acceleration window for the understeer
    /// gradient samples in the summary.
    #[serde(default = "default_k_us_window")]
    pub k_us_window: f64,
}

impl Default for EquilibriaConfig {
    fn default() -> Self {
        EquilibriaConfig {
            speeds: default_speeds(),
            rear_axle_sweep: Vec::new(),
            k_us_window: default_k_us_window(),
        }
    }
}

fn default_speeds() -> Vec<f64> {
    vec![20.0, 30.0, 40.0]
}

fn default_k_us_window() -> f64 {
    3.0
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Either a cornering equilibrium `{ v, a_lat }` or an explicit state
    /// `{ x, y, psi, vx, vy, psidot }`.
    pub initial: InitialConfig,
    /// "hold" (equilibrium inputs held), "zero", `{ file = "..." }` for a
    /// scripted CSV, or `{ ramp_kappa_r = rate }` for a braking ramp.
    pub inputs: InputsConfig,
    /// Length of the run in seconds.
    pub duration: f64,
    /// Half-width of a uniform perturbation added to every state component
    /// before integrating; drawn from the config seed.
    #[serde(default)]
    pub perturb: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum InitialConfig {
    Equilibrium(EquilibriumInit),
    State(StateInit),
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumInit {
    pub v: f64,
    pub a_lat: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StateInit {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub psidot: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum InputsConfig {
    Named(String),
    File(InputFile),
    Ramp(RampInput),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InputFile {
    pub file: PathBuf,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RampInput {
    /// Rear slip rate in 1/s; kappa_r(t) = -rate * t brakes harder and
    /// harder until the model rejects the loads.
    pub ramp_kappa_r: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreConfig {
    /// "chicane", "loop", or `{ file = "track.txt" }` with one segment per
    /// line: `straight L`, `arc L CURVATURE`, `ramp L FROM TO`.
    #[serde(default = "default_track")]
    pub track: TrackConfig,
    /// "chicane" (the matching built-in profile), a constant speed, or
    /// explicit `[[s, v], ...]` knots.
    #[serde(default = "default_speeds_cfg")]
    pub speeds: SpeedsConfig,
    /// "aggressiveness", "speed", or `{ kind = "...", values = [...] }`.
    /// The last value is the actual target; earlier ones are easier legs.
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleConfig,
    /// Retry an infeasible leg design with linearized tires.
    #[serde(default = "default_true")]
    pub tire_fallback: bool,
    /// Also optimize a load-transfer-free car and add it to the comparison.
    #[serde(default)]
    pub compare_bicycle: bool,
    /// Optimize an externally supplied trajectory CSV instead of designing
    /// a family; implies a single leg.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_curve: Option<PathBuf>,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            track: default_track(),
            speeds: default_speeds_cfg(),
            schedule: default_schedule(),
            tire_fallback: true,
            compare_bicycle: false,
            external_curve: None,
        }
    }
}

fn default_track() -> TrackConfig {
    TrackConfig::Named("chicane".to_string())
}

fn default_speeds_cfg() -> SpeedsConfig {
    SpeedsConfig::Named("chicane".to_string())
}

fn default_schedule() -> ScheduleConfig {
    ScheduleConfig::Named("aggressiveness".to_string())
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum TrackConfig {
    Named(String),
    File(TrackFile),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrackFile {
    pub file: PathBuf,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum SpeedsConfig {
    Named(String),
    Constant(f64),
    Knots(Vec<[f64; 2]>),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ScheduleConfig {
    Named(String),
    Custom(CustomSchedule),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSchedule {
    /// "aggressiveness" (percent of speed-profile deviation) or "speed"
    /// (constant meters per second per leg).
    pub kind: String,
    pub values: Vec<f64>,
}

/// Everything a command needs, resolved once: the post-override config,
/// the car it describes, solver settings, and the config hash.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: Config,
    pub preset: CarPreset,
    /// Chassis parameters after the bicycle reduction, if requested.
    pub params: VehicleParams,
    pub tires: TirePair,
    pub model: Model,
    pub stop: StopCriteria,
    pub continuation: ContinuationOptions,
    pub out_dir: PathBuf,
    pub force: bool,
    pub hash: String,
}

impl Resolved {
    pub fn dt(&self) -> f64 {
        self.config.solver.dt
    }

    pub fn seed(&self) -> u64 {
        self.config.output.seed
    }

    /// Cost and regulator weights. When optimizing an external curve whose
    /// config leaves `r` unset, the input deviation weight drops to
    /// 1e-3 * identity: the supplied inputs are a hint, not a target.
    pub fn weights(&self, external_curve: bool) -> Weights {
        let mut w = Weights::default();
        let wc = self.config.solver.weights.clone().unwrap_or_default();
        if let Some(d) = wc.q {
            w.q = SMatrix::<f64, 6, 6>::from_diagonal(&SVector::from(d));
        }
        match wc.r {
            Some(d) => w.r = SMatrix::<f64, 3, 3>::from_diagonal(&SVector::from(d)),
            None if external_curve => w.r = SMatrix::<f64, 3, 3>::identity() * 1e-3,
            None => {}
        }
        if let Some(d) = wc.p1 {
            w.p1 = SMatrix::<f64, 6, 6>::from_diagonal(&SVector::from(d));
        }
        if let Some(d) = wc.q_k {
            w.q_k = SMatrix::<f64, 6, 6>::from_diagonal(&SVector::from(d));
        }
        if let Some(d) = wc.r_k {
            w.r_k = SMatrix::<f64, 3, 3>::from_diagonal(&SVector::from(d));
        }
        w
    }

    /// The same car without load transfer: CoM dropped to the ground,
    /// cross inertia zeroed, loads frozen at the static split.
    pub fn bicycle_model(&self) -> (VehicleParams, Model) {
        let params = VehicleParams { h: 0.0, i_xz: 0.0, ..self.params };
        let model = Model::new(params, self.tires).with_chassis(Chassis::StaticLoads);
        (params, model)
    }
}

/// Reads, parses, and resolves the config named by the command line.
pub fn load(args: &RunArgs) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", args.config.display())))?;
    let mut config: Config = toml::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", args.config.display())))?;

    // Precedence for the output directory: --out flag, then the
    // environment, then the config file.
    if let Some(dir) = &args.out {
        config.output.dir = dir.clone();
    } else if let Ok(dir) = std::env::var("LTCAR_OUTPUT_DIR") {
        if !dir.is_empty() {
            config.output.dir = PathBuf::from(dir);
        }
    }
    if args.force {
        config.output.force = true;
    }

    validate(&config)?;

    let preset = presets::by_name(&config.car.preset)
        .ok_or_else(|| CliError::config(format!("unknown car preset '{}'", config.car.preset)))?;
    let mut params = preset.vehicle;
    if config.car.bicycle {
        params.h = 0.0;
        params.i_xz = 0.0;
    }
    let tires = match config.car.tires {
        TireKind::Pacejka => preset.tires(),
        TireKind::Linear => preset.linear_tires(),
    };
    let mut model = Model::new(params, tires);
    if config.car.bicycle {
        model = model.with_chassis(Chassis::StaticLoads);
    }

    let s = &config.solver;
    let stop = StopCriteria { grad_tol: s.grad_tol, max_iter: s.max_iter };
    let continuation = ContinuationOptions {
        initial_step: s.continuation_step,
        tolerance: s.residual_tolerance,
        max_points: s.max_points,
        ..ContinuationOptions::default()
    };

    let hash = config_hash(&config);
    let out_dir = config.output.dir.clone();
    let force = config.output.force;
    Ok(Resolved { config, preset, params, tires, model, stop, continuation, out_dir, force, hash })
}

fn validate(config: &Config) -> Result<(), CliError> {
    let s = &config.solver;
    if !(s.dt.is_finite() && s.dt > 0.0) {
        return Err(CliError::config("solver.dt must be positive"));
    }
    if !(s.grad_tol.is_finite() && s.grad_tol > 0.0) {
        return Err(CliError::config("solver.grad_tol must be positive"));
    }
    if s.max_iter == 0 {
        return Err(CliError::config("solver.max_iter must be at least 1"));
    }
    if !(s.continuation_step.is_finite() && s.continuation_step > 0.0) {
        return Err(CliError::config("solver.continuation_step must be positive"));
    }
    if !(s.residual_tolerance.is_finite() && s.residual_tolerance > 0.0) {
        return Err(CliError::config("solver.residual_tolerance must be positive"));
    }
    if s.max_points < 2 {
        return Err(CliError::config("solver.max_points must be at least 2"));
    }
    if let Some(w) = &s.weights {
        for (name, diag) in [("q", w.q.as_ref().map(|d| &d[..])), ("p1", w.p1.as_ref().map(|d| &d[..])), ("q_k", w.q_k.as_ref().map(|d| &d[..]))] {
            if let Some(d) = diag {
                if d.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(CliError::config(format!("solver.weights.{name} entries must be finite and nonnegative")));
                }
            }
        }
        for (name, diag) in [("r", &w.r), ("r_k", &w.r_k)] {
            if let Some(d) = diag {
                if d.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(CliError::config(format!("solver.weights.{name} entries must be finite and positive")));
                }
            }
        }
    }
    if let Some(sim) = &config.simulate {
        if !(sim.duration.is_finite() && sim.duration > 0.0) {
            return Err(CliError::config("simulate.duration must be positive"));
        }
        if !(sim.perturb.is_finite() && sim.perturb >= 0.0) {
            return Err(CliError::config("simulate.perturb must be nonnegative"));
        }
    }
    Ok(())
}

/// SHA-256 of the resolved config's canonical JSON, with run-mode fields
/// (output directory, force) blanked so the same parameters hash the same
/// no matter where the files land.
pub fn config_hash(config: &Config) -> String {
    let mut content = config.clone();
    content.output.dir = PathBuf::new();
    content.output.force = false;
    let json = serde_json::to_string(&content).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Parses a plain-text track file: one segment per line, `#` comments.
pub fn parse_track_file(text: &str, name: &Path) -> Result<PathSpec, CliError> {
    let mut segments = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |what: &str| {
            CliError::config(format!("{}: line {}: {what}", name.display(), idx + 1))
        };
        let mut parts = line.split_whitespace();
        let kind = parts.next().expect("nonempty line has a first token");
        let mut next_num = |what: &'static str| -> Result<f64, CliError> {
            parts
                .next()
                .ok_or_else(|| at(&format!("missing {what}")))?
                .parse::<f64>()
                .map_err(|_| at(&format!("{what} is not a number")))
        };
        let segment = match kind {
            "straight" => Segment::Straight { length: next_num("length")? },
            "arc" => Segment::Arc { length: next_num("length")?, curvature: next_num("curvature")? },
            "ramp" => Segment::Ramp {
                length: next_num("length")?,
                from: next_num("start curvature")?,
                to: next_num("end curvature")?,
            },
            other => return Err(at(&format!("unknown segment kind '{other}'"))),
        };
        if parts.next().is_some() {
            return Err(at("trailing fields"));
        }
        segments.push(segment);
    }
    if segments.is_empty() {
        return Err(CliError::config(format!("{}: no segments", name.display())));
    }
    PathSpec::from_segments(Pose::ORIGIN, &segments)
        .map_err(|e| CliError::config(format!("{}: {e}", name.display())))
}

/// Resolves the track block to a path spec.
pub fn resolve_track(track: &TrackConfig) -> Result<PathSpec, CliError> {
    match track {
        TrackConfig::Named(name) => match name.as_str() {
            "chicane" => Ok(ltcar_core::explore::chicane()),
            "loop" => Ok(ltcar_core::explore::loop_course()),
            other => Err(CliError::config(format!(
                "unknown track '{other}' (expected \"chicane\", \"loop\", or {{ file = ... }})"
            ))),
        },
        TrackConfig::File(f) => {
            let text = std::fs::read_to_string(&f.file)
                .map_err(|e| CliError::io(format!("cannot read {}: {e}", f.file.display())))?;
            parse_track_file(&text, &f.file)
        }
    }
}

/// Resolves the speeds block to a profile.
pub fn resolve_speeds(speeds: &SpeedsConfig) -> Result<SpeedProfile, CliError> {
    match speeds {
        SpeedsConfig::Named(name) => match name.as_str() {
            "chicane" => Ok(ltcar_core::explore::chicane_speeds()),
            other => Err(CliError::config(format!(
                "unknown speed profile '{other}' (expected \"chicane\", a number, or [[s, v], ...])"
            ))),
        },
        SpeedsConfig::Constant(v) => {
            SpeedProfile::constant(*v).map_err(|e| CliError::config(format!("speeds: {e}")))
        }
        SpeedsConfig::Knots(knots) => {
            let pairs = knots.iter().map(|[s, v]| (*s, *v)).collect();
            SpeedProfile::new(pairs).map_err(|e| CliError::config(format!("speeds: {e}")))
        }
    }
}
