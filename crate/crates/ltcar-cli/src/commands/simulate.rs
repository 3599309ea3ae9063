//! `simulate`: integrates the car from an initial state under scripted
//! inputs and writes the trajectory together with the normal loads and
//! contact slips at every sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ltcar_core::manifold::solve_point;
use ltcar_core::trajopt::integrate;
use ltcar_core::vehicle::{contact_slips, CarInput, CarState};

use crate::config::{InitialConfig, InputsConfig, Resolved};
use crate::output::{push_row, Sink};
use crate::CliError;

pub fn run(res: &Resolved) -> Result<(), CliError> {
    let cfg = res
        .config
        .simulate
        .clone()
        .ok_or_else(|| CliError::config("missing [simulate] section"))?;
    let dt = res.dt();
    let n = (cfg.duration / dt + 1e-9).floor() as usize + 1;
    if n < 2 {
        return Err(CliError::config("simulate.duration spans less than one grid step"));
    }

    let (mut state, eq_input) = initial(res, &cfg.initial)?;
    if cfg.perturb > 0.0 {
        // The one sanctioned use of randomness: a reproducible nudge off
        // the exact initial condition, drawn from the config seed.
        let mut rng = ChaCha8Rng::seed_from_u64(res.seed());
        let mut v = state.to_vector();
        for i in 0..6 {
            v[i] += rng.random_range(-cfg.perturb..=cfg.perturb);
        }
        state = CarState::from_vector(&v);
    }

    let inputs = input_schedule(&cfg.inputs, eq_input, n, dt)?;
    let traj = integrate(&state, &inputs, dt, &res.model)
        .map_err(|e| CliError::numeric(format!("integration aborted: {e}")))?;

    let mut out = String::from(
        "t,x,y,psi,vx,vy,psidot,delta,kappa_r,kappa_f,ffz,frz,beta_rear,beta_front\n",
    );
    for k in 0..traj.len() {
        let s = &traj.states()[k];
        let u = &traj.inputs()[k];
        let (_, loads) = res.model.derivative(s, u).map_err(CliError::numeric)?;
        let (rear, front) = contact_slips(s, u, &res.params).map_err(CliError::numeric)?;
        push_row(
            &mut out,
            &[
                traj.time(k),
                s.x,
                s.y,
                s.psi,
                s.vx,
                s.vy,
                s.psidot,
                u.delta,
                u.kappa_r,
                u.kappa_f,
                loads.ffz,
                loads.frz,
                rear.beta,
                front.beta,
            ],
        );
    }

    let weights = res.weights(false);
    let sink = Sink::new(res, "simulate", &weights)?;
    sink.write(
        "simulate.csv",
        &out,
        json!({
            "rows": traj.len(),
            "duration": cfg.duration,
            "perturb": cfg.perturb,
            "initial": initial_kind(&cfg.initial),
            "inputs": inputs_kind(&cfg.inputs),
        }),
    )?;
    Ok(())
}

fn initial_kind(init: &InitialConfig) -> &'static str {
    match init {
        InitialConfig::Equilibrium(_) => "equilibrium",
        InitialConfig::State(_) => "state",
    }
}

fn inputs_kind(inputs: &InputsConfig) -> String {
    match inputs {
        InputsConfig::Named(name) => name.clone(),
        InputsConfig::File(f) => f.file.display().to_string(),
        InputsConfig::Ramp(_) => "ramp_kappa_r".to_string(),
    }
}

/// Resolves the initial state; for a cornering equilibrium also returns
/// the inputs that hold it.
fn initial(res: &Resolved, init: &InitialConfig) -> Result<(CarState, Option<CarInput>), CliError> {
    match init {
        InitialConfig::Equilibrium(eq) => {
            let point = solve_point(eq.v, eq.a_lat, (0.0, 0.0, 0.0), &res.params, &res.tires)
                .map_err(|e| {
                    CliError::numeric(format!(
                        "no equilibrium at v = {}, a_lat = {}: {e}",
                        eq.v, eq.a_lat
                    ))
                })?;
            Ok((point.car_state(), Some(point.car_input())))
        }
        InitialConfig::State(s) => {
            let state =
                CarState { x: s.x, y: s.y, psi: s.psi, vx: s.vx, vy: s.vy, psidot: s.psidot };
            Ok((state, None))
        }
    }
}

/// Builds the per-sample input sequence on the integration grid.
fn input_schedule(
    inputs: &InputsConfig,
    eq_input: Option<CarInput>,
    n: usize,
    dt: f64,
) -> Result<Vec<CarInput>, CliError> {
    match inputs {
        InputsConfig::Named(name) => match name.as_str() {
            "zero" => Ok(vec![CarInput::default(); n]),
            "hold" => {
                let u = eq_input.ok_or_else(|| {
                    CliError::config("inputs = \"hold\" needs an equilibrium initial state")
                })?;
                Ok(vec![u; n])
            }
            other => Err(CliError::config(format!(
                "unknown inputs '{other}' (expected \"hold\", \"zero\", {{ file = ... }}, or {{ ramp_kappa_r = ... }})"
            ))),
        },
        InputsConfig::Ramp(r) => {
            if !r.ramp_kappa_r.is_finite() || r.ramp_kappa_r == 0.0 {
                return Err(CliError::config("ramp_kappa_r must be a nonzero rate"));
            }
            // A braking (or driving) rear-slip ramp; the magnitude grows
            // until the load transfer lifts an axle and the model refuses.
            Ok((0..n)
                .map(|k| CarInput { kappa_r: -r.ramp_kappa_r * (k as f64) * dt, ..CarInput::default() })
                .collect())
        }
        InputsConfig::File(f) => {
            let text = std::fs::read_to_string(&f.file)
                .map_err(|e| CliError::io(format!("cannot read {}: {e}", f.file.display())))?;
            let rows = parse_input_file(&text, &f.file)?;
            // Zero-order hold: each grid time takes the last scripted row
            // at or before it; the first row covers earlier times too.
            let mut schedule = Vec::with_capacity(n);
            let mut at = 0usize;
            for k in 0..n {
                let t = k as f64 * dt;
                while at + 1 < rows.len() && rows[at + 1].0 <= t + 1e-12 {
                    at += 1;
                }
                schedule.push(rows[at].1);
            }
            Ok(schedule)
        }
    }
}

/// Parses a scripted input CSV with header `t,delta,kappa_r,kappa_f` and
/// strictly increasing times.
fn parse_input_file(text: &str, name: &std::path::Path) -> Result<Vec<(f64, CarInput)>, CliError> {
    let at = |line: usize, what: &str| {
        CliError::config(format!("{}: line {line}: {what}", name.display()))
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| at(1, "empty file"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut index = [0usize; 4];
    for (slot, field) in ["t", "delta", "kappa_r", "kappa_f"].iter().enumerate() {
        index[slot] = names
            .iter()
            .position(|n| n == field)
            .ok_or_else(|| at(1, &format!("missing column '{field}'")))?;
    }
    let mut rows: Vec<(f64, CarInput)> = Vec::new();
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |slot: usize| -> Result<f64, CliError> {
            let col = index[slot];
            fields
                .get(col)
                .ok_or_else(|| at(idx + 1, "short row"))?
                .parse::<f64>()
                .map_err(|_| at(idx + 1, &format!("column {} is not a number", col + 1)))
        };
        let t = get(0)?;
        let input = CarInput { delta: get(1)?, kappa_r: get(2)?, kappa_f: get(3)? };
        if let Some((prev, _)) = rows.last() {
            if t <= *prev {
                return Err(at(idx + 1, "time must increase strictly"));
            }
        }
        rows.push((t, input));
    }
    if rows.is_empty() {
        return Err(at(2, "no data rows"));
    }
    Ok(rows)
}
