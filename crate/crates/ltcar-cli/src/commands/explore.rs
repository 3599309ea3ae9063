//! `explore`: designs quasi-static desired curves along a track, morphs
//! them into a continuation family, optimizes leg by leg, and writes every
//! intermediate artifact. On a leg failure the finished legs' outputs are
//! kept and the run exits with the numeric-failure code.

use rayon::prelude::*;
use serde_json::{json, Value};

use ltcar_core::explore::{
    explore, parse_trajectory_csv, quasi_static, DesiredCurveFamily, ExploreError, LegOutcome,
    PathSpec, SpeedProfile, TaggedCurve, TireMode, AGGRESSIVENESS_SCHEDULE, SPEED_SCHEDULE,
};
use ltcar_core::trajopt::{Curve, Iterate, StopReason};
use ltcar_core::vehicle::VehicleParams;

use crate::config::{self, ExploreConfig, Resolved, ScheduleConfig, TireKind};
use crate::output::{curve_csv, push_row, Sink};
use crate::{with_pool, CliError};

pub fn run(res: &Resolved) -> Result<(), CliError> {
    let cfg = res.config.explore.clone().unwrap_or_default();
    let dt = res.dt();
    let external = cfg.external_curve.is_some();
    let weights = res.weights(external);
    let sink = Sink::new(res, "explore", &weights)?;

    let (family, modes) = build_family(res, &cfg, res.params, dt)?;
    for (i, leg) in family.legs.iter().enumerate() {
        sink.write(
            &leg_name(i, "desired", "csv"),
            &curve_csv(&leg.curve),
            json!({ "parameter": leg.parameter, "tire_mode": modes[i], "rows": leg.curve.len() }),
        )?;
    }

    // The continuation itself is inherently sequential: each leg warm
    // starts from the previous optimum.
    let (legs, failure) = match explore(&family, &weights, &res.model, &res.stop) {
        Ok(exploration) => (exploration.legs, None),
        Err(ExploreError::LegFailed { parameter, completed, source }) => {
            (completed, Some((parameter, source)))
        }
        Err(other) => return Err(map_explore_err(other)),
    };

    for (i, leg) in legs.iter().enumerate() {
        let o = &leg.outcome;
        sink.write(
            &leg_name(i, "optimal", "csv"),
            &curve_csv(o.trajectory.curve()),
            json!({
                "parameter": leg.parameter,
                "rows": o.trajectory.len(),
                "final_cost": o.cost,
                "iterations": o.iterates.len(),
                "reason": reason_name(o.reason),
            }),
        )?;
        sink.write(
            &leg_name(i, "iterates", "jsonl"),
            &iterates_jsonl(&o.iterates),
            json!({ "parameter": leg.parameter, "rows": o.iterates.len() }),
        )?;
    }

    let bicycle = if cfg.compare_bicycle && failure.is_none() {
        Some(run_bicycle(res, &cfg, &weights, dt, &sink)?)
    } else {
        None
    };

    if failure.is_none() {
        let target = &family.legs.last().expect("family is nonempty").curve;
        let optimal = legs.last().expect("explore returns every leg").outcome.trajectory.curve();
        let comparison = comparison_csv(target, optimal, bicycle.as_ref().map(|b| b.outcome.trajectory.curve()));
        sink.write("comparison.csv", &comparison, json!({ "rows": target.len() }))?;
    }

    let summary = summary_json(&family, &modes, &legs, &failure, bicycle.as_ref());
    sink.write("summary.json", &summary, json!({ "legs": legs.len() }))?;

    match failure {
        None => Ok(()),
        Some((parameter, source)) => Err(CliError::numeric(format!(
            "leg at parameter {parameter} failed after {} finished legs: {source}",
            legs.len()
        ))),
    }
}

fn leg_name(i: usize, kind: &str, ext: &str) -> String {
    format!("leg{i:02}_{kind}.{ext}")
}

fn reason_name(reason: StopReason) -> &'static str {
    match reason {
        StopReason::GradientTolerance => "gradient_tolerance",
        StopReason::MaxIterations => "max_iterations",
        StopReason::Stalled => "stalled",
    }
}

fn map_explore_err(e: ExploreError) -> CliError {
    match e {
        ExploreError::BadPath { .. }
        | ExploreError::BadSpeed { .. }
        | ExploreError::BadInput { .. }
        | ExploreError::MalformedFile { .. }
        | ExploreError::NonMonotoneTime { .. } => CliError::config(e),
        _ => CliError::numeric(e),
    }
}

/// Builds the desired-curve family and records which tire mode designed
/// each leg. An external curve short-circuits to a single leg.
fn build_family(
    res: &Resolved,
    cfg: &ExploreConfig,
    params: VehicleParams,
    dt: f64,
) -> Result<(DesiredCurveFamily, Vec<&'static str>), CliError> {
    if let Some(path) = &cfg.external_curve {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        let curve = parse_trajectory_csv(&text, dt)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let family = DesiredCurveFamily { legs: vec![TaggedCurve { parameter: 100.0, curve }] };
        return Ok((family, vec!["external"]));
    }

    let spec = config::resolve_track(&cfg.track)?;
    let base = config::resolve_speeds(&cfg.speeds)?;
    let (kind, values) = schedule(cfg)?;

    let jobs: Vec<(f64, SpeedProfile)> = values
        .iter()
        .map(|&p| {
            let profile = match kind {
                "aggressiveness" => base
                    .with_aggressiveness(p)
                    .map_err(|e| CliError::config(format!("schedule value {p}: {e}")))?,
                _ => SpeedProfile::constant(p)
                    .map_err(|e| CliError::config(format!("schedule value {p}: {e}")))?,
            };
            Ok((p, profile))
        })
        .collect::<Result<_, CliError>>()?;

    // Leg designs are independent quasi-static solves; build them in
    // parallel, in schedule order.
    let built = with_pool(|| {
        jobs.par_iter()
            .map(|(p, profile)| design_leg(res, &spec, profile, *p, cfg.tire_fallback, params, dt))
            .collect::<Result<Vec<_>, CliError>>()
    })??;

    let mut legs = Vec::with_capacity(built.len());
    let mut modes = Vec::with_capacity(built.len());
    for (p, (curve, mode)) in values.iter().zip(built) {
        legs.push(TaggedCurve { parameter: *p, curve });
        modes.push(mode);
    }
    Ok((DesiredCurveFamily { legs }, modes))
}

fn schedule(cfg: &ExploreConfig) -> Result<(&'static str, Vec<f64>), CliError> {
    let (kind, values) = match &cfg.schedule {
        ScheduleConfig::Named(name) => match name.as_str() {
            "aggressiveness" => ("aggressiveness", AGGRESSIVENESS_SCHEDULE.to_vec()),
            "speed" => ("speed", SPEED_SCHEDULE.to_vec()),
            other => {
                return Err(CliError::config(format!(
                    "unknown schedule '{other}' (expected \"aggressiveness\", \"speed\", or {{ kind, values }})"
                )))
            }
        },
        ScheduleConfig::Custom(c) => match c.kind.as_str() {
            "aggressiveness" => ("aggressiveness", c.values.clone()),
            "speed" => ("speed", c.values.clone()),
            other => {
                return Err(CliError::config(format!(
                    "unknown schedule kind '{other}' (expected \"aggressiveness\" or \"speed\")"
                )))
            }
        },
    };
    if values.is_empty() {
        return Err(CliError::config("schedule.values is empty"));
    }
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(CliError::config("schedule values must be positive"));
    }
    Ok((kind, values))
}

/// One quasi-static design. When the saturating tires cannot hold the
/// demanded acceleration somewhere and the fallback is enabled, the leg is
/// redesigned with the zero-slip tangent tires instead.
fn design_leg(
    res: &Resolved,
    spec: &PathSpec,
    profile: &SpeedProfile,
    parameter: f64,
    fallback: bool,
    params: VehicleParams,
    dt: f64,
) -> Result<(Curve, &'static str), CliError> {
    match quasi_static(spec, profile, &params, &res.tires, TireMode::Pacejka, dt) {
        Ok(curve) => {
            let mode = if res.config.car.tires == TireKind::Linear { "linear" } else { "pacejka" };
            Ok((curve, mode))
        }
        Err(ExploreError::InfeasibleSample { .. })
            if fallback && res.config.car.tires == TireKind::Pacejka =>
        {
            let curve = quasi_static(spec, profile, &params, &res.tires, TireMode::Linear, dt)
                .map_err(|e| {
                    CliError::numeric(format!("leg at parameter {parameter}: {e}"))
                })?;
            Ok((curve, "linear"))
        }
        Err(e @ ExploreError::InfeasibleSample { .. }) => {
            Err(CliError::numeric(format!("leg at parameter {parameter}: {e}")))
        }
        Err(e) => Err(map_explore_err(e)),
    }
}

/// Optimizes the same target with the load-transfer-free car and writes
/// its final trajectory and iterate log.
fn run_bicycle(
    res: &Resolved,
    cfg: &ExploreConfig,
    weights: &ltcar_core::trajopt::Weights,
    dt: f64,
    sink: &Sink,
) -> Result<LegOutcome, CliError> {
    let (params_b, model_b) = res.bicycle_model();
    let (family, _) = build_family(res, cfg, params_b, dt)?;
    let exploration = explore(&family, weights, &model_b, &res.stop).map_err(|e| match e {
        ExploreError::LegFailed { parameter, source, .. } => CliError::numeric(format!(
            "bicycle comparison failed at parameter {parameter}: {source}"
        )),
        other => map_explore_err(other),
    })?;
    let last = exploration.legs.last().expect("explore returns every leg").clone();
    let o = &last.outcome;
    sink.write(
        "bicycle_optimal.csv",
        &curve_csv(o.trajectory.curve()),
        json!({
            "parameter": last.parameter,
            "rows": o.trajectory.len(),
            "final_cost": o.cost,
            "iterations": o.iterates.len(),
            "reason": reason_name(o.reason),
        }),
    )?;
    sink.write(
        "bicycle_iterates.jsonl",
        &iterates_jsonl(&o.iterates),
        json!({ "parameter": last.parameter, "rows": o.iterates.len() }),
    )?;
    Ok(last)
}

fn iterates_jsonl(iterates: &[Iterate]) -> String {
    let mut out = String::new();
    for it in iterates {
        let line = json!({
            "iter": it.iter,
            "cost": it.cost,
            "grad_zeta": it.grad_zeta,
            "gamma": it.gamma,
        });
        out.push_str(&serde_json::to_string(&line).expect("iterate serializes"));
        out.push('\n');
    }
    out
}

/// Final-leg comparison: where the car was asked to go, where the
/// optimized car goes, and (optionally) where the load-transfer-free car
/// goes. Speeds, lateral acceleration, and rear slip ride along so braking
/// points can be read straight out of the file.
fn comparison_csv(target: &Curve, optimal: &Curve, bicycle: Option<&Curve>) -> String {
    let mut out = String::from("t,x_des,y_des,v_des,x,y,v,a_lat,kappa_r");
    if bicycle.is_some() {
        out.push_str(",x_bicycle,y_bicycle,v_bicycle,a_lat_bicycle,kappa_r_bicycle");
    }
    out.push('\n');
    let n = target.len().min(optimal.len()).min(bicycle.map_or(usize::MAX, Curve::len));
    for k in 0..n {
        let d = &target.states()[k];
        let s = &optimal.states()[k];
        let u = &optimal.inputs()[k];
        let mut fields = vec![
            target.time(k),
            d.x,
            d.y,
            d.vx.hypot(d.vy),
            s.x,
            s.y,
            s.vx.hypot(s.vy),
            s.vx.hypot(s.vy) * s.psidot,
            u.kappa_r,
        ];
        if let Some(b) = bicycle {
            let sb = &b.states()[k];
            let ub = &b.inputs()[k];
            fields.extend([
                sb.x,
                sb.y,
                sb.vx.hypot(sb.vy),
                sb.vx.hypot(sb.vy) * sb.psidot,
                ub.kappa_r,
            ]);
        }
        push_row(&mut out, &fields);
    }
    out
}

fn summary_json(
    family: &DesiredCurveFamily,
    modes: &[&'static str],
    legs: &[LegOutcome],
    failure: &Option<(f64, ltcar_core::trajopt::TrajoptError)>,
    bicycle: Option<&LegOutcome>,
) -> String {
    let leg_records: Vec<Value> = legs
        .iter()
        .enumerate()
        .map(|(i, leg)| {
            let o = &leg.outcome;
            json!({
                "index": i,
                "parameter": leg.parameter,
                "tire_mode": modes.get(i),
                "samples": o.trajectory.len(),
                "iterations": o.iterates.len(),
                "final_cost": o.cost,
                "grad_last": o.iterates.last().map(|it| it.grad_zeta),
                "reason": reason_name(o.reason),
            })
        })
        .collect();
    let comparison = if failure.is_none() {
        let target = &family.legs.last().expect("family is nonempty").curve;
        let optimal = legs.last().expect("all legs finished").outcome.trajectory.curve();
        let mut value = json!({
            "rms_position_error": rms_position_error(target, optimal),
        });
        if let Some(b) = bicycle {
            value["bicycle_rms_position_error"] =
                json!(rms_position_error(target, b.outcome.trajectory.curve()));
            value["bicycle_final_cost"] = json!(b.outcome.cost);
        }
        value
    } else {
        Value::Null
    };
    let failed = failure.as_ref().map(|(parameter, source)| {
        json!({ "parameter": parameter, "error": source.to_string() })
    });
    let doc = json!({
        "planned_legs": family.legs.len(),
        "finished_legs": legs.len(),
        "legs": leg_records,
        "failed_leg": failed,
        "comparison": comparison,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("summary serializes");
    text.push('\n');
    text
}

fn rms_position_error(target: &Curve, got: &Curve) -> f64 {
    let n = target.len().min(got.len());
    let mut acc = 0.0;
    for k in 0..n {
        let d = &target.states()[k];
        let s = &got.states()[k];
        acc += (s.x - d.x).powi(2) + (s.y - d.y).powi(2);
    }
    (acc / n as f64).sqrt()
}
