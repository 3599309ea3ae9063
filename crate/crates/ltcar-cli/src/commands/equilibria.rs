//! `equilibria`: traces the cornering equilibrium branch at each requested
//! speed (optionally sweeping the rear axle distance), writing one CSV per
//! branch and a JSON summary of the interesting structure: grip limit,
//! fold, understeer gradient, counter-steering.

use rayon::prelude::*;
use serde_json::{json, Value};

use ltcar_core::manifold::{
    sweep_parameter, trace_branch, understeer_gradient_window, EquilibriumUnknowns,
    ManifoldBranch, SweepParameter,
};

use crate::config::Resolved;
use crate::output::{push_row, Sink};
use crate::{with_pool, CliError};

pub fn run(res: &Resolved) -> Result<(), CliError> {
    let cfg = res.config.equilibria.clone().unwrap_or_default();
    if cfg.speeds.is_empty() {
        return Err(CliError::config("equilibria.speeds is empty"));
    }
    if cfg.speeds.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(CliError::config("equilibria.speeds entries must be positive"));
    }
    let wheelbase = res.params.wheelbase();
    if cfg.rear_axle_sweep.iter().any(|b| !(b.is_finite() && *b > 0.0 && *b < wheelbase)) {
        return Err(CliError::config(format!(
            "equilibria.rear_axle_sweep entries must lie strictly inside (0, {wheelbase})"
        )));
    }
    if !(cfg.k_us_window.is_finite() && cfg.k_us_window > 0.0) {
        return Err(CliError::config("equilibria.k_us_window must be positive"));
    }

    let mut jobs: Vec<(f64, Option<f64>)> = Vec::new();
    for &v in &cfg.speeds {
        if cfg.rear_axle_sweep.is_empty() {
            jobs.push((v, None));
        } else {
            for &b in &cfg.rear_axle_sweep {
                jobs.push((v, Some(b)));
            }
        }
    }

    // Branches are independent; trace them in parallel, collect in job
    // order so the outputs are deterministic.
    let branches = with_pool(|| {
        jobs.par_iter()
            .map(|&(v, b)| trace(res, v, b).map(|branch| (v, b, branch)))
            .collect::<Result<Vec<_>, CliError>>()
    })??;

    let weights = res.weights(false);
    let sink = Sink::new(res, "equilibria", &weights)?;
    let mut summary = Vec::with_capacity(branches.len());
    for (v, b, branch) in &branches {
        let name = match b {
            None => format!("branch_v{v}.csv"),
            Some(b) => format!("branch_v{v}_b{b}.csv"),
        };
        sink.write(&name, &branch_csv(branch), json!({ "v": v, "b": b, "rows": branch.points.len() }))?;
        summary.push(summarize(*v, *b, branch, cfg.k_us_window));
    }
    let mut text = serde_json::to_string_pretty(&Value::Array(summary)).expect("summary serializes");
    text.push('\n');
    sink.write("summary.json", &text, json!({ "branches": branches.len() }))?;
    Ok(())
}

fn trace(res: &Resolved, v: f64, b: Option<f64>) -> Result<ManifoldBranch, CliError> {
    let result = match b {
        None => trace_branch(&EquilibriumUnknowns::ZERO, v, &res.params, &res.tires, &res.continuation),
        Some(b) => {
            sweep_parameter(SweepParameter::RearDistance, &[b], v, &res.params, &res.tires, &res.continuation)
                .pop()
                .expect("one value in, one result out")
                .1
        }
    };
    result.map_err(|e| match b {
        None => CliError::numeric(format!("branch at v = {v}: {e}")),
        Some(b) => CliError::numeric(format!("branch at v = {v}, b = {b}: {e}")),
    })
}

fn branch_csv(branch: &ManifoldBranch) -> String {
    let mut out =
        String::from("arclength,a_lat,beta,delta,kappa_r,psidot,radius,ffz,frz,residual\n");
    for (i, p) in branch.points.iter().enumerate() {
        push_row(
            &mut out,
            &[
                branch.arclength[i],
                p.unknowns.a_lat,
                p.unknowns.beta,
                p.unknowns.delta,
                p.unknowns.kappa_r,
                p.yaw_rate(),
                p.turn_radius(),
                p.loads.ffz,
                p.loads.frz,
                p.residual_norm,
            ],
        );
    }
    out
}

fn summarize(v: f64, b: Option<f64>, branch: &ManifoldBranch, k_us_hi: f64) -> Value {
    let max = branch.max_a_lat();
    let fold = branch.fold_index();
    // Counter-steering: somewhere on the branch the wheel points out of
    // the turn. Floors keep numerical dust near the origin from counting.
    let counter_steering = branch
        .points
        .iter()
        .any(|p| p.unknowns.a_lat.abs() > 0.5 && p.unknowns.delta.abs() > 1e-4 && p.unknowns.delta * p.unknowns.a_lat < 0.0);
    // Understeer gradient over the low-acceleration window, thinned to a
    // readable sample count.
    let k_us = match understeer_gradient_window(branch, 0.0, k_us_hi) {
        Ok(samples) => {
            let stride = (samples.len() / 25).max(1);
            Value::Array(
                samples
                    .iter()
                    .step_by(stride)
                    .map(|s| json!({ "a_lat": s.a_lat, "k_us": s.k_us }))
                    .collect(),
            )
        }
        Err(_) => Value::Null,
    };
    json!({
        "v": v,
        "b": b,
        "points": branch.points.len(),
        "max_a_lat": max.map(|(_, a)| a),
        "max_a_lat_index": max.map(|(i, _)| i),
        "fold_index": fold,
        "fold_a_lat": fold.map(|i| branch.points[i].unknowns.a_lat),
        "counter_steering": counter_steering,
        "k_us": k_us,
    })
}
