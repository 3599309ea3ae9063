//! `tire`: tabulates the force curves of both axles over slip grids at a
//! set of normal loads, plus a polar sweep of the combined-slip envelope.

use serde_json::json;

use ltcar_core::tire::{self, SlipState, TireParams};

use crate::config::Resolved;
use crate::output::{num, push_row, Sink};
use crate::CliError;

pub fn run(res: &Resolved) -> Result<(), CliError> {
    let cfg = res.config.tire_sweep.clone().unwrap_or_default();
    if cfg.loads_kn.is_empty() {
        return Err(CliError::config("tire_sweep.loads_kn is empty"));
    }
    if cfg.loads_kn.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(CliError::config("tire_sweep.loads_kn entries must be positive"));
    }
    let kappas = cfg.kappa.values("tire_sweep.kappa")?;
    let betas = cfg.beta.values("tire_sweep.beta")?;

    let weights = res.weights(false);
    let sink = Sink::new(res, "tire", &weights)?;
    let axles = [("front", &res.preset.tires_params.front), ("rear", &res.preset.tires_params.rear)];

    for (axle, params) in axles {
        let fx = force_table(&kappas, "kappa", &cfg.loads_kn, cfg.linear_overlay, params, tire::pure_longitudinal)?;
        sink.write(
            &format!("tire_{axle}_fx.csv"),
            &fx,
            json!({ "axle": axle, "rows": kappas.len(), "loads_kn": cfg.loads_kn }),
        )?;

        let fy = force_table(&betas, "beta", &cfg.loads_kn, cfg.linear_overlay, params, tire::pure_lateral)?;
        sink.write(
            &format!("tire_{axle}_fy.csv"),
            &fy,
            json!({ "axle": axle, "rows": betas.len(), "loads_kn": cfg.loads_kn }),
        )?;
    }

    let ellipse = envelope_table(&cfg.ellipse_magnitudes, cfg.ellipse_points, &cfg.loads_kn, &axles)?;
    let rows = cfg.ellipse_magnitudes.len() * cfg.ellipse_points * cfg.loads_kn.len() * axles.len();
    sink.write("tire_ellipse.csv", &ellipse, json!({ "rows": rows }))?;
    Ok(())
}

/// One pure-slip table: the slip column, one force column per load, and
/// optionally the zero-slip tangent forces. Forces are `mu * N` in newtons.
fn force_table(
    grid: &[f64],
    slip_name: &str,
    loads_kn: &[f64],
    overlay: bool,
    params: &TireParams,
    mu: impl Fn(f64, &TireParams) -> Result<f64, ltcar_core::error::DynamicsError>,
) -> Result<String, CliError> {
    let mut out = String::new();
    out.push_str(slip_name);
    for load in loads_kn {
        out.push_str(&format!(",f_{load}kN"));
    }
    if overlay {
        for load in loads_kn {
            out.push_str(&format!(",lin_{load}kN"));
        }
    }
    out.push('\n');

    // The lateral tangent comes from the cornering stiffness; the
    // longitudinal tangent under the linear model is the commanded
    // coefficient itself, slope one.
    let tangent = if slip_name == "beta" { params.cornering_stiffness() } else { 1.0 };
    for &slip in grid {
        let coeff = mu(slip, params).map_err(CliError::numeric)?;
        let mut fields = Vec::with_capacity(1 + 2 * loads_kn.len());
        fields.push(slip);
        for load in loads_kn {
            fields.push(coeff * load * 1e3);
        }
        if overlay {
            for load in loads_kn {
                fields.push(tangent * slip * load * 1e3);
            }
        }
        push_row(&mut out, &fields);
    }
    Ok(out)
}

/// Polar sweep of the combined-slip surface: for each axle, load, and slip
/// magnitude rho, the slip vector (kappa, beta) = rho (cos phi, sin phi)
/// walks a circle and the resulting force vector traces the grip envelope.
fn envelope_table(
    magnitudes: &[f64],
    points: usize,
    loads_kn: &[f64],
    axles: &[(&str, &TireParams); 2],
) -> Result<String, CliError> {
    if points < 2 {
        return Err(CliError::config("tire_sweep.ellipse_points must be at least 2"));
    }
    if magnitudes.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(CliError::config("tire_sweep.ellipse_magnitudes entries must be positive"));
    }
    let mut out = String::from("axle,load_kn,rho,phi,mu_x,mu_y,fx,fy\n");
    for (axle, params) in axles {
        for &load in loads_kn {
            for &rho in magnitudes {
                for i in 0..points {
                    let phi = 2.0 * std::f64::consts::PI * i as f64 / points as f64;
                    let slip =
                        SlipState { kappa: rho * phi.cos(), beta: rho * phi.sin(), delta: 0.0 };
                    let pair = tire::combined(&slip, params).map_err(CliError::numeric)?;
                    out.push_str(axle);
                    out.push(',');
                    for (j, x) in [load, rho, phi, pair.mu_x, pair.mu_y, pair.mu_x * load * 1e3, pair.mu_y * load * 1e3]
                        .iter()
                        .enumerate()
                    {
                        if j > 0 {
                            out.push(',');
                        }
                        out.push_str(&num(*x));
                    }
                    out.push('\n');
                }
            }
        }
    }
    Ok(out)
}
