//! Deterministic file writing.
//!
//! Every artifact is assembled as one string in memory and written whole,
//! floats printed with 17 significant digits, so identical configs produce
//! byte-identical files. Next to each artifact goes `<name>.meta.json`
//! carrying the resolved-config hash; writing over an artifact whose
//! sidecar records a different hash needs `--force`.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use ltcar_core::trajopt::{Curve, Weights};

use crate::config::Resolved;
use crate::CliError;

/// Lossless float formatting: 17 significant digits, scientific.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Appends one CSV row of floats.
pub fn push_row(out: &mut String, fields: &[f64]) {
    for (i, x) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&num(*x));
    }
    out.push('\n');
}

fn diag6(m: &nalgebra::SMatrix<f64, 6, 6>) -> Vec<f64> {
    m.diagonal().iter().copied().collect()
}

fn diag3(m: &nalgebra::SMatrix<f64, 3, 3>) -> Vec<f64> {
    m.diagonal().iter().copied().collect()
}

/// Weight diagonals for the sidecar.
pub fn weights_json(w: &Weights) -> Value {
    json!({
        "q": diag6(&w.q),
        "r": diag3(&w.r),
        "p1": diag6(&w.p1),
        "q_k": diag6(&w.q_k),
        "r_k": diag3(&w.r_k),
    })
}

/// The standard trajectory schema shared by `simulate` input files,
/// external curves, and every trajectory artifact.
pub const TRAJECTORY_HEADER: &str = "t,x,y,psi,vx,vy,psidot,delta,kappa_r,kappa_f";

/// Renders a curve in the standard trajectory schema.
pub fn curve_csv(curve: &Curve) -> String {
    let mut out = String::with_capacity(32 + curve.len() * 24 * 10);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for k in 0..curve.len() {
        let s = &curve.states()[k];
        let u = &curve.inputs()[k];
        push_row(
            &mut out,
            &[curve.time(k), s.x, s.y, s.psi, s.vx, s.vy, s.psidot, u.delta, u.kappa_r, u.kappa_f],
        );
    }
    out
}

/// Output directory handle: writes artifacts plus their metadata sidecars
/// and enforces the overwrite guard.
pub struct Sink {
    dir: PathBuf,
    hash: String,
    force: bool,
    common: Map<String, Value>,
}

impl Sink {
    pub fn new(res: &Resolved, command: &'static str, weights: &Weights) -> Result<Self, CliError> {
        fs::create_dir_all(&res.out_dir)
            .map_err(|e| CliError::io(format!("cannot create {}: {e}", res.out_dir.display())))?;
        let mut common = Map::new();
        common.insert("command".into(), json!(command));
        common.insert("config_hash".into(), json!(res.hash));
        common.insert(
            "car".into(),
            json!({
                "preset": res.config.car.preset,
                "bicycle": res.config.car.bicycle,
                "tires": res.config.car.tires,
            }),
        );
        common.insert("grid_dt".into(), json!(res.dt()));
        common.insert("seed".into(), json!(res.seed()));
        common.insert("weights".into(), weights_json(weights));
        Ok(Sink { dir: res.out_dir.clone(), hash: res.hash.clone(), force: res.force, common })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `name` and its sidecar; `extra` keys are merged into the
    /// sidecar object.
    pub fn write(&self, name: &str, content: &str, extra: Value) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let meta_path = self.dir.join(format!("{name}.meta.json"));
        self.guard(&path, &meta_path)?;
        fs::write(&path, content)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        let mut meta = self.common.clone();
        meta.insert("file".into(), json!(name));
        if let Value::Object(fields) = extra {
            for (k, v) in fields {
                meta.insert(k, v);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(meta)).expect("meta serializes");
        text.push('\n');
        fs::write(&meta_path, text)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", meta_path.display())))?;
        println!("wrote {}", path.display());
        Ok(())
    }

    /// Refuses to overwrite another config's output unless forced. A
    /// matching hash may overwrite freely: the bytes are identical anyway.
    fn guard(&self, path: &Path, meta_path: &Path) -> Result<(), CliError> {
        if self.force {
            return Ok(());
        }
        if meta_path.exists() {
            let text = fs::read_to_string(meta_path)
                .map_err(|e| CliError::io(format!("cannot read {}: {e}", meta_path.display())))?;
            let recorded = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("config_hash").and_then(|h| h.as_str().map(String::from)));
            return match recorded {
                Some(h) if h == self.hash => Ok(()),
                Some(_) => Err(CliError::io(format!(
                    "{} was written by a run with a different config; pass --force to overwrite",
                    path.display()
                ))),
                None => Err(CliError::io(format!(
                    "{} is not a readable sidecar; pass --force to overwrite",
                    meta_path.display()
                ))),
            };
        }
        if path.exists() {
            return Err(CliError::io(format!(
                "{} exists without a sidecar; pass --force to overwrite",
                path.display()
            )));
        }
        Ok(())
    }
}
