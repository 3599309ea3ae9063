//! End-to-end tests of the `ltcar` binary: every subcommand is driven
//! through a real process against a temp directory, checking exit codes,
//! file contents, determinism, and the overwrite guard.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ltcar() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ltcar"));
    // The binary honors exactly these two variables; scrub them so an
    // ambient shell cannot skew the tests.
    cmd.env_remove("LTCAR_OUTPUT_DIR");
    cmd.env_remove("LTCAR_THREADS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary spawns")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(path: &Path, content: &str) {
    fs::write(path, content).expect("test file writes");
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

fn csv_column(text: &str, name: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(col).expect("field").parse().expect("number")).collect()
}

struct Dir {
    root: tempfile::TempDir,
}

impl Dir {
    fn new() -> Self {
        Dir { root: tempfile::tempdir().expect("tempdir") }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    fn config(&self, name: &str, body: &str) -> PathBuf {
        let path = self.path(name);
        write(&path, body);
        path
    }
}

#[test]
fn tire_tables_have_grids_loads_and_overlay() {
    let dir = Dir::new();
    let out = dir.path("out");
    let cfg = dir.config(
        "tire.toml",
        &format!(
            "[tire_sweep]\nkappa = {{ lo = -1.0, hi = 1.0, n = 21 }}\nbeta = {{ lo = -0.5, hi = 0.5, n = 21 }}\nlinear_overlay = true\nellipse_points = 24\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    let result = run(ltcar().args(["tire", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 0, "stderr: {}", stderr(&result));

    for name in ["tire_front_fx.csv", "tire_front_fy.csv", "tire_rear_fx.csv", "tire_rear_fy.csv", "tire_ellipse.csv"] {
        assert!(out.join(name).exists(), "{name} missing");
        assert!(out.join(format!("{name}.meta.json")).exists(), "{name} sidecar missing");
    }

    let fy = read(&out.join("tire_front_fy.csv"));
    assert!(fy.starts_with("beta,f_2kN,f_4kN,f_6kN,lin_2kN,lin_4kN,lin_6kN\n"));
    assert_eq!(fy.lines().count(), 22);
    // Doubling the load doubles the force: mu is load-independent here.
    let f2 = csv_column(&fy, "f_2kN");
    let f4 = csv_column(&fy, "f_4kN");
    for (a, b) in f2.iter().zip(&f4) {
        assert!((2.0 * a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
    // The overlay is tangent at the origin: identical at beta = 0.
    let lin = csv_column(&fy, "lin_2kN");
    let betas = csv_column(&fy, "beta");
    let mid = betas.iter().position(|b| b.abs() < 1e-12).expect("grid hits zero");
    assert!(f2[mid].abs() < 1e-9);
    assert!(lin[mid].abs() < 1e-9);

    let ellipse = read(&out.join("tire_ellipse.csv"));
    assert!(ellipse.starts_with("axle,load_kn,rho,phi,mu_x,mu_y,fx,fy\n"));
    // axles * loads * magnitudes * points
    assert_eq!(ellipse.lines().count(), 1 + 2 * 3 * 4 * 24);
}

#[test]
fn tire_rejects_an_empty_grid() {
    let dir = Dir::new();
    let cfg = dir.config(
        "tire.toml",
        &format!(
            "[tire_sweep]\nkappa = {{ lo = 0.0, hi = 1.0, n = 0 }}\n\n[output]\ndir = \"{}\"\n",
            dir.path("out").display()
        ),
    );
    let result = run(ltcar().args(["tire", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 2);
    assert!(stderr(&result).contains("grid is empty"));
}

#[test]
fn equilibria_summary_reports_the_branch_structure() {
    let dir = Dir::new();
    let out = dir.path("out");
    let cfg = dir.config(
        "eq.toml",
        &format!(
            "[equilibria]\nspeeds = [30.0]\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    let result = run(ltcar().args(["equilibria", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 0, "stderr: {}", stderr(&result));

    let summary: serde_json::Value =
        serde_json::from_str(&read(&out.join("summary.json"))).expect("summary parses");
    let branch = &summary.as_array().expect("array")[0];
    assert_eq!(branch["v"], 30.0);
    let max_a_lat = branch["max_a_lat"].as_f64().expect("max present");
    assert!(max_a_lat > 14.0 && max_a_lat < 18.0, "max_a_lat = {max_a_lat}");
    assert!(branch["fold_index"].is_u64(), "fold expected on a saturating branch");
    assert_eq!(branch["counter_steering"], false);
    let k_us = branch["k_us"].as_array().expect("understeer samples");
    assert!(!k_us.is_empty());
    for sample in k_us {
        assert!(sample["k_us"].as_f64().expect("k_us") < 0.0, "oversteering car: {sample}");
    }

    let csv = read(&out.join("branch_v30.csv"));
    assert!(csv.starts_with("arclength,a_lat,beta,delta,kappa_r,psidot,radius,ffz,frz,residual\n"));
    let residuals = csv_column(&csv, "residual");
    assert!(residuals.iter().all(|r| *r <= 1e-8));
    // Load transfer never appears in steady cornering: the split stays
    // static, so front plus rear is the full weight everywhere.
    let ffz = csv_column(&csv, "ffz");
    let frz = csv_column(&csv, "frz");
    for (f, r) in ffz.iter().zip(&frz) {
        assert!((f + r + 1480.0 * 9.81).abs() < 1e-6);
    }
}

#[test]
fn equilibria_rear_axle_sweep_finds_counter_steering() {
    let dir = Dir::new();
    let out = dir.path("out");
    let cfg = dir.config(
        "eq.toml",
        &format!(
            "[equilibria]\nspeeds = [30.0]\nrear_axle_sweep = [1.029, 2.1]\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    let result = run(ltcar().args(["equilibria", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 0, "stderr: {}", stderr(&result));
    assert!(out.join("branch_v30_b1.029.csv").exists());
    assert!(out.join("branch_v30_b2.1.csv").exists());

    let summary: serde_json::Value =
        serde_json::from_str(&read(&out.join("summary.json"))).expect("summary parses");
    let branches = summary.as_array().expect("array");
    assert_eq!(branches.len(), 2);
    assert_eq!(branches[0]["b"], 1.029);
    assert_eq!(branches[0]["counter_steering"], false);
    assert_eq!(branches[1]["b"], 2.1);
    assert_eq!(branches[1]["counter_steering"], true);
}

#[test]
fn simulate_holds_a_cornering_equilibrium_on_a_circle() {
    let dir = Dir::new();
    let out = dir.path("out");
    let cfg = dir.config(
        "sim.toml",
        &format!(
            "[simulate]\ninitial = {{ v = 30.0, a_lat = 4.0 }}\ninputs = \"hold\"\nduration = 5.0\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    let result = run(ltcar().args(["simulate", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 0, "stderr: {}", stderr(&result));

    let csv = read(&out.join("simulate.csv"));
    assert!(csv.starts_with("t,x,y,psi,vx,vy,psidot,delta,kappa_r,kappa_f,ffz,frz,beta_rear,beta_front\n"));
    assert_eq!(csv.lines().count(), 502);
    // On the equilibrium the velocity states are fixed points of the
    // dynamics, so the integrator must keep them to rounding.
    for name in ["vx", "vy", "psidot"] {
        let vals = csv_column(&csv, name);
        for v in &vals {
            assert!((v - vals[0]).abs() < 1e-9, "{name} drifted by {}", v - vals[0]);
        }
    }
    // Constant speed and yaw rate mean a circle of radius v / psidot.
    let psidot = csv_column(&csv, "psidot")[0];
    assert!((30.0 * psidot - 4.0).abs() < 1e-9);
    let xs = csv_column(&csv, "x");
    let ys = csv_column(&csv, "y");
    let vx = csv_column(&csv, "vx")[0];
    let vy = csv_column(&csv, "vy")[0];
    // Center: start position plus the radius along the left normal of the
    // velocity.
    let speed = vx.hypot(vy);
    let radius = speed / psidot;
    let (cx, cy) = (xs[0] - radius * vy / speed, ys[0] + radius * vx / speed);
    for (x, y) in xs.iter().zip(&ys) {
        let r = (x - cx).hypot(y - cy);
        assert!((r - radius.abs()).abs() < 1e-6, "radius drifted to {r} vs {radius}");
    }
}

#[test]
fn simulate_zero_inputs_rolls_straight() {
    let dir = Dir::new();
    let out = dir.path("out");
    let cfg = dir.config(
        "sim.toml",
        &format!(
            "[simulate]\ninitial = {{ x = 0.0, y = 0.0, psi = 0.0, vx = 25.0, vy = 0.0, psidot = 0.0 }}\ninputs = \"zero\"\nduration = 3.0\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    let result = run(ltcar().args(["simulate", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 0, "stderr: {}", stderr(&result));
    let csv = read(&out.join("simulate.csv"));
    let ys = csv_column(&csv, "y");
    let psis = csv_column(&csv, "psi");
    let xs = csv_column(&csv, "x");
    assert!(ys.iter().all(|y| y.abs() < 1e-12));
    assert!(psis.iter().all(|p| p.abs() < 1e-12));
    assert!((xs.last().unwrap() - 75.0).abs() < 1e-9);
}

#[test]
fn simulate_input_file_is_held_between_rows() {
    let dir = Dir::new();
    let out = dir.path("out");
    let script = dir.path("inputs.csv");
    write(&script, "t,delta,kappa_r,kappa_f\n0.0,0.0,0.0,0.0\n1.0,0.02,0.0,0.0\n");
    let cfg = dir.config(
        "sim.toml",
        &format!(
            "[simulate]\ninitial = {{ x = 0.0, y = 0.0, psi = 0.0, vx = 20.0, vy = 0.0, psidot = 0.0 }}\ninputs = {{ file = \"{}\" }}\nduration = 2.0\n\n[output]\ndir = \"{}\"\n",
            script.display(),
            out.display()
        ),
    );
    let result = run(ltcar().args(["simulate", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 0, "stderr: {}", stderr(&result));
    let csv = read(&out.join("simulate.csv"));
    let ts = csv_column(&csv, "t");
    let deltas = csv_column(&csv, "delta");
    for (t, d) in ts.iter().zip(&deltas) {
        let expected = if *t < 1.0 - 1e-12 { 0.0 } else { 0.02 };
        assert_eq!(*d, expected, "at t = {t}");
    }
    // The wheel steps at t = 1, so the car must be turning by the end.
    let psis = csv_column(&csv, "psi");
    assert!(psis.last().unwrap().abs() > 1e-3);
}

#[test]
fn simulate_drive_ramp_aborts_with_the_failure_time() {
    let dir = Dir::new();
    let cfg = dir.config(
        "sim.toml",
        &format!(
            "[car]\ntires = \"linear\"\n\n[simulate]\ninitial = {{ x = 0.0, y = 0.0, psi = 0.0, vx = 30.0, vy = 0.0, psidot = 0.0 }}\ninputs = {{ ramp_kappa_r = -0.5 }}\nduration = 10.0\n\n[output]\ndir = \"{}\"\n",
            dir.path("out").display()
        ),
    );
    let result = run(ltcar().args(["simulate", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 3);
    let err = stderr(&result);
    assert!(err.contains("t = 4.9"), "abort time missing: {err}");
    assert!(err.contains("normal-load"), "load failure missing: {err}");
}

const TEST_TRACK: &str = "# one gentle corner\nstraight 10\nramp 6 0 0.03\narc 12 0.03\nramp 6 0.03 0\nstraight 6\n";

fn explore_config(out: &Path, track: &Path, extra: &str) -> String {
    format!(
        "[explore]\ntrack = {{ file = \"{}\" }}\nspeeds = 12.0\nschedule = {{ kind = \"aggressiveness\", values = [100.0] }}\n{extra}\n[solver]\nmax_iter = 40\n\n[output]\ndir = \"{}\"\n",
        track.display(),
        out.display()
    )
}

#[test]
fn explore_single_leg_optimizes_a_small_course() {
    let dir = Dir::new();
    let out = dir.path("out");
    let track = dir.path("track.txt");
    write(&track, TEST_TRACK);
    let cfg = dir.config("explore.toml", &explore_config(&out, &track, "compare_bicycle = true\n"));
    let result = run(ltcar().args(["explore", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 0, "stderr: {}", stderr(&result));

    for name in [
        "leg00_desired.csv",
        "leg00_optimal.csv",
        "leg00_iterates.jsonl",
        "bicycle_optimal.csv",
        "bicycle_iterates.jsonl",
        "comparison.csv",
        "summary.json",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }

    let summary: serde_json::Value =
        serde_json::from_str(&read(&out.join("summary.json"))).expect("summary parses");
    assert_eq!(summary["planned_legs"], 1);
    assert_eq!(summary["finished_legs"], 1);
    let leg = &summary["legs"][0];
    assert_eq!(leg["tire_mode"], "pacejka");
    assert_eq!(leg["reason"], "gradient_tolerance");
    let rms = summary["comparison"]["rms_position_error"].as_f64().expect("rms");
    assert!(rms < 0.05, "tracking rms {rms} m");

    // Iterate log: one JSON object per line, costs descending.
    let log = read(&out.join("leg00_iterates.jsonl"));
    let costs: Vec<f64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).expect("jsonl line")["cost"].as_f64().expect("cost"))
        .collect();
    assert!(!costs.is_empty());
    for pair in costs.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-15, "cost rose: {pair:?}");
    }

    // The comparison file covers the whole leg on the shared grid.
    let comparison = read(&out.join("comparison.csv"));
    assert!(comparison.starts_with("t,x_des,y_des,v_des,x,y,v,a_lat,kappa_r,x_bicycle"));
    let desired = read(&out.join("leg00_desired.csv"));
    assert_eq!(comparison.lines().count(), desired.lines().count());
}

#[test]
fn explore_external_curve_reaches_zero_cost_on_its_own_output() {
    let dir = Dir::new();
    let out = dir.path("first");
    let track = dir.path("track.txt");
    write(&track, TEST_TRACK);
    let cfg = dir.config("explore.toml", &explore_config(&out, &track, ""));
    let result = run(ltcar().args(["explore", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 0, "stderr: {}", stderr(&result));

    // Feed the optimum back as an external target: it is already a flow
    // trajectory, so the projection reproduces it and the cost vanishes.
    let out2 = dir.path("second");
    let cfg2 = dir.config(
        "external.toml",
        &format!(
            "[explore]\nexternal_curve = \"{}\"\n\n[output]\ndir = \"{}\"\n",
            out.join("leg00_optimal.csv").display(),
            out2.display()
        ),
    );
    let result2 = run(ltcar().args(["explore", "--config"]).arg(&cfg2));
    assert_eq!(code(&result2), 0, "stderr: {}", stderr(&result2));
    let summary: serde_json::Value =
        serde_json::from_str(&read(&out2.join("summary.json"))).expect("summary parses");
    assert_eq!(summary["legs"][0]["final_cost"], 0.0);
    assert_eq!(summary["legs"][0]["tire_mode"], "external");

    // The free-inputs default shows up in the sidecar weights.
    let meta: serde_json::Value =
        serde_json::from_str(&read(&out2.join("leg00_optimal.csv.meta.json"))).expect("meta");
    assert_eq!(meta["weights"]["r"][0], 1e-3);
}

#[test]
fn explore_records_a_failed_leg_and_keeps_partial_outputs() {
    let dir = Dir::new();
    let out = dir.path("out");
    // A scripted "trajectory" demanding three units of longitudinal grip:
    // under linear tires that is a commanded coefficient far past the
    // wheelie line, so the gain design around it must abort.
    let mut poison = String::from("t,x,y,psi,vx,vy,psidot,delta,kappa_r,kappa_f\n");
    for k in 0..40 {
        let t = 0.01 * k as f64;
        poison.push_str(&format!("{t},{x},0,0,20,0,0,0,3,0\n", x = 20.0 * t));
    }
    let curve = dir.path("poison.csv");
    write(&curve, &poison);
    let cfg = dir.config(
        "explore.toml",
        &format!(
            "[car]\ntires = \"linear\"\n\n[explore]\nexternal_curve = \"{}\"\n\n[output]\ndir = \"{}\"\n",
            curve.display(),
            out.display()
        ),
    );
    let result = run(ltcar().args(["explore", "--config"]).arg(&cfg));
    assert_eq!(code(&result), 3, "stderr: {}", stderr(&result));
    assert!(out.join("leg00_desired.csv").exists(), "desired leg should be preserved");
    assert!(!out.join("leg00_optimal.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&read(&out.join("summary.json"))).expect("summary parses");
    assert_eq!(summary["finished_legs"], 0);
    assert!(summary["failed_leg"]["error"].as_str().expect("error recorded").contains("load"));
}

#[test]
fn identical_configs_reproduce_files_byte_for_byte() {
    let dir = Dir::new();
    let body = "[equilibria]\nspeeds = [20.0, 25.0]\n";
    let cfg1 = dir.config("a.toml", &format!("{body}[output]\ndir = \"{}\"\n", dir.path("one").display()));
    let cfg2 = dir.config("b.toml", &format!("{body}[output]\ndir = \"{}\"\n", dir.path("two").display()));
    // Different worker counts must not change a single byte either.
    let r1 = run(ltcar().args(["equilibria", "--config"]).arg(&cfg1).env("LTCAR_THREADS", "1"));
    let r2 = run(ltcar().args(["equilibria", "--config"]).arg(&cfg2).env("LTCAR_THREADS", "3"));
    assert_eq!(code(&r1), 0, "stderr: {}", stderr(&r1));
    assert_eq!(code(&r2), 0, "stderr: {}", stderr(&r2));
    for name in ["branch_v20.csv", "branch_v25.csv", "summary.json"] {
        let a = fs::read(dir.path("one").join(name)).expect("first file");
        let b = fs::read(dir.path("two").join(name)).expect("second file");
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn overwrite_guard_requires_force_for_a_different_config() {
    let dir = Dir::new();
    let out = dir.path("out");
    let cfg1 = dir.config(
        "a.toml",
        &format!("[equilibria]\nspeeds = [20.0]\n\n[output]\ndir = \"{}\"\n", out.display()),
    );
    let cfg2 = dir.config(
        "b.toml",
        &format!("[equilibria]\nspeeds = [21.0]\n\n[output]\ndir = \"{}\"\n", out.display()),
    );
    assert_eq!(code(&run(ltcar().args(["equilibria", "--config"]).arg(&cfg1))), 0);
    // Re-running the same config over its own outputs is fine.
    assert_eq!(code(&run(ltcar().args(["equilibria", "--config"]).arg(&cfg1))), 0);
    // A different config must be refused...
    let refused = run(ltcar().args(["equilibria", "--config"]).arg(&cfg2));
    assert_eq!(code(&refused), 4);
    assert!(stderr(&refused).contains("--force"));
    // ...until forced.
    assert_eq!(code(&run(ltcar().args(["equilibria", "--config"]).arg(&cfg2).arg("--force"))), 0);
}

#[test]
fn config_mistakes_exit_two_with_diagnostics() {
    let dir = Dir::new();
    let unknown_field = dir.config("a.toml", "[solver]\ndtt = 0.01\n");
    let result = run(ltcar().args(["tire", "--config"]).arg(&unknown_field));
    assert_eq!(code(&result), 2);
    let err = stderr(&result);
    assert!(err.contains("line 2") && err.contains("dtt"), "diagnostics missing: {err}");

    let bad_preset = dir.config("b.toml", "[car]\npreset = \"steamroller\"\n");
    let result = run(ltcar().args(["equilibria", "--config"]).arg(&bad_preset));
    assert_eq!(code(&result), 2);
    assert!(stderr(&result).contains("steamroller"));

    let missing_section = dir.config("c.toml", "[car]\npreset = \"sports\"\n");
    let result = run(ltcar().args(["simulate", "--config"]).arg(&missing_section));
    assert_eq!(code(&result), 2);
    assert!(stderr(&result).contains("[simulate]"));

    let result = run(ltcar().args(["equilibria", "--config"]).arg(dir.path("nope.toml")));
    assert_eq!(code(&result), 4);

    let ok = dir.config("d.toml", "[equilibria]\nspeeds = [20.0]\n");
    let result = run(ltcar()
        .args(["equilibria", "--config"])
        .arg(&ok)
        .arg("--out")
        .arg(dir.path("out"))
        .env("LTCAR_THREADS", "zero"));
    assert_eq!(code(&result), 2);
    assert!(stderr(&result).contains("LTCAR_THREADS"));
}

#[test]
fn output_dir_precedence_is_flag_env_config() {
    let dir = Dir::new();
    let cfg = dir.config(
        "a.toml",
        &format!("[equilibria]\nspeeds = [20.0]\n\n[output]\ndir = \"{}\"\n", dir.path("from_config").display()),
    );
    // Environment beats the config file.
    let r = run(ltcar()
        .args(["equilibria", "--config"])
        .arg(&cfg)
        .env("LTCAR_OUTPUT_DIR", dir.path("from_env")));
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    assert!(dir.path("from_env").join("summary.json").exists());
    assert!(!dir.path("from_config").exists());
    // The flag beats both.
    let r = run(ltcar()
        .args(["equilibria", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path("from_flag"))
        .env("LTCAR_OUTPUT_DIR", dir.path("from_env_2")));
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    assert!(dir.path("from_flag").join("summary.json").exists());
    assert!(!dir.path("from_env_2").exists());
    // And the hash ignores where the files land: all three sidecars agree.
    let a: serde_json::Value =
        serde_json::from_str(&read(&dir.path("from_env").join("summary.json.meta.json"))).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&read(&dir.path("from_flag").join("summary.json.meta.json"))).unwrap();
    assert_eq!(a["config_hash"], b["config_hash"]);
}

#[test]
fn seeded_perturbation_is_reproducible_and_seed_changes_it() {
    let dir = Dir::new();
    let body = |out: &Path, seed: u64| {
        format!(
            "[simulate]\ninitial = {{ v = 25.0, a_lat = 3.0 }}\ninputs = \"hold\"\nduration = 1.0\nperturb = 1e-3\n\n[output]\ndir = \"{}\"\nseed = {seed}\n",
            out.display()
        )
    };
    let c1 = dir.config("a.toml", &body(&dir.path("one"), 7));
    let c2 = dir.config("b.toml", &body(&dir.path("two"), 7));
    let c3 = dir.config("c.toml", &body(&dir.path("three"), 8));
    for c in [&c1, &c2, &c3] {
        let r = run(ltcar().args(["simulate", "--config"]).arg(c));
        assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    }
    let one = read(&dir.path("one").join("simulate.csv"));
    let two = read(&dir.path("two").join("simulate.csv"));
    let three = read(&dir.path("three").join("simulate.csv"));
    assert_eq!(one, two, "same seed must reproduce the run");
    assert_ne!(one, three, "different seed must perturb differently");
}
