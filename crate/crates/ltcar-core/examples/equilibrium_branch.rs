//! Traces the cornering-equilibrium branch of the sports preset at 30 m/s
//! and prints a short summary: peak lateral acceleration, the fold point,
//! and the low-acceleration understeer gradient.
//!
//! Run with `cargo run -p ltcar-core --example equilibrium_branch`.

use ltcar_core::manifold::{
    trace_branch, understeer_gradient_window, ContinuationOptions, EquilibriumUnknowns,
};
use ltcar_core::presets;

fn main() {
    let preset = presets::sports();
    let (p, t) = (preset.vehicle, preset.tires());
    let v = 30.0;

    let opts = ContinuationOptions::default();
    let branch = trace_branch(&EquilibriumUnknowns::ZERO, v, &p, &t, &opts)
        .expect("branch trace failed");

    let worst = branch
        .points
        .iter()
        .map(|pt| pt.residual_norm)
        .fold(0.0_f64, f64::max);
    let (fold_idx, max_a) = branch.max_a_lat().expect("empty branch");
    let fold = &branch.points[fold_idx];

    println!("points traced     {}", branch.points.len());
    println!("worst residual    {worst:.3e} N");
    println!("peak a_lat        {max_a:.3} m/s^2 at point {fold_idx}");
    println!(
        "fold state        beta {:+.4} rad  delta {:+.4} rad  kappa_r {:+.5}",
        fold.unknowns.beta, fold.unknowns.delta, fold.unknowns.kappa_r
    );
    println!(
        "fold loads        front {:.1} N  rear {:.1} N",
        fold.loads.front_magnitude(),
        fold.loads.rear_magnitude()
    );

    let samples = understeer_gradient_window(&branch, 0.0, 3.0).expect("understeer window");
    let k_us = samples.first().expect("no samples").k_us;
    println!("understeer grad   {k_us:+.4e} rad/(m/s^2) near zero");

    assert!(worst <= 1e-8, "branch residuals out of tolerance");
    assert!(max_a < 1.688 * 9.81, "peak a_lat exceeds the friction cap");
    assert!(k_us < 0.0, "expected a slightly oversteering setup");
    println!("ok");
}
