//! Drives the full exploration pipeline on the built-in chicane at 60%
//! aggressiveness: path sampling, quasi-static equilibrium curve, gain
//! design, projection, and the descent iteration. Prints the iterate log
//! and checks the invariants the pipeline promises.
//!
//! Run with `cargo run -p ltcar-core --example explore_chicane`.

use ltcar_core::explore::{
    chicane, chicane_speeds, explore, morph_family, quasi_static, TireMode,
};
use ltcar_core::presets;
use ltcar_core::trajopt::{design_gain_about, project, StopCriteria, Weights, DEFAULT_DT};
use ltcar_core::vehicle::Model;

fn main() {
    let preset = presets::sports();
    let model = Model::new(preset.vehicle, preset.tires());
    let w = Weights::default();
    let spec = chicane();
    let speeds = chicane_speeds();

    let family = morph_family(&[60.0], |percent| {
        quasi_static(
            &spec,
            &speeds.with_aggressiveness(percent)?,
            &preset.vehicle,
            &preset.tires(),
            TireMode::Pacejka,
            DEFAULT_DT,
        )
    })
    .expect("quasi-static curve generation failed");
    let target = &family.legs[0].curve;
    println!(
        "desired curve     {} samples over {:.2} s ({:.0} m)",
        target.len(),
        target.duration(),
        spec.length()
    );

    let stop = StopCriteria { grad_tol: 1e-6, max_iter: 50 };
    let out = explore(&family, &w, &model, &stop).expect("exploration failed");
    let leg = &out.legs[0];
    for it in &leg.outcome.iterates {
        match it.gamma {
            Some(g) => println!(
                "iter {:>2}  cost {:>12.6e}  grad {:>12.5e}  gamma {g}",
                it.iter, it.cost, it.grad_zeta
            ),
            None => println!(
                "iter {:>2}  cost {:>12.6e}  grad {:>12.5e}  (stop)",
                it.iter, it.cost, it.grad_zeta
            ),
        }
    }
    println!("stop reason       {:?}", leg.outcome.reason);
    println!("final cost        {:.6e}", leg.outcome.cost);

    for pair in leg.outcome.iterates.windows(2) {
        assert!(
            pair[1].cost <= pair[0].cost + 1e-12,
            "cost rose between iterates {} and {}",
            pair[0].iter,
            pair[1].iter
        );
    }

    let rms = |states: &[ltcar_core::vehicle::CarState]| -> f64 {
        let mut acc = 0.0;
        for (a, b) in states.iter().zip(target.states()) {
            acc += (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y);
        }
        (acc / states.len() as f64).sqrt()
    };
    let gains = design_gain_about(target, &w, &model).expect("gain design failed");
    let bare = project(target, &gains, &model).expect("projection failed");
    let optimal_rms = rms(out.final_trajectory().curve().states());
    let bare_rms = rms(bare.curve().states());
    println!("projection rms    {bare_rms:.4e} m");
    println!("optimized rms     {optimal_rms:.4e} m");
    assert!(
        optimal_rms < bare_rms,
        "optimizer did not beat the bare projection"
    );
    assert!(
        leg.outcome.iterates.len() <= 51,
        "unexpected iterate count {}",
        leg.outcome.iterates.len()
    );
    println!("ok");
}
