//! Head-to-head visual-inertial odometry on one degraded scenario:
//! the pose-only update against the null-space-projection baseline,
//! plus raw dead reckoning for scale.
//!
//!     cargo run --release --example visual_update_comparison

use tcnav::earth::EarthParams;
use tcnav::ins::propagate_nav;
use tcnav::pipeline::{run_on_dataset, InitMode, Mode, RunConfig};
use tcnav::sim::{generate, ScenarioConfig};

fn main() {
    let ds = generate(&ScenarioConfig::default_degraded(3)).unwrap();

    // Dead reckoning from the same initial state.
    let earth = EarthParams::default();
    let dt = 1.0 / ds.config.imu_rate;
    let mut nav = ds.truth[0].clone();
    nav.accel_bias = nalgebra::Vector3::zeros();
    nav.gyro_bias = nalgebra::Vector3::zeros();
    let mut dr_rms = 0.0;
    for (k, sample) in ds.imu.iter().enumerate() {
        nav = propagate_nav(&nav, sample, dt, &earth).unwrap();
        dr_rms += (nav.position - ds.truth[k + 1].position).norm_squared();
    }
    dr_rms = (dr_rms / ds.imu.len() as f64).sqrt();
    println!("dead reckoning : translation rms {dr_rms:8.2} m");

    for mode in [Mode::Msckf, Mode::PoVins] {
        let run = RunConfig {
            mode,
            init: InitMode::Truth,
            ..RunConfig::default()
        };
        let out = run_on_dataset(&ds, &run).unwrap();
        println!(
            "{:>14} : translation rms {:8.2} m ({:.2} % of path), rotation rms {:.3} deg, {} tracks in {} updates",
            mode.name(),
            out.report.translation.rms,
            out.report
                .translation_percent
                .as_ref()
                .map(|p| p.rms)
                .unwrap_or(0.0),
            out.report.rotation_deg.rms,
            out.tracks_used,
            out.visual_updates,
        );
    }
    println!("(the pose-only model keeps working through the occlusion windows where");
    println!(" triangulation-based tracks fall below their three-observation minimum)");
}
