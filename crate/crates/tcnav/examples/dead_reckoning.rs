//! Strapdown mechanization alone: integrate a noise-free IMU stream and
//! compare against ground truth (the discretization floor), then the
//! same with realistic sensor errors (drift).
//!
//!     cargo run --example dead_reckoning

use tcnav::earth::EarthParams;
use tcnav::ins::propagate_nav;
use tcnav::math::rotation_angle;
use tcnav::sim::{generate, ScenarioConfig};

fn run(label: &str, config: &ScenarioConfig) {
    let ds = generate(config).unwrap();
    let earth = EarthParams::default();
    let dt = 1.0 / config.imu_rate;
    let mut nav = ds.truth[0].clone();
    let mut worst = 0.0_f64;
    for (k, sample) in ds.imu.iter().enumerate() {
        nav = propagate_nav(&nav, sample, dt, &earth).unwrap();
        let err = (nav.position - ds.truth[k + 1].position).norm();
        worst = worst.max(err);
    }
    let truth_end = ds.truth.last().unwrap();
    println!(
        "{label}: final position error {:.6} m (max {:.6}), attitude error {:.6} deg",
        (nav.position - truth_end.position).norm(),
        worst,
        rotation_angle(&nav.attitude, &truth_end.attitude).to_degrees()
    );
}

fn main() {
    let base = ScenarioConfig {
        seed: 7,
        duration: 60.0,
        feature_count: 10,
        ..ScenarioConfig::default()
    };
    run("noise-free IMU  ", &base.clone().noise_free());
    run("MEMS-grade IMU  ", &base);
    println!("(the filter exists to close the gap between those two lines)");
}
