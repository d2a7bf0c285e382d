//! GNSS/IMU coarse alignment: epoch-wise DD pseudorange fixes seed a
//! quadratic fit for position/velocity, the velocity azimuth gives yaw,
//! and accelerometer leveling (with centripetal compensation) gives roll
//! and pitch.
//!
//!     cargo run --example coarse_alignment

use tcnav::earth::EarthParams;
use tcnav::ins::coarse_align;
use tcnav::math::rotation_angle;
use tcnav::rtk::{dd_point_solution, double_difference};
use tcnav::sim::{generate, ScenarioConfig};

fn main() {
    let config = ScenarioConfig {
        seed: 21,
        duration: 30.0,
        ..ScenarioConfig::default()
    };
    let ds = generate(&config).unwrap();
    let earth = EarthParams::default();

    let mut fixes = Vec::new();
    for (rover, base) in ds.gnss_rover.iter().zip(&ds.gnss_base) {
        if rover.timestamp > 10.0 {
            break;
        }
        if let Ok(dd) = double_difference(&rover.observations, &base.observations) {
            if let Some(fix) = dd_point_solution(&dd, &ds.base_position) {
                fixes.push((rover.timestamp, fix));
            }
        }
    }
    println!("DD pseudorange fixes collected: {}", fixes.len());

    let imu: Vec<_> = ds
        .imu
        .iter()
        .filter(|s| s.timestamp <= 10.0)
        .cloned()
        .collect();
    let nav = coarse_align(&fixes, &imu, &earth).unwrap();

    let dt = 1.0 / config.imu_rate;
    let truth = &ds.truth[((nav.timestamp / dt).round() as usize).min(ds.truth.len() - 1)];
    println!("aligned at t = {:.1} s", nav.timestamp);
    println!(
        "position error : {:.3} m",
        (nav.position - truth.position).norm()
    );
    println!(
        "velocity error : {:.3} m/s",
        (nav.velocity - truth.velocity).norm()
    );
    println!(
        "attitude error : {:.3} deg",
        rotation_angle(&nav.attitude, &truth.attitude).to_degrees()
    );
}
