//! Generate a synthetic scenario and write it out as a CSV dataset
//! directory.
//!
//!     cargo run --example simulate_scenario -- /tmp/tcnav_demo

use tcnav::dataset::write_dataset;
use tcnav::sim::{generate, Degradation, ScenarioConfig, TrajectoryKind};

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "/tmp/tcnav_demo_dataset".to_string());

    let config = ScenarioConfig {
        seed: 42,
        duration: 60.0,
        trajectory: TrajectoryKind::FigureEight,
        degradations: vec![
            Degradation::GnssOutage {
                start: 25.0,
                end: 35.0,
            },
            Degradation::NlosBias {
                start: 40.0,
                end: 50.0,
                sat_id: 9,
                bias: 12.0,
            },
        ],
        ..ScenarioConfig::default()
    };

    let ds = generate(&config).unwrap();
    let visible: f64 = ds
        .gnss_rover
        .iter()
        .map(|e| e.observations.len() as f64)
        .sum::<f64>()
        / ds.gnss_rover.len().max(1) as f64;
    let features: f64 = ds
        .frames
        .iter()
        .map(|f| f.observations.len() as f64)
        .sum::<f64>()
        / ds.frames.len().max(1) as f64;

    println!("trajectory      : {}", config.trajectory.name());
    println!("duration        : {} s", config.duration);
    println!("imu samples     : {}", ds.imu.len());
    println!("camera frames   : {} ({features:.1} features/frame avg)", ds.frames.len());
    println!("gnss epochs     : {} ({visible:.1} satellites avg)", ds.gnss_rover.len());
    println!("baseline length : {:.1} m", (ds.base_position - ds.truth[0].position).norm());

    write_dataset(&ds, std::path::Path::new(&out)).unwrap();
    println!("dataset written to {out}");
}
