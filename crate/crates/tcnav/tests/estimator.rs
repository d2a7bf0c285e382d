//! Estimator-level Monte-Carlo checks that need the simulator and the
//! full event loop.

use tcnav::earth::EarthParams;
use tcnav::ins::propagate_nav;
use tcnav::pipeline::{run_on_dataset, InitMode, Mode, RunConfig};
use tcnav::sim::{generate, ScenarioConfig};

/// Paired Monte-Carlo: with bias-corrupted but otherwise noise-free IMU
/// and noisy pixels, the pose-only visual update ends closer to the
/// truth than dead reckoning in at least 95 of 100 seeded runs.
#[test]
fn po_update_beats_dead_reckoning() {
    let earth = EarthParams::default();
    let mut wins = 0usize;
    let runs = 100u64;
    for seed in 0..runs {
        let mut config = ScenarioConfig {
            seed: 500 + seed,
            duration: 60.0,
            feature_count: 120,
            ..ScenarioConfig::default()
        };
        // Noise-free IMU in the white-noise sense; the constant bias
        // draws stay, which is what makes dead reckoning drift.
        config.noise.gyro_noise_density = 0.0;
        config.noise.accel_noise_density = 0.0;
        config.noise.gyro_bias_walk = 0.0;
        config.noise.accel_bias_walk = 0.0;
        config.pixel_sigma = 1.0;
        let ds = generate(&config).unwrap();

        let dt = 1.0 / config.imu_rate;
        let mut nav = ds.truth[0].clone();
        nav.accel_bias = nalgebra::Vector3::zeros();
        nav.gyro_bias = nalgebra::Vector3::zeros();
        for sample in &ds.imu {
            nav = propagate_nav(&nav, sample, dt, &earth).unwrap();
        }
        let truth_end = ds.truth.last().unwrap();
        let dr_error = (nav.position - truth_end.position).norm();

        let run = RunConfig {
            mode: Mode::PoVins,
            init: InitMode::Truth,
            ..RunConfig::default()
        };
        let out = run_on_dataset(&ds, &run).unwrap();
        let po_error = (out.trajectory.last().unwrap().position - truth_end.position).norm();
        if po_error < dr_error {
            wins += 1;
        }
    }
    assert!(wins >= 95, "pose-only beat dead reckoning in only {wins}/{runs} runs");
    println!("pose-only update beat dead reckoning in {wins}/{runs} runs");
}

/// The five modes produce finite, sane reports on the default degraded
/// scenario with coarse alignment (the CLI's default initialization for
/// the GNSS modes).
#[test]
fn all_modes_run_with_alignment() {
    let ds = generate(&ScenarioConfig::default_degraded(77)).unwrap();
    for mode in [Mode::Gi, Mode::MGvins, Mode::PoGvins] {
        let run = RunConfig {
            mode,
            init: InitMode::Align,
            ..RunConfig::default()
        };
        let out = run_on_dataset(&ds, &run).unwrap();
        assert!(out.report.translation.rms.is_finite());
        assert!(
            out.report.translation.rms < 5.0,
            "{}: rms {}",
            mode.name(),
            out.report.translation.rms
        );
        assert!(out.gnss_epochs_used > 50, "{}", mode.name());
        assert!(out.ambiguity_fixes > 20, "{}", mode.name());
    }
}

/// Pixel outliers get rejected by the innovation gate rather than
/// corrupting the state.
#[test]
fn pixel_outliers_are_gated() {
    let mut config = ScenarioConfig {
        seed: 31,
        duration: 30.0,
        ..ScenarioConfig::default()
    };
    config.degradations = vec![tcnav::sim::Degradation::PixelOutliers {
        start: 5.0,
        end: 25.0,
        fraction: 0.15,
        shift_px: 120.0,
    }];
    let clean = {
        let mut c = config.clone();
        c.degradations.clear();
        generate(&c).unwrap()
    };
    let dirty = generate(&config).unwrap();
    let run = RunConfig {
        mode: Mode::PoVins,
        init: InitMode::Truth,
        ..RunConfig::default()
    };
    let out_clean = run_on_dataset(&clean, &run).unwrap();
    let out_dirty = run_on_dataset(&dirty, &run).unwrap();
    // Outliers cost some accuracy but must not wreck the estimate.
    assert!(
        out_dirty.report.translation.rms < 4.0 * out_clean.report.translation.rms + 1.0,
        "clean {} vs dirty {}",
        out_clean.report.translation.rms,
        out_dirty.report.translation.rms
    );
}
