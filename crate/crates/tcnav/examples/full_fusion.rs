//! The full tightly coupled pipeline on a degraded scenario, with the
//! report directory (trajectory/error/CDF CSVs and SVG plots) written
//! out, comparing the GNSS/IMU-only and both GNSS+vision configurations.
//!
//!     cargo run --release --example full_fusion -- /tmp/tcnav_report

use tcnav::dataset::write_dataset;
use tcnav::pipeline::{emit_outputs, run_on_dataset, InitMode, Mode, RunConfig};
use tcnav::sim::{generate, ScenarioConfig};

fn main() {
    let out_root = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "/tmp/tcnav_report".to_string());
    let out_root = std::path::PathBuf::from(out_root);

    let ds = generate(&ScenarioConfig::default_degraded(1)).unwrap();
    write_dataset(&ds, &out_root.join("dataset")).unwrap();

    for mode in [Mode::Gi, Mode::MGvins, Mode::PoGvins] {
        let run = RunConfig {
            mode,
            init: InitMode::Align,
            ..RunConfig::default()
        };
        let out = run_on_dataset(&ds, &run).unwrap();
        println!(
            "{:>8}: translation rms {:.3} m (p95 {:.3}, max {:.3}), rotation rms {:.3} deg, {} fixes over {} epochs",
            mode.name(),
            out.report.translation.rms,
            out.report.translation.p95,
            out.report.translation.max,
            out.report.rotation_deg.rms,
            out.ambiguity_fixes,
            out.gnss_epochs_used,
        );
        let dir = out_root.join(mode.name());
        emit_outputs(&out, &ds, &dir).unwrap();
        println!("          report in {}", dir.display());
    }
    println!("(figures: trajectory.svg, error_series.svg, cdf.svg in each report directory)");
}
