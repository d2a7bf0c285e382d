//! Batch command-line interface: `simulate`, `run`, `evaluate`, `plot`.
//!
//! Errors print a single machine-readable line `error: <message>` on
//! stderr and exit nonzero.

use std::path::{Path, PathBuf};

use crate::config::KeyValueFile;
use crate::dataset::{read_trajectory, write_dataset};
use crate::config::kv_to_scenario;
use crate::metrics::compute_metrics;
use crate::pipeline::{run_pipeline, RunConfig};
use crate::plot::{render_lines, write_svg, Series};
use crate::sim::generate;

const USAGE: &str = "usage:
  tcnav simulate <scenario_config> <out_dir>
  tcnav run <run_config>
  tcnav evaluate <estimate_trajectory.csv> <truth.csv>
  tcnav plot <report_dir>";

/// Entry point shared by the binary and the tests. Returns the process
/// exit code.
pub fn main_with_args(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            eprintln!("{USAGE}");
            1
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), String> {
    match args {
        [cmd, config, out_dir] if cmd == "simulate" => simulate(config, out_dir),
        [cmd, run_config] if cmd == "run" => run(run_config),
        [cmd, est, truth] if cmd == "evaluate" => evaluate(est, truth),
        [cmd, report_dir] if cmd == "plot" => plot(report_dir),
        _ => Err("unknown or incomplete command".to_string()),
    }
}

fn simulate(config_path: &str, out_dir: &str) -> Result<(), String> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| format!("reading {config_path}: {e}"))?;
    let kv = KeyValueFile::parse(&text).map_err(|e| e.to_string())?;
    let config = kv_to_scenario(&kv).map_err(|e| e.to_string())?;
    let ds = generate(&config).map_err(|e| e.to_string())?;
    write_dataset(&ds, Path::new(out_dir)).map_err(|e| e.to_string())?;
    println!(
        "simulated {}: {:.0} s, {} imu samples, {} frames, {} gnss epochs -> {}",
        config.trajectory.name(),
        config.duration,
        ds.imu.len(),
        ds.frames.len(),
        ds.gnss_rover.len(),
        out_dir
    );
    Ok(())
}

fn run(run_config_path: &str) -> Result<(), String> {
    let text = std::fs::read_to_string(run_config_path)
        .map_err(|e| format!("reading {run_config_path}: {e}"))?;
    let kv = KeyValueFile::parse(&text).map_err(|e| e.to_string())?;
    let cfg = RunConfig::from_kv(&kv).map_err(|e| e.to_string())?;
    let out = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    println!(
        "mode {}: translation rms {:.4} m (max {:.4}, p95 {:.4}), rotation rms {:.4} deg",
        cfg.mode.name(),
        out.report.translation.rms,
        out.report.translation.max,
        out.report.translation.p95,
        out.report.rotation_deg.rms
    );
    if let Some(p) = &out.report.translation_percent {
        println!(
            "normalized: translation rms {:.4} %, rotation rms {:.6} deg/m",
            p.rms,
            out.report.rotation_deg_per_m.as_ref().map(|r| r.rms).unwrap_or(0.0)
        );
    }
    println!(
        "gnss epochs {}, ambiguity fixes {}, visual updates {} ({} tracks)",
        out.gnss_epochs_used, out.ambiguity_fixes, out.visual_updates, out.tracks_used
    );
    if let Some(dir) = &cfg.output_dir {
        println!("report written to {}", dir.display());
    }
    Ok(())
}

fn evaluate(est_path: &str, truth_path: &str) -> Result<(), String> {
    let est = read_trajectory(Path::new(est_path)).map_err(|e| e.to_string())?;
    let truth = read_trajectory(Path::new(truth_path)).map_err(|e| e.to_string())?;
    let report = compute_metrics(&est, &truth, true).map_err(|e| e.to_string())?;
    println!("samples aligned: {}", report.series.len());
    println!("trajectory length: {:.2} m", report.trajectory_length);
    println!(
        "translation [m]: max {:.4} avg {:.4} rms {:.4} p95 {:.4}",
        report.translation.max,
        report.translation.avg,
        report.translation.rms,
        report.translation.p95
    );
    println!(
        "rotation [deg]: max {:.4} avg {:.4} rms {:.4} p95 {:.4}",
        report.rotation_deg.max,
        report.rotation_deg.avg,
        report.rotation_deg.rms,
        report.rotation_deg.p95
    );
    if let Some(p) = &report.translation_percent {
        println!(
            "translation [% of length]: max {:.4} avg {:.4} rms {:.4} p95 {:.4}",
            p.max, p.avg, p.rms, p.p95
        );
    }
    Ok(())
}

/// Rebuild the SVG plots of a report directory from its CSV files.
fn plot(report_dir: &str) -> Result<(), String> {
    let dir = PathBuf::from(report_dir);
    let read_csv = |name: &str| -> Result<Vec<Vec<f64>>, String> {
        let text = std::fs::read_to_string(dir.join(name))
            .map_err(|e| format!("reading {name}: {e}"))?;
        let mut rows = Vec::new();
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse()).collect();
            rows.push(row.map_err(|e| format!("{name}: {e}"))?);
        }
        Ok(rows)
    };

    // If the directory came from a full run, replot everything it holds;
    // the dataset is not required.
    let errors = read_csv("errors.csv")?;
    let err_t: Vec<(f64, f64)> = errors.iter().map(|r| (r[0], r[1])).collect();
    let err_r: Vec<(f64, f64)> = errors.iter().map(|r| (r[0], r[2])).collect();
    let svg = render_lines(
        "error time series",
        "time [s]",
        "error",
        &[
            Series {
                label: "translation [m]",
                points: &err_t,
            },
            Series {
                label: "rotation [deg]",
                points: &err_r,
            },
        ],
    );
    write_svg(&dir.join("error_series.svg"), &svg).map_err(|e| e.to_string())?;

    let cdf_rows = read_csv("cdf.csv")?;
    let cdf: Vec<(f64, f64)> = cdf_rows.iter().map(|r| (r[0], r[1])).collect();
    let svg = render_lines(
        "translation error CDF",
        "error [m]",
        "fraction",
        &[Series {
            label: "cdf",
            points: &cdf,
        }],
    );
    write_svg(&dir.join("cdf.svg"), &svg).map_err(|e| e.to_string())?;

    let traj = read_csv("trajectory.csv")?;
    let xy: Vec<(f64, f64)> = traj.iter().map(|r| (r[1], r[2])).collect();
    let svg = render_lines(
        "trajectory (raw x/y)",
        "x [m]",
        "y [m]",
        &[Series {
            label: "estimate",
            points: &xy,
        }],
    );
    write_svg(&dir.join("trajectory.svg"), &svg).map_err(|e| e.to_string())?;
    println!("plots written to {}", dir.display());
    Ok(())
}


