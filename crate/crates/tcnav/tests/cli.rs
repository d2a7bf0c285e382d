//! End-to-end CLI checks: the four subcommands against real files, file
//! formats reparse to the same aggregates, plots are well-formed XML.

use std::fs;
use std::path::PathBuf;

use tcnav::cli::main_with_args;
use tcnav::config::KeyValueFile;
use tcnav::dataset::read_trajectory;
use tcnav::metrics::compute_metrics;
use tcnav::plot::xml_well_formed;

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tcnav_cli_{tag}_{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_run_evaluate_plot_round_trip() {
    let dir = workdir("roundtrip");
    let dataset_dir = dir.join("dataset");
    let report_dir = dir.join("report");

    let scenario = "\
seed = 5
duration = 30
trajectory = figure-eight
feature_count = 150
degradation = gnss_outage,12,18
degradation = nlos_bias,20,26,9,12
";
    let scenario_path = dir.join("scenario.cfg");
    fs::write(&scenario_path, scenario).unwrap();
    assert_eq!(
        main_with_args(&args(&[
            "simulate",
            scenario_path.to_str().unwrap(),
            dataset_dir.to_str().unwrap()
        ])),
        0
    );
    for file in ["imu.csv", "features.csv", "gnss_rover.csv", "gnss_base.csv", "truth.csv", "meta"]
    {
        assert!(dataset_dir.join(file).exists(), "{file} missing");
    }

    let run_cfg = format!(
        "mode = po-gvins\ndataset = {}\noutput = {}\ninit = align\n",
        dataset_dir.display(),
        report_dir.display()
    );
    let run_path = dir.join("run.cfg");
    fs::write(&run_path, run_cfg).unwrap();
    assert_eq!(main_with_args(&args(&["run", run_path.to_str().unwrap()])), 0);

    // The emitted trajectory evaluates against the dataset truth with the
    // same aggregates the run reported.
    let est_path = report_dir.join("trajectory.csv");
    let truth_path = dataset_dir.join("truth.csv");
    assert_eq!(
        main_with_args(&args(&[
            "evaluate",
            est_path.to_str().unwrap(),
            truth_path.to_str().unwrap()
        ])),
        0
    );
    let est = read_trajectory(&est_path).unwrap();
    let truth = read_trajectory(&truth_path).unwrap();
    let report = compute_metrics(&est, &truth, false).unwrap();
    let summary = KeyValueFile::parse(&fs::read_to_string(report_dir.join("summary")).unwrap())
        .unwrap();
    let reported_rms: f64 = summary.get("translation_rms_m").unwrap().parse().unwrap();
    assert!(
        (report.translation.rms - reported_rms).abs() < 1e-9,
        "reparsed rms {} vs reported {}",
        report.translation.rms,
        reported_rms
    );

    // CDF csv is monotone in both columns.
    let cdf_text = fs::read_to_string(report_dir.join("cdf.csv")).unwrap();
    let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for line in cdf_text.lines().skip(1) {
        let mut it = line.split(',');
        let e: f64 = it.next().unwrap().parse().unwrap();
        let f: f64 = it.next().unwrap().parse().unwrap();
        assert!(e >= prev.0 && f >= prev.1, "CDF not monotone at {line}");
        prev = (e, f);
    }

    // Plots exist and are well-formed XML; `plot` regenerates them.
    for svg in ["trajectory.svg", "error_series.svg", "cdf.svg"] {
        let text = fs::read_to_string(report_dir.join(svg)).unwrap();
        assert!(xml_well_formed(&text), "{svg} not well-formed");
        fs::remove_file(report_dir.join(svg)).unwrap();
    }
    assert_eq!(
        main_with_args(&args(&["plot", report_dir.to_str().unwrap()])),
        0
    );
    for svg in ["trajectory.svg", "error_series.svg", "cdf.svg"] {
        let text = fs::read_to_string(report_dir.join(svg)).unwrap();
        assert!(xml_well_formed(&text), "regenerated {svg} not well-formed");
    }

    fs::remove_dir_all(&dir).ok();
}

#[test]
fn errors_exit_nonzero() {
    // Unknown command.
    assert_ne!(main_with_args(&args(&["frobnicate"])), 0);
    // Missing files.
    assert_ne!(main_with_args(&args(&["run", "/nonexistent/run.cfg"])), 0);
    assert_ne!(
        main_with_args(&args(&["evaluate", "/nonexistent/a.csv", "/nonexistent/b.csv"])),
        0
    );
    // Unsupported mode string.
    let dir = workdir("badmode");
    let run_path = dir.join("run.cfg");
    fs::write(&run_path, "mode = spp\ndataset = /tmp\n").unwrap();
    assert_ne!(main_with_args(&args(&["run", run_path.to_str().unwrap()])), 0);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn vision_only_mode_through_cli() {
    let dir = workdir("vio");
    let dataset_dir = dir.join("dataset");
    fs::write(dir.join("scenario.cfg"), "seed = 9\nduration = 20\n").unwrap();
    assert_eq!(
        main_with_args(&args(&[
            "simulate",
            dir.join("scenario.cfg").to_str().unwrap(),
            dataset_dir.to_str().unwrap()
        ])),
        0
    );
    let run_cfg = format!(
        "mode = po-vins\ndataset = {}\noutput = {}\n",
        dataset_dir.display(),
        dir.join("report").display()
    );
    fs::write(dir.join("run.cfg"), run_cfg).unwrap();
    assert_eq!(
        main_with_args(&args(&["run", dir.join("run.cfg").to_str().unwrap()])),
        0
    );
    // Percent-normalized metrics present for the vision-only mode.
    let summary =
        KeyValueFile::parse(&fs::read_to_string(dir.join("report").join("summary")).unwrap())
            .unwrap();
    assert!(summary.get("translation_rms_percent").is_some());
    fs::remove_dir_all(&dir).ok();
}
