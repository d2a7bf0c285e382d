//! End-to-end estimation pipeline: time-ordered event loop over IMU,
//! camera, and GNSS measurements, five estimator configurations
//! (vision-only with pose-only or MSCKF updates, GNSS/IMU, and the two
//! GNSS+vision combinations), metric computation, and file outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, KeyValueFile};
use crate::dataset::{write_trajectory, DatasetError, TrajectorySample};
use crate::earth::EarthParams;
use crate::filter::{msckf_update, po_update, FilterError, FilterState, VisualUpdateConfig};
use crate::ins::{
    coarse_align, error_state_matrices, propagate_covariance, propagate_nav, InsError, NavState,
    IMU_STATE_DIM,
};
use crate::metrics::{compute_metrics, ErrorReport, MetricsError};
use crate::plot::{render_lines, write_svg, Series};
use crate::rtk::{
    dd_point_solution, double_difference, manage_ambiguities, resolve_and_constrain, rtk_update,
    AmbiguitySet, ResolutionOutcome, RtkConfig, RtkError,
};
use crate::sim::ScenarioDataset;
use crate::stats::standard_normal;
use crate::vision::{FeatureTrack, TrackObservation};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unsupported mode `{0}`")]
    ModeUnsupported(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ins(#[from] InsError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Rtk(#[from] RtkError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("alignment failed and no truth fallback was allowed")]
    AlignmentFailed,
}

/// The five estimator configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    PoVins,
    Msckf,
    Gi,
    MGvins,
    PoGvins,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "po-vins" => Some(Mode::PoVins),
            "msckf" => Some(Mode::Msckf),
            "gi" => Some(Mode::Gi),
            "m-gvins" => Some(Mode::MGvins),
            "po-gvins" => Some(Mode::PoGvins),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::PoVins => "po-vins",
            Mode::Msckf => "msckf",
            Mode::Gi => "gi",
            Mode::MGvins => "m-gvins",
            Mode::PoGvins => "po-gvins",
        }
    }

    pub fn uses_vision(&self) -> bool {
        !matches!(self, Mode::Gi)
    }

    pub fn uses_pose_only(&self) -> bool {
        matches!(self, Mode::PoVins | Mode::PoGvins)
    }

    pub fn uses_gnss(&self) -> bool {
        matches!(self, Mode::Gi | Mode::MGvins | Mode::PoGvins)
    }
}

/// Filter initialization policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Start at the first ground-truth state (biases still unknown).
    Truth,
    /// Coarse GNSS/IMU alignment over the first seconds of data.
    Align,
}

/// Full run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub dataset_dir: PathBuf,
    pub output_dir: Option<PathBuf>,
    pub window_size: usize,
    pub visual: VisualUpdateConfig,
    pub rtk: RtkConfig,
    pub init: InitMode,
    pub align_duration: f64,
    /// When set, the initial estimate is perturbed by a draw from the
    /// initial covariance (used by consistency tests).
    pub init_perturb_seed: Option<u64>,
    /// Initial 1-sigma uncertainties: position, velocity, attitude.
    pub init_pos_sigma: f64,
    pub init_vel_sigma: f64,
    pub init_att_sigma: f64,
    /// Check covariance symmetry and positive semi-definiteness after
    /// every propagation and update step (slow; used by the health
    /// checks).
    pub validate_covariance: bool,
    /// Record the position-error covariance block once per second.
    pub log_covariance: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        // Sigma fields of zero mean "adopt the dataset's sensor spec";
        // see `run_on_dataset`.
        let visual = VisualUpdateConfig {
            pixel_sigma: 0.0,
            ..VisualUpdateConfig::default()
        };
        let rtk = RtkConfig {
            code_sigma: 0.0,
            phase_sigma: 0.0,
            ..RtkConfig::default()
        };
        RunConfig {
            mode: Mode::PoGvins,
            dataset_dir: PathBuf::new(),
            output_dir: None,
            window_size: 10,
            visual,
            rtk,
            init: InitMode::Truth,
            align_duration: 10.0,
            init_perturb_seed: None,
            init_pos_sigma: 0.05,
            init_vel_sigma: 0.05,
            init_att_sigma: 2e-3,
            validate_covariance: false,
            log_covariance: false,
        }
    }
}

impl RunConfig {
    /// Parse a run configuration from flat key-value text.
    pub fn from_kv(kv: &KeyValueFile) -> Result<RunConfig, PipelineError> {
        let defaults = RunConfig::default();
        let mode_str = kv.require("mode")?;
        let mode = Mode::parse(mode_str)
            .ok_or_else(|| PipelineError::ModeUnsupported(mode_str.to_string()))?;
        let dataset_dir = PathBuf::from(kv.require("dataset")?);
        let output_dir = kv.get("output").map(PathBuf::from);
        let init = match kv.get("init") {
            None => {
                if mode.uses_gnss() {
                    InitMode::Align
                } else {
                    InitMode::Truth
                }
            }
            Some("truth") => InitMode::Truth,
            Some("align") => InitMode::Align,
            Some(other) => {
                return Err(PipelineError::Config(ConfigError::BadValue(
                    "init".into(),
                    other.into(),
                )))
            }
        };
        let visual = VisualUpdateConfig {
            pixel_sigma: kv.parse_f64("pixel_sigma", 0.0)?,
            max_iterations: kv.parse_u64("visual_iterations", 5)? as usize,
            convergence_tol: kv.parse_f64("visual_tol", defaults.visual.convergence_tol)?,
            chi2_confidence: kv.parse_f64("chi2_confidence", defaults.visual.chi2_confidence)?,
            min_depth: kv.parse_f64("min_depth", defaults.visual.min_depth)?,
            theta_min: kv.parse_f64("theta_min", defaults.visual.theta_min)?,
            min_track_length: kv.parse_u64("min_track_length", 2)? as usize,
        };
        let rtk = RtkConfig {
            code_sigma: kv.parse_f64("gnss_code_sigma", 0.0)?,
            phase_sigma: kv.parse_f64("gnss_phase_sigma", 0.0)?,
            igg_k0: kv.parse_f64("igg_k0", defaults.rtk.igg_k0)?,
            igg_k1: kv.parse_f64("igg_k1", defaults.rtk.igg_k1)?,
            ratio_threshold: kv.parse_f64("ratio_threshold", defaults.rtk.ratio_threshold)?,
            max_iterations: kv.parse_u64("rtk_iterations", 5)? as usize,
        };
        Ok(RunConfig {
            mode,
            dataset_dir,
            output_dir,
            window_size: kv.parse_u64("window_size", defaults.window_size as u64)? as usize,
            visual,
            rtk,
            init,
            align_duration: kv.parse_f64("align_duration", defaults.align_duration)?,
            init_perturb_seed: kv
                .get("init_perturb_seed")
                .map(|v| v.parse::<u64>())
                .transpose()
                .map_err(|e| ConfigError::BadValue("init_perturb_seed".into(), e.to_string()))?,
            init_pos_sigma: kv.parse_f64("init_pos_sigma", defaults.init_pos_sigma)?,
            init_vel_sigma: kv.parse_f64("init_vel_sigma", defaults.init_vel_sigma)?,
            init_att_sigma: kv.parse_f64("init_att_sigma", defaults.init_att_sigma)?,
            validate_covariance: false,
            log_covariance: false,
        })
    }
}

/// Result of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub trajectory: Vec<TrajectorySample>,
    pub report: ErrorReport,
    pub gnss_epochs_used: usize,
    pub ambiguity_fixes: usize,
    pub visual_updates: usize,
    pub tracks_used: usize,
    /// Position-error covariance blocks at one-second intervals (only
    /// filled with `log_covariance`).
    pub covariance_samples: Vec<(f64, nalgebra::Matrix3<f64>)>,
    /// Largest covariance asymmetry and most negative eigenvalue ratio
    /// seen by `validate_covariance`.
    pub covariance_worst_asymmetry: f64,
    pub covariance_checks: usize,
}

/// Initial covariance assembled from the run configuration and the
/// dataset's bias draw magnitudes.
fn initial_covariance(cfg: &RunConfig, ds: &ScenarioDataset) -> DMatrix<f64> {
    let mut p0 = DMatrix::<f64>::zeros(IMU_STATE_DIM, IMU_STATE_DIM);
    let bias_floor = 1e-6;
    let ba = ds.config.accel_bias_magnitude.max(bias_floor);
    let bg = ds.config.gyro_bias_magnitude.max(bias_floor);
    for k in 0..3 {
        p0[(k, k)] = cfg.init_pos_sigma.powi(2);
        p0[(3 + k, 3 + k)] = cfg.init_vel_sigma.powi(2);
        p0[(6 + k, 6 + k)] = cfg.init_att_sigma.powi(2);
        p0[(9 + k, 9 + k)] = ba * ba;
        p0[(12 + k, 12 + k)] = bg * bg;
    }
    p0
}

/// Truth state at (or nearest to) a timestamp.
fn truth_at(ds: &ScenarioDataset, t: f64) -> NavState {
    let dt = 1.0 / ds.config.imu_rate;
    let idx = ((t / dt).round() as usize).min(ds.truth.len() - 1);
    let mut nav = ds.truth[idx].clone();
    // The estimator never knows the true biases.
    nav.accel_bias = Vector3::zeros();
    nav.gyro_bias = Vector3::zeros();
    nav
}

/// Initialize the filter state per the configured policy. Returns the
/// state and the time from which measurements are consumed.
fn initialize(
    cfg: &RunConfig,
    ds: &ScenarioDataset,
    earth: &EarthParams,
) -> Result<(FilterState, f64), PipelineError> {
    let p0 = initial_covariance(cfg, ds);
    match cfg.init {
        InitMode::Truth => {
            let nav = truth_at(ds, 0.0);
            let mut fs = FilterState::new(nav, p0, cfg.window_size);
            if let Some(seed) = cfg.init_perturb_seed {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let chol = fs
                    .covariance
                    .clone()
                    .cholesky()
                    .expect("initial covariance must be positive definite");
                let z = DVector::from_fn(fs.dim(), |_, _| standard_normal(&mut rng));
                let delta = chol.l() * z;
                fs.apply_correction(&delta);
            }
            Ok((fs, 0.0))
        }
        InitMode::Align => {
            // Epoch-wise DD code fixes over the alignment window.
            let mut fixes = Vec::new();
            for (rover, base) in ds.gnss_rover.iter().zip(&ds.gnss_base) {
                if rover.timestamp > cfg.align_duration {
                    break;
                }
                if let Ok(dd) = double_difference(&rover.observations, &base.observations) {
                    if let Some(fix) = dd_point_solution(&dd, &ds.base_position) {
                        // Antenna fix: the lever arm is unknown before
                        // alignment; it is below the coarse error budget.
                        fixes.push((rover.timestamp, fix));
                    }
                }
            }
            let imu_window: Vec<_> = ds
                .imu
                .iter()
                .filter(|s| s.timestamp <= cfg.align_duration)
                .cloned()
                .collect();
            let nav = coarse_align(&fixes, &imu_window, earth)?;
            let start = nav.timestamp;
            let mut p0 = p0;
            for k in 0..3 {
                p0[(k, k)] = p0[(k, k)].max(0.25);
                p0[(3 + k, 3 + k)] = p0[(3 + k, 3 + k)].max(0.04);
                p0[(6 + k, 6 + k)] = p0[(6 + k, 6 + k)].max(3e-4); // ~1 deg
            }
            Ok((FilterState::new(nav, p0, cfg.window_size), start))
        }
    }
}

/// Run the pipeline on an in-memory dataset.
pub fn run_on_dataset(
    ds: &ScenarioDataset,
    cfg: &RunConfig,
) -> Result<PipelineOutput, PipelineError> {
    let earth = EarthParams::default();
    // Sensor sigmas default to the dataset's sensor values; an explicit
    // positive value in the run configuration overrides.
    let mut cfg = cfg.clone();
    if cfg.visual.pixel_sigma <= 0.0 {
        cfg.visual.pixel_sigma = ds.config.pixel_sigma.max(0.25);
    }
    if cfg.rtk.code_sigma <= 0.0 {
        cfg.rtk.code_sigma = ds.config.gnss_code_sigma.max(1e-3);
    }
    if cfg.rtk.phase_sigma <= 0.0 {
        cfg.rtk.phase_sigma = ds.config.gnss_phase_sigma.max(1e-5);
    }
    let cfg = &cfg;
    let (mut fs, t_start) = initialize(cfg, ds, &earth)?;
    let noise = ds.config.noise;

    let mut trajectory = Vec::new();
    let mut tracks: BTreeMap<u64, FeatureTrack> = BTreeMap::new();
    let mut amb = AmbiguitySet::default();
    let mut frame_idx = 0usize;
    let mut gnss_idx = 0usize;
    let mut gnss_epochs_used = 0usize;
    let mut fixes = 0usize;
    let mut visual_updates = 0usize;
    let mut tracks_used = 0usize;
    let mut last_event_time = t_start;
    let mut covariance_samples: Vec<(f64, nalgebra::Matrix3<f64>)> = Vec::new();
    let mut next_cov_log = t_start;
    let mut covariance_worst_asymmetry = 0.0_f64;
    let mut covariance_checks = 0usize;

    // Skip events before the start time.
    while frame_idx < ds.frames.len() && ds.frames[frame_idx].timestamp < t_start - 1e-9 {
        frame_idx += 1;
    }
    while gnss_idx < ds.gnss_rover.len() && ds.gnss_rover[gnss_idx].timestamp < t_start - 1e-9 {
        gnss_idx += 1;
    }

    let handle_events = |fs: &mut FilterState,
                             tracks: &mut BTreeMap<u64, FeatureTrack>,
                             amb: &mut AmbiguitySet,
                             frame_idx: &mut usize,
                             gnss_idx: &mut usize,
                             gnss_epochs_used: &mut usize,
                             fixes: &mut usize,
                             visual_updates: &mut usize,
                             tracks_used: &mut usize,
                             now: f64|
     -> Result<(), PipelineError> {
        // Camera frames due at or before `now`.
        while *frame_idx < ds.frames.len() && ds.frames[*frame_idx].timestamp <= now + 1e-9 {
            let frame = &ds.frames[*frame_idx];
            *frame_idx += 1;
            if !cfg.mode.uses_vision() {
                continue;
            }
            let frame_feature_ids: std::collections::BTreeSet<u64> =
                frame.observations.iter().map(|(fid, _, _)| *fid).collect();

            // Tracks to consume: ended tracks, and live tracks about to
            // lose their oldest clone to marginalization.
            let mut consume: Vec<FeatureTrack> = Vec::new();
            let mut dead: Vec<u64> = Vec::new();
            for (fid, track) in tracks.iter() {
                if !frame_feature_ids.contains(fid) {
                    dead.push(*fid);
                    if track.len() >= 2 {
                        consume.push(track.clone());
                    }
                }
            }
            if fs.clones.len() >= fs.window_size {
                let oldest = *fs.clones.keys().next().unwrap();
                for (fid, track) in tracks.iter() {
                    if dead.contains(fid) {
                        continue;
                    }
                    if track.observations.contains_key(&oldest) {
                        dead.push(*fid);
                        if track.len() >= 2 {
                            consume.push(track.clone());
                        }
                    }
                }
            }
            for fid in &dead {
                tracks.remove(fid);
            }

            if !consume.is_empty() {
                let result = if cfg.mode.uses_pose_only() {
                    po_update(fs, &consume, &ds.intrinsics, &ds.cam_extrinsics, &cfg.visual)
                } else {
                    msckf_update(fs, &consume, &ds.intrinsics, &ds.cam_extrinsics, &cfg.visual)
                };
                match result {
                    Ok(report) => {
                        *visual_updates += 1;
                        *tracks_used += report.tracks_used;
                    }
                    Err(FilterError::AllTracksRejected) => {}
                    Err(e) => return Err(e.into()),
                }
            }

            // Slide the window and clone the current pose.
            if fs.clones.len() >= fs.window_size {
                fs.marginalize_oldest();
            }
            fs.augment_clone(frame.frame_id, frame.timestamp)?;
            for (fid, pixel, bearing) in &frame.observations {
                tracks
                    .entry(*fid)
                    .or_insert_with(|| FeatureTrack::new(*fid))
                    .observations
                    .insert(
                        frame.frame_id,
                        TrackObservation {
                            bearing: *bearing,
                            pixel: *pixel,
                        },
                    );
            }
        }

        // GNSS epochs due at or before `now`.
        while *gnss_idx < ds.gnss_rover.len()
            && ds.gnss_rover[*gnss_idx].timestamp <= now + 1e-9
        {
            let rover = &ds.gnss_rover[*gnss_idx];
            *gnss_idx += 1;
            if !cfg.mode.uses_gnss() {
                continue;
            }
            let Some(base) = ds
                .gnss_base
                .iter()
                .find(|b| (b.timestamp - rover.timestamp).abs() < 1e-6)
            else {
                continue;
            };
            let Ok(dd) = double_difference(&rover.observations, &base.observations) else {
                continue;
            };
            manage_ambiguities(amb, &dd, fs, &cfg.rtk);
            match rtk_update(
                fs,
                &dd,
                &ds.gnss_lever_arm,
                amb,
                &ds.base_position,
                &cfg.rtk,
            ) {
                Ok(_) => {
                    *gnss_epochs_used += 1;
                    if let ResolutionOutcome::Fixed { .. } =
                        resolve_and_constrain(fs, amb, &cfg.rtk)?
                    {
                        *fixes += 1;
                    }
                }
                Err(RtkError::AllObservationsRejected) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    };

    // Events exactly at the start time run against the initial state.
    handle_events(
        &mut fs,
        &mut tracks,
        &mut amb,
        &mut frame_idx,
        &mut gnss_idx,
        &mut gnss_epochs_used,
        &mut fixes,
        &mut visual_updates,
        &mut tracks_used,
        t_start,
    )?;
    trajectory.push(TrajectorySample::from_nav(&fs.nav));

    for sample in &ds.imu {
        if sample.timestamp <= t_start + 1e-9 {
            continue;
        }
        let step = sample.timestamp - fs.nav.timestamp;
        if step <= 0.0 {
            continue;
        }
        let (f, g) = error_state_matrices(&fs.nav, sample, &earth);
        propagate_covariance(&mut fs.covariance, &f, &g, &noise, step)?;
        fs.nav = propagate_nav(&fs.nav, sample, step, &earth)?;
        debug_assert!(sample.timestamp >= last_event_time);
        last_event_time = sample.timestamp;

        handle_events(
            &mut fs,
            &mut tracks,
            &mut amb,
            &mut frame_idx,
            &mut gnss_idx,
            &mut gnss_epochs_used,
            &mut fixes,
            &mut visual_updates,
            &mut tracks_used,
            sample.timestamp,
        )?;
        trajectory.push(TrajectorySample::from_nav(&fs.nav));

        if cfg.validate_covariance {
            let p = &fs.covariance;
            let mut asym = 0.0_f64;
            let mut max_diag = 0.0_f64;
            for r in 0..p.nrows() {
                max_diag = max_diag.max(p[(r, r)].abs());
                for c in (r + 1)..p.ncols() {
                    asym = asym.max((p[(r, c)] - p[(c, r)]).abs());
                }
            }
            covariance_worst_asymmetry = covariance_worst_asymmetry.max(asym);
            let jitter = 1e-12 * max_diag.max(1e-30);
            let test = p.clone() + DMatrix::<f64>::identity(p.nrows(), p.ncols()) * jitter;
            if test.cholesky().is_none() {
                return Err(PipelineError::Ins(InsError::CovarianceNotPSD));
            }
            covariance_checks += 1;
        }
        if cfg.log_covariance && sample.timestamp >= next_cov_log - 1e-9 {
            covariance_samples.push((
                sample.timestamp,
                fs.covariance.fixed_view::<3, 3>(0, 0).into_owned(),
            ));
            next_cov_log += 1.0;
        }
    }

    // First-pose alignment for the vision-only (drifting-frame) modes;
    // GNSS-aided modes are evaluated in the absolute frame.
    let mut aligned = trajectory.clone();
    if !cfg.mode.uses_gnss() {
        if let Some(first_est) = aligned.first() {
            let truth0 = truth_at(ds, first_est.timestamp);
            let rot = truth0.attitude * first_est.attitude.transpose();
            let shift = truth0.position - rot * first_est.position;
            for s in &mut aligned {
                s.position = rot * s.position + shift;
                s.velocity = rot * s.velocity;
                s.attitude = rot * s.attitude;
            }
        }
    }

    let truth_samples: Vec<TrajectorySample> =
        ds.truth.iter().map(TrajectorySample::from_nav).collect();
    let report = compute_metrics(&aligned, &truth_samples, !cfg.mode.uses_gnss())?;

    Ok(PipelineOutput {
        trajectory: aligned,
        report,
        gnss_epochs_used,
        ambiguity_fixes: fixes,
        visual_updates,
        tracks_used,
        covariance_samples,
        covariance_worst_asymmetry,
        covariance_checks,
    })
}

/// Run the pipeline on a dataset directory, writing outputs if an output
/// directory is configured.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput, PipelineError> {
    let ds = crate::dataset::load_dataset(&cfg.dataset_dir)?;
    let output = run_on_dataset(&ds, cfg)?;
    if let Some(dir) = &cfg.output_dir {
        emit_outputs(&output, &ds, dir)?;
    }
    Ok(output)
}

/// Write trajectory, error-series and CDF CSVs plus the SVG plots into a
/// report directory.
pub fn emit_outputs(
    output: &PipelineOutput,
    ds: &ScenarioDataset,
    dir: &Path,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    write_trajectory(&output.trajectory, &dir.join("trajectory.csv"))?;

    let mut errors = String::from("t,translation_m,rotation_deg,err_right,err_front,err_up\n");
    for s in &output.report.series {
        use std::fmt::Write as _;
        let _ = writeln!(
            errors,
            "{},{},{},{},{},{}",
            s.timestamp, s.translation, s.rotation_deg, s.rfu.x, s.rfu.y, s.rfu.z
        );
    }
    std::fs::write(dir.join("errors.csv"), errors)?;

    let mut cdf = String::from("error_m,fraction\n");
    for (e, f) in &output.report.cdf {
        use std::fmt::Write as _;
        let _ = writeln!(cdf, "{e},{f}");
    }
    std::fs::write(dir.join("cdf.csv"), cdf)?;

    let mut summary = KeyValueFile::default();
    summary.set("translation_max_m", output.report.translation.max);
    summary.set("translation_avg_m", output.report.translation.avg);
    summary.set("translation_rms_m", output.report.translation.rms);
    summary.set("translation_p95_m", output.report.translation.p95);
    summary.set("rotation_max_deg", output.report.rotation_deg.max);
    summary.set("rotation_avg_deg", output.report.rotation_deg.avg);
    summary.set("rotation_rms_deg", output.report.rotation_deg.rms);
    summary.set("rotation_p95_deg", output.report.rotation_deg.p95);
    if let Some(p) = &output.report.translation_percent {
        summary.set("translation_rms_percent", p.rms);
    }
    if let Some(p) = &output.report.rotation_deg_per_m {
        summary.set("rotation_rms_deg_per_m", p.rms);
    }
    summary.set("trajectory_length_m", output.report.trajectory_length);
    summary.set("gnss_epochs_used", output.gnss_epochs_used);
    summary.set("ambiguity_fixes", output.ambiguity_fixes);
    summary.set("visual_updates", output.visual_updates);
    summary.set("tracks_used", output.tracks_used);
    std::fs::write(dir.join("summary"), summary.render())?;

    write_plots(dir, &output.trajectory, ds, &output.report)?;
    Ok(())
}

/// Render the three standard plots from in-memory data.
pub fn write_plots(
    dir: &Path,
    trajectory: &[TrajectorySample],
    ds: &ScenarioDataset,
    report: &ErrorReport,
) -> Result<(), PipelineError> {
    // Top-down trajectory overlay in a local frame anchored at the first
    // truth point.
    let origin = ds.truth[0].position;
    let lla = crate::earth::ecef_to_lla(&origin, &EarthParams::default())
        .unwrap_or(crate::sim::default_origin());
    let r_ne = crate::earth::ned_to_ecef(&lla);
    let to_local = |p: &Vector3<f64>| {
        let d = r_ne.transpose() * (p - origin);
        (d.y, d.x) // east, north
    };
    let truth_xy: Vec<(f64, f64)> = ds.truth.iter().map(|s| to_local(&s.position)).collect();
    let est_xy: Vec<(f64, f64)> = trajectory.iter().map(|s| to_local(&s.position)).collect();
    let svg = render_lines(
        "trajectory (top view)",
        "east [m]",
        "north [m]",
        &[
            Series {
                label: "truth",
                points: &truth_xy,
            },
            Series {
                label: "estimate",
                points: &est_xy,
            },
        ],
    );
    write_svg(&dir.join("trajectory.svg"), &svg)?;

    let err_t: Vec<(f64, f64)> = report
        .series
        .iter()
        .map(|s| (s.timestamp, s.translation))
        .collect();
    let err_r: Vec<(f64, f64)> = report
        .series
        .iter()
        .map(|s| (s.timestamp, s.rotation_deg))
        .collect();
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
    write_svg(&dir.join("error_series.svg"), &svg)?;

    let svg = render_lines(
        "translation error CDF",
        "error [m]",
        "fraction",
        &[Series {
            label: "cdf",
            points: &report.cdf,
        }],
    );
    write_svg(&dir.join("cdf.svg"), &svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate, ScenarioConfig};

    #[test]
    fn mode_parsing_covers_the_five_configurations() {
        for (s, m) in [
            ("po-vins", Mode::PoVins),
            ("msckf", Mode::Msckf),
            ("gi", Mode::Gi),
            ("m-gvins", Mode::MGvins),
            ("PO-GVINS", Mode::PoGvins),
        ] {
            assert_eq!(Mode::parse(s), Some(m));
            assert_eq!(Mode::parse(m.name()), Some(m));
        }
        assert_eq!(Mode::parse("spp"), None);
    }

    #[test]
    fn gi_mode_on_noise_free_data_tracks_truth() {
        let config = ScenarioConfig {
            duration: 20.0,
            feature_count: 30,
            ..ScenarioConfig::default()
        }
        .noise_free();
        let ds = generate(&config).unwrap();
        let run = RunConfig {
            mode: Mode::Gi,
            ..RunConfig::default()
        };
        let out = run_on_dataset(&ds, &run).unwrap();
        assert!(out.gnss_epochs_used >= 19, "epochs {}", out.gnss_epochs_used);
        assert!(
            out.report.translation.rms < 1e-2,
            "translation rms {}",
            out.report.translation.rms
        );
    }

    #[test]
    fn vision_only_modes_run_and_normalize_errors() {
        let config = ScenarioConfig {
            duration: 15.0,
            seed: 5,
            ..ScenarioConfig::default()
        };
        let ds = generate(&config).unwrap();
        for mode in [Mode::PoVins, Mode::Msckf] {
            let run = RunConfig {
                mode,
                ..RunConfig::default()
            };
            let out = run_on_dataset(&ds, &run).unwrap();
            assert!(out.visual_updates > 0, "{mode:?} made no visual updates");
            assert!(out.report.translation_percent.is_some());
            assert_eq!(out.gnss_epochs_used, 0);
        }
    }

    #[test]
    fn deterministic_pipeline_output() {
        let config = ScenarioConfig {
            duration: 15.0,
            seed: 9,
            ..ScenarioConfig::default()
        };
        let ds = generate(&config).unwrap();
        let run = RunConfig {
            mode: Mode::PoGvins,
            init: InitMode::Align,
            ..RunConfig::default()
        };
        let a = run_on_dataset(&ds, &run).unwrap();
        let b = run_on_dataset(&ds, &run).unwrap();
        assert_eq!(a.trajectory.len(), b.trajectory.len());
        for (x, y) in a.trajectory.iter().zip(&b.trajectory) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.attitude, y.attitude);
        }
        assert_eq!(a.report.translation.rms, b.report.translation.rms);
    }
}
