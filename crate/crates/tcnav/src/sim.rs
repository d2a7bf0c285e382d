//! Deterministic synthetic-scenario generator: analytic ground-truth
//! trajectories, IMU streams derived from exact derivatives with gravity
//! and Earth-rate back-substitution, camera feature tracks through the
//! pinhole forward model, and rover/base GNSS epochs from a small
//! deterministic constellation, all with configurable degradations.
//!
//! Everything is a pure function of the configuration: the same seed
//! produces bit-identical datasets.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::earth::{gravity_ecef, lla_to_ecef, ned_to_ecef, EarthParams, GeodeticCoord};
use crate::ins::{rotation_zyx, ImuSample, NavState, NoiseParams};
use crate::rtk::{GnssEpoch, GnssObservation};
use crate::stats::standard_normal;
use crate::vision::{CameraExtrinsics, CameraIntrinsics, NormalizedBearing};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    ConfigInvalid(String),
}

/// Analytic trajectory families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Circle,
    FigureEight,
    StraightWithTurns,
}

impl TrajectoryKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryKind::Circle => "circle",
            TrajectoryKind::FigureEight => "figure-eight",
            TrajectoryKind::StraightWithTurns => "straight-with-turns",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "circle" => Some(TrajectoryKind::Circle),
            "figure-eight" => Some(TrajectoryKind::FigureEight),
            "straight-with-turns" => Some(TrajectoryKind::StraightWithTurns),
            _ => None,
        }
    }
}

/// Timed degradation windows, mirroring real-world GNSS and visual
/// failure modes.
#[derive(Debug, Clone, PartialEq)]
pub enum Degradation {
    /// Delete every rover GNSS epoch inside the window.
    GnssOutage { start: f64, end: f64 },
    /// Constant bias on one satellite's rover pseudorange.
    NlosBias {
        start: f64,
        end: f64,
        sat_id: u32,
        bias: f64,
    },
    /// Keep only the `count` highest satellites in rover epochs.
    SatelliteDropTo { start: f64, end: f64, count: usize },
    /// Truncate visual frames to at most `max_features` observations.
    FeatureDrought {
        start: f64,
        end: f64,
        max_features: usize,
    },
    /// Shift a deterministic subset of pixels, for gating tests.
    PixelOutliers {
        start: f64,
        end: f64,
        fraction: f64,
        shift_px: f64,
    },
    /// Intermittent occlusion: each feature is only visible in bursts of
    /// `duty` frames out of every `period`, breaking tracks into short
    /// fragments (overpasses, poles, passing traffic).
    FeatureChurn {
        start: f64,
        end: f64,
        period: u64,
        duty: u64,
    },
}

/// Full scenario description; the only input of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration: f64,
    pub imu_rate: f64,
    pub cam_rate: f64,
    pub gnss_rate: f64,
    pub trajectory: TrajectoryKind,
    pub speed: f64,
    pub feature_count: usize,
    /// Depth culling band for visible features, m.
    pub feature_depth_range: (f64, f64),
    pub noise: NoiseParams,
    pub pixel_sigma: f64,
    /// Zenith-referred per-receiver sigmas, m.
    pub gnss_code_sigma: f64,
    pub gnss_phase_sigma: f64,
    /// 1-sigma of the constant bias draws.
    pub gyro_bias_magnitude: f64,
    pub accel_bias_magnitude: f64,
    pub degradations: Vec<Degradation>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            duration: 60.0,
            imu_rate: 200.0,
            cam_rate: 10.0,
            gnss_rate: 1.0,
            trajectory: TrajectoryKind::Circle,
            speed: 10.0,
            feature_count: 250,
            feature_depth_range: (2.0, 45.0),
            noise: NoiseParams::default(),
            pixel_sigma: 1.0,
            gnss_code_sigma: 0.3,
            gnss_phase_sigma: 0.003,
            // 65 deg/hr and 1 mg.
            gyro_bias_magnitude: 65.0_f64.to_radians() / 3600.0,
            accel_bias_magnitude: 9.8e-3,
            degradations: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    /// The default degraded 120 s scenario: intermittent feature
    /// occlusion in an open stretch and again over the head of a long
    /// GNSS outage (with a feature drought inside it), an NLOS window,
    /// and a window with the constellation cut to three satellites.
    pub fn default_degraded(seed: u64) -> Self {
        ScenarioConfig {
            seed,
            duration: 120.0,
            trajectory: TrajectoryKind::FigureEight,
            degradations: vec![
                Degradation::FeatureChurn {
                    start: 12.0,
                    end: 32.0,
                    period: 5,
                    duty: 2,
                },
                Degradation::GnssOutage {
                    start: 40.0,
                    end: 68.0,
                },
                Degradation::FeatureChurn {
                    start: 40.0,
                    end: 56.0,
                    period: 5,
                    duty: 2,
                },
                Degradation::FeatureDrought {
                    start: 45.0,
                    end: 55.0,
                    max_features: 6,
                },
                Degradation::NlosBias {
                    start: 70.0,
                    end: 90.0,
                    sat_id: 9,
                    bias: 15.0,
                },
                Degradation::SatelliteDropTo {
                    start: 95.0,
                    end: 112.0,
                    count: 3,
                },
            ],
            ..ScenarioConfig::default()
        }
    }

    /// A zero-noise, zero-bias copy (clocks and geometry kept).
    pub fn noise_free(mut self) -> Self {
        self.noise = NoiseParams {
            gyro_noise_density: 0.0,
            accel_noise_density: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            pos_noise_density: 0.0,
        };
        self.pixel_sigma = 0.0;
        self.gnss_code_sigma = 0.0;
        self.gnss_phase_sigma = 0.0;
        self.gyro_bias_magnitude = 0.0;
        self.accel_bias_magnitude = 0.0;
        self
    }
}

/// Observations of one camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub timestamp: f64,
    pub frame_id: u64,
    /// (feature id, pixel, normalized bearing), sorted by feature id.
    pub observations: Vec<(u64, Vector2<f64>, NormalizedBearing)>,
}

/// Complete simulator output.
#[derive(Debug, Clone)]
pub struct ScenarioDataset {
    pub config: ScenarioConfig,
    /// Ground truth at IMU rate, starting at t = 0. The bias fields hold
    /// the instantaneous true sensor biases.
    pub truth: Vec<NavState>,
    pub imu: Vec<ImuSample>,
    pub frames: Vec<FrameFeatures>,
    pub gnss_rover: Vec<GnssEpoch>,
    pub gnss_base: Vec<GnssEpoch>,
    pub base_position: Vector3<f64>,
    pub intrinsics: CameraIntrinsics,
    pub cam_extrinsics: CameraExtrinsics,
    pub gnss_lever_arm: Vector3<f64>,
    /// DD integer ambiguity bookkeeping for tests: per satellite,
    /// (rover minus base) undifferenced integer.
    pub sd_integers: BTreeMap<u32, i64>,
}

/// Scenario origin and fixed sensor geometry.
pub fn default_origin() -> GeodeticCoord {
    GeodeticCoord::new(30.0_f64.to_radians(), 114.35_f64.to_radians(), 60.0)
}

pub fn default_intrinsics() -> CameraIntrinsics {
    // 90 degree horizontal field of view at 1280x1024.
    CameraIntrinsics {
        fx: 640.0,
        fy: 640.0,
        cx: 640.0,
        cy: 512.0,
    }
}

pub fn default_cam_extrinsics() -> CameraExtrinsics {
    // Camera looks along the body front axis: camera x = body right,
    // camera y = body down, camera z = body front.
    CameraExtrinsics {
        lever_arm: Vector3::new(0.8, 0.1, -0.3),
        rotation_bc: Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0),
    }
}

pub fn default_gnss_lever_arm() -> Vector3<f64> {
    Vector3::new(-0.2, 0.0, -1.1)
}

/// Analytic local-frame trajectory: position, velocity, acceleration
/// (NED) and heading plus heading rate.
struct LocalTrajectory {
    kind: TrajectoryKind,
    speed: f64,
}

impl LocalTrajectory {
    fn sample(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, f64, f64) {
        match self.kind {
            TrajectoryKind::Circle => {
                let omega = 0.05;
                let radius = self.speed / omega;
                let th = omega * t;
                let p = Vector3::new(radius * th.sin(), radius * (1.0 - th.cos()), 0.0);
                let v = Vector3::new(self.speed * th.cos(), self.speed * th.sin(), 0.0);
                let a = Vector3::new(
                    -self.speed * omega * th.sin(),
                    self.speed * omega * th.cos(),
                    0.0,
                );
                (p, v, a, heading_of(&v), omega)
            }
            TrajectoryKind::FigureEight => {
                // Gerono lemniscate scaled for roughly constant speed.
                let omega = 0.035;
                let l = self.speed / omega;
                let w = 0.45 * l;
                let th = omega * t;
                let p = Vector3::new(l * th.sin(), w * (2.0 * th).sin(), 0.0);
                let v = Vector3::new(
                    l * omega * th.cos(),
                    2.0 * w * omega * (2.0 * th).cos(),
                    0.0,
                );
                let a = Vector3::new(
                    -l * omega * omega * th.sin(),
                    -4.0 * w * omega * omega * (2.0 * th).sin(),
                    0.0,
                );
                (p, v, a, heading_of(&v), heading_rate(&v, &a))
            }
            TrajectoryKind::StraightWithTurns => {
                // Forward motion with smooth lateral weaving.
                let omega = 0.08;
                let e = 0.25 * self.speed / omega;
                let p = Vector3::new(self.speed * t, e * (omega * t).sin(), 0.0);
                let v = Vector3::new(self.speed, e * omega * (omega * t).cos(), 0.0);
                let a = Vector3::new(0.0, -e * omega * omega * (omega * t).sin(), 0.0);
                (p, v, a, heading_of(&v), heading_rate(&v, &a))
            }
        }
    }
}

fn heading_of(v: &Vector3<f64>) -> f64 {
    v.y.atan2(v.x)
}

fn heading_rate(v: &Vector3<f64>, a: &Vector3<f64>) -> f64 {
    (v.x * a.y - v.y * a.x) / (v.x * v.x + v.y * v.y)
}

/// Deterministic circular-orbit constellation at GNSS altitude.
struct Constellation {
    sats: Vec<(u32, Vector3<f64>, Vector3<f64>, f64)>, // id, u1, u2, phase0
    radius: f64,
    mean_motion: f64,
}

impl Constellation {
    fn new(earth: &EarthParams) -> Self {
        let radius = 26_560_000.0_f64;
        let mean_motion = (earth.mu / radius.powi(3)).sqrt();
        let inclination = 55.0_f64.to_radians();
        // Six planes, four slots per plane, staggered anomalies.
        let mut sats = Vec::new();
        let mut id = 1u32;
        for plane in 0..6u32 {
            let raan = plane as f64 * 60.0_f64.to_radians();
            let u1 = Vector3::new(raan.cos(), raan.sin(), 0.0);
            let u2 = Vector3::new(
                -raan.sin() * inclination.cos(),
                raan.cos() * inclination.cos(),
                inclination.sin(),
            );
            for slot in 0..4u32 {
                let phase0 =
                    slot as f64 * 90.0_f64.to_radians() + plane as f64 * 15.0_f64.to_radians();
                sats.push((id, u1, u2, phase0));
                id += 1;
            }
        }
        Constellation {
            sats,
            radius,
            mean_motion,
        }
    }

    fn position(&self, sat_index: usize, t: f64) -> Vector3<f64> {
        let (_, u1, u2, phase0) = self.sats[sat_index];
        let th = phase0 + self.mean_motion * t;
        (u1 * th.cos() + u2 * th.sin()) * self.radius
    }
}

fn elevation_at(receiver: &Vector3<f64>, sat: &Vector3<f64>) -> f64 {
    let up = receiver.normalize();
    ((sat - receiver).normalize()).dot(&up).asin()
}

/// Ground truth nav state at time t (biases filled in by the caller).
fn truth_state(
    t: f64,
    traj: &LocalTrajectory,
    origin_ecef: &Vector3<f64>,
    r_ne: &Matrix3<f64>,
) -> NavState {
    let (p, v, _a, psi, _psid) = traj.sample(t);
    let mut nav = NavState::new(t);
    nav.position = origin_ecef + r_ne * p;
    nav.velocity = r_ne * v;
    nav.attitude = r_ne * rotation_zyx(psi, 0.0, 0.0);
    nav
}

/// Generate the full dataset for a configuration.
pub fn generate(config: &ScenarioConfig) -> Result<ScenarioDataset, SimError> {
    validate(config)?;
    let earth = EarthParams::default();
    let origin = default_origin();
    let origin_ecef = lla_to_ecef(&origin, &earth);
    let r_ne = ned_to_ecef(&origin);
    let traj = LocalTrajectory {
        kind: config.trajectory,
        speed: config.speed,
    };
    let intrinsics = default_intrinsics();
    let cam_ext = default_cam_extrinsics();
    let gnss_lever = default_gnss_lever_arm();
    let base_position = origin_ecef + r_ne * Vector3::new(-3_000.0, 2_000.0, -15.0);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Constant sensor biases.
    let gyro_bias0 = Vector3::new(
        config.gyro_bias_magnitude * standard_normal(&mut rng),
        config.gyro_bias_magnitude * standard_normal(&mut rng),
        config.gyro_bias_magnitude * standard_normal(&mut rng),
    );
    let accel_bias0 = Vector3::new(
        config.accel_bias_magnitude * standard_normal(&mut rng),
        config.accel_bias_magnitude * standard_normal(&mut rng),
        config.accel_bias_magnitude * standard_normal(&mut rng),
    );

    // World feature points scattered along the trajectory corridor.
    let mut features: Vec<(u64, Vector3<f64>)> = Vec::new();
    for fid in 0..config.feature_count as u64 {
        let t_anchor = (standard_normal(&mut rng).abs().min(3.0) / 3.0) * config.duration;
        let (p, v, _, _, _) = traj.sample(t_anchor);
        let forward = Vector3::new(v.x, v.y, 0.0).normalize();
        let left = Vector3::new(-forward.y, forward.x, 0.0);
        let along = 5.0 + 30.0 * rand_uniform(&mut rng);
        let lateral = -25.0 + 50.0 * rand_uniform(&mut rng);
        let height = -18.0 + 22.0 * rand_uniform(&mut rng);
        let p_ned = p + forward * along + left * lateral + Vector3::new(0.0, 0.0, height);
        features.push((fid, origin_ecef + r_ne * p_ned));
    }

    // IMU stream plus truth at IMU rate.
    let dt = 1.0 / config.imu_rate;
    let n_imu = (config.duration * config.imu_rate).round() as usize;
    let mut truth = Vec::with_capacity(n_imu + 1);
    let mut imu = Vec::with_capacity(n_imu);
    let mut gyro_walk = Vector3::zeros();
    let mut accel_walk = Vector3::zeros();
    {
        let mut t0 = truth_state(0.0, &traj, &origin_ecef, &r_ne);
        t0.gyro_bias = gyro_bias0;
        t0.accel_bias = accel_bias0;
        truth.push(t0);
    }
    for k in 0..n_imu {
        let t_mid = (k as f64 + 0.5) * dt;
        let t_end = (k + 1) as f64 * dt;
        let (p, v, a, _psi, psid) = traj.sample(t_mid);
        let pos = origin_ecef + r_ne * p;
        let vel = r_ne * v;
        let acc = r_ne * a;
        let (_, _, _, psi_mid, _) = traj.sample(t_mid);
        let r_be = r_ne * rotation_zyx(psi_mid, 0.0, 0.0);
        let f_b = r_be.transpose()
            * (acc - gravity_ecef(&pos, &earth) + 2.0 * earth.rotation_vector().cross(&vel));
        let w_b = r_be.transpose() * earth.rotation_vector() + Vector3::new(0.0, 0.0, psid);

        gyro_walk += Vector3::new(
            config.noise.gyro_bias_walk * dt.sqrt() * standard_normal(&mut rng),
            config.noise.gyro_bias_walk * dt.sqrt() * standard_normal(&mut rng),
            config.noise.gyro_bias_walk * dt.sqrt() * standard_normal(&mut rng),
        );
        accel_walk += Vector3::new(
            config.noise.accel_bias_walk * dt.sqrt() * standard_normal(&mut rng),
            config.noise.accel_bias_walk * dt.sqrt() * standard_normal(&mut rng),
            config.noise.accel_bias_walk * dt.sqrt() * standard_normal(&mut rng),
        );
        let gyro_noise = config.noise.gyro_noise_density / dt.sqrt();
        let accel_noise = config.noise.accel_noise_density / dt.sqrt();
        let w_meas = w_b
            + gyro_bias0
            + gyro_walk
            + Vector3::new(
                gyro_noise * standard_normal(&mut rng),
                gyro_noise * standard_normal(&mut rng),
                gyro_noise * standard_normal(&mut rng),
            );
        let f_meas = f_b
            + accel_bias0
            + accel_walk
            + Vector3::new(
                accel_noise * standard_normal(&mut rng),
                accel_noise * standard_normal(&mut rng),
                accel_noise * standard_normal(&mut rng),
            );
        imu.push(ImuSample {
            timestamp: t_end,
            angular_rate: w_meas,
            specific_force: f_meas,
        });
        let mut ts = truth_state(t_end, &traj, &origin_ecef, &r_ne);
        ts.gyro_bias = gyro_bias0 + gyro_walk;
        ts.accel_bias = accel_bias0 + accel_walk;
        truth.push(ts);
    }

    // Camera frames.
    let cam_step = (config.imu_rate / config.cam_rate) as usize;
    let n_frames = (config.duration * config.cam_rate).round() as usize;
    let mut frames = Vec::with_capacity(n_frames);
    let max_xn = intrinsics.cx / intrinsics.fx;
    let max_yn = intrinsics.cy / intrinsics.fy;
    for f in 0..n_frames as u64 {
        let t = (f as usize * cam_step) as f64 * dt;
        let nav = &truth[f as usize * cam_step];
        let cam = crate::vision::body_pose_to_camera(&nav.attitude, &nav.position, &cam_ext);
        let mut obs = Vec::new();
        for (fid, point) in &features {
            let pc = cam.world_to_camera(point);
            if pc.z < config.feature_depth_range.0 || pc.z > config.feature_depth_range.1 {
                continue;
            }
            let xn = pc.x / pc.z;
            let yn = pc.y / pc.z;
            if xn.abs() > max_xn || yn.abs() > max_yn {
                continue;
            }
            let clean = intrinsics.project(&Vector2::new(xn, yn));
            let pixel = clean
                + Vector2::new(
                    config.pixel_sigma * standard_normal(&mut rng),
                    config.pixel_sigma * standard_normal(&mut rng),
                );
            obs.push((*fid, pixel, intrinsics.bearing(&pixel)));
        }
        obs.sort_by_key(|(fid, _, _)| *fid);
        frames.push(FrameFeatures {
            timestamp: t,
            frame_id: f,
            observations: obs,
        });
    }

    // GNSS epochs.
    let constellation = Constellation::new(&earth);
    let mut amb_rover: BTreeMap<u32, i64> = BTreeMap::new();
    let mut amb_base: BTreeMap<u32, i64> = BTreeMap::new();
    for (id, _, _, _) in &constellation.sats {
        amb_rover.insert(*id, ((standard_normal(&mut rng) * 20.0).round()) as i64);
        amb_base.insert(*id, ((standard_normal(&mut rng) * 20.0).round()) as i64);
    }
    let wavelength = 0.190_293_672_798_364_9; // GPS L1
    let elevation_mask = 10.0_f64.to_radians();
    let n_gnss = (config.duration * config.gnss_rate).round() as usize;
    let mut gnss_rover = Vec::new();
    let mut gnss_base = Vec::new();
    let gnss_step = (config.imu_rate / config.gnss_rate) as usize;
    for g in 0..=n_gnss {
        let t = (g * gnss_step) as f64 * dt;
        let nav = &truth[(g * gnss_step).min(truth.len() - 1)];
        let rover_antenna = nav.position + nav.attitude * gnss_lever;
        // Smooth deterministic receiver clocks (meters).
        let clk_rover = 2.0e4 + 1.5e3 * (0.013 * t).sin();
        let clk_base = -1.1e4 + 0.9e3 * (0.007 * t + 1.0).sin();
        let mut rover_obs = Vec::new();
        let mut base_obs = Vec::new();
        for (idx, (id, _, _, _)) in constellation.sats.iter().enumerate() {
            let sat = constellation.position(idx, t);
            let el_rover = elevation_at(&rover_antenna, &sat);
            let el_base = elevation_at(&base_position, &sat);
            if el_rover < elevation_mask || el_base < elevation_mask {
                continue;
            }
            // Satellite clock and common atmosphere: identical for both
            // receivers, so they cancel in the differences.
            let clk_sat = -3.0e3 + 500.0 * (*id as f64);
            let atmo = 4.5 / el_rover.sin().max(0.2);

            let make = |receiver: &Vector3<f64>,
                        clk_rcv: f64,
                        n_int: i64,
                        el: f64,
                        rng: &mut ChaCha8Rng| {
                let range = (receiver - sat).norm();
                let code_noise = config.gnss_code_sigma / el.sin() * standard_normal(rng);
                let phase_noise = config.gnss_phase_sigma / el.sin() * standard_normal(rng);
                GnssObservation {
                    sat_id: *id,
                    pseudorange: range + clk_rcv - clk_sat + atmo + code_noise,
                    carrier_phase: (range + clk_rcv - clk_sat - atmo + phase_noise)
                        / wavelength
                        + n_int as f64,
                    wavelength,
                    sat_position: sat,
                    elevation: el,
                }
            };
            rover_obs.push(make(
                &rover_antenna,
                clk_rover,
                amb_rover[id],
                el_rover,
                &mut rng,
            ));
            base_obs.push(make(
                &base_position,
                clk_base,
                amb_base[id],
                el_base,
                &mut rng,
            ));
        }
        gnss_rover.push(GnssEpoch {
            timestamp: t,
            observations: rover_obs,
        });
        gnss_base.push(GnssEpoch {
            timestamp: t,
            observations: base_obs,
        });
    }

    let sd_integers = amb_rover
        .iter()
        .map(|(id, n)| (*id, n - amb_base[id]))
        .collect();

    let mut ds = ScenarioDataset {
        config: config.clone(),
        truth,
        imu,
        frames,
        gnss_rover,
        gnss_base,
        base_position,
        intrinsics,
        cam_extrinsics: cam_ext,
        gnss_lever_arm: gnss_lever,
        sd_integers,
    };
    let windows = config.degradations.clone();
    inject_degradations(&mut ds, &windows);
    Ok(ds)
}

fn rand_uniform(rng: &mut ChaCha8Rng) -> f64 {
    use rand::RngExt;
    rng.random::<f64>()
}

fn validate(config: &ScenarioConfig) -> Result<(), SimError> {
    if config.duration <= 10.0 {
        return Err(SimError::ConfigInvalid("duration must exceed 10 s".into()));
    }
    for (rate, name) in [(config.cam_rate, "cam_rate"), (config.gnss_rate, "gnss_rate")] {
        if rate <= 0.0 {
            return Err(SimError::ConfigInvalid(format!("{name} must be positive")));
        }
        let ratio = config.imu_rate / rate;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(SimError::ConfigInvalid(format!(
                "imu_rate must be an integer multiple of {name}"
            )));
        }
    }
    if config.feature_depth_range.0 <= 0.0
        || config.feature_depth_range.1 <= config.feature_depth_range.0
    {
        return Err(SimError::ConfigInvalid("bad feature depth range".into()));
    }
    Ok(())
}

/// Apply degradation windows to a dataset in place.
pub fn inject_degradations(ds: &mut ScenarioDataset, windows: &[Degradation]) {
    for w in windows {
        match w {
            Degradation::GnssOutage { start, end } => {
                ds.gnss_rover
                    .retain(|e| !(e.timestamp >= *start && e.timestamp < *end));
            }
            Degradation::NlosBias {
                start,
                end,
                sat_id,
                bias,
            } => {
                for epoch in &mut ds.gnss_rover {
                    if epoch.timestamp >= *start && epoch.timestamp < *end {
                        for obs in &mut epoch.observations {
                            if obs.sat_id == *sat_id {
                                obs.pseudorange += bias;
                            }
                        }
                    }
                }
            }
            Degradation::SatelliteDropTo { start, end, count } => {
                for epoch in &mut ds.gnss_rover {
                    if epoch.timestamp >= *start && epoch.timestamp < *end {
                        epoch
                            .observations
                            .sort_by(|a, b| b.elevation.total_cmp(&a.elevation));
                        epoch.observations.truncate(*count);
                        epoch.observations.sort_by_key(|o| o.sat_id);
                    }
                }
            }
            Degradation::FeatureDrought {
                start,
                end,
                max_features,
            } => {
                for frame in &mut ds.frames {
                    if frame.timestamp >= *start && frame.timestamp < *end {
                        frame.observations.truncate(*max_features);
                    }
                }
            }
            Degradation::PixelOutliers {
                start,
                end,
                fraction,
                shift_px,
            } => {
                for frame in &mut ds.frames {
                    if frame.timestamp >= *start && frame.timestamp < *end {
                        let stride = (1.0 / fraction.max(1e-9)).round().max(1.0) as u64;
                        for (fid, pixel, bearing) in &mut frame.observations {
                            if *fid % stride == 0 {
                                pixel.x += shift_px;
                                *bearing = ds.intrinsics.bearing(pixel);
                            }
                        }
                    }
                }
            }
            Degradation::FeatureChurn {
                start,
                end,
                period,
                duty,
            } => {
                let period = (*period).max(1);
                let duty = (*duty).clamp(1, period);
                for frame in &mut ds.frames {
                    if frame.timestamp >= *start && frame.timestamp < *end {
                        let f = frame.frame_id;
                        frame
                            .observations
                            .retain(|(fid, _, _)| (f + fid.wrapping_mul(7)) % period < duty);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ins::propagate_nav;
    use crate::math::rotation_angle;
    use crate::rtk::double_difference;
    use crate::vision::{body_pose_to_camera, po_residual, select_base_frames, FeatureTrack,
        TrackObservation};

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            duration: 20.0,
            feature_count: 120,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let config = small_config();
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.imu, b.imu);
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.gnss_rover, b.gnss_rover);
        assert_eq!(a.gnss_base, b.gnss_base);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn config_validation() {
        let mut config = small_config();
        config.duration = 5.0;
        assert!(matches!(generate(&config), Err(SimError::ConfigInvalid(_))));
        let mut config = small_config();
        config.cam_rate = 7.0; // 200 / 7 is not an integer
        assert!(matches!(generate(&config), Err(SimError::ConfigInvalid(_))));
    }

    #[test]
    fn dead_reckoning_reproduces_truth_on_noise_free_data() {
        for kind in [
            TrajectoryKind::Circle,
            TrajectoryKind::FigureEight,
            TrajectoryKind::StraightWithTurns,
        ] {
            let config = ScenarioConfig {
                duration: 60.0,
                trajectory: kind,
                feature_count: 10,
                ..ScenarioConfig::default()
            }
            .noise_free();
            let ds = generate(&config).unwrap();
            let earth = EarthParams::default();
            let mut nav = ds.truth[0].clone();
            let dt = 1.0 / config.imu_rate;
            for sample in &ds.imu {
                nav = propagate_nav(&nav, sample, dt, &earth).unwrap();
            }
            let truth_end = ds.truth.last().unwrap();
            let pos_err = (nav.position - truth_end.position).norm();
            let att_err = rotation_angle(&nav.attitude, &truth_end.attitude);
            assert!(pos_err < 1e-3, "{kind:?}: position {pos_err}");
            assert!(att_err < 2e-5, "{kind:?}: attitude {att_err}");
        }
    }

    #[test]
    fn po_residual_vanishes_at_ground_truth() {
        let config = ScenarioConfig {
            duration: 15.0,
            feature_count: 80,
            ..ScenarioConfig::default()
        }
        .noise_free();
        let ds = generate(&config).unwrap();
        let cam_step = (config.imu_rate / config.cam_rate) as usize;

        // Build camera poses and tracks over a window of frames.
        let mut poses = std::collections::BTreeMap::new();
        let mut tracks: std::collections::BTreeMap<u64, FeatureTrack> =
            std::collections::BTreeMap::new();
        for frame in ds.frames.iter().take(10) {
            let nav = &ds.truth[frame.frame_id as usize * cam_step];
            poses.insert(
                frame.frame_id,
                body_pose_to_camera(&nav.attitude, &nav.position, &ds.cam_extrinsics),
            );
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
        let mut checked = 0;
        for track in tracks.values() {
            if track.len() < 3 {
                continue;
            }
            let Ok(base) = select_base_frames(track, &poses) else {
                continue;
            };
            for &l in track.observations.keys() {
                if l == base.0 {
                    continue;
                }
                let r = po_residual(track, base, l, &poses, &ds.intrinsics).unwrap();
                assert!(r.norm() < 1e-7, "feature {} frame {l}: {r:?}", track.feature_id);
                checked += 1;
            }
        }
        assert!(checked > 100, "only {checked} residuals checked");
    }

    #[test]
    fn dd_phase_is_integer_at_truth() {
        let config = small_config().noise_free();
        let ds = generate(&config).unwrap();
        let mut pairs_checked = 0;
        for (rover, base) in ds.gnss_rover.iter().zip(&ds.gnss_base) {
            let Ok(dd) = double_difference(&rover.observations, &base.observations) else {
                continue;
            };
            let k = (rover.timestamp * config.imu_rate).round() as usize;
            let nav = &ds.truth[k.min(ds.truth.len() - 1)];
            let antenna = nav.position + nav.attitude * ds.gnss_lever_arm;
            for d in &dd {
                let geo = ((antenna - d.sat_position).norm()
                    - (ds.base_position - d.sat_position).norm())
                    - ((antenna - d.ref_sat_position).norm()
                        - (ds.base_position - d.ref_sat_position).norm());
                assert!(
                    (d.dd_pseudorange - geo).abs() < 1e-6,
                    "code residual {}",
                    d.dd_pseudorange - geo
                );
                let n = (d.dd_phase - geo) / d.wavelength;
                let n_true = (ds.sd_integers[&d.sat_id] - ds.sd_integers[&d.ref_sat_id]) as f64;
                assert!((n - n_true).abs() < 1e-5, "{n} vs {n_true}");
                pairs_checked += 1;
            }
        }
        assert!(pairs_checked > 50);
    }

    #[test]
    fn enough_satellites_and_features_visible() {
        let ds = generate(&small_config()).unwrap();
        for epoch in &ds.gnss_rover {
            assert!(
                epoch.observations.len() >= 5,
                "only {} satellites at t={}",
                epoch.observations.len(),
                epoch.timestamp
            );
        }
        let avg_features = ds.frames.iter().map(|f| f.observations.len()).sum::<usize>() as f64
            / ds.frames.len() as f64;
        assert!(avg_features >= 10.0, "average features {avg_features}");
    }

    #[test]
    fn degradations_shape_the_dataset() {
        let mut config = small_config();
        config.degradations = vec![
            Degradation::GnssOutage {
                start: 5.0,
                end: 8.0,
            },
            Degradation::SatelliteDropTo {
                start: 10.0,
                end: 12.0,
                count: 3,
            },
            Degradation::FeatureDrought {
                start: 14.0,
                end: 16.0,
                max_features: 5,
            },
        ];
        let ds = generate(&config).unwrap();
        assert!(ds
            .gnss_rover
            .iter()
            .all(|e| !(e.timestamp >= 5.0 && e.timestamp < 8.0)));
        for e in &ds.gnss_rover {
            if e.timestamp >= 10.0 && e.timestamp < 12.0 {
                assert_eq!(e.observations.len(), 3);
            }
        }
        for f in &ds.frames {
            if f.timestamp >= 14.0 && f.timestamp < 16.0 {
                assert!(f.observations.len() <= 5);
            }
        }
    }

    #[test]
    fn nlos_bias_appears_in_dd_residual() {
        let mut config = small_config().noise_free();
        config.degradations = vec![Degradation::NlosBias {
            start: 0.0,
            end: 30.0,
            sat_id: 4,
            bias: 20.0,
        }];
        let ds = generate(&config).unwrap();
        let rover = &ds.gnss_rover[3];
        let base = &ds.gnss_base[3];
        let dd = double_difference(&rover.observations, &base.observations).unwrap();
        let k = (rover.timestamp * config.imu_rate).round() as usize;
        let nav = &ds.truth[k];
        let antenna = nav.position + nav.attitude * ds.gnss_lever_arm;
        for d in &dd {
            let geo = ((antenna - d.sat_position).norm()
                - (ds.base_position - d.sat_position).norm())
                - ((antenna - d.ref_sat_position).norm()
                    - (ds.base_position - d.ref_sat_position).norm());
            let residual = d.dd_pseudorange - geo;
            if d.sat_id == 4 {
                assert!((residual - 20.0).abs() < 1e-6, "biased residual {residual}");
            } else if d.ref_sat_id == 4 {
                assert!((residual + 20.0).abs() < 1e-6, "ref-biased residual {residual}");
            } else {
                assert!(residual.abs() < 1e-6, "clean residual {residual}");
            }
        }
    }
}
