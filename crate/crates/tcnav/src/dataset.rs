//! Dataset directory layout and CSV round-tripping.
//!
//! A dataset directory holds `imu.csv`, `features.csv`, `gnss_rover.csv`,
//! `gnss_base.csv`, `truth.csv` and a flat key-value `meta` file echoing
//! the scenario configuration plus the fixed sensor geometry. Floats are
//! written with Rust's shortest round-trip formatting, so a rewritten
//! file is bit-identical to its source values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::config::{kv_to_scenario, scenario_to_kv, ConfigError, KeyValueFile};
use crate::ins::{ImuSample, NavState};
use crate::rtk::{GnssEpoch, GnssObservation};
use crate::sim::{FrameFeatures, ScenarioDataset};
use crate::vision::{CameraExtrinsics, CameraIntrinsics};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One pose sample of an estimated or ground-truth trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Matrix3<f64>,
}

impl TrajectorySample {
    pub fn from_nav(nav: &NavState) -> Self {
        TrajectorySample {
            timestamp: nav.timestamp,
            position: nav.position,
            velocity: nav.velocity,
            attitude: nav.attitude,
        }
    }
}

fn quaternion_of(m: &Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m))
}

fn parse_err(file: &str, line: usize, message: impl ToString) -> DatasetError {
    DatasetError::Parse {
        file: file.to_string(),
        line,
        message: message.to_string(),
    }
}

fn parse_fields(file: &str, lineno: usize, line: &str, want: usize) -> Result<Vec<f64>, DatasetError> {
    let fields: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
    let fields = fields.map_err(|e| parse_err(file, lineno, e))?;
    if fields.len() != want {
        return Err(parse_err(
            file,
            lineno,
            format!("expected {want} columns, got {}", fields.len()),
        ));
    }
    Ok(fields)
}

/// Write a full simulator dataset into a directory.
pub fn write_dataset(ds: &ScenarioDataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;

    let mut imu = String::from("t,wx,wy,wz,fx,fy,fz\n");
    for s in &ds.imu {
        let _ = writeln!(
            imu,
            "{},{},{},{},{},{},{}",
            s.timestamp,
            s.angular_rate.x,
            s.angular_rate.y,
            s.angular_rate.z,
            s.specific_force.x,
            s.specific_force.y,
            s.specific_force.z
        );
    }
    fs::write(dir.join("imu.csv"), imu)?;

    let mut feat = String::from("t,frame_id,feature_id,u_px,v_px,x_norm,y_norm\n");
    for frame in &ds.frames {
        for (fid, pixel, bearing) in &frame.observations {
            let _ = writeln!(
                feat,
                "{},{},{},{},{},{},{}",
                frame.timestamp, frame.frame_id, fid, pixel.x, pixel.y, bearing.x, bearing.y
            );
        }
    }
    fs::write(dir.join("features.csv"), feat)?;

    for (name, epochs) in [("gnss_rover.csv", &ds.gnss_rover), ("gnss_base.csv", &ds.gnss_base)] {
        let mut out =
            String::from("t,sat_id,pseudorange_m,phase_cycles,wavelength_m,sat_x,sat_y,sat_z,elevation_rad\n");
        for epoch in epochs.iter() {
            for o in &epoch.observations {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    epoch.timestamp,
                    o.sat_id,
                    o.pseudorange,
                    o.carrier_phase,
                    o.wavelength,
                    o.sat_position.x,
                    o.sat_position.y,
                    o.sat_position.z,
                    o.elevation
                );
            }
        }
        fs::write(dir.join(name), out)?;
    }

    let samples: Vec<TrajectorySample> = ds.truth.iter().map(TrajectorySample::from_nav).collect();
    write_trajectory(&samples, &dir.join("truth.csv"))?;

    let mut meta = scenario_to_kv(&ds.config);
    meta.set("base_x", ds.base_position.x);
    meta.set("base_y", ds.base_position.y);
    meta.set("base_z", ds.base_position.z);
    meta.set("cam_fx", ds.intrinsics.fx);
    meta.set("cam_fy", ds.intrinsics.fy);
    meta.set("cam_cx", ds.intrinsics.cx);
    meta.set("cam_cy", ds.intrinsics.cy);
    for (i, v) in ds.cam_extrinsics.lever_arm.iter().enumerate() {
        meta.set(&format!("cam_lever_{i}"), *v);
    }
    for r in 0..3 {
        for c in 0..3 {
            meta.set(&format!("cam_rbc_{r}{c}"), ds.cam_extrinsics.rotation_bc[(r, c)]);
        }
    }
    for (i, v) in ds.gnss_lever_arm.iter().enumerate() {
        meta.set(&format!("gnss_lever_{i}"), *v);
    }
    for (id, n) in &ds.sd_integers {
        meta.set("sd_integer", format!("{id},{n}"));
    }
    fs::write(dir.join("meta"), meta.render())?;
    Ok(())
}

/// Write a trajectory CSV (t, position, velocity, attitude quaternion).
pub fn write_trajectory(samples: &[TrajectorySample], path: &Path) -> Result<(), DatasetError> {
    let mut out = String::from("t,px,py,pz,vx,vy,vz,qw,qx,qy,qz\n");
    for s in samples {
        let q = quaternion_of(&s.attitude);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.timestamp,
            s.position.x,
            s.position.y,
            s.position.z,
            s.velocity.x,
            s.velocity.y,
            s.velocity.z,
            q.w,
            q.i,
            q.j,
            q.k
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a trajectory CSV.
pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectorySample>, DatasetError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_fields(&name, lineno + 1, line, 11)?;
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(f[7], f[8], f[9], f[10]));
        out.push(TrajectorySample {
            timestamp: f[0],
            position: Vector3::new(f[1], f[2], f[3]),
            velocity: Vector3::new(f[4], f[5], f[6]),
            attitude: *q.to_rotation_matrix().matrix(),
        });
    }
    Ok(out)
}

/// Load a dataset directory back into the in-memory form.
pub fn load_dataset(dir: &Path) -> Result<ScenarioDataset, DatasetError> {
    let meta_text = fs::read_to_string(dir.join("meta"))?;
    let meta = KeyValueFile::parse(&meta_text)?;
    let config = kv_to_scenario(&meta)?;

    let name = "imu.csv";
    let text = fs::read_to_string(dir.join(name))?;
    let mut imu = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_fields(name, lineno + 1, line, 7)?;
        imu.push(ImuSample {
            timestamp: f[0],
            angular_rate: Vector3::new(f[1], f[2], f[3]),
            specific_force: Vector3::new(f[4], f[5], f[6]),
        });
    }

    let name = "features.csv";
    let text = fs::read_to_string(dir.join(name))?;
    let mut frames_by_id: std::collections::BTreeMap<u64, FrameFeatures> =
        std::collections::BTreeMap::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_fields(name, lineno + 1, line, 7)?;
        let frame_id = f[1] as u64;
        frames_by_id
            .entry(frame_id)
            .or_insert_with(|| FrameFeatures {
                timestamp: f[0],
                frame_id,
                observations: Vec::new(),
            })
            .observations
            .push((
                f[2] as u64,
                Vector2::new(f[3], f[4]),
                crate::vision::NormalizedBearing::new(f[5], f[6]),
            ));
    }
    // Frames with no visible features leave no CSV rows; rebuild them
    // with the exact timestamps the generator uses.
    let cam_step = (config.imu_rate / config.cam_rate) as usize;
    let dt = 1.0 / config.imu_rate;
    let n_frames = (config.duration * config.cam_rate).round() as usize;
    let frames: Vec<FrameFeatures> = (0..n_frames as u64)
        .map(|f| {
            frames_by_id.remove(&f).unwrap_or(FrameFeatures {
                timestamp: (f as usize * cam_step) as f64 * dt,
                frame_id: f,
                observations: Vec::new(),
            })
        })
        .collect();

    let read_gnss = |name: &str| -> Result<Vec<GnssEpoch>, DatasetError> {
        let text = fs::read_to_string(dir.join(name))?;
        let mut epochs: Vec<GnssEpoch> = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f = parse_fields(name, lineno + 1, line, 9)?;
            if epochs.last().map(|e| e.timestamp) != Some(f[0]) {
                epochs.push(GnssEpoch {
                    timestamp: f[0],
                    observations: Vec::new(),
                });
            }
            epochs.last_mut().unwrap().observations.push(GnssObservation {
                sat_id: f[1] as u32,
                pseudorange: f[2],
                carrier_phase: f[3],
                wavelength: f[4],
                sat_position: Vector3::new(f[5], f[6], f[7]),
                elevation: f[8],
            });
        }
        Ok(epochs)
    };
    let gnss_rover = read_gnss("gnss_rover.csv")?;
    let gnss_base = read_gnss("gnss_base.csv")?;

    let truth_samples = read_trajectory(&dir.join("truth.csv"))?;
    let truth: Vec<NavState> = truth_samples
        .iter()
        .map(|s| {
            let mut nav = NavState::new(s.timestamp);
            nav.position = s.position;
            nav.velocity = s.velocity;
            nav.attitude = s.attitude;
            nav
        })
        .collect();

    let gf = |key: &str, default: f64| -> f64 {
        meta.get(key).and_then(|v| v.parse().ok()).unwrap_or(default)
    };
    let defaults_int = crate::sim::default_intrinsics();
    let intrinsics = CameraIntrinsics {
        fx: gf("cam_fx", defaults_int.fx),
        fy: gf("cam_fy", defaults_int.fy),
        cx: gf("cam_cx", defaults_int.cx),
        cy: gf("cam_cy", defaults_int.cy),
    };
    let default_ext = crate::sim::default_cam_extrinsics();
    let mut rotation_bc = default_ext.rotation_bc;
    for r in 0..3 {
        for c in 0..3 {
            rotation_bc[(r, c)] = gf(&format!("cam_rbc_{r}{c}"), rotation_bc[(r, c)]);
        }
    }
    let cam_extrinsics = CameraExtrinsics {
        lever_arm: Vector3::new(
            gf("cam_lever_0", default_ext.lever_arm.x),
            gf("cam_lever_1", default_ext.lever_arm.y),
            gf("cam_lever_2", default_ext.lever_arm.z),
        ),
        rotation_bc,
    };
    let default_gl = crate::sim::default_gnss_lever_arm();
    let gnss_lever_arm = Vector3::new(
        gf("gnss_lever_0", default_gl.x),
        gf("gnss_lever_1", default_gl.y),
        gf("gnss_lever_2", default_gl.z),
    );
    let base_position = Vector3::new(gf("base_x", 0.0), gf("base_y", 0.0), gf("base_z", 0.0));

    let mut sd_integers = std::collections::BTreeMap::new();
    for spec in meta.get_all("sd_integer") {
        if let Some((id, n)) = spec.split_once(',') {
            if let (Ok(id), Ok(n)) = (id.trim().parse::<u32>(), n.trim().parse::<i64>()) {
                sd_integers.insert(id, n);
            }
        }
    }

    Ok(ScenarioDataset {
        config,
        truth,
        imu,
        frames,
        gnss_rover,
        gnss_base,
        base_position,
        intrinsics,
        cam_extrinsics,
        gnss_lever_arm,
        sd_integers,
    })
}
