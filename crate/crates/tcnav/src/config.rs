//! Flat key-value configuration files (`key = value` lines, `#`
//! comments, repeated keys allowed) plus the mappings for scenario and
//! run configurations.

use std::fmt::Write as _;

use thiserror::Error;

use crate::ins::NoiseParams;
use crate::sim::{Degradation, ScenarioConfig, TrajectoryKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    BadLine(usize),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{0}`: {1}")]
    BadValue(String, String),
}

/// Ordered key-value pairs of one config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueFile {
    pub entries: Vec<(String, String)>,
}

impl KeyValueFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(lineno + 1));
            };
            entries.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(KeyValueFile { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .collect()
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing(key.into()))
    }

    pub fn parse_f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| ConfigError::BadValue(key.into(), format!("{e}"))),
        }
    }

    pub fn parse_u64(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| ConfigError::BadValue(key.into(), format!("{e}"))),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Scenario configuration to key-value form (the dataset `meta` echo).
pub fn scenario_to_kv(config: &ScenarioConfig) -> KeyValueFile {
    let mut kv = KeyValueFile::default();
    kv.set("seed", config.seed);
    kv.set("duration", config.duration);
    kv.set("imu_rate", config.imu_rate);
    kv.set("cam_rate", config.cam_rate);
    kv.set("gnss_rate", config.gnss_rate);
    kv.set("trajectory", config.trajectory.name());
    kv.set("speed", config.speed);
    kv.set("feature_count", config.feature_count);
    kv.set("feature_depth_min", config.feature_depth_range.0);
    kv.set("feature_depth_max", config.feature_depth_range.1);
    kv.set("gyro_noise_density", config.noise.gyro_noise_density);
    kv.set("accel_noise_density", config.noise.accel_noise_density);
    kv.set("gyro_bias_walk", config.noise.gyro_bias_walk);
    kv.set("accel_bias_walk", config.noise.accel_bias_walk);
    kv.set("pos_noise_density", config.noise.pos_noise_density);
    kv.set("pixel_sigma", config.pixel_sigma);
    kv.set("gnss_code_sigma", config.gnss_code_sigma);
    kv.set("gnss_phase_sigma", config.gnss_phase_sigma);
    kv.set("gyro_bias_magnitude", config.gyro_bias_magnitude);
    kv.set("accel_bias_magnitude", config.accel_bias_magnitude);
    for d in &config.degradations {
        let line = match d {
            Degradation::GnssOutage { start, end } => format!("gnss_outage,{start},{end}"),
            Degradation::NlosBias {
                start,
                end,
                sat_id,
                bias,
            } => format!("nlos_bias,{start},{end},{sat_id},{bias}"),
            Degradation::SatelliteDropTo { start, end, count } => {
                format!("satellite_drop_to,{start},{end},{count}")
            }
            Degradation::FeatureDrought {
                start,
                end,
                max_features,
            } => format!("feature_drought,{start},{end},{max_features}"),
            Degradation::PixelOutliers {
                start,
                end,
                fraction,
                shift_px,
            } => format!("pixel_outliers,{start},{end},{fraction},{shift_px}"),
            Degradation::FeatureChurn {
                start,
                end,
                period,
                duty,
            } => format!("feature_churn,{start},{end},{period},{duty}"),
        };
        kv.set("degradation", line);
    }
    kv
}

fn parse_degradation(spec: &str) -> Result<Degradation, ConfigError> {
    let err = |msg: &str| ConfigError::BadValue("degradation".into(), msg.to_string());
    let parts: Vec<&str> = spec.split(',').map(|s| s.trim()).collect();
    let f = |k: usize| -> Result<f64, ConfigError> {
        parts
            .get(k)
            .ok_or_else(|| err("missing field"))?
            .parse()
            .map_err(|_| err("bad number"))
    };
    match *parts.first().ok_or_else(|| err("empty"))? {
        "gnss_outage" => Ok(Degradation::GnssOutage {
            start: f(1)?,
            end: f(2)?,
        }),
        "nlos_bias" => Ok(Degradation::NlosBias {
            start: f(1)?,
            end: f(2)?,
            sat_id: f(3)? as u32,
            bias: f(4)?,
        }),
        "satellite_drop_to" => Ok(Degradation::SatelliteDropTo {
            start: f(1)?,
            end: f(2)?,
            count: f(3)? as usize,
        }),
        "feature_drought" => Ok(Degradation::FeatureDrought {
            start: f(1)?,
            end: f(2)?,
            max_features: f(3)? as usize,
        }),
        "pixel_outliers" => Ok(Degradation::PixelOutliers {
            start: f(1)?,
            end: f(2)?,
            fraction: f(3)?,
            shift_px: f(4)?,
        }),
        "feature_churn" => Ok(Degradation::FeatureChurn {
            start: f(1)?,
            end: f(2)?,
            period: f(3)? as u64,
            duty: f(4)? as u64,
        }),
        other => Err(err(&format!("unknown kind `{other}`"))),
    }
}

/// Scenario configuration from key-value form; missing keys fall back to
/// the defaults.
pub fn kv_to_scenario(kv: &KeyValueFile) -> Result<ScenarioConfig, ConfigError> {
    let defaults = ScenarioConfig::default();
    let trajectory = match kv.get("trajectory") {
        None => defaults.trajectory,
        Some(name) => TrajectoryKind::parse(name)
            .ok_or_else(|| ConfigError::BadValue("trajectory".into(), name.into()))?,
    };
    let mut degradations = Vec::new();
    for spec in kv.get_all("degradation") {
        degradations.push(parse_degradation(spec)?);
    }
    Ok(ScenarioConfig {
        seed: kv.parse_u64("seed", defaults.seed)?,
        duration: kv.parse_f64("duration", defaults.duration)?,
        imu_rate: kv.parse_f64("imu_rate", defaults.imu_rate)?,
        cam_rate: kv.parse_f64("cam_rate", defaults.cam_rate)?,
        gnss_rate: kv.parse_f64("gnss_rate", defaults.gnss_rate)?,
        trajectory,
        speed: kv.parse_f64("speed", defaults.speed)?,
        feature_count: kv.parse_u64("feature_count", defaults.feature_count as u64)? as usize,
        feature_depth_range: (
            kv.parse_f64("feature_depth_min", defaults.feature_depth_range.0)?,
            kv.parse_f64("feature_depth_max", defaults.feature_depth_range.1)?,
        ),
        noise: NoiseParams {
            gyro_noise_density: kv
                .parse_f64("gyro_noise_density", defaults.noise.gyro_noise_density)?,
            accel_noise_density: kv
                .parse_f64("accel_noise_density", defaults.noise.accel_noise_density)?,
            gyro_bias_walk: kv.parse_f64("gyro_bias_walk", defaults.noise.gyro_bias_walk)?,
            accel_bias_walk: kv.parse_f64("accel_bias_walk", defaults.noise.accel_bias_walk)?,
            pos_noise_density: kv
                .parse_f64("pos_noise_density", defaults.noise.pos_noise_density)?,
        },
        pixel_sigma: kv.parse_f64("pixel_sigma", defaults.pixel_sigma)?,
        gnss_code_sigma: kv.parse_f64("gnss_code_sigma", defaults.gnss_code_sigma)?,
        gnss_phase_sigma: kv.parse_f64("gnss_phase_sigma", defaults.gnss_phase_sigma)?,
        gyro_bias_magnitude: kv
            .parse_f64("gyro_bias_magnitude", defaults.gyro_bias_magnitude)?,
        accel_bias_magnitude: kv
            .parse_f64("accel_bias_magnitude", defaults.accel_bias_magnitude)?,
        degradations,
    })
}
