//! Trajectory error metrics: per-epoch translation and rotation errors
//! against ground truth, aggregates (max, avg, RMS, p95), empirical CDF,
//! and the right-front-up decomposition used by the plots.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::dataset::TrajectorySample;
use crate::earth::{ecef_to_lla, ned_to_ecef, EarthParams};
use crate::math::rotation_angle;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no estimate/truth timestamp pairs align within {0} s")]
    NoOverlap(f64),
}

/// Nearest-neighbor association tolerance, s.
pub const ALIGN_TOLERANCE: f64 = 0.005;

/// One aligned error sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub timestamp: f64,
    /// Euclidean translation error, m.
    pub translation: f64,
    /// Geodesic rotation error, deg.
    pub rotation_deg: f64,
    /// Translation error resolved in the right-front-up frame, m.
    pub rfu: Vector3<f64>,
}

/// Scalar aggregates over an error series.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub max: f64,
    pub avg: f64,
    pub rms: f64,
    pub p95: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Aggregate {
        if values.is_empty() {
            return Aggregate::default();
        }
        let n = values.len() as f64;
        let max = values.iter().copied().fold(f64::MIN, f64::max);
        let avg = values.iter().sum::<f64>() / n;
        let rms = (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let idx = ((0.95 * n).ceil() as usize).clamp(1, sorted.len()) - 1;
        Aggregate {
            max,
            avg,
            rms,
            p95: sorted[idx],
        }
    }

    pub fn scaled(&self, factor: f64) -> Aggregate {
        Aggregate {
            max: self.max * factor,
            avg: self.avg * factor,
            rms: self.rms * factor,
            p95: self.p95 * factor,
        }
    }
}

/// Full error report of one run.
#[derive(Debug, Clone, Default)]
pub struct ErrorReport {
    pub translation: Aggregate,
    pub rotation_deg: Aggregate,
    /// Translation normalized by trajectory length, percent.
    pub translation_percent: Option<Aggregate>,
    /// Rotation normalized by trajectory length, deg/m.
    pub rotation_deg_per_m: Option<Aggregate>,
    pub series: Vec<ErrorSample>,
    /// Empirical CDF of translation errors: (error m, fraction).
    pub cdf: Vec<(f64, f64)>,
    /// Ground-truth path length over the evaluated span, m.
    pub trajectory_length: f64,
}

/// Right-front-up axes at the first ground-truth pose.
fn rfu_axes(first: &TrajectorySample) -> Matrix3<f64> {
    let earth = EarthParams::default();
    let up = match ecef_to_lla(&first.position, &earth) {
        Ok(lla) => -ned_to_ecef(&lla).column(2).into_owned(),
        Err(_) => first.position.normalize(),
    };
    // Front: the body x axis projected on the horizontal plane.
    let body_x = first.attitude.column(0).into_owned();
    let mut front = body_x - up * body_x.dot(&up);
    if front.norm() < 1e-6 {
        front = first.velocity - up * first.velocity.dot(&up);
    }
    let front = front.normalize();
    let right = front.cross(&up);
    Matrix3::from_columns(&[right, front, up])
}

/// Compute the error report of an estimated trajectory against truth.
///
/// Timestamps are associated nearest-neighbor within
/// [`ALIGN_TOLERANCE`]; with `percent_normalize` the report also carries
/// errors divided by the ground-truth path length.
pub fn compute_metrics(
    estimate: &[TrajectorySample],
    truth: &[TrajectorySample],
    percent_normalize: bool,
) -> Result<ErrorReport, MetricsError> {
    if estimate.is_empty() || truth.is_empty() {
        return Err(MetricsError::NoOverlap(ALIGN_TOLERANCE));
    }
    let rfu = rfu_axes(&truth[0]);

    let mut series = Vec::new();
    let mut t_idx = 0usize;
    let mut first_matched: Option<usize> = None;
    let mut last_matched = 0usize;
    for est in estimate {
        // Truth is time-sorted; advance to the nearest sample.
        while t_idx + 1 < truth.len()
            && (truth[t_idx + 1].timestamp - est.timestamp).abs()
                <= (truth[t_idx].timestamp - est.timestamp).abs()
        {
            t_idx += 1;
        }
        let tr = &truth[t_idx];
        if (tr.timestamp - est.timestamp).abs() > ALIGN_TOLERANCE {
            continue;
        }
        let e = est.position - tr.position;
        series.push(ErrorSample {
            timestamp: est.timestamp,
            translation: e.norm(),
            rotation_deg: rotation_angle(&est.attitude, &tr.attitude).to_degrees(),
            rfu: rfu.transpose() * e,
        });
        first_matched.get_or_insert(t_idx);
        last_matched = t_idx;
    }
    let Some(first_matched) = first_matched else {
        return Err(MetricsError::NoOverlap(ALIGN_TOLERANCE));
    };

    let mut length = 0.0;
    for k in first_matched..last_matched {
        length += (truth[k + 1].position - truth[k].position).norm();
    }

    let translations: Vec<f64> = series.iter().map(|s| s.translation).collect();
    let rotations: Vec<f64> = series.iter().map(|s| s.rotation_deg).collect();
    let translation = Aggregate::of(&translations);
    let rotation_deg = Aggregate::of(&rotations);

    let mut sorted = translations.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let cdf = sorted
        .iter()
        .enumerate()
        .map(|(k, v)| (*v, (k + 1) as f64 / n))
        .collect();

    let (translation_percent, rotation_deg_per_m) = if percent_normalize && length > 0.0 {
        (
            Some(translation.scaled(100.0 / length)),
            Some(rotation_deg.scaled(1.0 / length)),
        )
    } else {
        (None, None)
    };

    Ok(ErrorReport {
        translation,
        rotation_deg,
        translation_percent,
        rotation_deg_per_m,
        series,
        cdf,
        trajectory_length: length,
    })
}
