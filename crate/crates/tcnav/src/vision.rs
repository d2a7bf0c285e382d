//! Pose-only visual model: relative poses, closed-form feature depths from
//! a pair of camera poses, base-frame selection by the parallax indicator
//! theta, pixel residuals and their pose Jacobians, plus a Gauss-Newton
//! triangulator used by the MSCKF baseline and as an independent oracle.
//!
//! A feature observed in frames i and j with normalized bearings p_i, p_j
//! satisfies z_j p_j = z_i R_i^j p_i + t_{j,i}. Crossing with p_j removes
//! z_j and yields the closed-form depth z_i = |p_j x t_{j,i}| / theta with
//! theta = |p_j x R_i^j p_i|, so the feature never needs its own state.

use std::collections::BTreeMap;

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, RowVector3, Vector2, Vector3};
use thiserror::Error;

use crate::math::skew;

/// Parallax gate: features with theta below this are treated as
/// pure-rotation / at-infinity and rejected.
pub const THETA_MIN: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum VisionError {
    #[error("degenerate geometry (parallel bearings or insufficient parallax)")]
    DegenerateGeometry,
    #[error("predicted point behind the image plane")]
    BehindCamera,
    #[error("iterative triangulation did not converge")]
    NonConvergence,
}

/// Camera pose: `rotation` maps camera coordinates to world coordinates,
/// `position` is the optical center in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>) -> Self {
        CameraPose { rotation, position }
    }

    /// Feature coordinates in this camera's frame.
    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (point - self.position)
    }
}

/// Normalized image coordinate (x, y, 1) of a feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedBearing {
    pub x: f64,
    pub y: f64,
}

impl NormalizedBearing {
    pub fn new(x: f64, y: f64) -> Self {
        NormalizedBearing { x, y }
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 1.0)
    }
}

/// Relative transform between two camera frames:
/// `rotation_ij` = R_j' R_i, `translation_ji` = R_j' (r_i - r_j).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation_ij: Matrix3<f64>,
    pub translation_ji: Vector3<f64>,
}

/// Closed-form depth of a feature in one frame of a base pair, with the
/// parallax indicator theta it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoDepth {
    pub depth: f64,
    pub theta: f64,
}

/// Pinhole intrinsics (no distortion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Pixel coordinates of a normalized image point.
    pub fn project(&self, normalized: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * normalized.x + self.cx,
            self.fy * normalized.y + self.cy,
        )
    }

    /// Normalized bearing for a pixel measurement.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> NormalizedBearing {
        NormalizedBearing::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }
}

/// IMU-to-camera extrinsics: `lever_arm` is the camera position in the
/// body frame, `rotation_bc` rotates body coordinates into camera
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub lever_arm: Vector3<f64>,
    pub rotation_bc: Matrix3<f64>,
}

impl CameraExtrinsics {
    pub fn identity() -> Self {
        CameraExtrinsics {
            lever_arm: Vector3::zeros(),
            rotation_bc: Matrix3::identity(),
        }
    }
}

/// One observation of a feature: the normalized bearing and the raw pixel
/// it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackObservation {
    pub bearing: NormalizedBearing,
    pub pixel: Vector2<f64>,
}

/// A feature's observations indexed by clone (frame) id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTrack {
    pub feature_id: u64,
    pub observations: BTreeMap<u64, TrackObservation>,
    pub base_pair: Option<(u64, u64)>,
}

impl FeatureTrack {
    pub fn new(feature_id: u64) -> Self {
        FeatureTrack {
            feature_id,
            observations: BTreeMap::new(),
            base_pair: None,
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Relative transform from frame i to frame j.
pub fn relative_transform(pose_i: &CameraPose, pose_j: &CameraPose) -> RelativePose {
    RelativePose {
        rotation_ij: pose_j.rotation.transpose() * pose_i.rotation,
        translation_ji: pose_j.rotation.transpose() * (pose_i.position - pose_j.position),
    }
}

/// Closed-form depths of a feature in frames i and j from the relative
/// pose and the two bearings. Both results carry theta = |p_j x R p_i|.
pub fn po_depths(
    rel: &RelativePose,
    p_i: &NormalizedBearing,
    p_j: &NormalizedBearing,
) -> Result<(PoDepth, PoDepth), VisionError> {
    let rp_i = rel.rotation_ij * p_i.vector();
    let pj = p_j.vector();
    let theta = pj.cross(&rp_i).norm();
    if theta < THETA_MIN {
        return Err(VisionError::DegenerateGeometry);
    }
    let d_i = pj.cross(&rel.translation_ji).norm() / theta;
    let d_j = rp_i.cross(&rel.translation_ji).norm() / theta;
    Ok((
        PoDepth { depth: d_i, theta },
        PoDepth { depth: d_j, theta },
    ))
}

/// Parallax indicator for the ordered frame pair (eta, xi) of a track.
fn theta_for_pair(
    track: &FeatureTrack,
    poses: &BTreeMap<u64, CameraPose>,
    eta: u64,
    xi: u64,
) -> Option<f64> {
    let (pe, px) = (poses.get(&eta)?, poses.get(&xi)?);
    let (oe, ox) = (track.observations.get(&eta)?, track.observations.get(&xi)?);
    let rel = relative_transform(pe, px);
    Some(
        ox.bearing
            .vector()
            .cross(&(rel.rotation_ij * oe.bearing.vector()))
            .norm(),
    )
}

/// Base-frame selection: the ordered pair maximizing theta over all
/// candidates, ties broken by lowest (eta, xi).
///
/// Theta is symmetric in its arguments, so each unordered pair is
/// evaluated once and the lexicographically ordered pair is returned;
/// this keeps the outcome invariant under rigid world transforms, which
/// can flip last-ulp comparisons between the two orientations of the
/// same pair.
pub fn select_base_frames(
    track: &FeatureTrack,
    poses: &BTreeMap<u64, CameraPose>,
) -> Result<(u64, u64), VisionError> {
    let ids: Vec<u64> = track
        .observations
        .keys()
        .filter(|id| poses.contains_key(id))
        .copied()
        .collect();
    if ids.len() < 2 {
        return Err(VisionError::DegenerateGeometry);
    }
    let mut best: Option<((u64, u64), f64)> = None;
    for (a, &eta) in ids.iter().enumerate() {
        for &xi in &ids[a + 1..] {
            let theta = theta_for_pair(track, poses, eta, xi).unwrap_or(0.0);
            if best.is_none_or(|(_, t)| theta > t) {
                best = Some(((eta, xi), theta));
            }
        }
    }
    match best {
        Some((pair, theta)) if theta >= THETA_MIN => Ok(pair),
        _ => Err(VisionError::DegenerateGeometry),
    }
}

/// Intermediate quantities of the pose-only residual at target frame l
/// for base pair (i, j).
struct PoTerms {
    /// |p_j x t_{j,i}|: theta times the feature depth in frame i.
    alpha: f64,
    theta: f64,
    /// Unit vector along p_j x t_{j,i}.
    u_hat: Vector3<f64>,
    /// Unit vector along p_j x R_i^j p_i.
    w_hat: Vector3<f64>,
    /// R_i^l p_i.
    m: Vector3<f64>,
    /// t_{l,i}.
    t_li: Vector3<f64>,
    /// Numerator Y_l = alpha R_i^l p_i + theta t_{l,i}.
    y: Vector3<f64>,
    p_i_world: Vector3<f64>,
}

fn po_terms(
    track: &FeatureTrack,
    base: (u64, u64),
    target: u64,
    poses: &BTreeMap<u64, CameraPose>,
) -> Result<PoTerms, VisionError> {
    let (i, j) = base;
    let pose_i = poses.get(&i).ok_or(VisionError::DegenerateGeometry)?;
    let pose_j = poses.get(&j).ok_or(VisionError::DegenerateGeometry)?;
    let pose_l = poses.get(&target).ok_or(VisionError::DegenerateGeometry)?;
    let p_i = track.observations[&i].bearing.vector();
    let p_j = track.observations[&j].bearing.vector();

    let rel_ij = relative_transform(pose_i, pose_j);
    let w = p_j.cross(&(rel_ij.rotation_ij * p_i));
    let theta = w.norm();
    if theta < THETA_MIN {
        return Err(VisionError::DegenerateGeometry);
    }
    let u = p_j.cross(&rel_ij.translation_ji);
    let alpha = u.norm();
    if alpha < 1e-12 {
        // Zero translation: the feature depth collapses to zero and the
        // residual carries no pose information.
        return Err(VisionError::DegenerateGeometry);
    }
    let m = pose_l.rotation.transpose() * (pose_i.rotation * p_i);
    let t_li = pose_l.rotation.transpose() * (pose_i.position - pose_l.position);
    Ok(PoTerms {
        alpha,
        theta,
        u_hat: u / alpha,
        w_hat: w / theta,
        m,
        t_li,
        y: alpha * m + theta * t_li,
        p_i_world: pose_i.rotation * p_i,
    })
}

/// Pose-only pixel residual at observing frame `target` (l != i). For
/// l = j it reduces to the base-pair coplanarity constraint.
pub fn po_residual(
    track: &FeatureTrack,
    base: (u64, u64),
    target: u64,
    poses: &BTreeMap<u64, CameraPose>,
    intrinsics: &CameraIntrinsics,
) -> Result<Vector2<f64>, VisionError> {
    assert_ne!(base.0, target, "residual is undefined at the anchor frame");
    let terms = po_terms(track, base, target, poses)?;
    if terms.y.z <= 0.0 {
        return Err(VisionError::BehindCamera);
    }
    let predicted = intrinsics.project(&Vector2::new(
        terms.y.x / terms.y.z,
        terms.y.y / terms.y.z,
    ));
    Ok(predicted - track.observations[&target].pixel)
}

/// Pose-only residual Jacobians with respect to the (delta_r, phi) error
/// states of the involved camera poses, where a perturbed pose is
/// r + delta_r, (I + phi^) R. Returned as (frame id, 2x6 block) pairs;
/// when the target frame is the base frame j, its two contributions are
/// summed into a single block. All other frames have zero Jacobian.
pub fn po_jacobians(
    track: &FeatureTrack,
    base: (u64, u64),
    target: u64,
    poses: &BTreeMap<u64, CameraPose>,
    intrinsics: &CameraIntrinsics,
) -> Result<Vec<(u64, Matrix2x6<f64>)>, VisionError> {
    assert_ne!(base.0, target);
    let (i, j) = base;
    let terms = po_terms(track, base, target, poses)?;
    if terms.y.z <= 0.0 {
        return Err(VisionError::BehindCamera);
    }
    let pose_i = &poses[&i];
    let pose_j = &poses[&j];
    let pose_l = &poses[&target];
    let p_j = track.observations[&j].bearing.vector();

    // d(residual) / dY through the perspective division and intrinsics.
    let inv_z = 1.0 / terms.y.z;
    let de_dy = Matrix2x3::new(
        intrinsics.fx * inv_z,
        0.0,
        -intrinsics.fx * terms.y.x * inv_z * inv_z,
        0.0,
        intrinsics.fy * inv_z,
        -intrinsics.fy * terms.y.y * inv_z * inv_z,
    );

    let rl_t = pose_l.rotation.transpose();
    let rj_t = pose_j.rotation.transpose();
    // d(alpha) row: alpha = |p_j x R_j'(r_i - r_j)|.
    let a_row: RowVector3<f64> = terms.u_hat.transpose() * skew(&p_j) * rj_t;
    // d(theta) row against R_i^j p_i perturbations: theta = |p_j x R_j' R_i p_i|.
    let b_row: RowVector3<f64> =
        terms.w_hat.transpose() * skew(&p_j) * rj_t * skew(&terms.p_i_world);

    let m = terms.m;
    let t_li = terms.t_li;
    let r_ij = pose_i.position - pose_j.position;
    let r_il = pose_i.position - pose_l.position;

    // dY blocks per perturbed pose.
    let dy_dri = m * a_row + rl_t * terms.theta;
    let dy_drj = -(m * a_row);
    let dy_drl = -rl_t * terms.theta;
    let dy_dphi_i = -rl_t * skew(&terms.p_i_world) * terms.alpha - t_li * b_row;
    let dy_dphi_j = m * (a_row * skew(&r_ij)) + t_li * b_row;
    let dy_dphi_l =
        rl_t * skew(&terms.p_i_world) * terms.alpha + rl_t * skew(&r_il) * terms.theta;

    let block = |dr: &Matrix3<f64>, dphi: &Matrix3<f64>| -> Matrix2x6<f64> {
        let mut out = Matrix2x6::zeros();
        out.fixed_view_mut::<2, 3>(0, 0).copy_from(&(de_dy * dr));
        out.fixed_view_mut::<2, 3>(0, 3).copy_from(&(de_dy * dphi));
        out
    };

    let j_i = block(&dy_dri, &dy_dphi_i);
    let j_j = block(&dy_drj, &dy_dphi_j);
    let j_l = block(&dy_drl, &dy_dphi_l);

    let mut blocks = Vec::with_capacity(3);
    if target == j {
        blocks.push((i, j_i));
        blocks.push((j, j_j + j_l));
    } else {
        blocks.push((i, j_i));
        blocks.push((j, j_j));
        blocks.push((target, j_l));
        blocks.sort_by_key(|(id, _)| *id);
    }
    Ok(blocks)
}

/// Camera pose of a body pose through the extrinsics.
pub fn body_pose_to_camera(
    body_rotation: &Matrix3<f64>,
    body_position: &Vector3<f64>,
    ext: &CameraExtrinsics,
) -> CameraPose {
    CameraPose {
        rotation: body_rotation * ext.rotation_bc.transpose(),
        position: body_position + body_rotation * ext.lever_arm,
    }
}

/// Inverse of [`body_pose_to_camera`].
pub fn camera_pose_to_body(pose: &CameraPose, ext: &CameraExtrinsics) -> (Matrix3<f64>, Vector3<f64>) {
    let body_rotation = pose.rotation * ext.rotation_bc;
    let body_position = pose.position - body_rotation * ext.lever_arm;
    (body_rotation, body_position)
}

/// Gauss-Newton triangulation of a track, initialized by linear two-view
/// triangulation from the base pair. Independent of the pose-only path;
/// serves as the MSCKF feature estimate and as a test oracle.
pub fn triangulate(
    track: &FeatureTrack,
    poses: &BTreeMap<u64, CameraPose>,
) -> Result<Vector3<f64>, VisionError> {
    let (i, j) = match track.base_pair {
        Some(pair) => pair,
        None => select_base_frames(track, poses)?,
    };
    let pose_i = &poses[&i];
    let pose_j = &poses[&j];
    let rel = relative_transform(pose_i, pose_j);
    let p_i = track.observations[&i].bearing.vector();
    let p_j = track.observations[&j].bearing.vector();
    let w = p_j.cross(&(rel.rotation_ij * p_i));
    if w.norm() < THETA_MIN {
        return Err(VisionError::DegenerateGeometry);
    }
    // Solve in coordinates local to the anchor camera; with world
    // coordinates of planetary magnitude the absolute step tolerance
    // would sit below the f64 resolution.
    let origin = pose_i.position;
    // Linear depth in frame i from the cross-product constraint.
    let u = p_j.cross(&rel.translation_ji);
    let z_i = -w.dot(&u) / w.norm_squared();
    let mut point = pose_i.rotation * (p_i * z_i);

    let mut last_step = f64::INFINITY;
    for _ in 0..20 {
        let mut hth = Matrix3::zeros();
        let mut htr = Vector3::zeros();
        for (id, obs) in &track.observations {
            let Some(pose) = poses.get(id) else { continue };
            let pc = pose.rotation.transpose() * (point + origin - pose.position);
            if pc.z <= 1e-6 {
                return Err(VisionError::NonConvergence);
            }
            let inv_z = 1.0 / pc.z;
            let res = Vector2::new(pc.x * inv_z - obs.bearing.x, pc.y * inv_z - obs.bearing.y);
            let dh_dpc = Matrix2x3::new(
                inv_z,
                0.0,
                -pc.x * inv_z * inv_z,
                0.0,
                inv_z,
                -pc.y * inv_z * inv_z,
            );
            let jac = dh_dpc * pose.rotation.transpose();
            hth += jac.transpose() * jac;
            htr += jac.transpose() * res;
        }
        let step = hth
            .lu()
            .solve(&(-htr))
            .ok_or(VisionError::DegenerateGeometry)?;
        point += step;
        last_step = step.norm();
        if last_step < 1e-10 {
            break;
        }
    }
    // Twenty Gauss-Newton iterations pin the optimum to the f64 floor;
    // a large final step means the iteration was actually diverging.
    if last_step > 1e-3 {
        return Err(VisionError::NonConvergence);
    }
    Ok(point + origin)
}
