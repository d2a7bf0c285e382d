//! Sliding-window error-state filter: stochastic cloning of body poses,
//! the pose-only iterated measurement update, an MSCKF baseline update
//! (triangulation + left null-space projection), innovation gating, and
//! FIFO marginalization.
//!
//! Joint error state layout: [15 IMU errors | 6 per clone (dr, phi),
//! clones in ascending id order | 1 per double-difference ambiguity].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::ins::{NavState, IMU_STATE_DIM};
use crate::math::{orthonormalize, skew, so3_log};
use crate::stats::chi2_quantile;
use crate::vision::{
    body_pose_to_camera, po_depths, po_jacobians, po_residual, relative_transform,
    select_base_frames, triangulate, CameraExtrinsics, CameraIntrinsics, CameraPose,
    FeatureTrack,
};

pub const CLONE_DIM: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("window already holds {0} clones; marginalize before augmenting")]
    WindowFull(usize),
    #[error("clone ids must increase monotonically")]
    NonMonotonicClone,
    #[error("every visual track was rejected; state left unchanged")]
    AllTracksRejected,
    #[error("every GNSS observation was rejected; state left unchanged")]
    AllObservationsRejected,
    #[error("innovation covariance is singular")]
    SingularInnovation,
}

/// A cloned body pose held in the sliding window.
#[derive(Debug, Clone, PartialEq)]
pub struct ClonePose {
    pub position: Vector3<f64>,
    pub attitude: Matrix3<f64>,
    pub timestamp: f64,
}

/// Nominal state plus the joint error covariance.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub nav: NavState,
    pub clones: BTreeMap<u64, ClonePose>,
    /// Float double-difference ambiguities, cycles.
    pub ambiguities: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub window_size: usize,
}

impl FilterState {
    /// New filter around a nominal state with the given 15x15 initial
    /// IMU-error covariance.
    pub fn new(nav: NavState, p0: DMatrix<f64>, window_size: usize) -> Self {
        assert_eq!(p0.nrows(), IMU_STATE_DIM);
        assert_eq!(p0.ncols(), IMU_STATE_DIM);
        FilterState {
            nav,
            clones: BTreeMap::new(),
            ambiguities: Vec::new(),
            covariance: p0,
            window_size,
        }
    }

    pub fn dim(&self) -> usize {
        IMU_STATE_DIM + CLONE_DIM * self.clones.len() + self.ambiguities.len()
    }

    /// Offset of a clone's error block in the joint state.
    pub fn clone_offset(&self, id: u64) -> Option<usize> {
        self.clones
            .keys()
            .position(|k| *k == id)
            .map(|rank| IMU_STATE_DIM + CLONE_DIM * rank)
    }

    /// Offset of the first ambiguity state.
    pub fn ambiguity_base(&self) -> usize {
        IMU_STATE_DIM + CLONE_DIM * self.clones.len()
    }

    /// Stochastic cloning of the current body pose.
    ///
    /// The clone copies (r_b, R_b) exactly; the covariance gains six rows
    /// and columns that replicate the position and attitude rows of the
    /// current joint covariance, so clone and IMU pose errors start
    /// perfectly correlated.
    pub fn augment_clone(&mut self, clone_id: u64, timestamp: f64) -> Result<(), FilterError> {
        if self.clones.len() >= self.window_size {
            return Err(FilterError::WindowFull(self.window_size));
        }
        if self.clones.keys().next_back().is_some_and(|last| *last >= clone_id) {
            return Err(FilterError::NonMonotonicClone);
        }
        let old_dim = self.dim();
        let insert_at = self.ambiguity_base();
        // Selected rows: position block then attitude block.
        let sel: [usize; 6] = [0, 1, 2, 6, 7, 8];

        let mut p = DMatrix::<f64>::zeros(old_dim + CLONE_DIM, old_dim + CLONE_DIM);
        // Index map old -> new.
        let map = |k: usize| if k < insert_at { k } else { k + CLONE_DIM };
        for r in 0..old_dim {
            for c in 0..old_dim {
                p[(map(r), map(c))] = self.covariance[(r, c)];
            }
        }
        for (i, &sr) in sel.iter().enumerate() {
            for c in 0..old_dim {
                p[(insert_at + i, map(c))] = self.covariance[(sr, c)];
                p[(map(c), insert_at + i)] = self.covariance[(c, sr)];
            }
        }
        for (i, &sr) in sel.iter().enumerate() {
            for (j, &sc) in sel.iter().enumerate() {
                p[(insert_at + i, insert_at + j)] = self.covariance[(sr, sc)];
            }
        }
        self.covariance = p;
        self.clones.insert(
            clone_id,
            ClonePose {
                position: self.nav.position,
                attitude: self.nav.attitude,
                timestamp,
            },
        );
        Ok(())
    }

    /// Drop the oldest clone; deleting its rows and columns marginalizes
    /// it exactly for a Gaussian state. Returns the removed id.
    pub fn marginalize_oldest(&mut self) -> Option<u64> {
        let oldest = *self.clones.keys().next()?;
        let offset = self.clone_offset(oldest).unwrap();
        let p = std::mem::replace(&mut self.covariance, DMatrix::zeros(0, 0));
        self.covariance = p
            .remove_rows(offset, CLONE_DIM)
            .remove_columns(offset, CLONE_DIM);
        self.clones.remove(&oldest);
        Some(oldest)
    }

    /// Remove one ambiguity state (by index within the ambiguity block).
    pub fn remove_ambiguity(&mut self, idx: usize) {
        assert!(idx < self.ambiguities.len());
        let offset = self.ambiguity_base() + idx;
        let p = std::mem::replace(&mut self.covariance, DMatrix::zeros(0, 0));
        self.covariance = p.remove_rows(offset, 1).remove_columns(offset, 1);
        self.ambiguities.remove(idx);
    }

    /// Append one ambiguity state with the given nominal value and prior
    /// variance, uncorrelated with everything else.
    pub fn append_ambiguity(&mut self, value: f64, variance: f64) -> usize {
        let old_dim = self.dim();
        let mut p = DMatrix::<f64>::zeros(old_dim + 1, old_dim + 1);
        p.view_mut((0, 0), (old_dim, old_dim)).copy_from(&self.covariance);
        p[(old_dim, old_dim)] = variance;
        self.covariance = p;
        self.ambiguities.push(value);
        self.ambiguities.len() - 1
    }

    /// Apply an error-state correction: additive for vectors and
    /// ambiguities, (I + phi^) R for attitudes.
    pub fn apply_correction(&mut self, delta: &DVector<f64>) {
        assert_eq!(delta.len(), self.dim());
        self.nav.position += delta.fixed_rows::<3>(0).into_owned();
        self.nav.velocity += delta.fixed_rows::<3>(3).into_owned();
        let phi = delta.fixed_rows::<3>(6).into_owned();
        self.nav.attitude =
            orthonormalize(&((Matrix3::identity() + skew(&phi)) * self.nav.attitude));
        self.nav.accel_bias += delta.fixed_rows::<3>(9).into_owned();
        self.nav.gyro_bias += delta.fixed_rows::<3>(12).into_owned();
        let ids: Vec<u64> = self.clones.keys().copied().collect();
        for id in ids {
            let off = self.clone_offset(id).unwrap();
            let clone = self.clones.get_mut(&id).unwrap();
            clone.position += delta.fixed_rows::<3>(off).into_owned();
            let phi = delta.fixed_rows::<3>(off + 3).into_owned();
            clone.attitude =
                orthonormalize(&((Matrix3::identity() + skew(&phi)) * clone.attitude));
        }
        let base = self.ambiguity_base();
        for k in 0..self.ambiguities.len() {
            self.ambiguities[k] += delta[base + k];
        }
    }

    /// Error of this state relative to `reference` (self "minus"
    /// reference), in the joint error coordinates.
    pub fn state_difference(&self, reference: &FilterState) -> DVector<f64> {
        assert_eq!(self.dim(), reference.dim());
        let mut d = DVector::zeros(self.dim());
        d.fixed_rows_mut::<3>(0)
            .copy_from(&(self.nav.position - reference.nav.position));
        d.fixed_rows_mut::<3>(3)
            .copy_from(&(self.nav.velocity - reference.nav.velocity));
        d.fixed_rows_mut::<3>(6).copy_from(&so3_log(&orthonormalize(
            &(self.nav.attitude * reference.nav.attitude.transpose()),
        )));
        d.fixed_rows_mut::<3>(9)
            .copy_from(&(self.nav.accel_bias - reference.nav.accel_bias));
        d.fixed_rows_mut::<3>(12)
            .copy_from(&(self.nav.gyro_bias - reference.nav.gyro_bias));
        for (id, clone) in &self.clones {
            let off = self.clone_offset(*id).unwrap();
            let ref_clone = &reference.clones[id];
            d.fixed_rows_mut::<3>(off)
                .copy_from(&(clone.position - ref_clone.position));
            d.fixed_rows_mut::<3>(off + 3).copy_from(&so3_log(&orthonormalize(
                &(clone.attitude * ref_clone.attitude.transpose()),
            )));
        }
        let base = self.ambiguity_base();
        for k in 0..self.ambiguities.len() {
            d[base + k] = self.ambiguities[k] - reference.ambiguities[k];
        }
        d
    }

    /// Camera poses of all clones through the extrinsics.
    pub fn camera_poses(&self, ext: &CameraExtrinsics) -> BTreeMap<u64, CameraPose> {
        self.clones
            .iter()
            .map(|(id, c)| (*id, body_pose_to_camera(&c.attitude, &c.position, ext)))
            .collect()
    }

    /// Enforce covariance symmetry.
    pub fn symmetrize(&mut self) {
        let dim = self.dim();
        for r in 0..dim {
            for c in (r + 1)..dim {
                let avg = 0.5 * (self.covariance[(r, c)] + self.covariance[(c, r)]);
                self.covariance[(r, c)] = avg;
                self.covariance[(c, r)] = avg;
            }
        }
    }
}

/// Innovation gate: accept iff r' (H P H' + R)^-1 r is below the
/// chi-square quantile at `confidence` for dim(r) degrees of freedom.
pub fn chi2_gate(
    residual: &DVector<f64>,
    h: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
    confidence: f64,
) -> Result<bool, FilterError> {
    let s = h * p * h.transpose() + r;
    let chol = s.cholesky().ok_or(FilterError::SingularInnovation)?;
    let solved = chol.solve(residual);
    let mahalanobis = residual.dot(&solved);
    Ok(mahalanobis < chi2_quantile(confidence, residual.len()))
}

/// Kalman gain and Joseph-form covariance update, shared by every
/// measurement path.
pub(crate) fn kalman_step(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), FilterError> {
    let s = h * p * h.transpose() + r;
    let chol = s.cholesky().ok_or(FilterError::SingularInnovation)?;
    // K = P H' S^-1  via  S K' = H P.
    let k = chol.solve(&(h * p)).transpose();
    let eye = DMatrix::<f64>::identity(p.nrows(), p.nrows());
    let ikh = &eye - &k * h;
    let mut p_new = &ikh * p * ikh.transpose() + &k * r * k.transpose();
    for i in 0..p_new.nrows() {
        for j in (i + 1)..p_new.ncols() {
            let avg = 0.5 * (p_new[(i, j)] + p_new[(j, i)]);
            p_new[(i, j)] = avg;
            p_new[(j, i)] = avg;
        }
    }
    Ok((k, p_new))
}

/// Tuning knobs of the visual updates.
#[derive(Debug, Clone, Copy)]
pub struct VisualUpdateConfig {
    pub pixel_sigma: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub chi2_confidence: f64,
    /// Tracks whose closed-form depth falls below this are skipped.
    pub min_depth: f64,
    /// Parallax gate; can only tighten the built-in floor.
    pub theta_min: f64,
    /// Minimum observations for a track to enter an update.
    pub min_track_length: usize,
}

impl Default for VisualUpdateConfig {
    fn default() -> Self {
        VisualUpdateConfig {
            pixel_sigma: 1.0,
            max_iterations: 5,
            convergence_tol: 1e-8,
            chi2_confidence: 0.95,
            min_depth: 0.05,
            theta_min: crate::vision::THETA_MIN,
            min_track_length: 2,
        }
    }
}

/// Outcome diagnostics of a visual update.
#[derive(Debug, Clone, Default)]
pub struct VisualUpdateReport {
    pub tracks_used: usize,
    pub tracks_rejected: usize,
    pub tracks_degenerate: usize,
    pub iterations: usize,
    /// Stacked residual norm at the start of each iteration.
    pub residual_norms: Vec<f64>,
    /// Attitude correction applied to the navigation state (world frame).
    pub nav_attitude_correction: Vector3<f64>,
}

/// Frozen per-track measurement model: the eigenbasis of the
/// first-order noise covariance and its (diagonal) projected variances.
///
/// The pose-only prediction is built from the measured base-frame
/// bearings, so their pixel noise enters every residual row; a plain
/// sigma^2 I noise model would understate the innovation covariance and
/// make the chi-square gate reject consistent tracks. R is assembled as
/// sigma^2 G G' where G maps all of the track's pixel noise sources
/// (anchor, base, and each target pixel) into the residual, and the
/// system is projected onto the noise-carrying eigenbasis: every real
/// direction holds at least the direct pixel variance, while the
/// remaining direction of the j-frame constraint pair sits at the
/// second-order floor, carrying a noise-squared bias rather than
/// information. The model is computed once at the prior state and held
/// fixed across the update iterations.
struct PoTrackNoise {
    /// rows x kept eigenbasis.
    basis: DMatrix<f64>,
    /// kept x kept diagonal covariance.
    r: DMatrix<f64>,
}

fn po_track_noise(
    track: &FeatureTrack,
    poses: &BTreeMap<u64, CameraPose>,
    intrinsics: &CameraIntrinsics,
    base: (u64, u64),
    pixel_sigma: f64,
) -> Option<PoTrackNoise> {
    let obs_ids: Vec<u64> = track
        .observations
        .keys()
        .filter(|id| poses.contains_key(id))
        .copied()
        .collect();
    let rows = 2 * (obs_ids.len() - 1);
    let mut g = DMatrix::<f64>::zeros(rows, 2 * obs_ids.len());
    let pixel_col = |id: u64| 2 * obs_ids.iter().position(|k| *k == id).unwrap();

    let (i, j) = base;
    let pose_i = poses.get(&i)?;
    let pose_j = poses.get(&j)?;
    let p_i = track.observations[&i].bearing.vector();
    let p_j = track.observations[&j].bearing.vector();
    let rel = relative_transform(pose_i, pose_j);
    let w = p_j.cross(&(rel.rotation_ij * p_i));
    let theta = w.norm();
    let u = p_j.cross(&rel.translation_ji);
    let alpha = u.norm();
    if theta < crate::vision::THETA_MIN || alpha < 1e-12 {
        return None;
    }
    let w_hat = w / theta;
    let u_hat = u / alpha;
    // Bearing sensitivities of theta and alpha.
    let c_i = w_hat.transpose() * skew(&p_j) * rel.rotation_ij; // d(theta)/dp_i
    let a_j = -(u_hat.transpose() * skew(&rel.translation_ji)); // d(alpha)/dp_j
    let c_j = -(w_hat.transpose() * skew(&(rel.rotation_ij * p_i))); // d(theta)/dp_j
    // Pixel-to-bearing scaling.
    let s_px = nalgebra::Matrix3x2::new(
        1.0 / intrinsics.fx,
        0.0,
        0.0,
        1.0 / intrinsics.fy,
        0.0,
        0.0,
    );

    let mut row = 0;
    for &l in &obs_ids {
        if l == i {
            continue;
        }
        let pose_l = poses.get(&l)?;
        let r_il = pose_l.rotation.transpose() * pose_i.rotation;
        let m = r_il * p_i;
        let t_li = pose_l.rotation.transpose() * (pose_i.position - pose_l.position);
        let y = alpha * m + theta * t_li;
        if y.z <= 0.0 {
            return None;
        }
        let inv_z = 1.0 / y.z;
        let de_dy = nalgebra::Matrix2x3::new(
            intrinsics.fx * inv_z,
            0.0,
            -intrinsics.fx * y.x * inv_z * inv_z,
            0.0,
            intrinsics.fy * inv_z,
            -intrinsics.fy * y.y * inv_z * inv_z,
        );
        let dy_dpi = r_il * alpha + t_li * c_i;
        let dy_dpj = m * a_j + t_li * c_j;
        let b_i = de_dy * dy_dpi * s_px;
        let b_j = de_dy * dy_dpj * s_px;
        let (ci, cj, cl) = (pixel_col(i), pixel_col(j), pixel_col(l));
        for rr in 0..2 {
            for cc in 0..2 {
                g[(row + rr, ci + cc)] += b_i[(rr, cc)];
                g[(row + rr, cj + cc)] += b_j[(rr, cc)];
            }
            // Direct measurement term -u_l.
            g[(row + rr, cl + rr)] -= 1.0;
        }
        row += 2;
    }
    let r = &g * g.transpose() * pixel_sigma.powi(2);
    let eig = r.symmetric_eigen();
    let cutoff = 0.25 * pixel_sigma.powi(2);
    let keep: Vec<usize> = (0..rows)
        .filter(|k| eig.eigenvalues[*k] > cutoff)
        .collect();
    if keep.is_empty() {
        return None;
    }
    let mut basis = DMatrix::<f64>::zeros(rows, keep.len());
    let mut lambda = DVector::<f64>::zeros(keep.len());
    for (c, &k) in keep.iter().enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(k));
        lambda[c] = eig.eigenvalues[k];
    }
    Some(PoTrackNoise {
        basis,
        r: DMatrix::from_diagonal(&lambda),
    })
}

/// Unprojected innovation and state Jacobian of one pose-only track at
/// the current linearization state.
fn po_track_residuals(
    fs: &FilterState,
    track: &FeatureTrack,
    poses: &BTreeMap<u64, CameraPose>,
    intrinsics: &CameraIntrinsics,
    extrinsics: &CameraExtrinsics,
    base: (u64, u64),
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let obs_ids: Vec<u64> = track
        .observations
        .keys()
        .filter(|id| poses.contains_key(id))
        .copied()
        .collect();
    let rows = 2 * (obs_ids.len() - 1);
    let mut h = DMatrix::<f64>::zeros(rows, fs.dim());
    let mut nu = DVector::<f64>::zeros(rows);
    let mut row = 0;
    for &l in &obs_ids {
        if l == base.0 {
            continue;
        }
        let e = po_residual(track, base, l, poses, intrinsics).ok()?;
        let blocks = po_jacobians(track, base, l, poses, intrinsics).ok()?;
        nu[row] = -e.x;
        nu[row + 1] = -e.y;
        for (frame, j_cam) in blocks {
            let off = fs.clone_offset(frame)?;
            let clone = &fs.clones[&frame];
            // Chain from camera-pose errors to body-pose errors:
            // dr_c = dr_b - (R_b l_c)^ phi,  phi_c = phi.
            let lever = skew(&(clone.attitude * extrinsics.lever_arm));
            let j_pos = j_cam.fixed_view::<2, 3>(0, 0).into_owned();
            let j_att = j_cam.fixed_view::<2, 3>(0, 3).into_owned() - j_pos * lever;
            for c in 0..3 {
                for rr in 0..2 {
                    h[(row + rr, off + c)] += j_pos[(rr, c)];
                    h[(row + rr, off + 3 + c)] += j_att[(rr, c)];
                }
            }
        }
        row += 2;
    }
    Some((h, nu))
}

/// Pose-only visual update over a batch of tracks.
///
/// Per track: select base frames by maximal theta, stack the pose-only
/// residuals and Jacobians over every non-anchor observation (including
/// the j-frame constraint), gate on the innovation chi-square; then run
/// one joint iterated update over all accepted tracks, relinearizing each
/// iteration, with the covariance updated once in Joseph form.
pub fn po_update(
    fs: &mut FilterState,
    tracks: &[FeatureTrack],
    intrinsics: &CameraIntrinsics,
    extrinsics: &CameraExtrinsics,
    config: &VisualUpdateConfig,
) -> Result<VisualUpdateReport, FilterError> {
    let mut report = VisualUpdateReport::default();
    let mut sorted: Vec<&FeatureTrack> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.feature_id);

    let poses = fs.camera_poses(extrinsics);
    // First pass: base selection, frozen noise models, and gating at the
    // prior state.
    let mut accepted: Vec<(&FeatureTrack, (u64, u64), PoTrackNoise)> = Vec::new();
    for track in sorted {
        let usable = track
            .observations
            .keys()
            .filter(|id| poses.contains_key(id))
            .count();
        if usable < config.min_track_length.max(2) {
            report.tracks_degenerate += 1;
            continue;
        }
        let Ok(base) = select_base_frames(track, &poses) else {
            report.tracks_degenerate += 1;
            continue;
        };
        // Depth sanity gate.
        let rel = relative_transform(&poses[&base.0], &poses[&base.1]);
        let depth_ok = po_depths(
            &rel,
            &track.observations[&base.0].bearing,
            &track.observations[&base.1].bearing,
        )
        .map(|(di, _)| di.depth >= config.min_depth && di.theta >= config.theta_min)
        .unwrap_or(false);
        if !depth_ok {
            report.tracks_degenerate += 1;
            continue;
        }
        let Some(noise) = po_track_noise(track, &poses, intrinsics, base, config.pixel_sigma)
        else {
            report.tracks_degenerate += 1;
            continue;
        };
        let Some((h, nu)) = po_track_residuals(fs, track, &poses, intrinsics, extrinsics, base)
        else {
            report.tracks_degenerate += 1;
            continue;
        };
        let h_p = noise.basis.transpose() * h;
        let nu_p = noise.basis.transpose() * nu;
        match chi2_gate(&nu_p, &h_p, &fs.covariance, &noise.r, config.chi2_confidence) {
            Ok(true) => accepted.push((track, base, noise)),
            Ok(false) => report.tracks_rejected += 1,
            Err(_) => report.tracks_degenerate += 1,
        }
    }
    if accepted.is_empty() {
        return Err(FilterError::AllTracksRejected);
    }
    report.tracks_used = accepted.len();

    // Assemble the joint (projected) system at the current state.
    let assemble = |fs: &FilterState| -> Option<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
        let poses = fs.camera_poses(extrinsics);
        let total: usize = accepted.iter().map(|(_, _, n)| n.r.nrows()).sum();
        let mut h = DMatrix::<f64>::zeros(total, fs.dim());
        let mut nu = DVector::<f64>::zeros(total);
        let mut r = DMatrix::<f64>::zeros(total, total);
        let mut at = 0;
        for (track, base, noise) in &accepted {
            let (h_t, nu_t) =
                po_track_residuals(fs, track, &poses, intrinsics, extrinsics, *base)?;
            let rows = noise.r.nrows();
            h.view_mut((at, 0), (rows, fs.dim()))
                .copy_from(&(noise.basis.transpose() * h_t));
            nu.rows_mut(at, rows)
                .copy_from(&(noise.basis.transpose() * nu_t));
            r.view_mut((at, at), (rows, rows)).copy_from(&noise.r);
            at += rows;
        }
        Some((h, nu, r))
    };

    // Joint iterated update. The nonlinear residuals are re-evaluated at
    // every iterate (so the implied feature depths track the corrected
    // poses), while the Jacobian and noise model stay at the prior
    // linearization: evaluating H at intermediate iterates mixes
    // linearization points, which manufactures information in the
    // unobservable yaw direction and drags the gyro bias with it.
    let prior = fs.clone();
    let mut frozen: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut last_correction: Option<DVector<f64>> = None;
    for iter in 0..config.max_iterations {
        let Some((h, nu, r)) = assemble(fs) else {
            // A re-evaluated residual became invalid; keep the previous iterate.
            break;
        };
        if frozen.is_none() {
            frozen = Some((h, r));
        }
        let (h, r) = frozen.clone().unwrap();
        report.residual_norms.push(nu.norm());

        let eta = fs.state_difference(&prior);
        let (k, _) = kalman_step(&prior.covariance, &h, &r)?;
        let correction = &k * (&nu + &h * &eta);
        let step = match &last_correction {
            Some(prev) => (&correction - prev).norm(),
            None => correction.norm(),
        };
        // Re-apply from the prior nominal.
        let mut next = prior.clone();
        next.apply_correction(&correction);
        fs.nav = next.nav;
        fs.clones = next.clones;
        fs.ambiguities = next.ambiguities;
        report.iterations = iter + 1;
        last_correction = Some(correction);
        if step < config.convergence_tol {
            break;
        }
    }
    // Covariance from the final linearization.
    if let Some((h, _, r)) = assemble(fs) {
        let (_, p_new) = kalman_step(&prior.covariance, &h, &r)?;
        fs.covariance = p_new;
        fs.symmetrize();
    }
    report.nav_attitude_correction =
        so3_log(&orthonormalize(&(fs.nav.attitude * prior.nav.attitude.transpose())));
    Ok(report)
}

/// Left null-space projection of a feature's stacked system: returns
/// (A' H_x, A' nu) where the columns of A span the left null space of
/// H_f. Residual dimension drops from 2m to 2m - 3.
pub fn nullspace_project(
    h_x: &DMatrix<f64>,
    h_f: &DMatrix<f64>,
    nu: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let rows = h_f.nrows();
    assert!(rows > 3);
    let qr = h_f.clone().qr();
    // Full Q via Q' applied to the identity.
    let mut qt = DMatrix::<f64>::identity(rows, rows);
    qr.q_tr_mul(&mut qt);
    // Last rows of Q' span the left null space.
    let a_t = qt.rows(3, rows - 3).into_owned();
    (&a_t * h_x, &a_t * nu)
}

/// MSCKF baseline update: per track, triangulate the feature by
/// Gauss-Newton, build the reprojection system, project it onto the left
/// null space of the feature Jacobian, gate, and stack everything into a
/// single non-iterated EKF update.
pub fn msckf_update(
    fs: &mut FilterState,
    tracks: &[FeatureTrack],
    intrinsics: &CameraIntrinsics,
    extrinsics: &CameraExtrinsics,
    config: &VisualUpdateConfig,
) -> Result<VisualUpdateReport, FilterError> {
    let mut report = VisualUpdateReport::default();
    let mut sorted: Vec<&FeatureTrack> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.feature_id);

    let poses = fs.camera_poses(extrinsics);
    let mut h_rows: Vec<DMatrix<f64>> = Vec::new();
    let mut nu_rows: Vec<DVector<f64>> = Vec::new();

    for track in sorted {
        let obs_ids: Vec<u64> = track
            .observations
            .keys()
            .filter(|id| poses.contains_key(id))
            .copied()
            .collect();
        if obs_ids.len() < config.min_track_length.max(3) {
            // Null-space projection needs 2m - 3 > 0 regardless.
            report.tracks_degenerate += 1;
            continue;
        }
        let mut sub = track.clone();
        sub.observations.retain(|id, _| poses.contains_key(id));
        sub.base_pair = None;
        let Ok(point) = triangulate(&sub, &poses) else {
            report.tracks_degenerate += 1;
            continue;
        };
        let m = obs_ids.len();
        let mut h_x = DMatrix::<f64>::zeros(2 * m, fs.dim());
        let mut h_f = DMatrix::<f64>::zeros(2 * m, 3);
        let mut nu = DVector::<f64>::zeros(2 * m);
        let mut ok = true;
        for (k, id) in obs_ids.iter().enumerate() {
            let clone = &fs.clones[id];
            let cam = &poses[id];
            let pc = cam.world_to_camera(&point);
            if pc.z <= 1e-3 {
                ok = false;
                break;
            }
            let obs = &sub.observations[id];
            let inv_z = 1.0 / pc.z;
            let predicted = intrinsics.project(&nalgebra::Vector2::new(
                pc.x * inv_z,
                pc.y * inv_z,
            ));
            let e = predicted - obs.pixel;
            nu[2 * k] = -e.x;
            nu[2 * k + 1] = -e.y;
            let de_dpc = nalgebra::Matrix2x3::new(
                intrinsics.fx * inv_z,
                0.0,
                -intrinsics.fx * pc.x * inv_z * inv_z,
                0.0,
                intrinsics.fy * inv_z,
                -intrinsics.fy * pc.y * inv_z * inv_z,
            );
            let rc_t = cam.rotation.transpose();
            let d_dr = de_dpc * (-rc_t);
            let d_dphi = de_dpc * rc_t * skew(&(point - clone.position));
            let d_df = de_dpc * rc_t;
            let off = fs.clone_offset(*id).unwrap();
            for c in 0..3 {
                for rr in 0..2 {
                    h_x[(2 * k + rr, off + c)] = d_dr[(rr, c)];
                    h_x[(2 * k + rr, off + 3 + c)] = d_dphi[(rr, c)];
                    h_f[(2 * k + rr, c)] = d_df[(rr, c)];
                }
            }
        }
        if !ok {
            report.tracks_degenerate += 1;
            continue;
        }
        let (h_o, nu_o) = nullspace_project(&h_x, &h_f, &nu);
        let r = DMatrix::<f64>::identity(nu_o.len(), nu_o.len()) * config.pixel_sigma.powi(2);
        match chi2_gate(&nu_o, &h_o, &fs.covariance, &r, config.chi2_confidence) {
            Ok(true) => {
                h_rows.push(h_o);
                nu_rows.push(nu_o);
            }
            Ok(false) => report.tracks_rejected += 1,
            Err(_) => report.tracks_degenerate += 1,
        }
    }
    if h_rows.is_empty() {
        return Err(FilterError::AllTracksRejected);
    }
    report.tracks_used = h_rows.len();

    let total: usize = nu_rows.iter().map(|v| v.len()).sum();
    let mut h = DMatrix::<f64>::zeros(total, fs.dim());
    let mut nu = DVector::<f64>::zeros(total);
    let mut at = 0;
    for (hb, nb) in h_rows.iter().zip(&nu_rows) {
        h.view_mut((at, 0), (hb.nrows(), fs.dim())).copy_from(hb);
        nu.rows_mut(at, nb.len()).copy_from(nb);
        at += nb.len();
    }
    report.residual_norms.push(nu.norm());
    let r = DMatrix::<f64>::identity(total, total) * config.pixel_sigma.powi(2);
    let (k, p_new) = kalman_step(&fs.covariance, &h, &r)?;
    let correction = &k * nu;
    report.nav_attitude_correction = correction.fixed_rows::<3>(6).into_owned();
    fs.apply_correction(&correction);
    fs.covariance = p_new;
    fs.symmetrize();
    report.iterations = 1;
    Ok(report)
}
