//! IMU mechanization in the Earth frame, the continuous error-state model
//! (F, G), covariance propagation, and simplified GNSS/IMU coarse
//! alignment.
//!
//! Error-state convention used throughout the crate: the error is
//! true-minus-estimate for every vector state, and the attitude error phi
//! is defined by R_true = (I + phi^) R_est, so a correction is applied as
//! R <- (I + phi^) R followed by re-orthonormalization. State order is
//! [dr, dv, phi, db_a, db_g].

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};
use thiserror::Error;

use crate::earth::{
    earth_rate_skew, ecef_to_lla, gravity_ecef, gravity_gradient, ned_to_ecef, EarthParams,
};
use crate::math::{orthonormalize, skew, so3_exp};

/// IMU error-state dimension.
pub const IMU_STATE_DIM: usize = 15;

pub type FMatrix = SMatrix<f64, 15, 15>;
pub type GMatrix = SMatrix<f64, 15, 12>;

#[derive(Debug, Error, PartialEq)]
pub enum InsError {
    #[error("IMU sample timestamp does not advance the state time")]
    NonMonotonicTime,
    #[error("integration step must lie in (0, 0.1] s, got {0}")]
    InvalidTimeStep(f64),
    #[error("covariance lost positive semi-definiteness (filter reset required)")]
    CovarianceNotPSD,
    #[error("coarse alignment needs a horizontal speed of at least {0} m/s")]
    InsufficientMotion(f64),
    #[error("coarse alignment needs at least {0} s of data")]
    InsufficientData(f64),
}

/// One gyroscope + accelerometer sample in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Angular rate, rad/s.
    pub angular_rate: Vector3<f64>,
    /// Specific force, m/s^2.
    pub specific_force: Vector3<f64>,
}

/// Full nominal navigation state in the Earth frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Body-to-Earth rotation matrix.
    pub attitude: Matrix3<f64>,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub timestamp: f64,
}

impl NavState {
    pub fn new(timestamp: f64) -> Self {
        NavState {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            attitude: Matrix3::identity(),
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            timestamp,
        }
    }
}

/// Continuous-time noise densities of the inertial sensors.
///
/// Defaults follow a MEMS unit with 65 deg/hr gyro bias, 0.15 deg/sqrt(hr)
/// angle random walk and 1 mg accelerometer bias; the bias walks are kept
/// low so the constant bias draws stay the dominant error source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// rad/s/sqrt(Hz).
    pub gyro_noise_density: f64,
    /// m/s^2/sqrt(Hz).
    pub accel_noise_density: f64,
    /// rad/s^2/sqrt(Hz).
    pub gyro_bias_walk: f64,
    /// m/s^3/sqrt(Hz).
    pub accel_bias_walk: f64,
    /// Direct position random-walk density, m/sqrt(s). The continuous
    /// model drives the position error with its own white noise; near
    /// zero by default and 0.0 switches it off entirely.
    pub pos_noise_density: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            // 0.15 deg/sqrt(hr) angle random walk.
            gyro_noise_density: 0.15_f64.to_radians() / 60.0,
            accel_noise_density: 5.0e-4,
            gyro_bias_walk: 1.0e-6,
            accel_bias_walk: 5.0e-5,
            pos_noise_density: 1.0e-6,
        }
    }
}

/// Strapdown mechanization step (trapezoidal / Heun integration).
///
/// The attitude update applies the bias-corrected body rotation increment
/// on the right and removes Earth-rotation transport on the left;
/// velocity integrates the rotated specific force plus gravity minus the
/// Coriolis term; position integrates the averaged velocity.
pub fn propagate_nav(
    state: &NavState,
    sample: &ImuSample,
    dt: f64,
    earth: &EarthParams,
) -> Result<NavState, InsError> {
    if sample.timestamp <= state.timestamp {
        return Err(InsError::NonMonotonicTime);
    }
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(InsError::InvalidTimeStep(dt));
    }
    let omega_ie = earth.rotation_vector();
    let omega_b = sample.angular_rate - state.gyro_bias;
    let f_b = sample.specific_force - state.accel_bias;

    let attitude_new = so3_exp(&(-omega_ie * dt)) * state.attitude * so3_exp(&(omega_b * dt));
    // Average of the rotated specific force over the interval.
    let f_w = (state.attitude * f_b + attitude_new * f_b) * 0.5;

    let acc0 =
        f_w + gravity_ecef(&state.position, earth) - 2.0 * omega_ie.cross(&state.velocity);
    let v_pred = state.velocity + acc0 * dt;
    let r_pred = state.position + state.velocity * dt;
    let acc1 = f_w + gravity_ecef(&r_pred, earth) - 2.0 * omega_ie.cross(&v_pred);

    let velocity = state.velocity + (acc0 + acc1) * (0.5 * dt);
    let position = state.position + (state.velocity + velocity) * (0.5 * dt);

    Ok(NavState {
        position,
        velocity,
        attitude: orthonormalize(&attitude_new),
        accel_bias: state.accel_bias,
        gyro_bias: state.gyro_bias,
        timestamp: sample.timestamp,
    })
}

/// Continuous error-state model matrices at the given state and sample.
///
/// ```text
/// dr'  =  dv
/// dv'  =  N dr - 2 w_ie^ dv - (f_w)^ phi - R db_a
/// phi' = -w_ie^ phi - R db_g
/// db'  =  random walk
/// ```
///
/// The attitude and accel-bias columns of the velocity row carry the sign
/// consistent with the uniform true-minus-estimate error convention of
/// this crate; validated against nonlinear propagation in the tests.
pub fn error_state_matrices(
    state: &NavState,
    sample: &ImuSample,
    earth: &EarthParams,
) -> (FMatrix, GMatrix) {
    let mut f = FMatrix::zeros();
    let omega_skew = earth_rate_skew(earth);
    let f_w = state.attitude * (sample.specific_force - state.accel_bias);

    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    f.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&gravity_gradient(&state.position, earth));
    f.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-2.0 * omega_skew));
    f.fixed_view_mut::<3, 3>(3, 6).copy_from(&(-skew(&f_w)));
    f.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-state.attitude));
    f.fixed_view_mut::<3, 3>(6, 6).copy_from(&(-omega_skew));
    f.fixed_view_mut::<3, 3>(6, 12).copy_from(&(-state.attitude));

    let mut g = GMatrix::zeros();
    g.fixed_view_mut::<3, 3>(3, 0).copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(6, 3).copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(9, 6).copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(12, 9).copy_from(&Matrix3::identity());
    (f, g)
}

/// Discrete process noise for one step: G Qc G' dt plus the direct
/// position random walk.
pub fn discrete_process_noise(g: &GMatrix, noise: &NoiseParams, dt: f64) -> FMatrix {
    let mut qc = SMatrix::<f64, 12, 12>::zeros();
    for k in 0..3 {
        qc[(k, k)] = noise.accel_noise_density.powi(2);
        qc[(3 + k, 3 + k)] = noise.gyro_noise_density.powi(2);
        qc[(6 + k, 6 + k)] = noise.accel_bias_walk.powi(2);
        qc[(9 + k, 9 + k)] = noise.gyro_bias_walk.powi(2);
    }
    let mut qd = g * qc * g.transpose() * dt;
    for k in 0..3 {
        qd[(k, k)] += noise.pos_noise_density.powi(2) * dt;
    }
    qd
}

/// First-order covariance propagation of the joint filter covariance.
///
/// The leading 15x15 IMU block is updated with Phi = I + F dt; cross
/// covariance with clone and ambiguity states is updated by Phi on the
/// IMU side only, their own blocks are held. Symmetry is enforced.
pub fn propagate_covariance(
    p: &mut DMatrix<f64>,
    f: &FMatrix,
    g: &GMatrix,
    noise: &NoiseParams,
    dt: f64,
) -> Result<(), InsError> {
    let dim = p.nrows();
    assert!(dim >= IMU_STATE_DIM && p.ncols() == dim);
    let phi = FMatrix::identity() + f * dt;
    let qd = discrete_process_noise(g, noise, dt);

    let p_ii = p.fixed_view::<15, 15>(0, 0).into_owned();
    let new_ii = phi * p_ii * phi.transpose() + qd;
    p.fixed_view_mut::<15, 15>(0, 0).copy_from(&new_ii);

    if dim > IMU_STATE_DIM {
        let rest = dim - IMU_STATE_DIM;
        let p_ic = p.view((0, IMU_STATE_DIM), (IMU_STATE_DIM, rest)).into_owned();
        let new_ic = phi * p_ic;
        p.view_mut((0, IMU_STATE_DIM), (IMU_STATE_DIM, rest))
            .copy_from(&new_ic);
        p.view_mut((IMU_STATE_DIM, 0), (rest, IMU_STATE_DIM))
            .copy_from(&new_ic.transpose());
    }

    for r in 0..dim {
        for c in (r + 1)..dim {
            let avg = 0.5 * (p[(r, c)] + p[(c, r)]);
            p[(r, c)] = avg;
            p[(c, r)] = avg;
        }
    }
    let max_diag = (0..dim).fold(0.0_f64, |m, k| m.max(p[(k, k)].abs()));
    let tol = -1e-12 * max_diag.max(1e-30);
    for k in 0..dim {
        if p[(k, k)] < tol {
            return Err(InsError::CovarianceNotPSD);
        }
        if p[(k, k)] < 0.0 {
            p[(k, k)] = 0.0;
        }
    }
    Ok(())
}

/// Simplified GNSS/IMU coarse alignment.
///
/// Position, velocity and horizontal acceleration come from a per-axis
/// quadratic fit of the GNSS position series evaluated at the window
/// center; yaw from the GNSS velocity azimuth; roll and pitch from
/// accelerometer leveling with one centripetal-compensation refinement.
/// Biases start at zero. The returned state is stamped at the window
/// center, so callers should start processing measurements from there.
pub fn coarse_align(
    gnss_positions: &[(f64, Vector3<f64>)],
    imu_buffer: &[ImuSample],
    earth: &EarthParams,
) -> Result<NavState, InsError> {
    const MIN_SPAN: f64 = 5.0;
    const MIN_SPEED: f64 = 2.0;
    if gnss_positions.len() < 6 || imu_buffer.is_empty() {
        return Err(InsError::InsufficientData(MIN_SPAN));
    }
    let span = gnss_positions.last().unwrap().0 - gnss_positions[0].0;
    if span < MIN_SPAN {
        return Err(InsError::InsufficientData(MIN_SPAN));
    }

    // Local frame at the window center, so leveling and the attitude
    // assembly see the same vertical.
    let lla = ecef_to_lla(&gnss_positions[gnss_positions.len() / 2].1, earth)
        .map_err(|_| InsError::InsufficientData(MIN_SPAN))?;
    let r_ne = ned_to_ecef(&lla);

    // Motion gate on raw central differences.
    let moving = (1..gnss_positions.len() - 1).any(|k| {
        let (t0, p0) = gnss_positions[k - 1];
        let (t1, p1) = gnss_positions[k + 1];
        let v_ned = r_ne.transpose() * ((p1 - p0) / (t1 - t0));
        v_ned.fixed_rows::<2>(0).norm() >= MIN_SPEED
    });
    if !moving {
        return Err(InsError::InsufficientMotion(MIN_SPEED));
    }

    let t_mid = 0.5 * (gnss_positions[0].0 + gnss_positions.last().unwrap().0);
    let mut position = Vector3::zeros();
    let mut velocity = Vector3::zeros();
    let mut accel = Vector3::zeros();
    for axis in 0..3 {
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        for (t, pos) in gnss_positions {
            let dt = t - t_mid;
            let row = Vector3::new(1.0, dt, dt * dt);
            ata += row * row.transpose();
            atb += row * pos[axis];
        }
        let c = ata.lu().solve(&atb).unwrap_or_else(Vector3::zeros);
        position[axis] = c.x;
        velocity[axis] = c.y;
        accel[axis] = 2.0 * c.z;
    }

    let r_ne = match ecef_to_lla(&position, earth) {
        Ok(fit_lla) => ned_to_ecef(&fit_lla),
        Err(_) => r_ne,
    };
    let v_ned = r_ne.transpose() * velocity;
    let yaw = v_ned.y.atan2(v_ned.x);

    // Mean specific force around the window center.
    let mut f_sum = Vector3::zeros();
    let mut count = 0usize;
    for s in imu_buffer {
        if (s.timestamp - t_mid).abs() <= 1.0 {
            f_sum += s.specific_force;
            count += 1;
        }
    }
    if count == 0 {
        f_sum = imu_buffer.iter().map(|s| s.specific_force).sum();
        count = imu_buffer.len();
    }
    let f_mean = f_sum / count as f64;
    let gravity_mag = gravity_ecef(&position, earth).norm();

    // Leveling, then refinement compensating the fitted acceleration:
    // f = R'(a - g + 2 w x v)  =>  R' g = R'(a + 2 w x v) - f.
    let mut roll = 0.0;
    let mut pitch = 0.0;
    for _ in 0..2 {
        let r_be = r_ne * rotation_zyx(yaw, pitch, roll);
        let g_body = r_be.transpose()
            * (accel + 2.0 * earth.rotation_vector().cross(&velocity))
            - f_mean;
        let down_b = g_body / gravity_mag;
        pitch = (-down_b.x).atan2((down_b.y * down_b.y + down_b.z * down_b.z).sqrt());
        roll = down_b.y.atan2(down_b.z);
    }

    Ok(NavState {
        position,
        velocity,
        attitude: orthonormalize(&(r_ne * rotation_zyx(yaw, pitch, roll))),
        accel_bias: Vector3::zeros(),
        gyro_bias: Vector3::zeros(),
        timestamp: t_mid,
    })
}

/// Body-to-NED rotation from yaw, pitch, roll (ZYX order, front-right-down
/// body axes; yaw 0 = north, pi/2 = east).
pub fn rotation_zyx(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    rz * ry * rx
}
