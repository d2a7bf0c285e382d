//! Earth constants, the gravity field and its gradient, and frame
//! conversions shared by mechanization, GNSS geometry, and the simulator.
//!
//! Everything here is resolved in the Earth-centered Earth-fixed frame;
//! the ellipsoid parameters default to WGS-84.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::math::skew;

#[derive(Debug, Error, PartialEq)]
pub enum EarthError {
    #[error("geodetic latitude iteration did not converge (corrupt input?)")]
    NonConvergence,
}

/// Reference ellipsoid and field parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarthParams {
    /// Semi-major axis, m.
    pub semi_major_axis: f64,
    /// Flattening (dimensionless).
    pub flattening: f64,
    /// Earth rotation rate, rad/s.
    pub earth_rotation_rate: f64,
    /// Gravitational parameter, m^3/s^2.
    pub mu: f64,
}

impl Default for EarthParams {
    /// WGS-84 constants.
    fn default() -> Self {
        EarthParams {
            semi_major_axis: 6_378_137.0,
            flattening: 1.0 / 298.257_223_563,
            earth_rotation_rate: 7.292_115_146_7e-5,
            mu: 3.986_004_418e14,
        }
    }
}

impl EarthParams {
    /// Semi-minor axis b = a(1 - f).
    pub fn semi_minor_axis(&self) -> f64 {
        self.semi_major_axis * (1.0 - self.flattening)
    }

    /// First eccentricity squared e^2 = f(2 - f).
    pub fn e_squared(&self) -> f64 {
        self.flattening * (2.0 - self.flattening)
    }

    /// Earth rotation vector in the Earth frame, rad/s.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.earth_rotation_rate)
    }

    /// Dynamic form factor J2, to first order in flattening.
    ///
    /// J2 = (2f - m)/3 with m = w^2 a^2 b / mu. Close enough to the exact
    /// ellipsoidal value that gravity agrees with Somigliana to a few
    /// units in the fifth decimal.
    pub fn j2(&self) -> f64 {
        if self.mu <= 0.0 {
            return 0.0;
        }
        let m = self.earth_rotation_rate.powi(2) * self.semi_major_axis.powi(2)
            * self.semi_minor_axis()
            / self.mu;
        (2.0 * self.flattening - m) / 3.0
    }

    /// Prime-vertical radius of curvature at geodetic latitude `lat`.
    pub fn prime_vertical_radius(&self, lat: f64) -> f64 {
        self.semi_major_axis / (1.0 - self.e_squared() * lat.sin().powi(2)).sqrt()
    }
}

/// Geodetic coordinate on the reference ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticCoord {
    /// Latitude, rad, |lat| <= pi/2.
    pub latitude: f64,
    /// Longitude, rad, |lon| <= pi.
    pub longitude: f64,
    /// Ellipsoidal height, m.
    pub height: f64,
}

impl GeodeticCoord {
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Self {
        GeodeticCoord { latitude, longitude, height }
    }
}

/// Geodetic to ECEF conversion.
pub fn lla_to_ecef(g: &GeodeticCoord, p: &EarthParams) -> Vector3<f64> {
    let (sin_lat, cos_lat) = g.latitude.sin_cos();
    let (sin_lon, cos_lon) = g.longitude.sin_cos();
    let n = p.prime_vertical_radius(g.latitude);
    Vector3::new(
        (n + g.height) * cos_lat * cos_lon,
        (n + g.height) * cos_lat * sin_lon,
        (n * (1.0 - p.e_squared()) + g.height) * sin_lat,
    )
}

/// ECEF to geodetic conversion by fixed-point iteration on the latitude.
pub fn ecef_to_lla(position: &Vector3<f64>, p: &EarthParams) -> Result<GeodeticCoord, EarthError> {
    let e2 = p.e_squared();
    let rho = (position.x * position.x + position.y * position.y).sqrt();
    let longitude = position.y.atan2(position.x);
    // Initial guess ignores the height term.
    let mut lat = position.z.atan2(rho * (1.0 - e2));
    let height_at = |lat: f64| {
        let n = p.prime_vertical_radius(lat);
        if lat.abs() < 1.3 {
            rho / lat.cos() - n
        } else {
            position.z / lat.sin() - n * (1.0 - e2)
        }
    };
    let mut converged = false;
    for _ in 0..10 {
        let n = p.prime_vertical_radius(lat);
        let height = height_at(lat);
        let next = position.z.atan2(rho * (1.0 - e2 * n / (n + height)));
        let delta = (next - lat).abs();
        lat = next;
        if delta < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(EarthError::NonConvergence);
    }
    Ok(GeodeticCoord::new(lat, longitude, height_at(lat)))
}

/// Gravity (gravitation plus centrifugal) resolved in the Earth frame.
///
/// Gravitation uses the degree-2 zonal field; the centrifugal term is
/// exact. At sea level the magnitude matches the Somigliana normal
/// gravity to ~1e-4 m/s^2 across all latitudes.
pub fn gravity_ecef(position: &Vector3<f64>, p: &EarthParams) -> Vector3<f64> {
    let w2 = p.earth_rotation_rate.powi(2);
    let centrifugal = Vector3::new(w2 * position.x, w2 * position.y, 0.0);
    if p.mu <= 0.0 {
        // Gravitation disabled (test harness configuration).
        return centrifugal;
    }
    let r = position.norm();
    let a = p.semi_major_axis;
    let j2 = p.j2();
    let z2_r2 = (position.z / r).powi(2);
    let k = 1.5 * j2 * (a / r).powi(2);
    let gx = -p.mu / r.powi(3)
        * Vector3::new(
            position.x * (1.0 + k * (1.0 - 5.0 * z2_r2)),
            position.y * (1.0 + k * (1.0 - 5.0 * z2_r2)),
            position.z * (1.0 + k * (3.0 - 5.0 * z2_r2)),
        );
    gx + centrifugal
}

/// Gravity gradient tensor N with d(gravity) ~ N * d(position).
///
/// Central-field approximation mu/r^3 (3 rhat rhat' - I) plus the exact
/// centrifugal gradient diag(w^2, w^2, 0); agrees with the numerical
/// Jacobian of [`gravity_ecef`] to better than 1% anywhere above sea level.
pub fn gravity_gradient(position: &Vector3<f64>, p: &EarthParams) -> Matrix3<f64> {
    let w2 = p.earth_rotation_rate.powi(2);
    let centrifugal = Matrix3::from_diagonal(&Vector3::new(w2, w2, 0.0));
    if p.mu <= 0.0 {
        return centrifugal;
    }
    let r = position.norm();
    let rhat = position / r;
    let central = (rhat * rhat.transpose() * 3.0 - Matrix3::identity()) * (p.mu / r.powi(3));
    central + centrifugal
}

/// Rotation from local north-east-down axes at `g` to the Earth frame
/// (columns are the north, east, down unit vectors in ECEF).
pub fn ned_to_ecef(g: &GeodeticCoord) -> Matrix3<f64> {
    let (sin_lat, cos_lat) = g.latitude.sin_cos();
    let (sin_lon, cos_lon) = g.longitude.sin_cos();
    Matrix3::from_columns(&[
        Vector3::new(-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat),
        Vector3::new(-sin_lon, cos_lon, 0.0),
        Vector3::new(-cos_lat * cos_lon, -cos_lat * sin_lon, -sin_lat),
    ])
}

/// Skew matrix of the Earth rotation vector, for Coriolis terms.
pub fn earth_rate_skew(p: &EarthParams) -> Matrix3<f64> {
    skew(&p.rotation_vector())
}
