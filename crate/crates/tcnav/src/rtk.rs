//! RTK observation processing: lever-arm range prediction, single and
//! double differencing against a short-baseline base station, ambiguity
//! state management in the filter, the IGG-III weighted iterated update,
//! and integer-fix conditioning.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, RowVector3, Vector3};
use thiserror::Error;

use crate::filter::{kalman_step, FilterError, FilterState};
use crate::ins::NavState;
use crate::lambda::{lambda_fix, FixOutcome, LambdaError};
use crate::math::skew;

#[derive(Debug, Error, PartialEq)]
pub enum RtkError {
    #[error("need at least two common satellites, got {0}")]
    InsufficientSatellites(usize),
    #[error("every GNSS observation was rejected; state left unchanged")]
    AllObservationsRejected,
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Lambda(#[from] LambdaError),
}

/// One undifferenced observation of a satellite.
#[derive(Debug, Clone, PartialEq)]
pub struct GnssObservation {
    pub sat_id: u32,
    /// Pseudorange, m.
    pub pseudorange: f64,
    /// Carrier phase, cycles.
    pub carrier_phase: f64,
    /// Carrier wavelength, m.
    pub wavelength: f64,
    /// Satellite position, ECEF m.
    pub sat_position: Vector3<f64>,
    /// Elevation above the receiver horizon, rad.
    pub elevation: f64,
}

/// All observations of one receiver at one epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GnssEpoch {
    pub timestamp: f64,
    pub observations: Vec<GnssObservation>,
}

/// One double-differenced code/phase pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DdObservation {
    pub sat_id: u32,
    pub ref_sat_id: u32,
    /// Double-differenced pseudorange, m.
    pub dd_pseudorange: f64,
    /// Double-differenced phase scaled by the wavelength, m.
    pub dd_phase: f64,
    pub wavelength: f64,
    pub sat_position: Vector3<f64>,
    pub ref_sat_position: Vector3<f64>,
    /// Rover elevations, used for the measurement noise budget.
    pub elevation: f64,
    pub ref_elevation: f64,
}

/// Bookkeeping entry of one DD ambiguity in the filter state.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityEntry {
    pub state_index: usize,
    pub fixed_value: Option<i64>,
}

/// The set of DD ambiguities currently in the state, keyed by
/// (satellite, reference satellite).
#[derive(Debug, Clone, Default)]
pub struct AmbiguitySet {
    pub entries: BTreeMap<(u32, u32), AmbiguityEntry>,
}

impl AmbiguitySet {
    pub fn reference_satellite(&self) -> Option<u32> {
        self.entries.keys().next().map(|(_, k)| *k)
    }
}

/// RTK processing parameters.
#[derive(Debug, Clone, Copy)]
pub struct RtkConfig {
    /// Zenith-referred code sigma per receiver, m.
    pub code_sigma: f64,
    /// Zenith-referred phase sigma per receiver, m.
    pub phase_sigma: f64,
    pub igg_k0: f64,
    pub igg_k1: f64,
    pub ratio_threshold: f64,
    pub max_iterations: usize,
}

impl Default for RtkConfig {
    fn default() -> Self {
        RtkConfig {
            code_sigma: 0.3,
            phase_sigma: 0.003,
            igg_k0: 1.5,
            igg_k1: 3.0,
            ratio_threshold: 3.0,
            max_iterations: 5,
        }
    }
}

/// Antenna range prediction with its error-state Jacobian rows.
#[derive(Debug, Clone, Copy)]
pub struct RangePrediction {
    pub range: f64,
    /// d(range)/d(dr), 1x3.
    pub jac_position: RowVector3<f64>,
    /// d(range)/d(phi), 1x3.
    pub jac_attitude: RowVector3<f64>,
}

/// Geometric range from the body-mounted antenna to a satellite:
/// rho = || r_b + R_b l_a - r_s ||. The Jacobian is the unit
/// line-of-sight row, composed with the lever-arm rotation term for the
/// attitude part.
pub fn predict_range(
    nav: &NavState,
    lever_arm_gnss: &Vector3<f64>,
    sat_position: &Vector3<f64>,
) -> RangePrediction {
    let antenna = nav.position + nav.attitude * lever_arm_gnss;
    let diff = antenna - sat_position;
    let range = diff.norm();
    let e = (diff / range).transpose();
    // antenna(delta) = antenna + dr - (R l)^ phi.
    let jac_attitude = -e * skew(&(nav.attitude * lever_arm_gnss));
    RangePrediction {
        range,
        jac_position: e,
        jac_attitude,
    }
}

/// Double differencing of a rover/base epoch pair.
///
/// The reference satellite is the common satellite with the highest rover
/// elevation (ties broken by lowest id); single differences
/// (rover - base) cancel the satellite clock and the short-baseline
/// atmosphere, the second difference against the reference cancels the
/// receiver clocks.
pub fn double_difference(
    rover: &[GnssObservation],
    base: &[GnssObservation],
) -> Result<Vec<DdObservation>, RtkError> {
    let base_by_id: BTreeMap<u32, &GnssObservation> =
        base.iter().map(|o| (o.sat_id, o)).collect();
    let mut common: Vec<&GnssObservation> = rover
        .iter()
        .filter(|o| base_by_id.contains_key(&o.sat_id))
        .collect();
    common.sort_by_key(|o| o.sat_id);
    if common.len() < 2 {
        return Err(RtkError::InsufficientSatellites(common.len()));
    }
    let reference = *common
        .iter()
        .max_by(|a, b| {
            a.elevation
                .total_cmp(&b.elevation)
                .then(b.sat_id.cmp(&a.sat_id))
        })
        .unwrap();
    let ref_base = base_by_id[&reference.sat_id];
    let sd_ref_code = reference.pseudorange - ref_base.pseudorange;
    let sd_ref_phase = reference.carrier_phase - ref_base.carrier_phase;

    let mut out = Vec::new();
    for obs in common {
        if obs.sat_id == reference.sat_id {
            continue;
        }
        if obs.wavelength != reference.wavelength {
            // Mixed-frequency pairs would break the integer structure.
            continue;
        }
        let b = base_by_id[&obs.sat_id];
        let sd_code = obs.pseudorange - b.pseudorange;
        let sd_phase = obs.carrier_phase - b.carrier_phase;
        out.push(DdObservation {
            sat_id: obs.sat_id,
            ref_sat_id: reference.sat_id,
            dd_pseudorange: sd_code - sd_ref_code,
            dd_phase: (sd_phase - sd_ref_phase) * obs.wavelength,
            wavelength: obs.wavelength,
            sat_position: obs.sat_position,
            ref_sat_position: reference.sat_position,
            elevation: obs.elevation,
            ref_elevation: reference.elevation,
        });
    }
    Ok(out)
}

/// Single-difference variance at an elevation (rover plus base receiver).
fn sd_variance(sigma_zenith: f64, elevation: f64) -> f64 {
    let s = (sigma_zenith / elevation.sin().max(0.05)).powi(2);
    2.0 * s
}

/// Three-segment robust weight on a standardized residual.
pub fn igg3_weight(standardized_residual: f64, k0: f64, k1: f64) -> f64 {
    assert!(k0 < k1);
    let v = standardized_residual.abs();
    if v <= k0 {
        1.0
    } else if v >= k1 {
        0.0
    } else {
        (k0 / v) * ((k1 - v) / (k1 - k0)).powi(2)
    }
}

/// Synchronize the ambiguity states with this epoch's DD set: handle a
/// reference-satellite switch by an integer-preserving re-parameterization,
/// drop pairs whose satellites vanished, and append new pairs with a float
/// value initialized from the code-phase difference.
pub fn manage_ambiguities(
    amb: &mut AmbiguitySet,
    dd: &[DdObservation],
    fs: &mut FilterState,
    config: &RtkConfig,
) {
    if dd.is_empty() {
        return;
    }
    let new_ref = dd[0].ref_sat_id;

    // Reference switch: N(s, k') = N(s, k) - N(k', k).
    if let Some(old_ref) = amb.reference_satellite() {
        if old_ref != new_ref {
            if let Some(pivot) = amb.entries.get(&(new_ref, old_ref)).cloned() {
                let n_amb = fs.ambiguities.len();
                let base = fs.ambiguity_base();
                let mut transform = DMatrix::<f64>::identity(n_amb, n_amb);
                let mut renamed: BTreeMap<(u32, u32), AmbiguityEntry> = BTreeMap::new();
                for ((sat, _), entry) in amb.entries.iter() {
                    if *sat == new_ref {
                        // Becomes N(k, k') = -N(k', k).
                        transform[(entry.state_index, entry.state_index)] = -1.0;
                        renamed.insert(
                            (old_ref, new_ref),
                            AmbiguityEntry {
                                state_index: entry.state_index,
                                fixed_value: None,
                            },
                        );
                    } else {
                        transform[(entry.state_index, pivot.state_index)] = -1.0;
                        renamed.insert(
                            (*sat, new_ref),
                            AmbiguityEntry {
                                state_index: entry.state_index,
                                fixed_value: None,
                            },
                        );
                    }
                }
                // Transform nominal values and the covariance (ambiguity
                // block plus its cross covariance).
                let old_values = DVector::from_vec(fs.ambiguities.clone());
                let new_values = &transform * old_values;
                fs.ambiguities = new_values.iter().copied().collect();
                let dim = fs.dim();
                let mut t_full = DMatrix::<f64>::identity(dim, dim);
                t_full
                    .view_mut((base, base), (n_amb, n_amb))
                    .copy_from(&transform);
                fs.covariance = &t_full * &fs.covariance * t_full.transpose();
                fs.symmetrize();
                amb.entries = renamed;
            } else {
                // No pivot to re-parameterize through; start over.
                while !fs.ambiguities.is_empty() {
                    fs.remove_ambiguity(0);
                }
                amb.entries.clear();
            }
        }
    }

    // Drop pairs that are no longer observed.
    let current: Vec<(u32, u32)> = dd.iter().map(|d| (d.sat_id, d.ref_sat_id)).collect();
    let stale: Vec<(u32, u32)> = amb
        .entries
        .keys()
        .filter(|k| !current.contains(k))
        .copied()
        .collect();
    for key in stale {
        let idx = amb.entries[&key].state_index;
        fs.remove_ambiguity(idx);
        amb.entries.remove(&key);
        for entry in amb.entries.values_mut() {
            if entry.state_index > idx {
                entry.state_index -= 1;
            }
        }
    }

    // Append new pairs.
    for d in dd {
        let key = (d.sat_id, d.ref_sat_id);
        if amb.entries.contains_key(&key) {
            continue;
        }
        let float = (d.dd_phase - d.dd_pseudorange) / d.wavelength;
        let var_code = sd_variance(config.code_sigma, d.elevation)
            + sd_variance(config.code_sigma, d.ref_elevation);
        let var_phase = sd_variance(config.phase_sigma, d.elevation)
            + sd_variance(config.phase_sigma, d.ref_elevation);
        let variance = (var_code + var_phase) / (d.wavelength * d.wavelength);
        let idx = fs.append_ambiguity(float, variance);
        amb.entries.insert(
            key,
            AmbiguityEntry {
                state_index: idx,
                fixed_value: None,
            },
        );
    }
}

/// Diagnostics of one RTK update.
#[derive(Debug, Clone, Default)]
pub struct RtkUpdateReport {
    /// Final IGG-III weights, one per code row then one per phase row,
    /// in the order of the DD input.
    pub code_weights: Vec<f64>,
    pub phase_weights: Vec<f64>,
    pub iterations: usize,
}

/// Measurement system of a DD epoch at the current state: innovations,
/// Jacobian, and the (unweighted) correlated noise covariance.
fn dd_system(
    fs: &FilterState,
    dd: &[DdObservation],
    lever_arm: &Vector3<f64>,
    amb: &AmbiguitySet,
    base_position: &Vector3<f64>,
    config: &RtkConfig,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = dd.len();
    let dim = fs.dim();
    let amb_base = fs.ambiguity_base();
    let mut h = DMatrix::<f64>::zeros(2 * n, dim);
    let mut nu = DVector::<f64>::zeros(2 * n);
    let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);

    for (i, d) in dd.iter().enumerate() {
        let pr_s = predict_range(&fs.nav, lever_arm, &d.sat_position);
        let pr_k = predict_range(&fs.nav, lever_arm, &d.ref_sat_position);
        let base_s = (base_position - d.sat_position).norm();
        let base_k = (base_position - d.ref_sat_position).norm();
        let predicted = (pr_s.range - base_s) - (pr_k.range - base_k);
        let jac_pos = pr_s.jac_position - pr_k.jac_position;
        let jac_att = pr_s.jac_attitude - pr_k.jac_attitude;

        // Code row i, phase row n + i.
        nu[i] = d.dd_pseudorange - predicted;
        for c in 0..3 {
            h[(i, c)] = jac_pos[c];
            h[(i, 6 + c)] = jac_att[c];
        }
        let phase_row = n + i;
        let entry = amb.entries.get(&(d.sat_id, d.ref_sat_id));
        let n_hat = entry.map(|e| fs.ambiguities[e.state_index]).unwrap_or(0.0);
        nu[phase_row] = d.dd_phase - predicted - d.wavelength * n_hat;
        for c in 0..3 {
            h[(phase_row, c)] = jac_pos[c];
            h[(phase_row, 6 + c)] = jac_att[c];
        }
        if let Some(e) = entry {
            h[(phase_row, amb_base + e.state_index)] = d.wavelength;
        }
    }

    // Correlated noise: diag(var_s) plus the shared reference variance.
    for i in 0..n {
        for j in 0..n {
            let mut code = 0.5
                * (sd_variance(config.code_sigma, dd[i].ref_elevation)
                    + sd_variance(config.code_sigma, dd[j].ref_elevation));
            let mut phase = 0.5
                * (sd_variance(config.phase_sigma, dd[i].ref_elevation)
                    + sd_variance(config.phase_sigma, dd[j].ref_elevation));
            if i == j {
                code += sd_variance(config.code_sigma, dd[i].elevation);
                phase += sd_variance(config.phase_sigma, dd[i].elevation);
            }
            r[(i, j)] = code;
            r[(n + i, n + j)] = phase;
        }
    }
    (h, nu, r)
}

/// Iterated EKF update on double-differenced code and phase with IGG-III
/// reweighting of standardized residuals at every iteration. Rows whose
/// weight reaches zero are removed; rejecting everything is an error and
/// leaves the state untouched.
pub fn rtk_update(
    fs: &mut FilterState,
    dd: &[DdObservation],
    lever_arm: &Vector3<f64>,
    amb: &AmbiguitySet,
    base_position: &Vector3<f64>,
    config: &RtkConfig,
) -> Result<RtkUpdateReport, RtkError> {
    if dd.is_empty() {
        return Err(RtkError::InsufficientSatellites(0));
    }
    let n = dd.len();
    let prior = fs.clone();
    let mut report = RtkUpdateReport {
        code_weights: vec![1.0; n],
        phase_weights: vec![1.0; n],
        iterations: 0,
    };
    let mut final_system: Option<(DMatrix<f64>, DMatrix<f64>)> = None;

    for iter in 0..config.max_iterations {
        let (h, nu, r) = dd_system(fs, dd, lever_arm, amb, base_position, config);
        // Standardize against the unweighted innovation covariance.
        let s = &h * &prior.covariance * h.transpose() + &r;
        let mut weights = vec![0.0; 2 * n];
        for k in 0..2 * n {
            let sigma = s[(k, k)].sqrt();
            weights[k] = igg3_weight(nu[k] / sigma, config.igg_k0, config.igg_k1);
        }
        let kept: Vec<usize> = (0..2 * n).filter(|k| weights[*k] > 1e-12).collect();
        if kept.is_empty() {
            // Restore the prior before reporting rejection.
            fs.nav = prior.nav.clone();
            fs.clones = prior.clones.clone();
            fs.ambiguities = prior.ambiguities.clone();
            fs.covariance = prior.covariance.clone();
            return Err(RtkError::AllObservationsRejected);
        }
        let mut h_k = DMatrix::<f64>::zeros(kept.len(), fs.dim());
        let mut nu_k = DVector::<f64>::zeros(kept.len());
        let mut r_k = DMatrix::<f64>::zeros(kept.len(), kept.len());
        for (a, &ka) in kept.iter().enumerate() {
            nu_k[a] = nu[ka];
            for c in 0..fs.dim() {
                h_k[(a, c)] = h[(ka, c)];
            }
            for (b, &kb) in kept.iter().enumerate() {
                r_k[(a, b)] = r[(ka, kb)] / (weights[ka] * weights[kb]).sqrt();
            }
        }
        report.code_weights[..n].copy_from_slice(&weights[..n]);
        report.phase_weights[..n].copy_from_slice(&weights[n..]);
        report.iterations = iter + 1;

        let eta = fs.state_difference(&prior);
        let (gain, _) = kalman_step(&prior.covariance, &h_k, &r_k)?;
        let correction = &gain * (&nu_k + &h_k * eta);
        let mut next = prior.clone();
        next.apply_correction(&correction);
        let step = fs.state_difference(&next).norm();
        fs.nav = next.nav;
        fs.clones = next.clones;
        fs.ambiguities = next.ambiguities;
        final_system = Some((h_k, r_k));
        if step < 1e-8 {
            break;
        }
    }
    if let Some((h_k, r_k)) = final_system {
        let (_, p_new) = kalman_step(&prior.covariance, &h_k, &r_k)?;
        fs.covariance = p_new;
        fs.symmetrize();
    }
    Ok(report)
}

/// Outcome of one ambiguity resolution attempt on the filter state.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolutionOutcome {
    Fixed { ratio: f64 },
    FloatKept { ratio: f64 },
}

/// Resolve the DD ambiguities currently in the state and, on a passed
/// ratio test, constrain the whole state on the fixed integers (a
/// conditional update that never increases any variance).
pub fn resolve_and_constrain(
    fs: &mut FilterState,
    amb: &mut AmbiguitySet,
    config: &RtkConfig,
) -> Result<ResolutionOutcome, RtkError> {
    let n_amb = fs.ambiguities.len();
    if n_amb == 0 {
        return Ok(ResolutionOutcome::FloatKept { ratio: 0.0 });
    }
    let base = fs.ambiguity_base();
    let float = DVector::from_vec(fs.ambiguities.clone());
    let q = fs
        .covariance
        .view((base, base), (n_amb, n_amb))
        .into_owned();
    match lambda_fix(&float, &q, config.ratio_threshold)? {
        FixOutcome::FloatFallback { ratio } => {
            for e in amb.entries.values_mut() {
                e.fixed_value = None;
            }
            Ok(ResolutionOutcome::FloatKept { ratio })
        }
        FixOutcome::Fixed { values, ratio } => {
            // Conditional update: treat the fix as an exact measurement of
            // the ambiguity block.
            let dim = fs.dim();
            let mut h = DMatrix::<f64>::zeros(n_amb, dim);
            for k in 0..n_amb {
                h[(k, base + k)] = 1.0;
            }
            let nu = DVector::from_iterator(n_amb, values.iter().map(|v| *v as f64)) - float;
            let s = &h * &fs.covariance * h.transpose();
            let chol = match s.cholesky() {
                Some(c) => c,
                None => return Err(RtkError::Filter(FilterError::SingularInnovation)),
            };
            let gain = chol.solve(&(&h * &fs.covariance)).transpose();
            let correction = &gain * nu;
            fs.apply_correction(&correction);
            let eye = DMatrix::<f64>::identity(dim, dim);
            fs.covariance = (&eye - &gain * &h) * &fs.covariance;
            fs.symmetrize();
            // Snap exactly onto the integers and keep a small variance
            // floor so later factorizations stay positive definite.
            for (k, v) in values.iter().enumerate() {
                fs.ambiguities[k] = *v as f64;
                let a = base + k;
                if fs.covariance[(a, a)] < 1e-8 {
                    fs.covariance[(a, a)] = 1e-8;
                }
            }
            for e in amb.entries.values_mut() {
                e.fixed_value = Some(values[e.state_index]);
            }
            Ok(ResolutionOutcome::Fixed { ratio })
        }
    }
}

/// Epoch-wise rover position fix from DD pseudoranges alone
/// (Gauss-Newton from the base station position); used to seed the
/// coarse GNSS/IMU alignment.
pub fn dd_point_solution(
    dd: &[DdObservation],
    base_position: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    if dd.len() < 3 {
        return None;
    }
    let mut rover = *base_position;
    for _ in 0..10 {
        let mut ata = nalgebra::Matrix3::<f64>::zeros();
        let mut atb = Vector3::<f64>::zeros();
        for d in dd {
            let to_s = rover - d.sat_position;
            let to_k = rover - d.ref_sat_position;
            let rho_s = to_s.norm();
            let rho_k = to_k.norm();
            let base_s = (base_position - d.sat_position).norm();
            let base_k = (base_position - d.ref_sat_position).norm();
            let predicted = (rho_s - base_s) - (rho_k - base_k);
            let jac = (to_s / rho_s - to_k / rho_k).transpose();
            let res = d.dd_pseudorange - predicted;
            ata += jac.transpose() * jac;
            atb += jac.transpose() * res;
        }
        let step = ata.lu().solve(&atb)?;
        rover += step;
        if step.norm() < 1e-6 {
            return Some(rover);
        }
    }
    Some(rover)
}
