//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured numbers (run with `--nocapture` to see them).
//!
//! Run: `cargo test --test acceptance -- --nocapture --test-threads=1`

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcnav::dataset::{read_trajectory, write_dataset};
use tcnav::earth::EarthParams;
use tcnav::filter::nullspace_project;
use tcnav::ins::{error_state_matrices, propagate_nav, ImuSample, NavState};
use tcnav::lambda::{decorrelate, ils_search, lambda_fix, FixOutcome};
use tcnav::math::{orthonormalize, skew, so3_exp, so3_log};
use tcnav::pipeline::{run_on_dataset, InitMode, Mode, RunConfig};
use tcnav::rtk::{double_difference, manage_ambiguities, predict_range, rtk_update, AmbiguitySet,
    GnssObservation, RtkConfig};
use tcnav::sim::{generate, ScenarioConfig};
use tcnav::stats::{chi2_quantile, standard_normal};
use tcnav::vision::{
    body_pose_to_camera, po_depths, po_jacobians, po_residual, relative_transform,
    select_base_frames, CameraIntrinsics, CameraPose, FeatureTrack, NormalizedBearing,
    TrackObservation,
};

const WAVELENGTH: f64 = 0.1902936727983649;

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 640.0,
        fy: 640.0,
        cx: 640.0,
        cy: 512.0,
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
    CameraPose::new(
        so3_exp(&Vector3::new(
            rng.random_range(-0.4..0.4),
            rng.random_range(-0.4..0.4),
            rng.random_range(-0.4..0.4),
        )),
        Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ),
    )
}

/// Criterion 1: pose-only depth losslessness over >= 1e4 random
/// non-degenerate configurations, relative error < 1e-9, in under 5 s.
#[test]
fn acceptance_1_po_depth_losslessness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    while checked < 10_000 {
        let pose_i = random_pose(&mut rng);
        let pose_j = random_pose(&mut rng);
        let point = pose_i.position
            + pose_i.rotation
                * Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(2.0..20.0),
                );
        let pc_i = pose_i.world_to_camera(&point);
        let pc_j = pose_j.world_to_camera(&point);
        if pc_j.z < 0.5 {
            continue;
        }
        let b_i = NormalizedBearing::new(pc_i.x / pc_i.z, pc_i.y / pc_i.z);
        let b_j = NormalizedBearing::new(pc_j.x / pc_j.z, pc_j.y / pc_j.z);
        let rel = relative_transform(&pose_i, &pose_j);
        let Ok((d_i, d_j)) = po_depths(&rel, &b_i, &b_j) else {
            continue;
        };
        worst = worst
            .max(((d_i.depth - pc_i.z) / pc_i.z).abs())
            .max(((d_j.depth - pc_j.z) / pc_j.z).abs());
        checked += 1;
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(worst < 1e-9, "worst relative depth error {worst}");
    assert!(elapsed < 5.0, "runtime {elapsed} s");
    println!(
        "PASS criterion 1: po-depth losslessness, {checked} configs, worst rel err {worst:.2e}, {elapsed:.2} s"
    );
}

/// Criterion 2: every analytic Jacobian matches finite differences:
/// pose-only residual blocks, the DD line-of-sight row, and the
/// error-state F through 0.1 s of propagation. Under 30 s.
#[test]
fn acceptance_2_jacobians_match_finite_differences() {
    let started = Instant::now();
    let k = intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(102);

    // Pose-only residual Jacobians vs central differences.
    let mut worst_po: f64 = 0.0;
    let mut scenes = 0;
    while scenes < 40 {
        let mut poses = BTreeMap::new();
        for id in 0..4u64 {
            let mut pose = random_pose(&mut rng);
            pose.position *= 0.5;
            poses.insert(id, pose);
        }
        let point = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(5.0..10.0),
        );
        if poses.values().any(|p| p.world_to_camera(&point).z < 1.0) {
            continue;
        }
        let mut track = FeatureTrack::new(0);
        for (id, pose) in &poses {
            let pc = pose.world_to_camera(&point);
            let b = NormalizedBearing::new(pc.x / pc.z, pc.y / pc.z);
            track.observations.insert(
                *id,
                TrackObservation {
                    bearing: b,
                    pixel: k.project(&Vector2::new(b.x, b.y)),
                },
            );
        }
        let Ok(base) = select_base_frames(&track, &poses) else {
            continue;
        };
        for &l in poses.keys() {
            if l == base.0 {
                continue;
            }
            let blocks = po_jacobians(&track, base, l, &poses, &k).unwrap();
            for (frame, analytic) in &blocks {
                let mut fd = nalgebra::Matrix2x6::<f64>::zeros();
                for col in 0..6 {
                    let step = if col < 3 { 1e-6 } else { 1e-7 };
                    let mut plus = poses.clone();
                    let mut minus = poses.clone();
                    {
                        let p = plus.get_mut(frame).unwrap();
                        let m = minus.get_mut(frame).unwrap();
                        if col < 3 {
                            let mut d = Vector3::zeros();
                            d[col] = step;
                            p.position += d;
                            m.position -= d;
                        } else {
                            let mut phi = Vector3::zeros();
                            phi[col - 3] = step;
                            p.rotation = (Matrix3::identity() + skew(&phi)) * p.rotation;
                            m.rotation = (Matrix3::identity() - skew(&phi)) * m.rotation;
                        }
                    }
                    let rp = po_residual(&track, base, l, &plus, &k).unwrap();
                    let rm = po_residual(&track, base, l, &minus, &k).unwrap();
                    fd.set_column(col, &((rp - rm) / (2.0 * step)));
                }
                worst_po = worst_po.max((fd - analytic).norm() / fd.norm().max(1e-12));
            }
        }
        scenes += 1;
    }
    assert!(worst_po < 1e-4, "pose-only Jacobian rel err {worst_po}");

    // Line-of-sight row of the antenna range.
    let mut worst_los: f64 = 0.0;
    for _ in 0..40 {
        let mut nav = NavState::new(0.0);
        nav.position = Vector3::new(6.37e6, 1e4, -2e4);
        nav.attitude = so3_exp(&Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let lever = Vector3::new(0.4, -0.2, 1.1);
        let sat = nav.position
            + Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..1.0),
            )
            .normalize()
                * 2.2e7;
        let pr = predict_range(&nav, &lever, &sat);
        for axis in 0..3 {
            let eps = 0.1;
            let mut dp = Vector3::zeros();
            dp[axis] = eps;
            let mut plus = nav.clone();
            plus.position += dp;
            let mut minus = nav.clone();
            minus.position -= dp;
            let fd = (predict_range(&plus, &lever, &sat).range
                - predict_range(&minus, &lever, &sat).range)
                / (2.0 * eps);
            worst_los = worst_los.max((fd - pr.jac_position[axis]).abs() / fd.abs().max(1.0));

            let mut phi = Vector3::zeros();
            phi[axis] = 1e-3;
            let mut plus = nav.clone();
            plus.attitude = (Matrix3::identity() + skew(&phi)) * nav.attitude;
            let mut minus = nav.clone();
            minus.attitude = (Matrix3::identity() - skew(&phi)) * nav.attitude;
            let fd = (predict_range(&plus, &lever, &sat).range
                - predict_range(&minus, &lever, &sat).range)
                / 2e-3;
            worst_los = worst_los.max((fd - pr.jac_attitude[axis]).abs() / fd.abs().max(1.0));
        }
    }
    assert!(worst_los < 1e-4, "line-of-sight Jacobian rel err {worst_los}");

    // F of the error-state model against 0.1 s of nonlinear propagation.
    let earth = EarthParams::default();
    let pos0 = Vector3::new(6.37e6, 1.2e5, 3.3e6);
    let mut worst_f: f64 = 0.0;
    for _ in 0..10 {
        let mut nominal = NavState::new(0.0);
        nominal.position = pos0;
        nominal.velocity = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-1.0..1.0),
        );
        nominal.attitude = so3_exp(&Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        ));
        let dr = Vector3::new(0.1, -0.05, 0.08);
        let dv = Vector3::new(0.02, 0.03, -0.01);
        let phi = Vector3::new(1e-3, -5e-4, 8e-4);
        let mut truth = nominal.clone();
        truth.position += dr;
        truth.velocity += dv;
        truth.attitude = orthonormalize(&((Matrix3::identity() + skew(&phi)) * nominal.attitude));

        let omega = Vector3::new(0.05, -0.02, 0.1);
        let force = Vector3::new(0.8, -0.5, -9.6);
        let dt = 0.005;
        let mut delta = nalgebra::SVector::<f64, 15>::zeros();
        delta.fixed_rows_mut::<3>(0).copy_from(&dr);
        delta.fixed_rows_mut::<3>(3).copy_from(&dv);
        delta.fixed_rows_mut::<3>(6).copy_from(&phi);

        let mut nom = nominal.clone();
        let mut tru = truth.clone();
        for k in 0..20 {
            let sample = ImuSample {
                timestamp: (k + 1) as f64 * dt,
                angular_rate: omega,
                specific_force: force,
            };
            let (f, _) = error_state_matrices(&nom, &sample, &earth);
            delta = (nalgebra::SMatrix::<f64, 15, 15>::identity() + f * dt) * delta;
            nom = propagate_nav(&nom, &sample, dt, &earth).unwrap();
            tru = propagate_nav(&tru, &sample, dt, &earth).unwrap();
        }
        let dr_true = tru.position - nom.position;
        let dv_true = tru.velocity - nom.velocity;
        let phi_true = so3_log(&orthonormalize(&(tru.attitude * nom.attitude.transpose())));
        worst_f = worst_f
            .max((dr_true - delta.fixed_rows::<3>(0)).norm() / dr_true.norm())
            .max((dv_true - delta.fixed_rows::<3>(3)).norm() / dv_true.norm())
            .max((phi_true - delta.fixed_rows::<3>(6)).norm() / phi_true.norm());
    }
    assert!(worst_f < 0.01, "F propagation rel err {worst_f}");

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "runtime {elapsed} s");
    println!(
        "PASS criterion 2: Jacobians vs finite differences: pose-only {worst_po:.2e}, line-of-sight {worst_los:.2e}, F {worst_f:.2e} (1% bound), {elapsed:.1} s"
    );
}

/// Criterion 3: left null-space projection annihilates the feature
/// Jacobian to 1e-10 and drops the residual dimension to 2m - 3 on
/// every track of a simulated scene.
#[test]
fn acceptance_3_nullspace_projection() {
    let config = ScenarioConfig {
        duration: 15.0,
        seed: 103,
        ..ScenarioConfig::default()
    }
    .noise_free();
    let ds = generate(&config).unwrap();
    let cam_step = (config.imu_rate / config.cam_rate) as usize;
    let k = ds.intrinsics;

    // Camera poses and tracks over a ten-frame window.
    let mut poses = BTreeMap::new();
    let mut tracks: BTreeMap<u64, FeatureTrack> = BTreeMap::new();
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
    let mut worst: f64 = 0.0;
    for track in tracks.values() {
        let m = track.len();
        if m < 3 {
            continue;
        }
        let Ok(point) = tcnav::vision::triangulate(track, &poses) else {
            continue;
        };
        let mut h_x = DMatrix::<f64>::zeros(2 * m, 6 * poses.len());
        let mut h_f = DMatrix::<f64>::zeros(2 * m, 3);
        let mut nu = DVector::<f64>::zeros(2 * m);
        for (row, (id, obs)) in track.observations.iter().enumerate() {
            let cam = &poses[id];
            let pc = cam.world_to_camera(&point);
            let inv_z = 1.0 / pc.z;
            let predicted = k.project(&Vector2::new(pc.x * inv_z, pc.y * inv_z));
            let e = predicted - obs.pixel;
            nu[2 * row] = -e.x;
            nu[2 * row + 1] = -e.y;
            let de_dpc = Matrix2x3::new(
                k.fx * inv_z,
                0.0,
                -k.fx * pc.x * inv_z * inv_z,
                0.0,
                k.fy * inv_z,
                -k.fy * pc.y * inv_z * inv_z,
            );
            let rc_t = cam.rotation.transpose();
            let d_df = de_dpc * rc_t;
            let off = 6 * (*id as usize);
            let d_dr = de_dpc * (-rc_t);
            for c in 0..3 {
                for rr in 0..2 {
                    h_x[(2 * row + rr, off + c)] = d_dr[(rr, c)];
                    h_f[(2 * row + rr, c)] = d_df[(rr, c)];
                }
            }
        }
        let (h_o, nu_o) = nullspace_project(&h_x, &h_f, &nu);
        assert_eq!(h_o.nrows(), 2 * m - 3, "residual dimension");
        assert_eq!(nu_o.len(), 2 * m - 3);
        // Rebuild the basis and verify the defining property.
        let qr = h_f.clone().qr();
        let mut qt = DMatrix::<f64>::identity(2 * m, 2 * m);
        qr.q_tr_mul(&mut qt);
        let a_t = qt.rows(3, 2 * m - 3).into_owned();
        worst = worst.max((&a_t * &h_f).norm());
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} tracks checked");
    assert!(worst < 1e-10, "null-space residue {worst}");
    println!(
        "PASS criterion 3: null-space projection on {checked} tracks, max |A' H_f| = {worst:.2e}, dimension 2m-3 verified"
    );
}

/// Criterion 4: noise-free 60 s end-to-end run stays at the
/// discretization floor (translation RMS < 1e-2 m, rotation < 1e-3 deg).
#[test]
fn acceptance_4_zero_noise_end_to_end() {
    let config = ScenarioConfig {
        duration: 60.0,
        seed: 104,
        ..ScenarioConfig::default()
    }
    .noise_free();
    let ds = generate(&config).unwrap();
    let run = RunConfig {
        mode: Mode::PoGvins,
        init: InitMode::Truth,
        ..RunConfig::default()
    };
    let out = run_on_dataset(&ds, &run).unwrap();
    let t_rms = out.report.translation.rms;
    let r_rms = out.report.rotation_deg.rms;
    assert!(t_rms < 1e-2, "translation RMS {t_rms}");
    assert!(r_rms < 1e-3, "rotation RMS {r_rms} deg");
    assert!(out.ambiguity_fixes > 50, "fixes {}", out.ambiguity_fixes);
    println!(
        "PASS criterion 4: zero-noise end-to-end, translation RMS {t_rms:.2e} m, rotation RMS {r_rms:.2e} deg, {} fixes",
        out.ambiguity_fixes
    );
}

/// Criterion 5: qualitative ordering on the default degraded scenario
/// over 20 seeds: PO-VINS beats MSCKF by >= 10% at the median, and
/// PO-GVINS < M-GVINS < GI. Under 5 minutes.
#[test]
fn acceptance_5_qualitative_ordering() {
    let started = Instant::now();
    let modes = [
        Mode::PoVins,
        Mode::Msckf,
        Mode::Gi,
        Mode::MGvins,
        Mode::PoGvins,
    ];
    let mut rms: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut p95: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..20u64 {
        let ds = generate(&ScenarioConfig::default_degraded(seed)).unwrap();
        for mode in modes {
            let run = RunConfig {
                mode,
                init: InitMode::Truth,
                ..RunConfig::default()
            };
            let out = run_on_dataset(&ds, &run).unwrap();
            rms.entry(mode.name()).or_default().push(out.report.translation.rms);
            p95.entry(mode.name()).or_default().push(out.report.translation.p95);
        }
    }
    let median_of = |map: &BTreeMap<&str, Vec<f64>>, name: &str| -> f64 {
        let mut v = map[name].clone();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (po, ms) = (median_of(&rms, "po-vins"), median_of(&rms, "msckf"));
    let (gi, mg, pg) = (
        median_of(&rms, "gi"),
        median_of(&rms, "m-gvins"),
        median_of(&rms, "po-gvins"),
    );
    let elapsed = started.elapsed().as_secs_f64();
    assert!(po < ms, "PO-VINS {po} !< MSCKF {ms}");
    assert!(
        po <= 0.9 * ms,
        "PO-VINS {po} does not improve on MSCKF {ms} by 10%"
    );
    assert!(pg < mg, "PO-GVINS {pg} !< M-GVINS {mg}");
    assert!(mg < gi, "M-GVINS {mg} !< GI {gi}");
    // The tail of the error distribution follows the same ordering.
    let (pg95, gi95) = (median_of(&p95, "po-gvins"), median_of(&p95, "gi"));
    assert!(pg95 <= gi95, "PO-GVINS p95 {pg95} !<= GI p95 {gi95}");
    assert!(elapsed < 300.0, "runtime {elapsed} s");
    println!(
        "PASS criterion 5: medians over 20 seeds: po-vins {po:.3} < msckf {ms:.3} ({:.1}% better), po-gvins {pg:.3} < m-gvins {mg:.3} < gi {gi:.3}, p95 {pg95:.3} <= {gi95:.3}, {elapsed:.0} s",
        (1.0 - po / ms) * 100.0
    );
}

/// Criterion 6: bit-exact clock cancellation in the double differences,
/// and >= 99% integer recovery on 4-D phase-noise problems with every
/// search result equal to the brute-force oracle.
#[test]
fn acceptance_6_dd_invariances_and_integer_recovery() {
    // Clock cancellation on a synthetic epoch; dyadic offsets add exactly
    // in f64, making the algebraic cancellation observable bit-for-bit.
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let rover_pos = Vector3::new(6_378_137.0, 12_000.0, 8_000.0);
    let base_pos = rover_pos + Vector3::new(150.0, -2_000.0, 900.0);
    let up = rover_pos.normalize();
    let north = up.cross(&Vector3::new(0.0, 0.0, 1.0).cross(&up)).normalize();
    let east = north.cross(&up);
    let make_epoch = |rng: &mut ChaCha8Rng, receiver: &Vector3<f64>| -> Vec<GnssObservation> {
        (1..=7u32)
            .map(|id| {
                let az = rng.random_range(0.0..std::f64::consts::TAU);
                let el: f64 = rng.random_range(0.3..1.3);
                let dir = up * el.sin() + (north * az.cos() + east * az.sin()) * el.cos();
                let sat = receiver + dir * 2.3e7;
                let range = (receiver - sat).norm();
                GnssObservation {
                    sat_id: id,
                    pseudorange: range,
                    carrier_phase: range / WAVELENGTH + rng.random_range(-40..40) as f64,
                    wavelength: WAVELENGTH,
                    sat_position: sat,
                    elevation: el,
                }
            })
            .collect()
    };
    let mut rng2 = rng.clone();
    let rover = make_epoch(&mut rng, &rover_pos);
    let base = make_epoch(&mut rng2, &base_pos);
    let dd0 = double_difference(&rover, &base).unwrap();
    // Receiver clock: common dyadic offset on every rover observation.
    let rover_clk: Vec<GnssObservation> = rover
        .iter()
        .map(|o| GnssObservation {
            pseudorange: o.pseudorange + 131072.0,
            carrier_phase: o.carrier_phase + 128.0,
            ..o.clone()
        })
        .collect();
    assert_eq!(dd0, double_difference(&rover_clk, &base).unwrap());
    // Satellite clocks: per-satellite dyadic offsets on both receivers.
    let sat_off = |o: &GnssObservation| GnssObservation {
        pseudorange: o.pseudorange + 64.0 * o.sat_id as f64,
        carrier_phase: o.carrier_phase + 64.0 * o.sat_id as f64 / 0.25,
        ..o.clone()
    };
    let rover_s: Vec<GnssObservation> = rover.iter().map(sat_off).collect();
    let base_s: Vec<GnssObservation> = base.iter().map(sat_off).collect();
    assert_eq!(dd0, double_difference(&rover_s, &base_s).unwrap());

    // Integer recovery: 4-D DD ambiguity problems at the phase noise
    // level (sigma = 0.003 m per receiver): the float solution is the
    // truth plus noise with the double-difference correlation structure
    // (shared reference satellite) rotated by a random volume-preserving
    // shear. Every search result must equal the brute-force oracle.
    let mut correct = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(1060);
    let trials = 500;
    for trial in 0..trials {
        let n_dd = 4usize;
        let truth_n: Vec<i64> = (0..n_dd).map(|_| rng.random_range(-30..30)).collect();
        // SD phase sigma per satellite (rover + base), in cycles.
        let sd_cycles = 0.003_f64 * std::f64::consts::SQRT_2 / WAVELENGTH;
        // DD covariance: diag + shared reference satellite, mildly
        // sheared to vary the correlation structure per trial.
        let mut q_n = DMatrix::<f64>::from_fn(n_dd, n_dd, |r, c| {
            let base = if r == c { 2.0 } else { 1.0 };
            base * sd_cycles * sd_cycles
        });
        let mut shear = DMatrix::<f64>::identity(n_dd, n_dd);
        for r in 0..n_dd {
            for c in 0..n_dd {
                if r != c {
                    shear[(r, c)] = rng.random_range(-0.6..0.6);
                }
            }
        }
        q_n = &shear * q_n * shear.transpose();
        let chol = q_n.clone().cholesky().unwrap();
        let noise = chol.l() * DVector::from_fn(n_dd, |_, _| standard_normal(&mut rng));
        let float_n =
            DVector::from_iterator(n_dd, truth_n.iter().map(|v| *v as f64)) + noise;

        // Search result vs brute-force oracle over the +/-5 box.
        let dec = decorrelate(&q_n).unwrap();
        let zf = dec.z.transpose() * &float_n;
        let found = ils_search(&dec.l, &dec.d, &zf, 2);
        let a_best: Vec<i64> = (dec.z_inv.transpose()
            * DVector::from_iterator(n_dd, found[0].0.iter().map(|v| *v as f64)))
        .iter()
        .map(|v| v.round() as i64)
        .collect();

        let q_inv = q_n.clone().try_inverse().unwrap();
        let center: Vec<i64> = float_n.iter().map(|v| v.round() as i64).collect();
        let mut best_cost = f64::INFINITY;
        let mut best_vec = vec![0i64; n_dd];
        let mut idx = vec![0i64; n_dd];
        enumerate_box(&center, &mut idx, 0, &q_inv, &float_n, &mut best_cost, &mut best_vec);
        assert_eq!(a_best, best_vec, "trial {trial}: search != oracle");

        // And the full resolution path accepts with a healthy ratio.
        if let FixOutcome::Fixed { values, .. } = lambda_fix(&float_n, &q_n, 3.0).unwrap() {
            assert_eq!(values, a_best);
        }

        if a_best == truth_n {
            correct += 1;
        }
    }
    let rate = correct as f64 / trials as f64;
    assert!(rate >= 0.99, "integer recovery rate {rate}");
    println!(
        "PASS criterion 6: clock cancellations bit-exact; integer recovery {correct}/{trials} with search == oracle on every trial"
    );
}

fn enumerate_box(
    center: &[i64],
    idx: &mut Vec<i64>,
    level: usize,
    q_inv: &DMatrix<f64>,
    float_n: &DVector<f64>,
    best_cost: &mut f64,
    best_vec: &mut Vec<i64>,
) {
    let n = center.len();
    if level == n {
        let mut cost = 0.0;
        for r in 0..n {
            let dr = idx[r] as f64 - float_n[r];
            for c in 0..n {
                cost += dr * q_inv[(r, c)] * (idx[c] as f64 - float_n[c]);
            }
        }
        if cost < *best_cost {
            *best_cost = cost;
            *best_vec = idx.clone();
        }
        return;
    }
    for d in -5..=5 {
        idx[level] = center[level] + d;
        enumerate_box(center, idx, level + 1, q_inv, float_n, best_cost, best_vec);
    }
}

/// Criterion 7: a +20 m NLOS bias on one of six satellites is driven to
/// weight < 0.01 by the iterated IGG-III update, and the resulting
/// position correction stays within 2x of the clean-data correction.
#[test]
fn acceptance_7_igg3_downweights_nlos() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let rover_pos = Vector3::new(6_378_137.0, 12_000.0, 8_000.0);
    let base_pos = rover_pos + Vector3::new(150.0, -2_000.0, 900.0);
    let up = rover_pos.normalize();
    let north = up.cross(&Vector3::new(0.0, 0.0, 1.0).cross(&up)).normalize();
    let east = north.cross(&up);
    let mut sats = Vec::new();
    for id in 1..=6u32 {
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let el: f64 = rng.random_range(0.3..1.3);
        let dir = up * el.sin() + (north * az.cos() + east * az.sin()) * el.cos();
        sats.push((id, rover_pos + dir * 2.3e7, el));
    }
    let epoch = |receiver: &Vector3<f64>, bias_sat: Option<u32>| -> Vec<GnssObservation> {
        sats.iter()
            .map(|(id, sat, el)| {
                let range = (receiver - sat).norm();
                let bias = if bias_sat == Some(*id) { 20.0 } else { 0.0 };
                GnssObservation {
                    sat_id: *id,
                    pseudorange: range + bias,
                    carrier_phase: range / WAVELENGTH + *id as f64 * 3.0,
                    wavelength: WAVELENGTH,
                    sat_position: *sat,
                    elevation: *el,
                }
            })
            .collect()
    };
    let base = epoch(&base_pos, None);
    let clean = double_difference(&epoch(&rover_pos, None), &base).unwrap();
    // Victim: a non-reference satellite.
    let victim = clean[2].sat_id;
    let biased = double_difference(&epoch(&rover_pos, Some(victim)), &base).unwrap();

    let config = RtkConfig::default();
    let make_fs = || {
        let mut nav = NavState::new(0.0);
        nav.position = rover_pos + Vector3::new(0.4, -0.3, 0.2);
        tcnav::filter::FilterState::new(
            nav,
            DMatrix::<f64>::identity(15, 15) * 1e-2,
            4,
        )
    };
    let mut amb = AmbiguitySet::default();
    let mut fs_clean = make_fs();
    manage_ambiguities(&mut amb, &clean, &mut fs_clean, &config);
    rtk_update(&mut fs_clean, &clean, &Vector3::zeros(), &amb, &base_pos, &config).unwrap();
    let clean_correction = (fs_clean.nav.position - make_fs().nav.position).norm();

    let mut amb2 = AmbiguitySet::default();
    let mut fs_biased = make_fs();
    manage_ambiguities(&mut amb2, &clean, &mut fs_biased, &config);
    let report =
        rtk_update(&mut fs_biased, &biased, &Vector3::zeros(), &amb2, &base_pos, &config).unwrap();
    let victim_idx = biased.iter().position(|d| d.sat_id == victim).unwrap();
    let weight = report.code_weights[victim_idx];
    let biased_correction = (fs_biased.nav.position - make_fs().nav.position).norm();
    assert!(weight < 0.01, "victim weight {weight}");
    assert!(
        biased_correction < 2.0 * clean_correction,
        "biased correction {biased_correction} vs clean {clean_correction}"
    );
    println!(
        "PASS criterion 7: NLOS weight {weight:.2e} < 0.01, corrections {biased_correction:.3} m vs clean {clean_correction:.3} m"
    );
}

/// Criterion 8: covariance health through a 120 s run and NEES
/// consistency over 50 Monte-Carlo runs of a 60 s scenario.
#[test]
fn acceptance_8_filter_health_and_nees() {
    // Symmetric PSD covariance at every step of a degraded 120 s run.
    let ds = generate(&ScenarioConfig::default_degraded(108)).unwrap();
    let run = RunConfig {
        mode: Mode::PoGvins,
        init: InitMode::Truth,
        validate_covariance: true,
        ..RunConfig::default()
    };
    let out = run_on_dataset(&ds, &run).unwrap();
    assert!(out.covariance_checks > 20_000, "checks {}", out.covariance_checks);
    assert!(
        out.covariance_worst_asymmetry < 1e-12,
        "asymmetry {}",
        out.covariance_worst_asymmetry
    );

    // Position NEES across 50 Monte-Carlo runs at one-second epochs.
    let runs = 50usize;
    let mut nees: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for mc in 0..runs as u64 {
        let config = ScenarioConfig {
            duration: 60.0,
            seed: 2000 + mc,
            ..ScenarioConfig::default()
        };
        let ds = generate(&config).unwrap();
        let run = RunConfig {
            mode: Mode::PoGvins,
            init: InitMode::Truth,
            init_perturb_seed: Some(9000 + mc),
            log_covariance: true,
            ..RunConfig::default()
        };
        let out = run_on_dataset(&ds, &run).unwrap();
        let dt = 1.0 / config.imu_rate;
        for (t, p_pos) in &out.covariance_samples {
            let est = out
                .trajectory
                .iter()
                .find(|s| (s.timestamp - t).abs() < 1e-9)
                .unwrap();
            let truth = &ds.truth[((t / dt).round() as usize).min(ds.truth.len() - 1)];
            let err = truth.position - est.position;
            let Some(chol) = p_pos.cholesky() else { continue };
            let v = chol.solve(&err);
            nees.entry(t.round() as i64).or_default().push(err.dot(&v));
        }
    }
    let lo = chi2_quantile(0.025, 3 * runs) / runs as f64;
    let hi = chi2_quantile(0.975, 3 * runs) / runs as f64;
    let mut inside = 0usize;
    let mut total = 0usize;
    for values in nees.values() {
        if values.len() < runs {
            continue;
        }
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        if avg >= lo && avg <= hi {
            inside += 1;
        }
        total += 1;
    }
    let frac = inside as f64 / total.max(1) as f64;
    assert!(total >= 50, "only {total} NEES epochs");
    assert!(
        frac >= 0.90,
        "NEES within envelope for only {:.0}% of epochs ({inside}/{total})",
        frac * 100.0
    );
    println!(
        "PASS criterion 8: covariance symmetric/PSD over {} checks (asymmetry {:.1e}); NEES within [{lo:.2}, {hi:.2}] for {inside}/{total} epochs ({:.0}%)",
        out.covariance_checks,
        out.covariance_worst_asymmetry,
        frac * 100.0
    );
}

/// Criterion 9: simulate + run twice with the same seed produces
/// bit-identical trajectory CSVs.
#[test]
fn acceptance_9_determinism() {
    let tmp = std::env::temp_dir().join(format!("tcnav_acc9_{}", std::process::id()));
    let mut bytes: Vec<Vec<u8>> = Vec::new();
    for round in 0..2 {
        let dir = tmp.join(format!("round{round}"));
        let ds_dir = dir.join("dataset");
        let out_dir = dir.join("report");
        let config = ScenarioConfig {
            duration: 20.0,
            seed: 109,
            ..ScenarioConfig::default()
        };
        let ds = generate(&config).unwrap();
        write_dataset(&ds, &ds_dir).unwrap();
        let run = RunConfig {
            mode: Mode::PoGvins,
            dataset_dir: ds_dir.clone(),
            output_dir: Some(out_dir.clone()),
            init: InitMode::Align,
            ..RunConfig::default()
        };
        tcnav::pipeline::run_pipeline(&run).unwrap();
        bytes.push(std::fs::read(out_dir.join("trajectory.csv")).unwrap());
        // Also verify the trajectory parses back.
        let traj = read_trajectory(&out_dir.join("trajectory.csv")).unwrap();
        assert!(traj.len() > 1000);
    }
    std::fs::remove_dir_all(&tmp).ok();
    assert_eq!(bytes[0], bytes[1], "trajectory CSVs differ between runs");
    println!(
        "PASS criterion 9: simulate + run twice -> bit-identical trajectory CSV ({} bytes)",
        bytes[0].len()
    );
}
