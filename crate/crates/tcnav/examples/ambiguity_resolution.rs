//! Double differencing and integer ambiguity resolution on a synthetic
//! epoch: receiver/satellite clocks cancel, the float ambiguities start
//! on the code-phase difference, and the decorrelated integer search
//! recovers the exact integers with a ratio test.
//!
//!     cargo run --example ambiguity_resolution

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcnav::lambda::{decorrelate, lambda_fix, FixOutcome};
use tcnav::rtk::{double_difference, GnssObservation};
use tcnav::stats::standard_normal;

const WAVELENGTH: f64 = 0.1902936727983649;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rover = Vector3::new(6_378_137.0, 12_000.0, 8_000.0);
    let base = rover + Vector3::new(150.0, -2_000.0, 900.0);
    let up = rover.normalize();
    let north = up.cross(&Vector3::new(0.0, 0.0, 1.0).cross(&up)).normalize();
    let east = north.cross(&up);

    let mut sats = Vec::new();
    let mut n_rover = Vec::new();
    let mut n_base = Vec::new();
    for id in 1..=6u32 {
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let el: f64 = rng.random_range(0.3..1.3);
        let dir = up * el.sin() + (north * az.cos() + east * az.sin()) * el.cos();
        sats.push((id, rover + dir * 2.3e7, el));
        n_rover.push(rng.random_range(-40..40));
        n_base.push(rng.random_range(-40..40));
    }
    let epoch = |receiver: &Vector3<f64>, ints: &[i64], clock: f64| -> Vec<GnssObservation> {
        sats.iter()
            .zip(ints)
            .map(|((id, sat, el), n)| {
                let range = (receiver - sat).norm();
                GnssObservation {
                    sat_id: *id,
                    pseudorange: range + clock,
                    carrier_phase: (range + clock) / WAVELENGTH + *n as f64,
                    wavelength: WAVELENGTH,
                    sat_position: *sat,
                    elevation: *el,
                }
            })
            .collect()
    };

    let dd = double_difference(
        &epoch(&rover, &n_rover, 2.4e4),
        &epoch(&base, &n_base, -1.1e4),
    )
    .unwrap();
    println!("reference satellite: {}", dd[0].ref_sat_id);

    // Float ambiguities from the code-phase difference, truth integers
    // from the bookkeeping.
    let n = dd.len();
    let mut float = DVector::zeros(n);
    let mut truth = Vec::new();
    for (k, d) in dd.iter().enumerate() {
        float[k] = (d.dd_phase - d.dd_pseudorange) / d.wavelength;
        let i = |id: u32| sats.iter().position(|(s, _, _)| *s == id).unwrap();
        truth.push(
            (n_rover[i(d.sat_id)] - n_base[i(d.sat_id)])
                - (n_rover[i(d.ref_sat_id)] - n_base[i(d.ref_sat_id)]),
        );
    }
    // A representative float covariance: phase-level diagonal plus the
    // shared-reference correlation.
    let sd = 0.003 * std::f64::consts::SQRT_2 / WAVELENGTH;
    let q = DMatrix::from_fn(n, n, |r, c| if r == c { 2.0 } else { 1.0 } * sd * sd);
    let float_noisy = &float
        + q.clone().cholesky().unwrap().l()
            * DVector::from_fn(n, |_, _| standard_normal(&mut rng));

    let dec = decorrelate(&q).unwrap();
    println!(
        "conditional std before/after decorrelation: {:.4} -> {:.4} cycles",
        q[(0, 0)].sqrt(),
        dec.d[0].sqrt()
    );
    match lambda_fix(&float_noisy, &q, 3.0).unwrap() {
        FixOutcome::Fixed { values, ratio } => {
            println!("float  : {:?}", float_noisy.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
            println!("fixed  : {values:?} (ratio {ratio:.1})");
            println!("truth  : {truth:?}");
            assert_eq!(values, truth);
        }
        FixOutcome::FloatFallback { ratio } => {
            println!("ratio test failed ({ratio:.2}); float solution kept");
        }
    }
}
