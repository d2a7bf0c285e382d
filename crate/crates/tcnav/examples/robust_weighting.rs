//! IGG-III robust weighting inside the iterated GNSS update: one
//! satellite gets a +20 m non-line-of-sight bias and its weight
//! collapses to zero while the position correction stays close to the
//! clean-data one.
//!
//!     cargo run --example robust_weighting

use nalgebra::{DMatrix, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcnav::filter::FilterState;
use tcnav::ins::NavState;
use tcnav::rtk::{double_difference, igg3_weight, manage_ambiguities, rtk_update, AmbiguitySet,
    GnssObservation, RtkConfig};

const WAVELENGTH: f64 = 0.1902936727983649;

fn main() {
    println!("IGG-III weight profile (k0 = 1.5, k1 = 3.0):");
    for v in [0.0, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0] {
        println!("  |v| = {v:3.1}  ->  w = {:.3}", igg3_weight(v, 1.5, 3.0));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rover = Vector3::new(6_378_137.0, 12_000.0, 8_000.0);
    let base = rover + Vector3::new(150.0, -2_000.0, 900.0);
    let up = rover.normalize();
    let north = up.cross(&Vector3::new(0.0, 0.0, 1.0).cross(&up)).normalize();
    let east = north.cross(&up);
    let mut sats = Vec::new();
    for id in 1..=6u32 {
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let el: f64 = rng.random_range(0.3..1.3);
        let dir = up * el.sin() + (north * az.cos() + east * az.sin()) * el.cos();
        sats.push((id, rover + dir * 2.3e7, el));
    }
    let epoch = |receiver: &Vector3<f64>, bias_sat: Option<u32>| -> Vec<GnssObservation> {
        sats.iter()
            .map(|(id, sat, el)| {
                let range = (receiver - sat).norm();
                let bias = if bias_sat == Some(*id) { 20.0 } else { 0.0 };
                GnssObservation {
                    sat_id: *id,
                    pseudorange: range + bias,
                    carrier_phase: range / WAVELENGTH + *id as f64 * 5.0,
                    wavelength: WAVELENGTH,
                    sat_position: *sat,
                    elevation: *el,
                }
            })
            .collect()
    };

    let base_obs = epoch(&base, None);
    let clean = double_difference(&epoch(&rover, None), &base_obs).unwrap();
    let victim = clean[1].sat_id;
    let biased = double_difference(&epoch(&rover, Some(victim)), &base_obs).unwrap();
    println!("\nsatellite {victim} carries a +20 m NLOS pseudorange bias");

    let config = RtkConfig::default();
    let make_fs = || {
        let mut nav = NavState::new(0.0);
        nav.position = rover + Vector3::new(0.4, -0.3, 0.2);
        FilterState::new(nav, DMatrix::<f64>::identity(15, 15) * 1e-2, 4)
    };

    for (label, dd) in [("clean", &clean), ("biased", &biased)] {
        let mut amb = AmbiguitySet::default();
        let mut fs = make_fs();
        manage_ambiguities(&mut amb, &clean, &mut fs, &config);
        let report = rtk_update(&mut fs, dd, &Vector3::zeros(), &amb, &base, &config).unwrap();
        let correction = (fs.nav.position - make_fs().nav.position).norm();
        println!(
            "{label:>6}: correction {correction:.3} m after {} iterations, code weights {:?}",
            report.iterations,
            report
                .code_weights
                .iter()
                .map(|w| format!("{w:.2}"))
                .collect::<Vec<_>>()
        );
    }
}
