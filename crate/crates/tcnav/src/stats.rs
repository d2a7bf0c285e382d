//! Chi-square quantiles and Gaussian sampling used by gating, consistency
//! checks, and the simulator.

use rand::{Rng, RngExt};

/// Lower regularized incomplete gamma function P(a, x).
///
/// Series expansion for x < a + 1, continued fraction otherwise
/// (the usual `gammp` split).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    let ln_gamma_a = ln_gamma(a);
    if x < a + 1.0 {
        // Series representation.
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..500 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma_a).exp()
    } else {
        // Lentz continued fraction for Q(a, x).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (-x + a * x.ln() - ln_gamma_a).exp() * h;
        1.0 - q
    }
}

/// Natural log of the gamma function (Lanczos).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// CDF of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_p(dof as f64 / 2.0, x / 2.0)
}

/// Quantile of the chi-square distribution (bisection on the CDF).
pub fn chi2_quantile(p: f64, dof: usize) -> f64 {
    assert!((0.0..1.0).contains(&p) && dof > 0);
    if p == 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while chi2_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// One standard normal draw (Box-Muller; consumes two uniforms).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.random();
        return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chi2_quantiles_match_tables() {
        // Published 95% critical values.
        let table = [
            (1, 3.841),
            (2, 5.991),
            (3, 7.815),
            (4, 9.488),
            (10, 18.307),
            (30, 43.773),
        ];
        for (dof, expected) in table {
            let q = chi2_quantile(0.95, dof);
            assert!((q - expected).abs() < 2e-3, "dof {dof}: {q} vs {expected}");
        }
        // And a two-sided pair used by NEES envelopes.
        assert!((chi2_quantile(0.025, 150) - 117.985).abs() < 0.05);
        assert!((chi2_quantile(0.975, 150) - 185.800).abs() < 0.05);
    }

    #[test]
    fn chi2_cdf_is_inverse_of_quantile() {
        for dof in [1, 3, 7, 40] {
            for p in [0.05, 0.5, 0.9, 0.99] {
                let x = chi2_quantile(p, dof);
                assert!((chi2_cdf(x, dof) - p).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normal_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let x = standard_normal(&mut rng);
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
