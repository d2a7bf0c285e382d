//! Integer least-squares ambiguity resolution: L'DL factorization,
//! unimodular decorrelation (integer Gauss transformations plus adjacent
//! permutations), a depth-first search-and-shrink for the two best
//! integer candidates, and the ratio test.
//!
//! The quadratic form uses Q = L' D L with L unit lower triangular, so
//! conditioning runs from the last ambiguity down and the cost of a
//! candidate z is sum_i u_i^2 / d_i with
//! u_i = (z_i - zf_i) - sum_{k>i} L[k][i] u_k.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LambdaError {
    #[error("ambiguity covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("decorrelation produced a non-unimodular transform")]
    NotUnimodular,
}

/// Result of an ambiguity fix attempt. A failed ratio test is a normal
/// outcome, not an error: the float solution is kept.
#[derive(Debug, Clone, PartialEq)]
pub enum FixOutcome {
    Fixed { values: Vec<i64>, ratio: f64 },
    FloatFallback { ratio: f64 },
}

/// Decorrelated factorization Q = L' D L together with the unimodular
/// transform z = Z' a and its inverse.
#[derive(Debug, Clone)]
pub struct Decorrelation {
    pub l: DMatrix<f64>,
    pub d: DVector<f64>,
    /// Integer-valued unimodular transform, |det Z| = 1.
    pub z: DMatrix<f64>,
    /// Integer-valued inverse of Z.
    pub z_inv: DMatrix<f64>,
}

/// L'DL factorization with L unit lower triangular.
fn ltdl_factorize(q: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>), LambdaError> {
    let n = q.nrows();
    let mut a = q.clone();
    let mut l = DMatrix::<f64>::identity(n, n);
    let mut d = DVector::<f64>::zeros(n);
    for i in (0..n).rev() {
        d[i] = a[(i, i)];
        if d[i] <= 0.0 || !d[i].is_finite() {
            return Err(LambdaError::NotPositiveDefinite);
        }
        for j in 0..=i {
            l[(i, j)] = a[(i, j)] / d[i];
        }
        for j in 0..i {
            for k in 0..=j {
                a[(j, k)] -= l[(i, k)] * l[(i, j)] * d[i];
            }
        }
    }
    Ok((l, d))
}

/// Integer Gauss transformation reducing |L[i][j]| below 1/2.
fn gauss_reduce(
    l: &mut DMatrix<f64>,
    z: &mut DMatrix<f64>,
    z_inv: &mut DMatrix<f64>,
    i: usize,
    j: usize,
) {
    let n = l.nrows();
    let mu = l[(i, j)].round();
    if mu != 0.0 {
        for k in i..n {
            l[(k, j)] -= mu * l[(k, i)];
        }
        for k in 0..n {
            z[(k, j)] -= mu * z[(k, i)];
        }
        // (Z G)^-1 = G^-1 Z^-1 with G^-1 adding mu times row j to row i.
        for k in 0..n {
            let add = mu * z_inv[(j, k)];
            z_inv[(i, k)] += add;
        }
    }
}

/// Swap ambiguities j and j+1 (with the standard L, D update) when it
/// shrinks the later conditional variance.
fn permute(
    l: &mut DMatrix<f64>,
    d: &mut DVector<f64>,
    z: &mut DMatrix<f64>,
    z_inv: &mut DMatrix<f64>,
    j: usize,
    delta: f64,
) {
    let n = l.nrows();
    let eta = d[j] / delta;
    let lam = d[j + 1] * l[(j + 1, j)] / delta;
    d[j] = eta * d[j + 1];
    d[j + 1] = delta;
    for k in 0..j {
        let a0 = l[(j, k)];
        let a1 = l[(j + 1, k)];
        l[(j, k)] = -l[(j + 1, j)] * a0 + a1;
        l[(j + 1, k)] = eta * a0 + lam * a1;
    }
    l[(j + 1, j)] = lam;
    for k in (j + 2)..n {
        l.swap((k, j), (k, j + 1));
    }
    for k in 0..n {
        z.swap((k, j), (k, j + 1));
        z_inv.swap((j, k), (j + 1, k));
    }
}

/// Decorrelate the ambiguity covariance. The returned Z is checked to be
/// unimodular with integer entries on every call.
pub fn decorrelate(q: &DMatrix<f64>) -> Result<Decorrelation, LambdaError> {
    let n = q.nrows();
    let (mut l, mut d) = ltdl_factorize(q)?;
    let mut z = DMatrix::<f64>::identity(n, n);
    let mut z_inv = DMatrix::<f64>::identity(n, n);

    if n > 1 {
        let mut j = n - 2;
        let mut k = n - 2;
        loop {
            if j <= k {
                for i in (j + 1)..n {
                    gauss_reduce(&mut l, &mut z, &mut z_inv, i, j);
                }
            }
            let delta = d[j] + l[(j + 1, j)].powi(2) * d[j + 1];
            if delta + 1e-6 < d[j + 1] {
                permute(&mut l, &mut d, &mut z, &mut z_inv, j, delta);
                k = j;
                j = n - 2;
                continue;
            }
            if j == 0 {
                break;
            }
            j -= 1;
        }
    }

    let result = Decorrelation { l, d, z, z_inv };
    verify_unimodular(&result)?;
    Ok(result)
}

/// Integrality, inverse consistency, and |det Z| = 1 (exact integer
/// determinant via fraction-free elimination).
fn verify_unimodular(dec: &Decorrelation) -> Result<(), LambdaError> {
    let n = dec.z.nrows();
    let mut zi = vec![vec![0i128; n]; n];
    for (r, row) in zi.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let v = dec.z[(r, c)];
            if (v - v.round()).abs() > 1e-9 {
                return Err(LambdaError::NotUnimodular);
            }
            *cell = v.round() as i128;
            let w = dec.z_inv[(r, c)];
            if (w - w.round()).abs() > 1e-9 {
                return Err(LambdaError::NotUnimodular);
            }
        }
    }
    // Z * Z^-1 = I.
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += dec.z[(r, k)] * dec.z_inv[(k, c)];
            }
            let expect = if r == c { 1.0 } else { 0.0 };
            if (acc - expect).abs() > 1e-6 {
                return Err(LambdaError::NotUnimodular);
            }
        }
    }
    if bareiss_determinant(&mut zi).unsigned_abs() != 1 {
        return Err(LambdaError::NotUnimodular);
    }
    Ok(())
}

/// Fraction-free integer determinant (Bareiss).
fn bareiss_determinant(m: &mut [Vec<i128>]) -> i128 {
    let n = m.len();
    if n == 0 {
        return 1;
    }
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if m[k][k] == 0 {
            let Some(swap) = (k + 1..n).find(|&r| m[r][k] != 0) else {
                return 0;
            };
            m.swap(k, swap);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
            m[i][k] = 0;
        }
        prev = m[k][k];
    }
    sign * m[n - 1][n - 1]
}

struct SearchCtx<'a> {
    l: &'a DMatrix<f64>,
    d: &'a DVector<f64>,
    z_float: &'a DVector<f64>,
    count: usize,
}

fn search_bound(best: &[(Vec<i64>, f64)], count: usize) -> f64 {
    if best.len() < count {
        f64::INFINITY
    } else {
        best.last().unwrap().1
    }
}

fn search_descend(
    ctx: &SearchCtx,
    level: isize,
    partial: f64,
    z: &mut Vec<i64>,
    u: &mut Vec<f64>,
    best: &mut Vec<(Vec<i64>, f64)>,
) {
    if level < 0 {
        best.push((z.clone(), partial));
        best.sort_by(|a, b| a.1.total_cmp(&b.1));
        best.truncate(ctx.count);
        return;
    }
    let i = level as usize;
    let n = ctx.z_float.len();
    // Conditional center for z_i given the fixed deeper levels:
    // u_i = (z_i - zf_i) - sum_{k>i} L[k][i] u_k vanishes at
    // z_i = zf_i + sum_{k>i} L[k][i] u_k.
    let shift: f64 = (i + 1..n).map(|k| ctx.l[(k, i)] * u[k]).sum();
    let center = ctx.z_float[i] + shift;
    let base = center.round() as i64;
    let frac = center - base as f64;
    let mut step = if frac >= 0.0 { 1i64 } else { -1i64 };
    let mut candidate = base;
    loop {
        let ui = (candidate as f64 - ctx.z_float[i]) - shift;
        let cost = partial + ui * ui / ctx.d[i];
        if cost >= search_bound(best, ctx.count) {
            // Candidates are visited in increasing |u_i|; once one fails
            // the bound, all later ones at this level do too.
            break;
        }
        z[i] = candidate;
        u[i] = ui;
        search_descend(ctx, level - 1, cost, z, u, best);
        candidate += step;
        step = -step - step.signum();
    }
}

/// Depth-first integer least-squares search for the `count` best
/// candidates around the decorrelated float solution.
pub fn ils_search(
    l: &DMatrix<f64>,
    d: &DVector<f64>,
    z_float: &DVector<f64>,
    count: usize,
) -> Vec<(Vec<i64>, f64)> {
    let n = z_float.len();
    let mut best: Vec<(Vec<i64>, f64)> = Vec::new();
    let mut z = vec![0i64; n];
    let mut u = vec![0.0; n];
    let ctx = SearchCtx {
        l,
        d,
        z_float,
        count: count.max(2),
    };
    search_descend(&ctx, n as isize - 1, 0.0, &mut z, &mut u, &mut best);
    best.truncate(count);
    best
}

/// Full resolution: decorrelate, search the best and second-best integer
/// candidates, apply the ratio test, and map the winner back to the
/// original ambiguity space.
pub fn lambda_fix(
    float_amb: &DVector<f64>,
    q_amb: &DMatrix<f64>,
    ratio_threshold: f64,
) -> Result<FixOutcome, LambdaError> {
    let n = float_amb.len();
    assert!(n > 0 && q_amb.nrows() == n && q_amb.ncols() == n);
    let dec = decorrelate(q_amb)?;
    let z_float = dec.z.transpose() * float_amb;
    let candidates = ils_search(&dec.l, &dec.d, &z_float, 2);
    if candidates.is_empty() {
        return Err(LambdaError::NotPositiveDefinite);
    }
    let best_cost = candidates[0].1;
    let second_cost = candidates.get(1).map(|c| c.1).unwrap_or(f64::INFINITY);
    let ratio = if best_cost <= f64::EPSILON {
        f64::INFINITY
    } else {
        second_cost / best_cost
    };
    if ratio < ratio_threshold {
        return Ok(FixOutcome::FloatFallback { ratio });
    }
    // a = Z'^-1 z = (Z^-1)' z, integer because Z is unimodular.
    let z_vec = DVector::from_iterator(n, candidates[0].0.iter().map(|v| *v as f64));
    let a_fixed = dec.z_inv.transpose() * z_vec;
    let values = a_fixed.iter().map(|v| v.round() as i64).collect();
    Ok(FixOutcome::Fixed { values, ratio })
}
