//! Computable constants from the local analysis and Monte-Carlo checks of
//! its assumptions and auxiliary identities (real-valued model).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::designs::haar_stiefel_real;
use crate::linalg::{is_real, sym_eigen, CMat, RMat};
use crate::model::Codebook;
use crate::{Error, Result};

/// `1 / (1 + (N-1) e^{R^2/tau})`, a lower bound on every softmax probability
/// when `||x|| <= R`.
pub fn p_min_value(n: usize, radius: f64, tau: f64) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    let z = radius * radius / tau;
    // exp(-z) / (exp(-z) + N - 1) avoids overflow for large z.
    let e = (-z).exp();
    e / (e + (n - 1) as f64)
}

/// `(1 - delta) 4 N (N-1) (1 - mu^2) / (d (d+2))`.
pub fn kappa0_value(n: usize, d: usize, mu: f64, delta: f64) -> f64 {
    (1.0 - delta) * 4.0 * (n * n.saturating_sub(1)) as f64 * (1.0 - mu * mu) / (d * (d + 2)) as f64
}

/// The same bound with the `(d-1)(d+2)` denominator that appears in the
/// derivation; infinite for `d = 1`.
pub fn kappa0_proof_value(n: usize, d: usize, mu: f64, delta: f64) -> f64 {
    let num = (1.0 - delta) * 4.0 * (n * n.saturating_sub(1)) as f64 * (1.0 - mu * mu);
    let den = ((d - 1) * (d + 2)) as f64;
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

pub fn beta0_value(kappa0: f64, p_min: f64, h_norm: f64, tau: f64) -> f64 {
    kappa0 * p_min * p_min * h_norm * h_norm / (tau * tau)
}

/// `48 R^3 / tau^3 + 24 R / tau^2`.
pub fn hessian_lipschitz(radius: f64, tau: f64) -> f64 {
    48.0 * radius.powi(3) / tau.powi(3) + 24.0 * radius / (tau * tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    pub p_min: f64,
    pub kappa0: f64,
    /// Variant with the derivation's denominator.
    pub kappa0_proof: f64,
    pub beta0: f64,
    pub l_h: f64,
    pub delta: f64,
}

impl TheoryConstants {
    pub fn compute(n: usize, d: usize, mu: f64, delta: f64, radius: f64, tau: f64, h_norm: f64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument("need N >= 1 and d >= 1".into()));
        }
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::InvalidArgument(format!("coherence must lie in [0, 1), got {mu}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(radius > 0.0 && tau > 0.0) {
            return Err(Error::InvalidArgument("radius and tau must be positive".into()));
        }
        let p_min = p_min_value(n, radius, tau);
        let kappa0 = kappa0_value(n, d, mu, delta);
        Ok(Self {
            p_min,
            kappa0,
            kappa0_proof: kappa0_proof_value(n, d, mu, delta),
            beta0: beta0_value(kappa0, p_min, h_norm, tau),
            l_h: hessian_lipschitz(radius, tau),
            delta,
        })
    }
}

/// Orthonormal basis of symmetric traceless d x d matrices (dimension
/// `d(d+1)/2 - 1`): Gram-Schmidt on `E_ii - E_{i+1,i+1}`, followed by
/// `(E_ij + E_ji)/sqrt 2` for `i < j`.
pub fn traceless_basis(d: usize) -> Vec<RMat> {
    let mut basis: Vec<RMat> = Vec::new();
    for i in 0..d.saturating_sub(1) {
        let mut m = RMat::zeros(d, d);
        m[(i, i)] = 1.0;
        m[(i + 1, i + 1)] = -1.0;
        for b in &basis {
            let ip = m.dot(b);
            m -= b * ip;
        }
        let n = m.norm();
        basis.push(m / n);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..d {
        for j in (i + 1)..d {
            let mut m = RMat::zeros(d, d);
            m[(i, j)] = s;
            m[(j, i)] = s;
            basis.push(m);
        }
    }
    basis
}

/// Coordinates of a symmetric matrix in `traceless_basis` (the trace part is
/// dropped).
pub fn traceless_coords(m: &RMat, basis: &[RMat]) -> Vec<f64> {
    basis.iter().map(|b| b.dot(m)).collect()
}

/// `P_0(M) = M - tr(M)/d I`.
pub fn traceless_part(m: &RMat) -> RMat {
    let d = m.nrows();
    m - RMat::identity(d, d) * (m.trace() / d as f64)
}

fn real_codewords(codebook: &Codebook) -> Result<Vec<Vec<f64>>> {
    if codebook.streams() != 1 || !codebook.is_real() {
        return Err(Error::Unsupported("secant analysis needs a real single-stream codebook".into()));
    }
    Ok((0..codebook.len())
        .map(|i| codebook.matrix().column(i).iter().map(|z| z.re).collect())
        .collect())
}

fn outer(a: &[f64]) -> RMat {
    let d = a.len();
    RMat::from_fn(d, d, |i, j| a[i] * a[j])
}

/// Effective rank-one matrices `A_{t,i} = a a^T` for real designs.
fn effective_matrices(qs: &[CMat], codewords: &[Vec<f64>]) -> Result<Vec<Vec<RMat>>> {
    qs.iter()
        .map(|q| {
            if !is_real(q) {
                return Err(Error::Unsupported("secant analysis needs real reduction matrices".into()));
            }
            let qr = q.map(|z| z.re);
            Ok(codewords
                .iter()
                .map(|v| {
                    let a = &qr * nalgebra::DVector::from_column_slice(v);
                    outer(a.as_slice())
                })
                .collect())
        })
        .collect()
}

/// Matrix of `(1/T) sum_t V_t` on `S_0^d` in the orthonormal basis `basis`.
pub fn secant_operator(qs: &[CMat], codebook: &Codebook, basis: &[RMat]) -> Result<RMat> {
    let cw = real_codewords(codebook)?;
    let mats = effective_matrices(qs, &cw)?;
    let m = basis.len();
    let mut op = RMat::zeros(m, m);
    for at in &mats {
        let coords: Vec<Vec<f64>> = at.iter().map(|a| traceless_coords(a, basis)).collect();
        for i in 0..at.len() {
            for j in 0..at.len() {
                if i == j {
                    continue;
                }
                let diff: Vec<f64> = coords[i].iter().zip(&coords[j]).map(|(x, y)| x - y).collect();
                for col in 0..m {
                    for row in 0..m {
                        op[(row, col)] += diff[row] * diff[col];
                    }
                }
            }
        }
    }
    Ok(op / qs.len() as f64)
}

/// `(1/T) sum_t sum_{i,j} <A_{t,i} - A_{t,j}, M>^2` by direct enumeration.
pub fn secant_quadratic(qs: &[CMat], codebook: &Codebook, m: &RMat) -> Result<f64> {
    let cw = real_codewords(codebook)?;
    let mats = effective_matrices(qs, &cw)?;
    let mut total = 0.0;
    for at in &mats {
        let ips: Vec<f64> = at.iter().map(|a| a.dot(m)).collect();
        for x in &ips {
            for y in &ips {
                total += (x - y).powi(2);
            }
        }
    }
    Ok(total / qs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecantReport {
    /// Smallest eigenvalue of the averaged operator on `S_0^d`.
    pub operator_min: f64,
    /// Smallest secant ratio over the random trial points.
    pub random_min: f64,
    /// Largest violation of `ratio >= operator_min ||P_0 D||^2 / ||D||^2`
    /// over the trial points (non-positive when consistent).
    pub max_violation: f64,
    pub trials_used: usize,
    /// `(1/m) sum_{i,j} ||v_i v_i^T - v_j v_j^T||_F^2`.
    pub mu_v: f64,
    pub kappa0: f64,
    pub kappa0_proof: f64,
    /// `operator_min (1 - 1/d)`, a certified lower bound on every ratio.
    pub certified: f64,
}

/// Evaluates the secant ratio `(1/T) sum <A_i - A_j, D>^2 / ||D||^2`,
/// `D = x x^T - h h^T`, at random `x` and compares it with the smallest
/// eigenvalue of the averaged operator.
///
/// Since every `A_i - A_j` is traceless, the ratio equals
/// `<V P_0 D, P_0 D> / ||D||^2`, which is at least
/// `operator_min ||P_0 D||^2 / ||D||^2 >= operator_min (1 - 1/d)`.
pub fn certify_secant<R: Rng + ?Sized>(
    qs: &[CMat],
    codebook: &Codebook,
    h: &[f64],
    trials: usize,
    delta: f64,
    rng: &mut R,
) -> Result<SecantReport> {
    if qs.is_empty() {
        return Err(Error::InvalidArgument("need at least one reduction matrix".into()));
    }
    let d = qs[0].nrows();
    if h.len() != d {
        return Err(Error::Shape(format!("h has length {}, expected {d}", h.len())));
    }
    let basis = traceless_basis(d);
    let op = secant_operator(qs, codebook, &basis)?;
    let operator_min = if basis.is_empty() {
        0.0
    } else {
        *sym_eigen(&op).0.last().expect("non-empty")
    };
    let hh = outer(h);
    let h_norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut random_min = f64::INFINITY;
    let mut max_violation = f64::NEG_INFINITY;
    let mut used = 0;
    for _ in 0..trials {
        let scale = h_norm.max(1.0) * rng.random_range(0.2..2.0);
        let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v *= scale / xn);
        let delta_m = outer(&x) - &hh;
        let dn2 = delta_m.norm_squared();
        if dn2 <= 1e-20 * h_norm.powi(4).max(1.0) {
            // x = +-h gives 0/0.
            continue;
        }
        used += 1;
        let ratio = secant_quadratic(qs, codebook, &delta_m)? / dn2;
        random_min = random_min.min(ratio);
        let p0 = traceless_part(&delta_m).norm_squared();
        max_violation = max_violation.max(operator_min * p0 / dn2 - ratio);
    }
    let cw = real_codewords(codebook)?;
    let mu_v = mu_v_value(&cw, d);
    let mu = codebook.coherence().min(1.0 - 1e-15);
    Ok(SecantReport {
        operator_min,
        random_min,
        max_violation,
        trials_used: used,
        mu_v,
        kappa0: kappa0_value(codebook.len(), d, mu, delta),
        kappa0_proof: kappa0_proof_value(codebook.len(), d, mu, delta),
        certified: operator_min * (1.0 - 1.0 / d as f64),
    })
}

/// `||v_i v_i^T - v_j v_j^T||_F^2` evaluated directly.
pub fn pair_distance_sq(vi: &[f64], vj: &[f64]) -> f64 {
    (outer(vi) - outer(vj)).norm_squared()
}

fn mu_v_value(codewords: &[Vec<f64>], d: usize) -> f64 {
    let m = (d * (d + 1) / 2).saturating_sub(1);
    if m == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for vi in codewords {
        for vj in codewords {
            total += pair_distance_sq(vi, vj);
        }
    }
    total / m as f64
}

/// `mu_V` for a real single-stream codebook embedded in dimension `d`.
pub fn mu_v(codebook: &Codebook, d: usize) -> Result<f64> {
    Ok(mu_v_value(&real_codewords(codebook)?, d))
}

/// Uniform point on the unit sphere in R^d.
pub fn sphere_sample<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn kd(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// `E[u_i u_j u_k u_l]` for `u` uniform on the sphere.
pub fn sphere_fourth_moment(d: usize, i: usize, j: usize, k: usize, l: usize) -> f64 {
    (kd(i, j) * kd(k, l) + kd(i, k) * kd(j, l) + kd(i, l) * kd(j, k)) / (d * (d + 2)) as f64
}

/// Worst deviation, in standard errors, of the Monte-Carlo fourth moments
/// over all monomials `i <= j <= k <= l`. Monomials with zero sample
/// variance count as exact when they match the target.
pub fn sphere_fourth_moment_check<R: Rng + ?Sized>(d: usize, samples: usize, rng: &mut R) -> f64 {
    let mut idx = Vec::new();
    for i in 0..d {
        for j in i..d {
            for k in j..d {
                for l in k..d {
                    idx.push([i, j, k, l]);
                }
            }
        }
    }
    let mut sum = vec![0.0; idx.len()];
    let mut sum2 = vec![0.0; idx.len()];
    for _ in 0..samples {
        let u = sphere_sample(d, rng);
        for (n, q) in idx.iter().enumerate() {
            let v = u[q[0]] * u[q[1]] * u[q[2]] * u[q[3]];
            sum[n] += v;
            sum2[n] += v * v;
        }
    }
    let s = samples as f64;
    let mut worst = 0.0f64;
    for (n, q) in idx.iter().enumerate() {
        let mean = sum[n] / s;
        let var = (sum2[n] / s - mean * mean).max(0.0);
        let se = (var / s).sqrt();
        let target = sphere_fourth_moment(d, q[0], q[1], q[2], q[3]);
        let dev = (mean - target).abs();
        let z = if se > 0.0 {
            dev / se
        } else if dev < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecantExpectation {
    pub mu_v: f64,
    /// Largest `|mean - mu_V| / mu_V` over the basis matrices.
    pub max_relative: f64,
    /// Largest `|mean - mu_V| / se` over the basis matrices.
    pub max_standard_errors: f64,
}

/// Averages `<V_t(M), M>` over Haar `Q` (d x p) for each orthonormal basis
/// matrix `M` of `S_0^d` and compares with `mu_V`.
pub fn secant_expectation_check<R: Rng + ?Sized>(
    codebook: &Codebook,
    d: usize,
    samples: usize,
    rng: &mut R,
) -> Result<SecantExpectation> {
    let cw = real_codewords(codebook)?;
    let p = codebook.ports();
    if p > d {
        return Err(Error::InvalidArgument(format!("codebook ports {p} exceed d = {d}")));
    }
    let basis = traceless_basis(d);
    let mu = mu_v_value(&cw, d);
    let mut sum = vec![0.0; basis.len()];
    let mut sum2 = vec![0.0; basis.len()];
    for _ in 0..samples {
        let q = haar_stiefel_real(d, p, rng);
        let mats = &effective_matrices(std::slice::from_ref(&q), &cw)?[0];
        for (b, m) in basis.iter().enumerate() {
            let ips: Vec<f64> = mats.iter().map(|a| a.dot(m)).collect();
            let mut v = 0.0;
            for x in &ips {
                for y in &ips {
                    v += (x - y).powi(2);
                }
            }
            sum[b] += v;
            sum2[b] += v * v;
        }
    }
    let s = samples as f64;
    let mut max_rel = 0.0f64;
    let mut max_se = 0.0f64;
    for b in 0..basis.len() {
        let mean = sum[b] / s;
        let var = (sum2[b] / s - mean * mean).max(0.0);
        let se = (var / s).sqrt();
        let dev = (mean - mu).abs();
        if mu > 0.0 {
            max_rel = max_rel.max(dev / mu);
        } else {
            max_rel = max_rel.max(dev);
        }
        max_se = max_se.max(if se > 0.0 {
            dev / se
        } else if dev < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        });
    }
    Ok(SecantExpectation {
        mu_v: mu,
        max_relative: max_rel,
        max_standard_errors: max_se,
    })
}

/// `||x x^T - h h^T||_F >= min(||x||, ||h||) dist(x, h)` for real vectors.
pub fn rank1_distance_bound_check(x: &[f64], h: &[f64]) -> bool {
    let (lhs, rhs) = rank1_distance_sides(x, h);
    lhs + 1e-12 * (1.0 + rhs) >= rhs
}

/// Both sides of the rank-one distance bound.
pub fn rank1_distance_sides(x: &[f64], h: &[f64]) -> (f64, f64) {
    let lhs = (outer(x) - outer(h)).norm();
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let hn = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let plus: f64 = x.iter().zip(h).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let minus: f64 = x.iter().zip(h).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
    (lhs, xn.min(hn) * plus.min(minus))
}
