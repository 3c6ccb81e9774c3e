//! Fisher information of the softmax PMI model in realified coordinates and
//! the trace-pseudoinverse Cramér-Rao bound.
//!
//! A channel `h` in C^d is represented by `theta = [Re h; Im h]`. The global
//! phase of `h` is unidentifiable, so `F(theta)` is singular along the gauge
//! direction `u = J theta` with `J = [[0, -I], [I, 0]]`.

use crate::linalg::{ensure_hermitian, sym_eigen, CMat, RMat};
use crate::model::{softmax, Design, EffectiveDesign};
use crate::{Error, Result};

/// `M(A) = [[Re A, -Im A], [Im A, Re A]]` for Hermitian `A`.
pub fn realify(a: &CMat) -> Result<RMat> {
    ensure_hermitian(a, "realify input")?;
    Ok(realify_unchecked(a))
}

fn realify_unchecked(a: &CMat) -> RMat {
    let d = a.nrows();
    let mut m = RMat::zeros(2 * d, 2 * d);
    for j in 0..a.ncols() {
        for i in 0..d {
            let z = a[(i, j)];
            m[(i, j)] = z.re;
            m[(i, j + d)] = -z.im;
            m[(i + d, j)] = z.im;
            m[(i + d, j + d)] = z.re;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealifiedParam {
    pub theta: Vec<f64>,
    /// Gauge direction `J theta = [-Im h; Re h]`.
    pub gauge: Vec<f64>,
}

impl RealifiedParam {
    pub fn from_channel(h: &CMat) -> Result<Self> {
        if h.ncols() != 1 {
            return Err(Error::Unsupported("realification needs a single column".into()));
        }
        let d = h.nrows();
        let mut theta = vec![0.0; 2 * d];
        let mut gauge = vec![0.0; 2 * d];
        for i in 0..d {
            theta[i] = h[(i, 0)].re;
            theta[i + d] = h[(i, 0)].im;
            gauge[i] = -h[(i, 0)].im;
            gauge[i + d] = h[(i, 0)].re;
        }
        Ok(Self { theta, gauge })
    }

    pub fn dim(&self) -> usize {
        self.theta.len() / 2
    }
}

/// `R_phi = [[cos, -sin], [sin, cos]] (x) I_d`, so `theta(e^{j phi} h) = R_phi theta(h)`.
pub fn rotation(d: usize, phi: f64) -> RMat {
    let (s, c) = phi.sin_cos();
    let mut r = RMat::zeros(2 * d, 2 * d);
    for i in 0..d {
        r[(i, i)] = c;
        r[(i + d, i + d)] = c;
        r[(i, i + d)] = -s;
        r[(i + d, i)] = s;
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub f: RMat,
    pub rank_tol: f64,
}

impl FisherMatrix {
    /// Wraps a symmetric matrix, with the default cutoff `2d eps lambda_max`.
    pub fn new(f: RMat) -> Result<Self> {
        if f.nrows() != f.ncols() || !f.nrows().is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "Fisher matrix must be 2d x 2d, got {}x{}",
                f.nrows(),
                f.ncols()
            )));
        }
        let asym = (&f - f.transpose()).amax();
        if asym > 1e-12 * f.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!("Fisher matrix is not symmetric ({asym:.3e})")));
        }
        let f = (&f + f.transpose()) * 0.5;
        let lmax = sym_eigen(&f).0.first().copied().unwrap_or(0.0).max(0.0);
        let rank_tol = f.nrows() as f64 * f64::EPSILON * lmax;
        Ok(Self { f, rank_tol })
    }

    pub fn dim(&self) -> usize {
        self.f.nrows() / 2
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            f: &self.f * k,
            rank_tol: self.rank_tol * k.abs(),
        }
    }
}

/// Per-round covariance of `g_i = M(A_i) theta` under `p(i; h)`, summed and
/// scaled by `4 / tau^2`.
pub fn fisher_effective(eff: &EffectiveDesign, h: &CMat, tau: f64) -> Result<FisherMatrix> {
    if eff.streams() != 1 || h.ncols() != 1 {
        return Err(Error::Unsupported("Fisher information is defined for single-stream feedback".into()));
    }
    if h.nrows() != eff.dim() {
        return Err(Error::Shape(format!(
            "channel has {} rows, design dimension is {}",
            h.nrows(),
            eff.dim()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let d = eff.dim();
    let n = eff.codewords();
    let hs = h.as_slice();
    let mut f = RMat::zeros(2 * d, 2 * d);
    let mut gains = vec![0.0; n];
    let mut gs = vec![vec![0.0; 2 * d]; n];
    let mut mean = vec![0.0; 2 * d];
    let mut centred = vec![0.0; 2 * d];
    for t in 0..eff.rounds() {
        for j in 0..n {
            let a = eff.block(t, j);
            let s: num_complex::Complex<f64> = a.iter().zip(hs).map(|(ai, hi)| ai.conj() * hi).sum();
            gains[j] = s.norm_sqr();
            for (k, ai) in a.iter().enumerate() {
                let v = ai * s;
                gs[j][k] = v.re;
                gs[j][k + d] = v.im;
            }
        }
        let p = softmax(&gains, tau);
        mean.iter_mut().for_each(|m| *m = 0.0);
        for j in 0..n {
            for (m, g) in mean.iter_mut().zip(&gs[j]) {
                *m += p[j] * g;
            }
        }
        for j in 0..n {
            for ((cv, g), m) in centred.iter_mut().zip(&gs[j]).zip(&mean) {
                *cv = g - m;
            }
            let w = p[j];
            for col in 0..2 * d {
                let wc = w * centred[col];
                if wc == 0.0 {
                    continue;
                }
                for row in col..2 * d {
                    f[(row, col)] += wc * centred[row];
                }
            }
        }
    }
    for col in 0..2 * d {
        for row in col..2 * d {
            let v = f[(row, col)] * 4.0 / (tau * tau);
            f[(row, col)] = v;
            f[(col, row)] = v;
        }
    }
    FisherMatrix::new(f)
}

pub fn fisher(design: &Design, h: &CMat, tau: f64) -> Result<FisherMatrix> {
    fisher_effective(&EffectiveDesign::from_design(design), h, tau)
}

/// `u^T F u / (||F|| ||u||^2)` with `u = J theta`; zero when `F` or `u` is.
pub fn gauge_nullity(fisher: &FisherMatrix, theta: &RealifiedParam) -> f64 {
    let u = RMat::from_column_slice(theta.gauge.len(), 1, &theta.gauge);
    let fnorm = fisher.f.norm();
    let unorm2 = u.norm_squared();
    if fnorm == 0.0 || unorm2 == 0.0 {
        return 0.0;
    }
    let q = (u.transpose() * &fisher.f * &u)[(0, 0)];
    q.abs() / (fnorm * unorm2)
}

/// `||F(theta_phi) - R_phi F(theta) R_phi^T|| / ||F(theta)||`.
pub fn rotation_equivariance_check(design: &Design, h: &CMat, tau: f64, phi: f64) -> Result<f64> {
    let eff = EffectiveDesign::from_design(design);
    let f0 = fisher_effective(&eff, h, tau)?;
    let rotated = h * num_complex::Complex::from_polar(1.0, phi);
    let f1 = fisher_effective(&eff, &rotated, tau)?;
    let r = rotation(h.nrows(), phi);
    let norm = f0.f.norm();
    if norm == 0.0 {
        return Ok(f1.f.norm());
    }
    Ok((&f1.f - &r * &f0.f * r.transpose()).norm() / norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbResult {
    pub trace: f64,
    /// Eigenvalues at or below the cutoff.
    pub null_dim: usize,
    /// More than the single gauge direction is unidentifiable.
    pub deficient: bool,
}

/// `tr(F^+)` with eigenvalues at or below `rank_tol` treated as zero.
pub fn crb(fisher: &FisherMatrix) -> CrbResult {
    let (values, _) = sym_eigen(&fisher.f);
    let mut trace = 0.0;
    let mut null_dim = 0;
    for &v in &values {
        if v > fisher.rank_tol && v > 0.0 {
            trace += 1.0 / v;
        } else {
            null_dim += 1;
        }
    }
    CrbResult {
        trace,
        null_dim,
        deficient: null_dim > 1,
    }
}

pub fn crb_trace(fisher: &FisherMatrix) -> f64 {
    crb(fisher).trace
}

/// Orthonormal basis `D` (2d x (2d-1)) of the complement of `u`.
pub fn gauge_complement(theta: &RealifiedParam) -> Result<RMat> {
    let n = theta.gauge.len();
    let u = RMat::from_column_slice(n, 1, &theta.gauge);
    let un = u.norm();
    if un == 0.0 {
        return Err(Error::InvalidArgument("gauge direction is zero".into()));
    }
    let u = u / un;
    let proj = RMat::identity(n, n) - &u * u.transpose();
    let (_, vecs) = sym_eigen(&proj);
    Ok(vecs.columns(0, n - 1).into_owned())
}

/// `tr((D^T F D)^{-1})`, the bound restricted to directions orthogonal to
/// the gauge.
pub fn crb_gauge_reduced(fisher: &FisherMatrix, theta: &RealifiedParam) -> Result<f64> {
    let dm = gauge_complement(theta)?;
    let reduced = dm.transpose() * &fisher.f * &dm;
    let chol = reduced.cholesky().ok_or_else(|| Error::Numerical {
        iteration: 0,
        detail: "gauge-reduced Fisher matrix is not positive definite".into(),
    })?;
    Ok(chol.inverse().trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{complex_gaussian, dft_codebook, haar_stiefel};
    use crate::linalg::c;
    use crate::model::Codebook;
    use crate::rng::seeded;
    use num_complex::Complex;

    fn random_design(d: usize, p: usize, t: usize, seed: u64) -> Design {
        let mut rng = seeded(seed);
        Design::new((0..t).map(|_| haar_stiefel(d, p, &mut rng)).collect(), dft_codebook(p)).unwrap()
    }

    #[test]
    fn realify_cases() {
        assert_eq!(realify(&CMat::identity(3, 3)).unwrap(), RMat::identity(6, 6));
        let a = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(0.0, 0.0)]);
        let m = realify(&a).unwrap();
        assert_eq!(m, m.transpose());
        let h = CMat::from_column_slice(2, 1, &[c(0.3, -0.2), c(1.0, 0.5)]);
        let th = RealifiedParam::from_channel(&h).unwrap();
        let t = RMat::from_column_slice(4, 1, &th.theta);
        let q = (t.transpose() * &m * &t)[(0, 0)];
        let direct = (h.adjoint() * &a * &h)[(0, 0)];
        assert!((q - direct.re).abs() < 1e-14 && direct.im.abs() < 1e-14);
        let mut bad = a.clone();
        bad[(0, 1)] = c(1.0, 1.0);
        assert!(realify(&bad).is_err());
    }

    #[test]
    fn realify_quadratic_form_and_spectrum() {
        let mut rng = seeded(1);
        let b = complex_gaussian(4, 4, &mut rng);
        let a = &b + b.adjoint();
        let m = realify(&a).unwrap();
        let h = complex_gaussian(4, 1, &mut rng);
        let th = RealifiedParam::from_channel(&h).unwrap();
        let t = RMat::from_column_slice(8, 1, &th.theta);
        let q = (t.transpose() * &m * &t)[(0, 0)];
        assert!((q - (h.adjoint() * &a * &h)[(0, 0)].re).abs() < 1e-12);
        let ev_c = crate::linalg::hermitian_eigen(&a).unwrap().values;
        let ev_r = sym_eigen(&m).0;
        for (k, v) in ev_c.iter().enumerate() {
            assert!((ev_r[2 * k] - v).abs() < 1e-10 && (ev_r[2 * k + 1] - v).abs() < 1e-10);
        }
    }

    #[test]
    fn fisher_trivial_zeroes() {
        let design = random_design(4, 3, 5, 2);
        let f = fisher(&design, &CMat::zeros(4, 1), 0.5).unwrap();
        assert_eq!(f.f.amax(), 0.0);
        // Identical codewords.
        let v = CMat::from_column_slice(2, 3, &[c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let mut rng = seeded(3);
        let same = Design::new(vec![haar_stiefel(4, 2, &mut rng)], Codebook::new(v, 1).unwrap()).unwrap();
        let h = complex_gaussian(4, 1, &mut rng);
        assert!(fisher(&same, &h, 0.5).unwrap().f.amax() < 1e-14);
    }

    #[test]
    fn fisher_scalar_enumeration() {
        // d = 1, N = 2, T = 1 with codewords 1 and e^{j 0.4}/... in C^2 mapped by Q = [1, 0]^T... use p = 2, d = 2.
        // Scalar oracle: d = 1 requires p = 1, so use two codewords v1 = 1, v2 = -1 (identical gains): F = 0,
        // and then a d = 2 example enumerated by hand.
        let cb = Codebook::new(CMat::from_row_slice(1, 2, &[c(1.0, 0.0), c(-1.0, 0.0)]), 1).unwrap();
        let design = Design::new(vec![CMat::identity(1, 1)], cb).unwrap();
        let h = CMat::from_element(1, 1, c(0.7, 0.2));
        assert!(fisher(&design, &h, 1.0).unwrap().f.amax() < 1e-15);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let cb2 = Codebook::new(CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(s, 0.0), c(0.0, 0.0), c(0.0, s)]), 1).unwrap();
        let design2 = Design::new(vec![CMat::identity(2, 2)], cb2.clone()).unwrap();
        let h2 = CMat::from_column_slice(2, 1, &[c(0.5, 0.1), c(-0.3, 0.8)]);
        let tau = 0.7;
        let th = RealifiedParam::from_channel(&h2).unwrap();
        let t = RMat::from_column_slice(4, 1, &th.theta);
        let gs: Vec<RMat> = (0..2)
            .map(|i| {
                let a = cb2.codeword(i);
                realify(&(&a * a.adjoint())).unwrap() * &t
            })
            .collect();
        let gains: Vec<f64> = (0..2).map(|i| (cb2.codeword(i).adjoint() * &h2)[(0, 0)].norm_sqr()).collect();
        let p = softmax(&gains, tau);
        let mean = &gs[0] * p[0] + &gs[1] * p[1];
        let second = &gs[0] * gs[0].transpose() * p[0] + &gs[1] * gs[1].transpose() * p[1];
        let expect = (second - &mean * mean.transpose()) * (4.0 / (tau * tau));
        let got = fisher(&design2, &h2, tau).unwrap();
        assert!((got.f - expect).amax() < 1e-13);
    }

    #[test]
    fn gauge_and_equivariance_sweep() {
        let mut worst_gauge = 0.0f64;
        let mut worst_rot = 0.0f64;
        for k in 0..100 {
            let d = 2 + k % 7;
            let p = 1 + k % d.min(4);
            let design = random_design(d, p, 3, 1000 + k as u64);
            let mut rng = seeded(5000 + k as u64);
            let h = complex_gaussian(d, 1, &mut rng);
            let f = fisher(&design, &h, 0.3).unwrap();
            worst_gauge = worst_gauge.max(gauge_nullity(&f, &RealifiedParam::from_channel(&h).unwrap()));
            worst_rot = worst_rot.max(rotation_equivariance_check(&design, &h, 0.3, 0.7).unwrap());
        }
        assert!(worst_gauge <= 1e-10, "{worst_gauge}");
        assert!(worst_rot <= 1e-10, "{worst_rot}");
        let design = random_design(5, 3, 4, 9);
        let h = complex_gaussian(5, 1, &mut seeded(10));
        assert!(rotation_equivariance_check(&design, &h, 0.5, 0.0).unwrap() < 1e-15);
        assert!(rotation_equivariance_check(&design, &h, 0.5, std::f64::consts::PI).unwrap() < 1e-12);
    }

    #[test]
    fn crb_small_cases() {
        let f = FisherMatrix::new(RMat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0]))).unwrap();
        let r = crb(&f);
        assert!((r.trace - 0.5).abs() < 1e-15);
        assert!(!r.deficient);
        assert!((crb_trace(&FisherMatrix::new(RMat::identity(6, 6)).unwrap()) - 6.0).abs() < 1e-12);
        let deficient = FisherMatrix::new(RMat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0, 0.0, 3.0]))).unwrap();
        assert!(crb(&deficient).deficient);
    }

    #[test]
    fn crb_matches_gauge_reduction() {
        let design = random_design(6, 4, 40, 11);
        let h = complex_gaussian(6, 1, &mut seeded(12));
        let f = fisher(&design, &h, 0.2).unwrap();
        let th = RealifiedParam::from_channel(&h).unwrap();
        let r = crb(&f);
        assert_eq!(r.null_dim, 1);
        let reduced = crb_gauge_reduced(&f, &th).unwrap();
        assert!((r.trace - reduced).abs() <= 1e-8 * reduced);
    }

    #[test]
    fn replication_divides_crb() {
        let design = random_design(5, 3, 20, 13);
        let h = complex_gaussian(5, 1, &mut seeded(14));
        let tau = 0.3;
        let base = crb_trace(&fisher(&design, &h, tau).unwrap());
        let triple = Design::new(
            (0..3).flat_map(|_| design.qs.iter().cloned()).collect(),
            design.codebook.clone(),
        )
        .unwrap();
        let tripled = crb_trace(&fisher(&triple, &h, tau).unwrap());
        assert!((tripled * 3.0 - base).abs() <= 1e-10 * base);
        let rotated = &h * Complex::from_polar(1.0, 2.2);
        let rot_crb = crb_trace(&fisher(&design, &rotated, tau).unwrap());
        assert!((rot_crb - base).abs() <= 1e-9 * base);
    }
}
