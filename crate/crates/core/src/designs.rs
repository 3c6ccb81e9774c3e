//! Codebooks, reduction matrices and a small synthetic multipath channel.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::linalg::{c, ensure_hermitian, top_eigvecs, CMat, C64};
use crate::model::{Channel, Codebook, Design};
use crate::{Error, Result};

/// How the reduction matrices of rounds `t >= 1` are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Every `Q_t` Haar on the Stiefel manifold.
    HaarRandom,
    /// `Q_t = Q_out U_t` with fixed covariance-aware `Q_out`.
    StructuredOuterInner,
    /// Round 0 uses `type1_q1`; later rounds are Haar.
    Type1FirstRound,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::HaarRandom => "haar-random",
            Scheme::StructuredOuterInner => "structured-outer-inner",
            Scheme::Type1FirstRound => "type1-first-round",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar-random" | "random" => Ok(Scheme::HaarRandom),
            "structured-outer-inner" | "structured" => Ok(Scheme::StructuredOuterInner),
            "type1-first-round" | "type1" => Ok(Scheme::Type1FirstRound),
            other => Err(Error::InvalidArgument(format!("unknown design scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    pub d: usize,
    pub p: usize,
    pub n: usize,
    pub r: usize,
    pub scheme: Scheme,
    pub seed: u64,
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.p > self.d {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= p <= d, got p={} d={}",
                self.p, self.d
            )));
        }
        if self.r == 0 || self.r > self.p {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= r <= p, got r={} p={}",
                self.r, self.p
            )));
        }
        Ok(())
    }
}

/// Uplink covariance with the subspace dimension used as prior.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkCovariance {
    pub sigma: CMat,
    pub k: usize,
}

impl UplinkCovariance {
    pub fn new(sigma: CMat, k: usize) -> Result<Self> {
        ensure_hermitian(&sigma, "uplink covariance")?;
        if k == 0 || k > sigma.nrows() {
            return Err(Error::InvalidArgument(format!(
                "subspace dimension {k} outside 1..={}",
                sigma.nrows()
            )));
        }
        Ok(Self { sigma, k })
    }

    /// `B_k`: the k dominant eigenvectors.
    pub fn basis(&self) -> CMat {
        top_eigvecs(&self.sigma, self.k).expect("validated").0
    }
}

/// Unnormalized DFT matrix `F[m, n] = exp(-2 pi j m n / p)`.
pub fn dft_matrix(p: usize) -> CMat {
    CMat::from_fn(p, p, |m, n| {
        let ang = -2.0 * PI * ((m * n) % p) as f64 / p as f64;
        c(ang.cos(), ang.sin())
    })
}

/// Normalized DFT codebook, N = p single-stream codewords.
pub fn dft_codebook(p: usize) -> Codebook {
    assert!(p >= 1, "codebook needs p >= 1");
    Codebook::new(dft_matrix(p).scale(1.0 / (p as f64).sqrt()), 1).expect("DFT columns are unit norm")
}

/// I.i.d. CN(0, 1) entries.
pub fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re * s, im * s)
    })
}

/// Haar-distributed d x p matrix with orthonormal columns: Q factor of a
/// complex Gaussian matrix with the R diagonal made real-positive.
pub fn haar_stiefel<R: Rng + ?Sized>(d: usize, p: usize, rng: &mut R) -> CMat {
    assert!(p <= d, "haar_stiefel needs p <= d");
    let g = complex_gaussian(d, p, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        let rjj = r[(j, j)];
        let n = rjj.norm();
        if n > 0.0 {
            let ph = rjj / n;
            for i in 0..d {
                q[(i, j)] *= ph;
            }
        }
    }
    q
}

pub fn haar_unitary<R: Rng + ?Sized>(p: usize, rng: &mut R) -> CMat {
    haar_stiefel(p, p, rng)
}

/// Real-valued Haar design (orthonormal real columns), used by the
/// real-case analysis.
pub fn haar_stiefel_real<R: Rng + ?Sized>(d: usize, p: usize, rng: &mut R) -> CMat {
    assert!(p <= d, "haar_stiefel_real needs p <= d");
    let g = DMatrix::<f64>::from_fn(d, p, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q.map(|v| c(v, 0.0))
}

/// `Q = eigvecs(Sigma, p) U` with `U` Haar p x p.
pub fn structured_q<R: Rng + ?Sized>(sigma_ul: &CMat, p: usize, rng: &mut R) -> Result<CMat> {
    let (outer, _) = top_eigvecs(sigma_ul, p)?;
    Ok(outer * haar_unitary(p, rng))
}

/// `I_2 (x) (DFT(2) (x) DFT(2)) / 2`, the dual-polarized 8-port inner factor.
pub fn type1_inner() -> CMat {
    let f2 = dft_matrix(2);
    let f4 = f2.kronecker(&f2).scale(0.5);
    CMat::identity(2, 2).kronecker(&f4)
}

/// First-round reduction `eigvecs(Sigma, 8) * type1_inner()`.
pub fn type1_q1(sigma_ul: &CMat) -> Result<CMat> {
    if sigma_ul.nrows() < 8 {
        return Err(Error::InvalidArgument(format!(
            "type-I reduction needs d >= 8, got {}",
            sigma_ul.nrows()
        )));
    }
    let (outer, _) = top_eigvecs(sigma_ul, 8)?;
    Ok(outer * type1_inner())
}

const CO_PHASES: [C64; 4] = [
    C64::new(1.0, 0.0),
    C64::new(0.0, 1.0),
    C64::new(-1.0, 0.0),
    C64::new(0.0, -1.0),
];

/// Dual-polarized 8-port codebook in the beam domain of `type1_q1`.
///
/// Rank 1: `[e_m; phi e_m] / sqrt(2)` for 4 beams and 4 co-phases (N = 16).
/// Rank 2: columns `[e_m1; phi e_m1]` and `[e_m2; -phi e_m2]` (scaled) for
/// `m1 <= m2`, `phi in {1, j}`, keeping only `phi = 1` when `m1 = m2` (N = 16).
pub fn type1_codebook(streams: usize) -> Result<Codebook> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let col = |m: usize, phi: C64| {
        let mut v = CMat::zeros(8, 1);
        v[(m, 0)] = c(s, 0.0);
        v[(m + 4, 0)] = phi * s;
        v
    };
    let mut cols: Vec<CMat> = Vec::new();
    match streams {
        1 => {
            for m in 0..4 {
                for &phi in &CO_PHASES {
                    cols.push(col(m, phi));
                }
            }
        }
        2 => {
            for m1 in 0..4 {
                for m2 in m1..4 {
                    for &phi in &CO_PHASES[..2] {
                        if m1 == m2 && phi != CO_PHASES[0] {
                            continue;
                        }
                        cols.push(col(m1, phi));
                        cols.push(col(m2, -phi));
                    }
                }
            }
        }
        r => return Err(Error::Unsupported(format!("type-I codebook for {r} streams"))),
    }
    let mut v = CMat::zeros(8, cols.len());
    for (j, cv) in cols.iter().enumerate() {
        v.set_column(j, &cv.column(0));
    }
    Codebook::new(v, streams)
}

/// Reduction matrices for `rounds` rounds.
///
/// The structured and type-I schemes need the uplink covariance; under both,
/// round 0 is `type1_q1` when `p = 8` so that the first round matches the
/// type-I codebook. Otherwise the first round follows the scheme.
pub fn reduction_matrices<R: Rng + ?Sized>(
    config: &DesignConfig,
    rounds: usize,
    sigma_ul: Option<&CMat>,
    rng: &mut R,
) -> Result<Vec<CMat>> {
    config.validate()?;
    let mut qs = Vec::with_capacity(rounds);
    match config.scheme {
        Scheme::HaarRandom => {
            for _ in 0..rounds {
                qs.push(haar_stiefel(config.d, config.p, rng));
            }
        }
        Scheme::StructuredOuterInner | Scheme::Type1FirstRound => {
            let sigma = sigma_ul.ok_or_else(|| {
                Error::InvalidArgument(format!("scheme {} needs an uplink covariance", config.scheme.name()))
            })?;
            if rounds > 0 {
                qs.push(if config.p == 8 {
                    type1_q1(sigma)?
                } else {
                    structured_q(sigma, config.p, rng)?
                });
            }
            let (outer, _) = top_eigvecs(sigma, config.p)?;
            for _ in 1..rounds {
                qs.push(match config.scheme {
                    Scheme::StructuredOuterInner => &outer * haar_unitary(config.p, rng),
                    _ => haar_stiefel(config.d, config.p, rng),
                });
            }
        }
    }
    Ok(qs)
}

pub fn generate_design<R: Rng + ?Sized>(
    config: &DesignConfig,
    codebook: &Codebook,
    rounds: usize,
    sigma_ul: Option<&CMat>,
    rng: &mut R,
) -> Result<Design> {
    if codebook.ports() != config.p {
        return Err(Error::Shape(format!(
            "codebook has {} ports, design has p={}",
            codebook.ports(),
            config.p
        )));
    }
    Design::new(reduction_matrices(config, rounds, sigma_ul, rng)?, codebook.clone())
}

/// Half-wavelength ULA response with phase progression scaled by
/// `freq_ratio`, normalized to unit norm.
pub fn ula_steering(n: usize, angle: f64, freq_ratio: f64) -> CMat {
    let s = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, 1, |i, _| {
        let ph = PI * freq_ratio * i as f64 * angle.sin();
        c(ph.cos() * s, ph.sin() * s)
    })
}

/// Parameters of the clustered ray model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayModel {
    pub subrays: usize,
    /// Angular spread of subrays around a cluster centre, radians.
    pub spread: f64,
    /// Uplink over downlink carrier ratio applied to the covariance steering
    /// vectors; 1 keeps the uplink angles exactly reciprocal.
    pub freq_ratio: f64,
    /// Diagonal loading of the uplink covariance relative to its mean eigenvalue.
    pub loading: f64,
}

impl Default for RayModel {
    fn default() -> Self {
        Self {
            subrays: 5,
            spread: 2f64.to_radians(),
            freq_ratio: 1.0,
            loading: 1e-3,
        }
    }
}

/// Downlink channel and uplink covariance from `paths` clusters.
///
/// `H = sum g a_bs(theta) a_ue(psi)^H` over subrays, scaled to `||H||_F = 1`.
/// The covariance reuses the BS-side angles at the uplink carrier with fresh
/// exponential powers, so the prior subspace is informative but not exact.
pub fn synthetic_channel<R: Rng + ?Sized>(
    d: usize,
    n_r: usize,
    paths: usize,
    rng: &mut R,
) -> Result<(Channel, CMat)> {
    synthetic_channel_with(d, n_r, paths, RayModel::default(), rng)
}

pub fn synthetic_channel_with<R: Rng + ?Sized>(
    d: usize,
    n_r: usize,
    paths: usize,
    model: RayModel,
    rng: &mut R,
) -> Result<(Channel, CMat)> {
    if paths == 0 || d == 0 || n_r == 0 {
        return Err(Error::InvalidArgument("need d, n_r, paths >= 1".into()));
    }
    let subrays = model.subrays.max(1);
    let mut h = CMat::zeros(d, n_r);
    let mut sigma = CMat::zeros(d, d);
    for _ in 0..paths {
        let centre_bs = rng.random_range(-PI / 3.0..PI / 3.0);
        let centre_ue = rng.random_range(-PI / 2.0..PI / 2.0);
        let power: f64 = Exp1.sample(rng);
        let ul_power: f64 = Exp1.sample(rng);
        for _ in 0..subrays {
            let off: f64 = StandardNormal.sample(rng);
            let off_ue: f64 = StandardNormal.sample(rng);
            let theta = centre_bs + model.spread * off;
            let psi = centre_ue + 4.0 * model.spread * off_ue;
            let g = complex_gaussian(1, 1, rng)[(0, 0)] * (power / subrays as f64).sqrt();
            let a_bs = ula_steering(d, theta, 1.0);
            let a_ue = ula_steering(n_r, psi, 1.0);
            h += (&a_bs * a_ue.adjoint()) * g;
            let a_ul = ula_steering(d, theta, model.freq_ratio);
            sigma += (&a_ul * a_ul.adjoint()).scale(ul_power / subrays as f64);
        }
    }
    let norm = h.norm();
    if norm == 0.0 {
        return Err(Error::Numerical {
            iteration: 0,
            detail: "synthetic channel vanished".into(),
        });
    }
    h.unscale_mut(norm);
    let mean_eig = sigma.trace().re / d as f64;
    for i in 0..d {
        sigma[(i, i)] += c(model.loading * mean_eig, 0.0);
    }
    // Hermitian to round-off.
    let sigma = (&sigma + sigma.adjoint()).scale(0.5);
    Ok((Channel::new(h)?, sigma))
}

/// Fraction of `H`'s energy captured by `range(B)`: `||B^H H||^2 / ||H||^2`.
pub fn subspace_overlap(h: &CMat, basis: &CMat) -> f64 {
    (basis.adjoint() * h).norm_squared() / h.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_principal_angle, orthonormality_defect};
    use crate::rng::seeded;

    #[test]
    fn dft_small_cases() {
        let one = dft_codebook(1);
        assert_eq!(one.matrix()[(0, 0)], c(1.0, 0.0));
        let two = dft_codebook(2);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)];
        for (got, want) in two.matrix().iter().zip(expect) {
            assert!((got - want).norm() < 1e-15);
        }
        assert!(two.coherence() < 1e-15);
        let four = dft_codebook(4);
        let g = four.matrix().adjoint() * four.matrix();
        assert!((g - CMat::identity(4, 4)).norm() < 1e-12);
        assert!(four.coherence() < 1e-12);
    }

    #[test]
    fn haar_is_orthonormal() {
        let mut rng = seeded(1);
        for &(d, p) in &[(4, 2), (16, 4), (5, 5), (32, 8)] {
            let q = haar_stiefel(d, p, &mut rng);
            assert!(orthonormality_defect(&q) < 1e-10);
            for col in q.column_iter() {
                assert!((col.norm() - 1.0).abs() < 1e-12);
            }
        }
        let u = haar_unitary(6, &mut rng);
        assert!((u.determinant().norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn haar_first_entry_moment() {
        // |Q_11|^2 is Beta(1, 1) = U(0, 1) for d = 2: mean 1/2, var 1/12.
        let mut rng = seeded(77);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| haar_stiefel(2, 1, &mut rng)[(0, 0)].norm_sqr())
            .sum::<f64>()
            / n as f64;
        let se = (1.0 / 12.0 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn type1_inner_is_unitary() {
        let w = type1_inner();
        assert!((w.adjoint() * &w - CMat::identity(8, 8)).norm() < 1e-12);
    }

    #[test]
    fn type1_q1_orthonormal_and_in_top_space() {
        let q = type1_q1(&CMat::identity(10, 10)).unwrap();
        assert!(orthonormality_defect(&q) < 1e-10);
        let mut rng = seeded(4);
        let g = complex_gaussian(12, 12, &mut rng);
        let sigma = &g * g.adjoint();
        let q = type1_q1(&sigma).unwrap();
        let (top, _) = top_eigvecs(&sigma, 8).unwrap();
        let proj_q = &q * q.adjoint();
        let proj_t = &top * top.adjoint();
        assert!((proj_q - proj_t).norm() < 1e-8);
        assert!(type1_q1(&CMat::identity(6, 6)).is_err());
    }

    #[test]
    fn structured_q_spans_covariance_range() {
        let mut rng = seeded(5);
        let b = haar_stiefel(10, 3, &mut rng);
        let sigma = &b * CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(3.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)])) * b.adjoint();
        let q = structured_q(&sigma, 3, &mut rng).unwrap();
        assert!(orthonormality_defect(&q) < 1e-10);
        assert!(max_principal_angle(&q, &b) < 1e-8);
        let mut bad = sigma.clone();
        bad[(0, 1)] += c(1.0, 0.0);
        assert!(structured_q(&bad, 3, &mut rng).is_err());
    }

    #[test]
    fn type1_codebooks() {
        let cb1 = type1_codebook(1).unwrap();
        assert_eq!(cb1.len(), 16);
        assert!((cb1.coherence() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let cb2 = type1_codebook(2).unwrap();
        assert_eq!(cb2.len(), 16);
        for i in 0..16 {
            let v = cb2.codeword(i);
            assert!((v.adjoint() * &v - CMat::identity(2, 2)).norm() < 1e-12);
        }
        assert!(type1_codebook(3).is_err());
    }

    #[test]
    fn synthetic_channel_properties() {
        let mut rng = seeded(21);
        let (ch, sigma) = synthetic_channel(16, 1, 1, &mut rng).unwrap();
        assert!((ch.matrix().norm() - 1.0).abs() < 1e-12);
        assert!(ensure_hermitian(&sigma, "sigma").is_ok());
        let (ch4, _) = synthetic_channel(32, 4, 1, &mut rng).unwrap();
        assert!((ch4.matrix().norm() - 1.0).abs() < 1e-12);
        let mut total = 0.0;
        let n = 50;
        for _ in 0..n {
            let (ch, sigma) = synthetic_channel(32, 4, 4, &mut rng).unwrap();
            let (b, _) = top_eigvecs(&sigma, 8).unwrap();
            total += subspace_overlap(ch.matrix(), &b);
        }
        assert!(total / n as f64 > 0.9, "mean overlap {}", total / n as f64);
    }

    #[test]
    fn schemes_produce_valid_designs() {
        let mut rng = seeded(6);
        let (_, sigma) = synthetic_channel(32, 4, 4, &mut rng).unwrap();
        let cb = type1_codebook(1).unwrap();
        for scheme in [Scheme::HaarRandom, Scheme::StructuredOuterInner, Scheme::Type1FirstRound] {
            let cfg = DesignConfig { d: 32, p: 8, n: 16, r: 1, scheme, seed: 0 };
            let design = generate_design(&cfg, &cb, 5, Some(&sigma), &mut rng).unwrap();
            assert_eq!(design.num_rounds(), 5);
            if scheme != Scheme::HaarRandom {
                let q1 = type1_q1(&sigma).unwrap();
                assert!((&design.qs[0] - q1).norm() < 1e-12);
            }
        }
        assert_eq!("structured".parse::<Scheme>().unwrap(), Scheme::StructuredOuterInner);
    }
}
