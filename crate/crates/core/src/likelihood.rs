//! Softmax negative log-likelihood, its derivatives, and the projected
//! gradient MLE solver.
//!
//! Gradients are taken with respect to the real inner product
//! `Re tr(A^H B)`: for a gain `||A^H X||_F^2` the gradient is `2 A A^H X`.
//! On real data this coincides with the ordinary Euclidean gradient.

use crate::linalg::{c, is_real, real_part, top_eigvecs, CMat, RMat, C64};
use crate::optim::{descend, DescentSettings};
pub use crate::optim::StopReason;
use crate::model::{log_sum_exp, softmax, Design, EffectiveDesign, EstimationProblem};
use crate::{Error, Result};

fn check_shape(eff: &EffectiveDesign, x: &CMat) -> Result<()> {
    if x.nrows() != eff.dim() || x.ncols() != eff.streams() {
        return Err(Error::Shape(format!(
            "estimate is {}x{}, expected {}x{}",
            x.nrows(),
            x.ncols(),
            eff.dim(),
            eff.streams()
        )));
    }
    Ok(())
}

/// Per-round loss `l_t = ln sum_j exp((g_j - g_I)/tau)` and, when `grad` is
/// given, accumulation of `scale * sum_j (p_j - delta_jI) A_j A_j^H X`.
fn round_terms(
    eff: &EffectiveDesign,
    t: usize,
    tau: f64,
    x: &[C64],
    gains: &mut [f64],
    projections: &mut [C64],
    grad: Option<(&mut [C64], f64)>,
) -> f64 {
    let n = eff.codewords();
    let rr = eff.streams() * eff.streams();
    for j in 0..n {
        gains[j] = eff.project(t, j, x, &mut projections[j * rr..(j + 1) * rr]);
    }
    let sel = eff.selected(t);
    let (m, lse) = log_sum_exp(&gains[..n], tau);
    let loss = (m - gains[sel]) / tau + lse;
    if let Some((out, scale)) = grad {
        // Weights relative to the selected gain; p_I - 1 is formed from the
        // other weights so it keeps precision when p_I is close to one.
        let w: Vec<f64> = gains[..n]
            .iter()
            .map(|&g| ((g - m) / tau).exp())
            .collect();
        let z: f64 = w.iter().sum();
        let others: f64 = w.iter().enumerate().filter(|&(j, _)| j != sel).map(|(_, v)| v).sum();
        for j in 0..n {
            let coef = if j == sel { -others / z } else { w[j] / z };
            if coef != 0.0 {
                eff.accumulate(t, j, &projections[j * rr..(j + 1) * rr], scale * coef, out);
            }
        }
    }
    loss
}

/// Objective over a prepared design; `x` lives in `eff.dim()` coordinates.
#[derive(Debug, Clone)]
pub struct Objective {
    eff: EffectiveDesign,
    tau: f64,
}

impl Objective {
    pub fn new(eff: EffectiveDesign, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self { eff, tau })
    }

    pub fn from_problem(problem: &EstimationProblem) -> Self {
        Self {
            eff: EffectiveDesign::from_problem(problem),
            tau: problem.tau(),
        }
    }

    pub fn design(&self) -> &EffectiveDesign {
        &self.eff
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn value(&self, x: &CMat) -> Result<f64> {
        check_shape(&self.eff, x)?;
        let n = self.eff.codewords();
        let rr = self.eff.streams() * self.eff.streams();
        let mut gains = vec![0.0; n];
        let mut proj = vec![C64::new(0.0, 0.0); n * rr];
        let t_count = self.eff.rounds();
        let total: f64 = (0..t_count)
            .map(|t| round_terms(&self.eff, t, self.tau, x.as_slice(), &mut gains, &mut proj, None))
            .sum();
        Ok(total / t_count as f64)
    }

    pub fn value_and_gradient(&self, x: &CMat) -> Result<(f64, CMat)> {
        check_shape(&self.eff, x)?;
        let n = self.eff.codewords();
        let rr = self.eff.streams() * self.eff.streams();
        let mut gains = vec![0.0; n];
        let mut proj = vec![C64::new(0.0, 0.0); n * rr];
        let t_count = self.eff.rounds();
        let scale = 2.0 / (self.tau * t_count as f64);
        let mut grad = CMat::zeros(x.nrows(), x.ncols());
        let mut total = 0.0;
        for t in 0..t_count {
            total += round_terms(
                &self.eff,
                t,
                self.tau,
                x.as_slice(),
                &mut gains,
                &mut proj,
                Some((grad.as_mut_slice(), scale)),
            );
        }
        Ok((total / t_count as f64, grad))
    }
}

/// `L_T(x) = (1/T) sum_t ln sum_j exp((gain_{t,j} - gain_{t,I_t}) / tau)`.
pub fn nll(problem: &EstimationProblem, x: &CMat) -> Result<f64> {
    Objective::from_problem(problem).value(x)
}

/// `(1/T) sum_t (tau lse_j(gain/tau) - gain_{t,I_t}) - tau ln N`, which equals
/// `tau * nll - tau ln N`.
pub fn relaxed_loss(problem: &EstimationProblem, x: &CMat) -> Result<f64> {
    let eff = EffectiveDesign::from_problem(problem);
    check_shape(&eff, x)?;
    let tau = problem.tau();
    let n = eff.codewords();
    let mut gains = vec![0.0; n];
    let mut total = 0.0;
    for t in 0..eff.rounds() {
        eff.gains_into(t, x.as_slice(), &mut gains);
        let (m, lse) = log_sum_exp(&gains, tau);
        total += (m + tau * lse) - gains[eff.selected(t)];
    }
    Ok(total / eff.rounds() as f64 - tau * (n as f64).ln())
}

pub fn nll_gradient(problem: &EstimationProblem, x: &CMat) -> Result<CMat> {
    Ok(Objective::from_problem(problem).value_and_gradient(x)?.1)
}

/// Euclidean Hessian of the nll for real single-stream problems:
/// `-(2/tT) sum A_I + (2/tT) sum C_t + (4/t^2 T) sum S_t - (4/t^2 T) sum v_t v_t^T`
/// with `C_t = sum_i p_i A_i`, `S_t = sum_i p_i (a_i^T x)^2 A_i`,
/// `v_t = sum_i p_i A_i x`.
pub fn nll_hessian_real(problem: &EstimationProblem, x: &CMat) -> Result<RMat> {
    if problem.streams() != 1 {
        return Err(Error::Unsupported("real Hessian needs a single-stream problem".into()));
    }
    if !problem.is_real() || !is_real(x) {
        return Err(Error::Unsupported("real Hessian needs real-valued data".into()));
    }
    let eff = EffectiveDesign::from_problem(problem);
    check_shape(&eff, x)?;
    let d = eff.dim();
    let n = eff.codewords();
    let tau = problem.tau();
    let t_count = eff.rounds() as f64;
    let xr: Vec<f64> = x.iter().map(|z| z.re).collect();
    let mut hess = RMat::zeros(d, d);
    let mut gains = vec![0.0; n];
    let mut proj = vec![0.0; n];
    for t in 0..eff.rounds() {
        let a: Vec<Vec<f64>> = (0..n)
            .map(|j| eff.block(t, j).iter().map(|z| z.re).collect())
            .collect();
        for j in 0..n {
            proj[j] = a[j].iter().zip(&xr).map(|(u, v)| u * v).sum();
            gains[j] = proj[j] * proj[j];
        }
        let p = softmax(&gains, tau);
        let sel = eff.selected(t);
        let mut v = vec![0.0; d];
        for j in 0..n {
            // A_j = a a^T; C and S share the outer product.
            let w = (2.0 / tau) * p[j] + (4.0 / (tau * tau)) * p[j] * gains[j]
                - if j == sel { 2.0 / tau } else { 0.0 };
            for col in 0..d {
                for row in 0..d {
                    hess[(row, col)] += w * a[j][row] * a[j][col];
                }
            }
            for (vi, ai) in v.iter_mut().zip(&a[j]) {
                *vi += p[j] * ai * proj[j];
            }
        }
        let k = 4.0 / (tau * tau);
        for col in 0..d {
            for row in 0..d {
                hess[(row, col)] -= k * v[row] * v[col];
            }
        }
    }
    hess /= t_count;
    // Exact symmetry.
    Ok((&hess + hess.transpose()) * 0.5)
}

/// Hessian at `h` averaged over the softmax outcomes `I_t ~ p_t(.; h)`:
/// `(4/t^2 T) sum_t (S_t - v_t v_t^T)` for a real single-stream design.
pub fn expected_hessian_real(design: &Design, tau: f64, h: &CMat) -> Result<RMat> {
    if design.codebook.streams() != 1 || h.ncols() != 1 {
        return Err(Error::Unsupported("expected Hessian needs a single-stream design".into()));
    }
    if !is_real(h) || !design.codebook.is_real() || !design.qs.iter().all(is_real) {
        return Err(Error::Unsupported("expected Hessian needs real-valued data".into()));
    }
    let eff = EffectiveDesign::from_design(design);
    check_shape(&eff, h)?;
    let d = eff.dim();
    let n = eff.codewords();
    let hr: Vec<f64> = h.iter().map(|z| z.re).collect();
    let mut out = RMat::zeros(d, d);
    let mut gains = vec![0.0; n];
    let mut proj = vec![0.0; n];
    for t in 0..eff.rounds() {
        let a: Vec<Vec<f64>> = (0..n)
            .map(|j| eff.block(t, j).iter().map(|z| z.re).collect())
            .collect();
        for j in 0..n {
            proj[j] = a[j].iter().zip(&hr).map(|(u, v)| u * v).sum();
            gains[j] = proj[j] * proj[j];
        }
        let p = softmax(&gains, tau);
        let mut v = vec![0.0; d];
        for j in 0..n {
            for (vi, ai) in v.iter_mut().zip(&a[j]) {
                *vi += p[j] * ai * proj[j];
            }
        }
        // Cov_p(a_j (a_j^T h)) written with centred vectors for symmetry.
        for j in 0..n {
            let cj: Vec<f64> = a[j].iter().zip(&v).map(|(ai, vi)| ai * proj[j] - vi).collect();
            for col in 0..d {
                for row in 0..d {
                    out[(row, col)] += p[j] * cj[row] * cj[col];
                }
            }
        }
    }
    Ok(out * (4.0 / (tau * tau * eff.rounds() as f64)))
}

/// `(1/T) sum_t KL(p_t(.; h) || p_t(.; x))`, the expected-loss gap over the
/// softmax outcome distribution at `h`.
pub fn population_excess_risk(design: &Design, tau: f64, h: &CMat, x: &CMat) -> Result<f64> {
    excess_risk_effective(&EffectiveDesign::from_design(design), tau, h, x)
}

pub fn excess_risk_effective(eff: &EffectiveDesign, tau: f64, h: &CMat, x: &CMat) -> Result<f64> {
    check_shape(eff, h)?;
    check_shape(eff, x)?;
    let n = eff.codewords();
    let mut gh = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut total = 0.0;
    for t in 0..eff.rounds() {
        eff.gains_into(t, h.as_slice(), &mut gh);
        eff.gains_into(t, x.as_slice(), &mut gx);
        let ph = softmax(&gh, tau);
        let (mh, lh) = log_sum_exp(&gh, tau);
        let (mx, lx) = log_sum_exp(&gx, tau);
        let mut kl = 0.0;
        for i in 0..n {
            if ph[i] > 0.0 {
                let log_ph = (gh[i] - mh) / tau - lh;
                let log_px = (gx[i] - mx) / tau - lx;
                kl += ph[i] * (log_ph - log_px);
            }
        }
        total += kl.max(0.0);
    }
    Ok(total / eff.rounds() as f64)
}

/// Known subspace `range(B_k)` that contains the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspacePrior {
    basis: CMat,
}

impl SubspacePrior {
    pub fn new(basis: CMat) -> Result<Self> {
        let defect = crate::linalg::orthonormality_defect(&basis);
        if defect > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "subspace basis is not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(Self { basis })
    }

    pub fn basis(&self) -> &CMat {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// First `r` columns of the identity in the working coordinates.
    IdentityColumns,
    RandomStiefel { seed: u64 },
    /// Dominant eigenvectors of `sum_t A_{t,I_t} A_{t,I_t}^H`.
    Spectral,
    /// Starting point in ambient coordinates (projected onto the prior).
    Explicit(CMat),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    /// Overrides the problem's temperature when set.
    pub tau: Option<f64>,
    /// Frobenius-ball radius; `None` means `10 ||x_init||_F`.
    pub radius: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub init: Init,
    /// Maximum number of step halvings per iteration.
    pub max_halvings: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            tau: None,
            radius: None,
            max_iters: 100,
            rel_tol: 1e-3,
            init: Init::IdentityColumns,
            max_halvings: 60,
        }
    }
}

impl MleConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument("rel_tol must be positive".into()));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleReport {
    pub iterations: usize,
    pub nll: f64,
    pub rel_change: f64,
    pub stop: StopReason,
    pub radius: f64,
    /// Objective after each accepted iterate, starting with the initial point.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MleSolution {
    pub x: CMat,
    pub report: MleReport,
}

fn initial_point(eff: &EffectiveDesign, init: &Init, prior: Option<&SubspacePrior>) -> Result<CMat> {
    let dim = eff.dim();
    let r = eff.streams();
    Ok(match init {
        Init::IdentityColumns => CMat::identity(dim, r),
        Init::RandomStiefel { seed } => {
            let mut rng = crate::rng::seeded(*seed);
            crate::designs::haar_stiefel(dim, r, &mut rng)
        }
        Init::Spectral => {
            let mut m = CMat::zeros(dim, dim);
            for t in 0..eff.rounds() {
                let a = eff.block_matrix(t, eff.selected(t));
                m += &a * a.adjoint();
            }
            m /= c(eff.rounds() as f64, 0.0);
            top_eigvecs(&m, r)?.0
        }
        Init::Explicit(x0) => {
            let x = match prior {
                Some(p) => p.basis().adjoint() * x0,
                None => x0.clone(),
            };
            if x.nrows() != dim || x.ncols() != r {
                return Err(Error::Shape(format!(
                    "explicit init is {}x{}, expected {dim}x{r}",
                    x.nrows(),
                    x.ncols()
                )));
            }
            x
        }
    })
}

/// Projected gradient descent on a prepared objective, starting at `x0`,
/// with initial step `tau / (4 R^2)`.
pub fn minimize(objective: &Objective, x0: CMat, radius: f64, config: &MleConfig) -> Result<MleSolution> {
    config.validate()?;
    let settings = DescentSettings {
        initial_step: objective.tau() / (4.0 * radius * radius),
        radius: Some(radius),
        max_iters: config.max_iters,
        rel_tol: config.rel_tol,
        max_halvings: config.max_halvings,
    };
    let res = descend(|x| objective.value(x), |x| objective.value_and_gradient(x), x0, &settings)?;
    Ok(MleSolution {
        x: res.x,
        report: MleReport {
            iterations: res.iterations,
            nll: res.value,
            rel_change: res.rel_change,
            stop: res.stop,
            radius,
            trace: res.trace,
        },
    })
}

/// Constrained MLE. With a prior the search is over `S` (k x r) and the
/// returned estimate is `B_k S`.
pub fn solve_mle(
    problem: &EstimationProblem,
    config: &MleConfig,
    prior: Option<&SubspacePrior>,
) -> Result<MleSolution> {
    config.validate()?;
    let tau = config.tau.unwrap_or(problem.tau());
    if let Some(p) = prior {
        if p.basis().nrows() != problem.dim() {
            return Err(Error::Shape(format!(
                "prior has {} rows, problem dimension is {}",
                p.basis().nrows(),
                problem.dim()
            )));
        }
    }
    let eff = match prior {
        Some(p) => EffectiveDesign::from_problem_in_subspace(problem, p.basis()),
        None => EffectiveDesign::from_problem(problem),
    };
    let x0 = initial_point(&eff, &config.init, prior)?;
    let radius = config.radius.unwrap_or(10.0 * x0.norm());
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("initial point is zero and no radius given".into()));
    }
    let objective = Objective::new(eff, tau)?;
    let mut sol = minimize(&objective, x0, radius, config)?;
    if let Some(p) = prior {
        sol.x = p.basis() * &sol.x;
    }
    Ok(sol)
}

/// Real part as a column vector, for real-mode callers.
pub fn real_vector(x: &CMat) -> RMat {
    real_part(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{complex_gaussian, dft_codebook, haar_stiefel, haar_stiefel_real, haar_unitary};
    use crate::linalg::complexify;
    use crate::model::{Codebook, FeedbackRound};
    use crate::rng::seeded;

    fn random_problem(d: usize, p: usize, t: usize, r: usize, tau: f64, seed: u64) -> EstimationProblem {
        let mut rng = seeded(seed);
        let cb = if r == 1 {
            dft_codebook(p)
        } else {
            let v = haar_stiefel(p, p, &mut rng);
            Codebook::new(v, r).unwrap()
        };
        let rounds = (0..t)
            .map(|i| FeedbackRound::new(haar_stiefel(d, p, &mut rng), (i * 7 + 1) % cb.len()))
            .collect();
        EstimationProblem::new(rounds, cb, tau).unwrap()
    }

    fn real_problem(d: usize, p: usize, t: usize, tau: f64, seed: u64) -> EstimationProblem {
        let mut rng = seeded(seed);
        let v = haar_stiefel_real(p, p, &mut rng);
        let cb = Codebook::new(v, 1).unwrap();
        let rounds = (0..t)
            .map(|i| FeedbackRound::new(haar_stiefel_real(d, p, &mut rng), (i * 5 + 2) % p))
            .collect();
        EstimationProblem::new(rounds, cb, tau).unwrap()
    }

    #[test]
    fn nll_trivial_values() {
        let p = random_problem(5, 3, 4, 1, 0.7, 1);
        let ln3 = 3f64.ln();
        assert!((nll(&p, &CMat::zeros(5, 1)).unwrap() - ln3).abs() < 1e-15);
        let one = Codebook::new(CMat::from_element(1, 1, c(1.0, 0.0)), 1).unwrap();
        let mut rng = seeded(2);
        let single = EstimationProblem::new(
            vec![FeedbackRound::new(haar_stiefel(4, 1, &mut rng), 0)],
            one,
            0.3,
        )
        .unwrap();
        let x = complex_gaussian(4, 1, &mut rng);
        assert_eq!(nll(&single, &x).unwrap(), 0.0);
        assert!(nll_gradient(&single, &x).unwrap().iter().all(|z| z.norm() == 0.0));
        assert_eq!(relaxed_loss(&single, &x).unwrap(), 0.0);
        assert!(relaxed_loss(&p, &CMat::zeros(5, 1)).unwrap().abs() < 1e-15);
        assert!(nll_gradient(&p, &CMat::zeros(5, 1)).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn nll_scalar_oracle() {
        // d = 2, N = 2, T = 1: a_1 = e1, a_2 = (e1 + e2)/sqrt2, x = (1, 2), I = 1.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(s, 0.0), c(0.0, 0.0), c(s, 0.0)]);
        let cb = Codebook::new(v, 1).unwrap();
        let q = CMat::identity(2, 2);
        let p = EstimationProblem::new(vec![FeedbackRound::new(q, 1)], cb, 0.5).unwrap();
        let x = CMat::from_column_slice(2, 1, &[c(1.0, 0.0), c(2.0, 0.0)]);
        let g1: f64 = 1.0;
        let g2: f64 = (3.0 * s).powi(2);
        let expect = (((g1 - g2) / 0.5).exp() + 1.0).ln();
        assert!((nll(&p, &x).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn relaxed_identity() {
        for seed in 0..5 {
            let p = random_problem(6, 4, 7, 1, 0.3, seed);
            let mut rng = seeded(100 + seed);
            let x = complex_gaussian(6, 1, &mut rng);
            let lhs = relaxed_loss(&p, &x).unwrap();
            let rhs = p.tau() * nll(&p, &x).unwrap() - p.tau() * 4f64.ln();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences_real() {
        let p = real_problem(3, 3, 2, 0.8, 3);
        let x = CMat::from_column_slice(3, 1, &[c(0.4, 0.0), c(-1.1, 0.0), c(0.7, 0.0)]);
        let g = nll_gradient(&p, &x).unwrap();
        let h = 1e-6;
        let mut fd = CMat::zeros(3, 1);
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[(i, 0)] += c(h, 0.0);
            xm[(i, 0)] -= c(h, 0.0);
            fd[(i, 0)] = c((nll(&p, &xp).unwrap() - nll(&p, &xm).unwrap()) / (2.0 * h), 0.0);
        }
        assert!((&g - &fd).norm() / g.norm() < 1e-6);
        // Displayed real formula.
        let eff = EffectiveDesign::from_problem(&p);
        let mut direct = CMat::zeros(3, 1);
        for t in 0..2 {
            let mut gains = vec![0.0; 3];
            eff.gains_into(t, x.as_slice(), &mut gains);
            let pm = softmax(&gains, p.tau());
            let ai = eff.block_matrix(t, eff.selected(t));
            for (j, &pj) in pm.iter().enumerate() {
                let aj = eff.block_matrix(t, j);
                let diff = &aj * aj.adjoint() - &ai * ai.adjoint();
                direct += diff * &x * c(2.0 / p.tau() * pj / 2.0, 0.0);
            }
        }
        assert!((&g - &direct).norm() < 1e-12);
    }

    #[test]
    fn gradient_directional_complex_multistream() {
        let p = random_problem(6, 4, 5, 2, 0.6, 4);
        let mut rng = seeded(5);
        let x = complex_gaussian(6, 2, &mut rng);
        let g = nll_gradient(&p, &x).unwrap();
        for _ in 0..5 {
            let dir = complex_gaussian(6, 2, &mut rng);
            let h = 1e-6;
            let fd = (nll(&p, &(&x + &dir * c(h, 0.0))).unwrap() - nll(&p, &(&x - &dir * c(h, 0.0))).unwrap()) / (2.0 * h);
            let ip: f64 = g.iter().zip(dir.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            assert!((fd - ip).abs() <= 1e-6 * ip.abs().max(1e-3), "{fd} vs {ip}");
        }
    }

    #[test]
    fn unitary_invariance_and_covariance() {
        let p = random_problem(6, 4, 5, 2, 0.6, 6);
        let mut rng = seeded(7);
        let x = complex_gaussian(6, 2, &mut rng);
        let u = haar_unitary(2, &mut rng);
        let xu = &x * &u;
        assert!((nll(&p, &x).unwrap() - nll(&p, &xu).unwrap()).abs() < 1e-10);
        let gx = nll_gradient(&p, &x).unwrap() * &u;
        let gxu = nll_gradient(&p, &xu).unwrap();
        assert!((gx - gxu).norm() < 1e-10);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let p = real_problem(4, 3, 6, 0.5, 8);
        let x = CMat::from_column_slice(4, 1, &[c(0.5, 0.0), c(-0.2, 0.0), c(0.9, 0.0), c(0.1, 0.0)]);
        let hess = nll_hessian_real(&p, &x).unwrap();
        assert!((&hess - hess.transpose()).amax() < 1e-12);
        let h = 1e-5;
        for i in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[(i, 0)] += c(h, 0.0);
            xm[(i, 0)] -= c(h, 0.0);
            let col = (nll_gradient(&p, &xp).unwrap() - nll_gradient(&p, &xm).unwrap()) / c(2.0 * h, 0.0);
            for j in 0..4 {
                assert!((hess[(j, i)] - col[(j, 0)].re).abs() < 1e-5);
            }
        }
        let one = Codebook::new(CMat::from_element(1, 1, c(1.0, 0.0)), 1).unwrap();
        let single = EstimationProblem::new(
            vec![FeedbackRound::new(complexify(&RMat::identity(3, 1)), 0)],
            one,
            0.4,
        )
        .unwrap();
        let h1 = nll_hessian_real(&single, &complexify(&RMat::from_element(3, 1, 0.3))).unwrap();
        assert!(h1.amax() < 1e-12);
        let cp = random_problem(4, 3, 2, 1, 0.5, 9);
        assert!(matches!(nll_hessian_real(&cp, &CMat::zeros(4, 1)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn excess_risk_enumeration() {
        let mut rng = seeded(10);
        let cb = dft_codebook(3);
        let design = Design::new((0..4).map(|_| haar_stiefel(5, 3, &mut rng)).collect(), cb.clone()).unwrap();
        let h = complex_gaussian(5, 1, &mut rng);
        let x = complex_gaussian(5, 1, &mut rng);
        let tau = 0.4;
        assert!(population_excess_risk(&design, tau, &h, &h).unwrap().abs() < 1e-14);
        let hp = &h * C64::from_polar(1.0, 1.3);
        assert!(population_excess_risk(&design, tau, &h, &hp).unwrap().abs() < 1e-12);
        // Enumeration: sum_i p_t(i;h) (l_t(i;x) - l_t(i;h)).
        let mut total = 0.0;
        for q in &design.qs {
            let gh = crate::model::round_gains(q, &cb, &h).unwrap();
            let gx = crate::model::round_gains(q, &cb, &x).unwrap();
            let ph = softmax(&gh, tau);
            for i in 0..3 {
                let li = |g: &Vec<f64>| g.iter().map(|gj| ((gj - g[i]) / tau).exp()).sum::<f64>().ln();
                total += ph[i] * (li(&gx) - li(&gh));
            }
        }
        let expect = total / 4.0;
        let got = population_excess_risk(&design, tau, &h, &x).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn solver_trivial_minimizer() {
        let one = Codebook::new(CMat::from_element(1, 1, c(1.0, 0.0)), 1).unwrap();
        let mut rng = seeded(11);
        let p = EstimationProblem::new(vec![FeedbackRound::new(haar_stiefel(4, 1, &mut rng), 0)], one, 1.0).unwrap();
        let sol = solve_mle(&p, &MleConfig::default(), None).unwrap();
        assert_eq!(sol.report.iterations, 1);
        assert_eq!(sol.report.rel_change, 0.0);
        assert_eq!(sol.report.stop, StopReason::RelTol);
    }

    #[test]
    fn solver_single_round_aligns_with_selected_codeword() {
        let mut rng = seeded(12);
        // Square Q: with d > p the component of x outside range(Q) receives
        // no gradient and only shrinks relative to the growing norm.
        let cb = dft_codebook(4);
        let q = haar_stiefel(4, 4, &mut rng);
        let p = EstimationProblem::new(vec![FeedbackRound::new(q.clone(), 2)], cb.clone(), 1.0).unwrap();
        let cfg = MleConfig {
            radius: Some(1e3),
            max_iters: 2000,
            rel_tol: 1e-9,
            init: Init::RandomStiefel { seed: 3 },
            ..MleConfig::default()
        };
        let sol = solve_mle(&p, &cfg, None).unwrap();
        let a = &q * cb.codeword(2);
        let corr = (a.adjoint() * &sol.x)[(0, 0)].norm() / sol.x.norm();
        assert!(corr > 0.99, "correlation {corr}");
        assert!(sol.report.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn solver_recovers_real_channel() {
        let mut rng = seeded(13);
        let d = 3;
        let tau = 0.5;
        let cb = {
            let v = haar_stiefel_real(3, 3, &mut rng);
            Codebook::new(v, 1).unwrap()
        };
        let h = complexify(&RMat::from_column_slice(3, 1, &[0.8, -0.5, 0.3]));
        let qs: Vec<CMat> = (0..2000).map(|_| haar_stiefel_real(d, 3, &mut rng)).collect();
        let design = Design::new(qs, cb).unwrap();
        let problem = design.sample_problem(&h, tau, &mut rng).unwrap();
        let x0 = complexify(&RMat::from_column_slice(3, 1, &[1.0, 0.0, 0.0]));
        let cfg = MleConfig {
            radius: Some(3.0),
            max_iters: 500,
            rel_tol: 1e-8,
            init: Init::Explicit(x0.clone()),
            ..MleConfig::default()
        };
        let sol = solve_mle(&problem, &cfg, None).unwrap();
        let d_hat = crate::metrics::dist(&sol.x, &h).unwrap();
        let d_init = crate::metrics::dist(&x0, &h).unwrap();
        assert!(d_hat < d_init, "{d_hat} vs {d_init}");
        assert!(sol.report.nll <= nll(&problem, &h).unwrap() + 1e-6);
        assert!(sol.report.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn subspace_solution_lies_in_prior() {
        let p = random_problem(10, 4, 6, 1, 1.0, 14);
        let mut rng = seeded(15);
        let basis = haar_stiefel(10, 5, &mut rng);
        let prior = SubspacePrior::new(basis.clone()).unwrap();
        let sol = solve_mle(&p, &MleConfig::default(), Some(&prior)).unwrap();
        let resid = &sol.x - &basis * (basis.adjoint() * &sol.x);
        assert!(resid.norm() < 1e-12);
        assert!(SubspacePrior::new(CMat::from_element(3, 1, c(1.0, 0.0))).is_err());
    }

    #[test]
    fn radius_projection_binds() {
        let p = random_problem(6, 4, 3, 1, 0.2, 16);
        let cfg = MleConfig {
            radius: Some(0.5),
            ..MleConfig::default()
        };
        let sol = solve_mle(&p, &cfg, None).unwrap();
        assert!(sol.x.norm() <= 0.5 + 1e-12);
    }
}
