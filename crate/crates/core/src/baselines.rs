//! Comparison estimators: spectral, alternating minimization with CQI, and
//! subspace phase retrieval (Wirtinger Flow / Amplitude Flow).

use rand::Rng;

use crate::designs::haar_stiefel;
use crate::linalg::{c, complement_basis, hermitian_eigen, solve_hermitian_psd, CMat, C64};
use crate::metrics::procrustes_rel_change;
use crate::model::{EstimationProblem, FeedbackRound};
use crate::optim::{descend, DescentSettings};
use crate::{Error, Result};

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrVariant {
    Wirtinger,
    Amplitude,
    /// Run both and keep the one with the lower amplitude loss.
    BestOfBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineInit {
    Spectral,
    Random,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub lambda_am: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub pr_variant: PrVariant,
    pub init: BaselineInit,
}

impl BaselineConfig {
    /// Defaults per stream count: `lambda_am = 1` for one stream, `100` for
    /// more; spectral init for one stream and random init otherwise.
    pub fn for_streams(r: usize) -> Self {
        Self {
            lambda_am: if r <= 1 { 1.0 } else { 100.0 },
            max_iters: 100,
            rel_tol: 1e-3,
            pr_variant: PrVariant::BestOfBoth,
            init: if r <= 1 {
                BaselineInit::Spectral
            } else {
                BaselineInit::Random
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda_am >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_am must be >= 0, got {}", self.lambda_am)));
        }
        if self.max_iters == 0 || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument("need max_iters >= 1 and rel_tol > 0".into()));
        }
        Ok(())
    }
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self::for_streams(1)
    }
}

#[derive(Debug, Clone)]
pub struct BaselineEstimate {
    pub h: CMat,
    pub iterations: usize,
    /// Final value of the method's own objective (0 for spectral).
    pub loss: f64,
    /// Rank deficit, singular normal equations, or a zero estimate.
    pub degenerate: bool,
}

fn selected_codeword(problem: &EstimationProblem, round: &FeedbackRound) -> CMat {
    &round.q * problem.codebook().codeword(round.pmi)
}

fn cqi_values(problem: &EstimationProblem) -> Result<Vec<f64>> {
    problem
        .rounds()
        .iter()
        .enumerate()
        .map(|(t, r)| {
            r.cqi
                .map(|v| v as f64)
                .ok_or_else(|| Error::InvalidArgument(format!("round {t} carries no CQI")))
        })
        .collect()
}

/// Dominant `r` eigenvectors of `(1/T) sum_t Q_t V_I V_I^H Q_t^H`.
pub fn spectral_estimate(problem: &EstimationProblem, r: usize) -> Result<BaselineEstimate> {
    let d = problem.dim();
    if r == 0 || r > d {
        return Err(Error::InvalidArgument(format!("need 1 <= r <= {d}, got {r}")));
    }
    let mut m = CMat::zeros(d, d);
    for round in problem.rounds() {
        let a = selected_codeword(problem, round);
        m += &a * a.adjoint();
    }
    m /= c(problem.num_rounds() as f64, 0.0);
    let eig = hermitian_eigen(&m)?;
    let lmax = eig.values[0].max(0.0);
    let rank = eig.values.iter().filter(|&&v| v > RANK_TOL * lmax).count();
    Ok(BaselineEstimate {
        h: eig.vectors.columns(0, r).into_owned(),
        iterations: 0,
        loss: 0.0,
        degenerate: rank < r,
    })
}

/// `sum_t (|b_t^H x| - sqrt(eta_t))^2 + lambda ||x||^2`.
fn am_objective(bs: &[CMat], sqrt_eta: &[f64], lambda: f64, x: &CMat) -> f64 {
    let fit: f64 = bs
        .iter()
        .zip(sqrt_eta)
        .map(|(b, s)| ((b.adjoint() * x)[(0, 0)].norm() - s).powi(2))
        .sum();
    fit + lambda * x.norm_squared()
}

struct AmResult {
    x: CMat,
    iterations: usize,
    loss: f64,
    used_pinv: bool,
}

/// Alternates the phase update `phi_t = -arg(b_t^H x)` with the regularized
/// least-squares solve `(sum b b^H + lambda I) x = sum b sqrt(eta) e^{-j phi}`.
fn am_core(bs: &[CMat], sqrt_eta: &[f64], lambda: f64, x0: CMat, max_iters: usize, rel_tol: f64) -> Result<AmResult> {
    let dim = x0.nrows();
    let mut gram = CMat::identity(dim, dim) * c(lambda, 0.0);
    for b in bs {
        gram += b * b.adjoint();
    }
    let mut x = x0;
    let mut used_pinv = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut rhs = CMat::zeros(dim, 1);
        for (b, &s) in bs.iter().zip(sqrt_eta) {
            let z = (b.adjoint() * &x)[(0, 0)];
            // e^{-j phi} = e^{j arg(b^H x)}; zero residual keeps phi = 0.
            let rot = if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) };
            rhs += b * (rot * s);
        }
        let (x_new, pinv) = solve_hermitian_psd(&gram, &rhs)?;
        used_pinv |= pinv;
        let rel = if x.norm() > 0.0 {
            procrustes_rel_change(&x_new, &x)?
        } else if x_new.norm() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        x = x_new;
        if rel < rel_tol {
            break;
        }
    }
    let loss = am_objective(bs, sqrt_eta, lambda, &x);
    Ok(AmResult {
        x,
        iterations,
        loss,
        used_pinv,
    })
}

fn am_init<R: Rng + ?Sized>(
    init: BaselineInit,
    problem: &EstimationProblem,
    dim: usize,
    rng: &mut R,
) -> Result<CMat> {
    Ok(match init {
        BaselineInit::Spectral => spectral_estimate(problem, 1)?.h,
        BaselineInit::Random => haar_stiefel(dim, 1, rng),
        BaselineInit::Identity => CMat::identity(dim, 1),
    })
}

/// Single-stream AM on PMI and CQI.
pub fn am_estimate_single<R: Rng + ?Sized>(
    problem: &EstimationProblem,
    config: &BaselineConfig,
    rng: &mut R,
) -> Result<BaselineEstimate> {
    config.validate()?;
    if problem.streams() != 1 {
        return Err(Error::InvalidArgument("single-stream AM needs r = 1".into()));
    }
    let sqrt_eta: Vec<f64> = cqi_values(problem)?.iter().map(|e| e.max(0.0).sqrt()).collect();
    let bs: Vec<CMat> = problem.rounds().iter().map(|r| selected_codeword(problem, r)).collect();
    let x0 = am_init(config.init, problem, problem.dim(), rng)?;
    let res = am_core(&bs, &sqrt_eta, config.lambda_am, x0, config.max_iters, config.rel_tol)?;
    Ok(BaselineEstimate {
        degenerate: res.used_pinv || res.x.norm() == 0.0,
        h: res.x,
        iterations: res.iterations,
        loss: res.loss,
    })
}

/// Sequential multi-stream AM: stream `k` uses the `k`-th codeword column
/// and CQI `eta / r`, and is solved in an orthonormal basis `P_k` of the
/// complement of the streams already found.
pub fn am_estimate_multi<R: Rng + ?Sized>(
    problem: &EstimationProblem,
    r: usize,
    config: &BaselineConfig,
    rng: &mut R,
) -> Result<BaselineEstimate> {
    config.validate()?;
    if r != problem.streams() {
        return Err(Error::Shape(format!(
            "requested {r} streams, codebook has {}",
            problem.streams()
        )));
    }
    let d = problem.dim();
    if r > d {
        return Err(Error::InvalidArgument(format!("{r} streams exceed dimension {d}")));
    }
    let sqrt_eta: Vec<f64> = cqi_values(problem)?
        .iter()
        .map(|e| (e.max(0.0) / r as f64).sqrt())
        .collect();
    let mut h = CMat::zeros(d, r);
    let mut iterations = 0;
    let mut loss = 0.0;
    let mut degenerate = false;
    for k in 0..r {
        let basis = if k == 0 {
            CMat::identity(d, d)
        } else {
            complement_basis(&h.columns(0, k).into_owned())
        };
        let dim = basis.ncols();
        if dim < 1 {
            return Err(Error::InvalidArgument("orthogonal complement is empty".into()));
        }
        let bs: Vec<CMat> = problem
            .rounds()
            .iter()
            .map(|round| {
                let b = &round.q * problem.codebook().codeword(round.pmi).column(k);
                let reduced = basis.adjoint() * b;
                CMat::from_column_slice(reduced.nrows(), 1, reduced.as_slice())
            })
            .collect();
        let u0 = match config.init {
            BaselineInit::Spectral if k == 0 => am_init(BaselineInit::Spectral, problem, dim, rng)?,
            BaselineInit::Spectral => {
                let mut m = CMat::zeros(dim, dim);
                for b in &bs {
                    m += b * b.adjoint();
                }
                crate::linalg::top_eigvecs(&m, 1)?.0
            }
            other => am_init(other, problem, dim, rng)?,
        };
        let res = am_core(&bs, &sqrt_eta, config.lambda_am, u0, config.max_iters, config.rel_tol)?;
        iterations += res.iterations;
        loss += res.loss;
        degenerate |= res.used_pinv;
        let col = &basis * &res.x;
        let n = col.norm();
        if n == 0.0 {
            degenerate = true;
            // Any unit vector in the complement keeps the columns orthonormal.
            h.set_column(k, &basis.column(0));
        } else {
            h.set_column(k, &(col / c(n, 0.0)).column(0));
        }
    }
    Ok(BaselineEstimate {
        h,
        iterations,
        loss,
        degenerate,
    })
}

/// Reduced data `C_t = B_k^H Q_t V_{I_t}` and CQI for the phase-retrieval losses.
struct PrData {
    cs: Vec<CMat>,
    eta: Vec<f64>,
}

impl PrData {
    fn wf_loss(&self, s: &CMat) -> f64 {
        let t = self.cs.len() as f64;
        self.cs
            .iter()
            .zip(&self.eta)
            .map(|(cm, e)| ((cm.adjoint() * s).norm_squared() - e).powi(2))
            .sum::<f64>()
            / t
    }

    /// Gradient `(4/T) sum (||C^H S||^2 - eta) C C^H S`.
    fn wf_value_grad(&self, s: &CMat) -> (f64, CMat) {
        let t = self.cs.len() as f64;
        let mut grad = CMat::zeros(s.nrows(), s.ncols());
        let mut total = 0.0;
        for (cm, e) in self.cs.iter().zip(&self.eta) {
            let y = cm.adjoint() * s;
            let resid = y.norm_squared() - e;
            total += resid * resid;
            grad += cm * y * c(4.0 * resid / t, 0.0);
        }
        (total / t, grad)
    }

    fn af_loss(&self, s: &CMat) -> f64 {
        let t = self.cs.len() as f64;
        self.cs
            .iter()
            .zip(&self.eta)
            .map(|(cm, e)| ((cm.adjoint() * s).norm() - e.max(0.0).sqrt()).powi(2))
            .sum::<f64>()
            / t
    }

    /// Gradient `(2/T) sum (1 - sqrt(eta)/||C^H S||) C C^H S`, taking the
    /// zero subgradient where `C^H S = 0`.
    fn af_value_grad(&self, s: &CMat) -> (f64, CMat) {
        let t = self.cs.len() as f64;
        let mut grad = CMat::zeros(s.nrows(), s.ncols());
        let mut total = 0.0;
        for (cm, e) in self.cs.iter().zip(&self.eta) {
            let y = cm.adjoint() * s;
            let n = y.norm();
            let se = e.max(0.0).sqrt();
            total += (n - se).powi(2);
            if n > 0.0 {
                grad += cm * y * c(2.0 * (1.0 - se / n) / t, 0.0);
            }
        }
        (total / t, grad)
    }
}

#[derive(Debug, Clone)]
pub struct SubspacePrEstimate {
    /// The returned estimate `B_k S`.
    pub estimate: BaselineEstimate,
    /// Wirtinger Flow result when it was run.
    pub wirtinger: Option<BaselineEstimate>,
    /// Amplitude Flow result when it was run.
    pub amplitude: Option<BaselineEstimate>,
}

/// Subspace phase retrieval on `S` (k x r) from the spectral initialization
/// `eigvecs(C_spec, r)`, rescaled to best fit the CQI.
pub fn subspace_pr_estimate(
    problem: &EstimationProblem,
    prior: &CMat,
    r: usize,
    config: &BaselineConfig,
) -> Result<SubspacePrEstimate> {
    config.validate()?;
    if r != problem.streams() {
        return Err(Error::Shape(format!(
            "requested {r} streams, codebook has {}",
            problem.streams()
        )));
    }
    if prior.nrows() != problem.dim() || crate::linalg::orthonormality_defect(prior) > 1e-10 {
        return Err(Error::InvalidArgument("prior must be an orthonormal d x k basis".into()));
    }
    let k = prior.ncols();
    if r > k {
        return Err(Error::InvalidArgument(format!("{r} streams exceed subspace dimension {k}")));
    }
    let eta = cqi_values(problem)?;
    let cs: Vec<CMat> = problem
        .rounds()
        .iter()
        .map(|round| prior.adjoint() * selected_codeword(problem, round))
        .collect();
    let data = PrData { cs, eta };
    let mut cspec = CMat::zeros(k, k);
    for cm in &data.cs {
        cspec += cm * cm.adjoint();
    }
    cspec /= c(data.cs.len() as f64, 0.0);
    let eig = hermitian_eigen(&cspec)?;
    let s_dir = eig.vectors.columns(0, r).into_owned();
    let lmax = eig.values[0];
    let step0 = if lmax > 0.0 { 1.0 / lmax } else { 1.0 };

    let run = |wf: bool| -> Result<BaselineEstimate> {
        // Least-squares scale of the spectral direction for each loss.
        let mut num = 0.0;
        let mut den = 0.0;
        for (cm, e) in data.cs.iter().zip(&data.eta) {
            let g = (cm.adjoint() * &s_dir).norm_squared();
            if wf {
                num += g * e;
                den += g * g;
            } else {
                num += g.sqrt() * e.max(0.0).sqrt();
                den += g;
            }
        }
        let alpha = if den > 0.0 {
            let a = num / den;
            if wf {
                a.max(0.0).sqrt()
            } else {
                a.max(0.0)
            }
        } else {
            0.0
        };
        let s0 = &s_dir * c(alpha, 0.0);
        let settings = DescentSettings {
            initial_step: step0,
            radius: None,
            max_iters: config.max_iters,
            rel_tol: config.rel_tol,
            max_halvings: 60,
        };
        let res = if wf {
            descend(|s| Ok(data.wf_loss(s)), |s| Ok(data.wf_value_grad(s)), s0, &settings)?
        } else {
            descend(|s| Ok(data.af_loss(s)), |s| Ok(data.af_value_grad(s)), s0, &settings)?
        };
        let h = prior * &res.x;
        Ok(BaselineEstimate {
            degenerate: h.norm() == 0.0,
            h,
            iterations: res.iterations,
            loss: res.value,
        })
    };

    let (wirtinger, amplitude) = match config.pr_variant {
        PrVariant::Wirtinger => (Some(run(true)?), None),
        PrVariant::Amplitude => (None, Some(run(false)?)),
        PrVariant::BestOfBoth => (Some(run(true)?), Some(run(false)?)),
    };
    let estimate = match (&wirtinger, &amplitude) {
        (Some(w), Some(a)) => {
            let sw = prior.adjoint() * &w.h;
            let sa = prior.adjoint() * &a.h;
            if data.af_loss(&sw) <= data.af_loss(&sa) {
                w.clone()
            } else {
                a.clone()
            }
        }
        (Some(w), None) => w.clone(),
        (None, Some(a)) => a.clone(),
        (None, None) => unreachable!("at least one variant runs"),
    };
    Ok(SubspacePrEstimate {
        estimate,
        wirtinger,
        amplitude,
    })
}

/// Exposes the phase-retrieval losses for testing and diagnostics:
/// `(wf_loss, af_loss)` at `S`.
pub fn subspace_pr_losses(problem: &EstimationProblem, prior: &CMat, s: &CMat) -> Result<(f64, f64)> {
    let eta = cqi_values(problem)?;
    let cs = problem
        .rounds()
        .iter()
        .map(|round| prior.adjoint() * selected_codeword(problem, round))
        .collect();
    let data = PrData { cs, eta };
    Ok((data.wf_loss(s), data.af_loss(s)))
}

/// Wirtinger Flow gradient, exposed for finite-difference checks.
pub fn subspace_pr_wf_gradient(problem: &EstimationProblem, prior: &CMat, s: &CMat) -> Result<CMat> {
    let eta = cqi_values(problem)?;
    let cs = problem
        .rounds()
        .iter()
        .map(|round| prior.adjoint() * selected_codeword(problem, round))
        .collect();
    Ok(PrData { cs, eta }.wf_value_grad(s).1)
}
