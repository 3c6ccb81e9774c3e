//! Numerical checks of the identities, bounds and rates behind the estimator.
//! Each check reports its measured value against a pinned tolerance.

use pmi_core::baselines::spectral_estimate;
use pmi_core::crb::{crb_trace, fisher, gauge_nullity, rotation_equivariance_check, RealifiedParam};
use pmi_core::designs::{
    complex_gaussian, dft_codebook, haar_stiefel, haar_stiefel_real, synthetic_channel, type1_codebook, type1_q1,
    UplinkCovariance,
};
use pmi_core::likelihood::{
    nll, nll_gradient, nll_hessian_real, population_excess_risk, relaxed_loss, solve_mle, SubspacePrior,
};
use pmi_core::linalg::{c, complexify, max_principal_angle, real_part, CMat};
use pmi_core::metrics::beam_precision;
use pmi_core::model::{round_gains, softmax, Codebook, Design, EstimationProblem, FeedbackRound};
use pmi_core::rng::{stream, Rng as StreamRng};
use pmi_core::theory::{
    beta0_value, certify_secant, hessian_lipschitz, kappa0_value, p_min_value, rank1_distance_bound_check,
    secant_expectation_check, sphere_fourth_moment_check, TheoryConstants,
};
use rand::Rng;
use rayon::prelude::*;

use crate::output::{loglog_slope, mean_stderr, ExperimentOutput, ResultRow};
use crate::{ExperimentConfig, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance band, e.g. `<= 1e-10`.
    pub band: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            band: format!("<= {limit:e}"),
            passed: value <= limit,
        }
    }

    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            band: format!(">= {limit}"),
            passed: value >= limit,
        }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            band: format!("[{lo}, {hi}]"),
            passed: (lo..=hi).contains(&value),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.6e} (band {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.band
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TheoryReport {
    pub checks: Vec<Check>,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn output(&self) -> ExperimentOutput {
        let rows = self
            .checks
            .iter()
            .enumerate()
            .map(|(i, c)| ResultRow {
                experiment: "verify-theory".into(),
                method: c.name.clone(),
                setting: c.band.clone(),
                rounds: 0,
                trial: i,
                seed: 0,
                metric: "value".into(),
                value: c.value,
                flag: if c.passed { String::new() } else { "fail".into() },
            })
            .collect();
        ExperimentOutput { rows, fit: Vec::new() }
    }
}

fn real_gaussian(rows: usize, cols: usize, rng: &mut StreamRng) -> CMat {
    complexify(&real_part(&complex_gaussian(rows, cols, rng)))
}

fn random_codebook(p: usize, n: usize, streams: usize, real: bool, rng: &mut StreamRng) -> Codebook {
    let mut v = if real {
        real_gaussian(p, n * streams, rng)
    } else {
        complex_gaussian(p, n * streams, rng)
    };
    for mut col in v.column_iter_mut() {
        let norm = col.norm();
        col /= c(norm, 0.0);
    }
    Codebook::new(v, streams).expect("unit-norm columns")
}

/// Small random problem: `d <= 6`, `N <= 5`, `T <= 4`.
pub fn random_problem(rng: &mut StreamRng, real: bool, streams: usize) -> (EstimationProblem, CMat) {
    let d = rng.random_range(2..=6usize).max(streams);
    let p = rng.random_range(streams..=d);
    let n = rng.random_range(2..=5usize);
    let t = rng.random_range(1..=4usize);
    let tau = rng.random_range(0.5..2.0);
    let cb = random_codebook(p, n, streams, real, rng);
    let rounds = (0..t)
        .map(|_| {
            let q = if real {
                haar_stiefel_real(d, p, rng)
            } else {
                haar_stiefel(d, p, rng)
            };
            FeedbackRound::new(q, rng.random_range(0..n))
        })
        .collect();
    let problem = EstimationProblem::new(rounds, cb, tau).expect("valid problem");
    let x = if real {
        real_gaussian(d, streams, rng)
    } else {
        complex_gaussian(d, streams, rng)
    };
    (problem, x)
}

fn fd_gradient(problem: &EstimationProblem, x: &CMat, eps: f64) -> CMat {
    let mut g = CMat::zeros(x.nrows(), x.ncols());
    for idx in 0..x.len() {
        for (unit, is_im) in [(c(1.0, 0.0), false), (c(0.0, 1.0), true)] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += unit * eps;
            xm[idx] -= unit * eps;
            let dv = (nll(problem, &xp).unwrap() - nll(problem, &xm).unwrap()) / (2.0 * eps);
            if is_im {
                g[idx].im = dv;
            } else {
                g[idx].re = dv;
            }
        }
    }
    g
}

/// Worst relative gradient error and worst absolute Hessian error over
/// `instances` random problems (alternating real, complex and two-stream).
pub fn gradient_checks(instances: usize, seed: u64) -> Vec<Check> {
    let mut worst_grad = 0.0f64;
    let mut worst_hess = 0.0f64;
    for i in 0..instances {
        let mut rng = stream(seed, &[0x96ad, i as u64]);
        let (real, streams) = match i % 3 {
            0 => (true, 1),
            1 => (false, 1),
            _ => (false, 2),
        };
        let (problem, x) = random_problem(&mut rng, real, streams);
        let g = nll_gradient(&problem, &x).unwrap();
        let fd = fd_gradient(&problem, &x, 1e-5);
        worst_grad = worst_grad.max((&g - &fd).norm() / g.norm().max(1e-3));
        if real && streams == 1 {
            let h = nll_hessian_real(&problem, &x).unwrap();
            let d = x.nrows();
            let eps = 1e-5;
            for j in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += c(eps, 0.0);
                xm[j] -= c(eps, 0.0);
                let gp = nll_gradient(&problem, &xp).unwrap();
                let gm = nll_gradient(&problem, &xm).unwrap();
                for k in 0..d {
                    let fd_kj = (gp[k].re - gm[k].re) / (2.0 * eps);
                    worst_hess = worst_hess.max((fd_kj - h[(k, j)]).abs());
                }
            }
        }
    }
    vec![
        Check::at_most("gradient vs finite differences (relative)", worst_grad, 1e-6),
        Check::at_most("real Hessian vs gradient differences (max abs)", worst_hess, 1e-5),
    ]
}

/// Gauge nullity and rotation equivariance of the Fisher matrix on random
/// complex designs, plus the degenerate all-identity design.
pub fn gauge_checks(designs: usize, seed: u64) -> Vec<Check> {
    let mut worst_gauge = 0.0f64;
    let mut worst_equiv = 0.0f64;
    for i in 0..designs {
        let mut rng = stream(seed, &[0x6a06e, i as u64]);
        // p = 1 makes every codeword gain equal and the Fisher matrix zero.
        let d = rng.random_range(2..=8usize);
        let p = rng.random_range(2..=d);
        let t = rng.random_range(1..=6usize);
        let cb = random_codebook(p, rng.random_range(2..=5), 1, false, &mut rng);
        let qs = (0..t).map(|_| haar_stiefel(d, p, &mut rng)).collect();
        let design = Design::new(qs, cb).unwrap();
        let h = complex_gaussian(d, 1, &mut rng);
        let tau = rng.random_range(0.1..2.0);
        let f = fisher(&design, &h, tau).unwrap();
        worst_gauge = worst_gauge.max(gauge_nullity(&f, &RealifiedParam::from_channel(&h).unwrap()));
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        worst_equiv = worst_equiv.max(rotation_equivariance_check(&design, &h, tau, phi).unwrap());
    }
    let mut rng = stream(seed, &[0x1d]);
    let d = 4;
    let ident = CMat::identity(d, d);
    let design = Design::new(vec![ident.clone(); 3], dft_codebook(d)).unwrap();
    let h = complex_gaussian(d, 1, &mut rng);
    let f = fisher(&design, &h, 0.7).unwrap();
    let g0 = gauge_nullity(&f, &RealifiedParam::from_channel(&h).unwrap());
    let e0 = rotation_equivariance_check(&design, &h, 0.7, 1.1).unwrap();
    vec![
        Check::at_most("gauge nullity (random designs)", worst_gauge, 1e-10),
        Check::at_most("rotation equivariance (random designs)", worst_equiv, 1e-10),
        Check::at_most("gauge and equivariance (identity design)", g0.max(e0), 1e-10),
    ]
}

/// Replicating a design `k` times divides the trace bound by `k`.
pub fn replication_check(seed: u64) -> Check {
    let mut worst = 0.0f64;
    for i in 0..10u64 {
        let mut rng = stream(seed, &[0x4e9, i]);
        let (d, p) = (6, 3);
        // 10 rounds of 2 informative directions each cover the 2d - 1
        // identifiable coordinates.
        let qs: Vec<CMat> = (0..10).map(|_| haar_stiefel(d, p, &mut rng)).collect();
        let h = complex_gaussian(d, 1, &mut rng);
        let base = crb_trace(&fisher(&Design::new(qs.clone(), dft_codebook(p)).unwrap(), &h, 0.3).unwrap());
        for k in [2usize, 3, 7] {
            let rep: Vec<CMat> = (0..k).flat_map(|_| qs.iter().cloned()).collect();
            let got = crb_trace(&fisher(&Design::new(rep, dft_codebook(p)).unwrap(), &h, 0.3).unwrap());
            worst = worst.max((got * k as f64 - base).abs() / base);
        }
    }
    Check::at_most("crb(k-fold replica) * k / crb (relative)", worst, 1e-10)
}

/// Direct enumeration of `(1/T) sum_t sum_i p_t(i; h) (l_t(i; x) - l_t(i; h))`.
pub fn excess_risk_enumeration(design: &Design, tau: f64, h: &CMat, x: &CMat) -> f64 {
    let mut total = 0.0;
    for q in &design.qs {
        let ph = softmax(&round_gains(q, &design.codebook, h).unwrap(), tau);
        let px = softmax(&round_gains(q, &design.codebook, x).unwrap(), tau);
        for i in 0..ph.len() {
            total += ph[i] * (-(px[i].ln()) + ph[i].ln());
        }
    }
    total / design.qs.len() as f64
}

pub fn kl_identity_check(seed: u64) -> Check {
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let mut rng = stream(seed, &[0x41, i]);
        let (problem, x) = random_problem(&mut rng, i % 2 == 0, 1);
        let design = Design::new(
            problem.rounds().iter().map(|r| r.q.clone()).collect(),
            problem.codebook().clone(),
        )
        .unwrap();
        let h = if problem.is_real() {
            real_gaussian(problem.dim(), 1, &mut rng)
        } else {
            complex_gaussian(problem.dim(), 1, &mut rng)
        };
        let got = population_excess_risk(&design, problem.tau(), &h, &x).unwrap();
        let want = excess_risk_enumeration(&design, problem.tau(), &h, &x);
        worst = worst.max((got - want).abs());
    }
    Check::at_most("population excess risk vs enumeration (abs)", worst, 1e-12)
}

pub fn loss_equivalence_check(instances: usize, seed: u64) -> Check {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = stream(seed, &[0x7e1a, i as u64]);
        let (problem, x) = random_problem(&mut rng, i % 2 == 0, 1 + i % 2);
        let lhs = relaxed_loss(&problem, &x).unwrap();
        let tau = problem.tau();
        let rhs = tau * nll(&problem, &x).unwrap() - tau * (problem.num_codewords() as f64).ln();
        worst = worst.max((lhs - rhs).abs());
    }
    Check::at_most("relaxed loss - (tau nll - tau ln N) (abs)", worst, 1e-10)
}

/// At `T = 1` with the Type-I first-round matrix: spectral and subspace-MLE
/// against the two-stage estimate `Q_1 V_I`.
/// Worst T=1 discrepancies against the two-stage beam over `samples`
/// synthetic channels with the Type-I `Q_1`: spectral principal angle and
/// subspace-MLE beam-precision gap.
pub fn structural_gaps(samples: usize, seed: u64, r: usize, mle: &ExperimentConfig) -> (f64, f64) {
    let mut worst_angle = 0.0f64;
    let mut worst_gap = 0.0f64;
    for s in 0..samples {
        let mut rng = stream(seed, &[0x5717, s as u64]);
        let (ch, sigma) = synthetic_channel(32, 4, 4, &mut rng).unwrap();
        let h = ch.matrix();
        let q1 = type1_q1(&sigma).unwrap();
        let prior = SubspacePrior::new(UplinkCovariance::new(sigma.clone(), 8).unwrap().basis()).unwrap();
        let cb = type1_codebook(r).unwrap();
        let design = Design::new(vec![q1.clone()], cb.clone()).unwrap();
        let problem = design.hard_problem(h, 1.0).unwrap();
        let first = &problem.rounds()[0];
        let two_stage = &first.q * cb.codeword(first.pmi);
        let spec = spectral_estimate(&problem, r).unwrap();
        worst_angle = worst_angle.max(max_principal_angle(&spec.h, &two_stage));
        let cfg = mle.mle_config(crate::InitKind::Identity, 0, Some(1.0));
        let sol = solve_mle(&problem, &cfg, Some(&prior)).unwrap();
        let gap = (beam_precision(&sol.x, h).unwrap() - beam_precision(&two_stage, h).unwrap()).abs();
        worst_gap = worst_gap.max(gap);
    }
    (worst_angle, worst_gap)
}

/// At T=1 the spectral estimate is the two-stage beam for any stream count;
/// the MLE reduces to it in the single-stream case.
pub fn structural_checks(samples: usize, seed: u64, mle: &ExperimentConfig) -> Vec<Check> {
    let (a1, gap1) = structural_gaps(samples, seed, 1, mle);
    let (a2, _) = structural_gaps(samples, seed, 2, mle);
    vec![
        Check::at_most("T=1 spectral vs two-stage (principal angle)", a1.max(a2), 1e-6),
        Check::at_most("T=1 subspace-MLE vs two-stage, r=1 (beam precision gap)", gap1, 1e-6),
    ]
}

pub fn constants_checks(seed: u64) -> Vec<Check> {
    let e = std::f64::consts::E;
    let pm = (p_min_value(2, 1.0, 1.0) - 1.0 / (1.0 + e)).abs();
    let k = (kappa0_value(4, 6, 0.0, 0.5) - 0.5 * 4.0 * 12.0 / 48.0).abs();
    let tc = TheoryConstants::compute(4, 6, 0.0, 0.5, 2.0, 0.5, 1.3).unwrap();
    let arith = (tc.beta0 - beta0_value(tc.kappa0, tc.p_min, 1.3, 0.5)).abs()
        + (tc.l_h - (48.0 * 8.0 / 0.125 + 24.0 * 2.0 / 0.25)).abs()
        + (hessian_lipschitz(2.0, 0.5) - tc.l_h).abs()
        + (tc.beta0 - tc.kappa0 * tc.p_min * tc.p_min * 1.69 / 0.25).abs();
    let mut min_margin = f64::INFINITY;
    for i in 0..100u64 {
        let mut rng = stream(seed, &[0x9e1, i]);
        let d = rng.random_range(2..=8usize);
        let p = rng.random_range(1..=d);
        let n = rng.random_range(2..=6usize);
        let radius = rng.random_range(0.2..3.0);
        let tau = rng.random_range(0.1..2.0);
        let cb = random_codebook(p, n, 1, false, &mut rng);
        let q = haar_stiefel(d, p, &mut rng);
        let x = complex_gaussian(d, 1, &mut rng);
        let scale = radius * rng.random_range(0.0..1.0) / x.norm();
        let probs = softmax(&round_gains(&q, &cb, &(x * c(scale, 0.0))).unwrap(), tau);
        let bound = p_min_value(n, radius, tau);
        for pr in probs {
            min_margin = min_margin.min(pr - bound);
        }
    }
    vec![
        Check::at_most("p_min(2, 1, 1) - 1/(1+e)", pm, 1e-15),
        Check::at_most("kappa0(4, 6, 0, 0.5) - formula", k, 1e-15),
        Check::at_most("beta0 and L_H arithmetic", arith, 1e-12),
        Check::at_least("min softmax probability - p_min (100 draws)", min_margin, 0.0),
    ]
}

/// Sphere fourth moments and the secant-operator expectation, in standard
/// errors.
pub fn moment_checks(sphere_samples: usize, secant_samples: usize, seed: u64) -> Vec<Check> {
    let mut rng = stream(seed, &[0x5f4]);
    let z4 = sphere_fourth_moment_check(5, sphere_samples, &mut rng);
    let cb = Codebook::new(CMat::identity(2, 2), 1).unwrap();
    let sec = secant_expectation_check(&cb, 4, secant_samples, &mut rng).unwrap();
    vec![
        Check::at_most("sphere fourth moments, d=5 (max |z|)", z4, 4.0),
        Check::at_most("secant expectation, d=4, N=2 (max |z|)", sec.max_standard_errors, 4.0),
    ]
}

fn real_design(d: usize, p: usize, n: usize, rounds: usize, rng: &mut StreamRng) -> Design {
    let qs = (0..rounds).map(|_| haar_stiefel_real(d, p, rng)).collect();
    let cb = Codebook::new(CMat::identity(p, p).columns(0, n).into_owned(), 1).unwrap();
    Design::new(qs, cb).unwrap()
}

/// Secant certification on a real Haar design, and the fraction of Haar
/// designs whose operator floor exceeds `kappa0(0.5)`.
pub fn secant_checks(config: &ExperimentConfig, reps: usize, seed: u64) -> Vec<Check> {
    let (d, p, n) = (config.d, config.p, config.n.min(config.p));
    let mut rng = stream(seed, &[0x5ec]);
    let design = real_design(d, p, n, 200, &mut rng);
    let h: Vec<f64> = real_part(&real_gaussian(d, 1, &mut rng)).iter().copied().collect();
    let rep = certify_secant(&design.qs, &design.codebook, &h, 500, 0.5, &mut rng).unwrap();
    let hits = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[0x5ec, 1, i as u64]);
            let design = real_design(d, p, n, 500, &mut rng);
            let rep = certify_secant(&design.qs, &design.codebook, &h, 0, 0.5, &mut rng).unwrap();
            (rep.operator_min >= rep.kappa0) as usize
        })
        .sum::<usize>();
    let mut rank1_ok = true;
    for _ in 0..10_000 {
        let x: Vec<f64> = real_part(&real_gaussian(d, 1, &mut rng)).iter().copied().collect();
        let y: Vec<f64> = real_part(&real_gaussian(d, 1, &mut rng)).iter().copied().collect();
        rank1_ok &= rank1_distance_bound_check(&x, &y);
    }
    vec![
        Check::at_most("secant ratio below operator floor (max violation)", rep.max_violation, 1e-8),
        Check::at_least(
            "random secant min - lambda_min (1 - 1/d)",
            rep.random_min - rep.certified,
            -1e-8,
        ),
        Check::at_least("lambda_min(V) - kappa0(0.5), T=200", rep.operator_min - rep.kappa0, 0.0),
        Check::at_least("fraction of Haar designs with lambda_min >= kappa0", hits as f64 / reps as f64, 0.95),
        Check::at_least("rank-one distance bound (10^4 pairs)", rank1_ok as u8 as f64, 1.0),
    ]
}

/// Mean population excess risk of the MLE per round count on real Haar
/// designs.
pub fn excess_risk_curve(config: &ExperimentConfig, seed: u64) -> Result<Vec<(usize, f64, f64)>> {
    let (d, p, n) = (config.d, config.p, config.n.min(config.p));
    let mut rng = stream(seed, &[0xe8]);
    let h = real_gaussian(d, 1, &mut rng);
    let h = &h / c(h.norm(), 0.0);
    let tasks: Vec<(usize, usize)> = config
        .rounds
        .iter()
        .flat_map(|&t| (0..config.trials).map(move |k| (t, k)))
        .collect();
    let risks: Vec<f64> = tasks
        .par_iter()
        .map(|&(t, k)| -> Result<f64> {
            let mut rng = stream(seed, &[0xe8, t as u64, k as u64]);
            let design = real_design(d, p, n, t, &mut rng);
            let problem = design.sample_problem(&h, config.tau, &mut rng)?;
            let cfg = config.mle_config(config.init, seed ^ k as u64, None);
            let sol = solve_mle(&problem, &cfg, None)?;
            Ok(population_excess_risk(&design, config.tau, &h, &sol.x)?)
        })
        .collect::<Result<_>>()?;
    Ok(config
        .rounds
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let chunk = &risks[i * config.trials..(i + 1) * config.trials];
            let (m, se) = mean_stderr(chunk);
            (t, m, se)
        })
        .collect())
}

pub fn excess_risk_check(config: &ExperimentConfig, seed: u64) -> Result<Check> {
    let curve = excess_risk_curve(config, seed)?;
    let ts: Vec<f64> = curve.iter().map(|x| x.0 as f64).collect();
    let ys: Vec<f64> = curve.iter().map(|x| x.1).collect();
    Ok(Check::within("excess-risk log-log slope", loglog_slope(&ts, &ys), -1.15, -0.85))
}

/// Runs every check. `config` supplies the real-mode dimensions, the round
/// counts and trial count of the excess-risk sweep, and solver settings.
pub fn run_theory_verification(config: &ExperimentConfig) -> Result<TheoryReport> {
    config.validate()?;
    let seed = config.seed;
    let mut checks = Vec::new();
    checks.extend(gradient_checks(50, seed));
    checks.extend(gauge_checks(100, seed));
    checks.push(replication_check(seed));
    checks.push(kl_identity_check(seed));
    checks.push(loss_equivalence_check(100, seed));
    let optimum = ExperimentConfig {
        max_iters: 20_000,
        rel_tol: 1e-12,
        ..ExperimentConfig::defaults(crate::ExperimentKind::Fdd)
    };
    checks.extend(structural_checks(20, seed, &optimum));
    checks.extend(constants_checks(seed));
    checks.extend(moment_checks(1_000_000, 100_000, seed));
    checks.extend(secant_checks(config, 100, seed));
    checks.push(excess_risk_check(config, seed)?);
    Ok(TheoryReport { checks })
}
