//! Beam-precision comparisons on FDD-style channels, and the temperature and
//! initialization ablations.

use pmi_core::baselines::{
    am_estimate_multi, am_estimate_single, spectral_estimate, subspace_pr_estimate, BaselineConfig,
};
use pmi_core::designs::{generate_design, type1_codebook, DesignConfig, UplinkCovariance};
use pmi_core::likelihood::{solve_mle, StopReason, SubspacePrior};
use pmi_core::linalg::CMat;
use pmi_core::metrics::beam_precision;
use pmi_core::model::{Codebook, EstimationProblem};
use pmi_core::rng::stream;
use rayon::prelude::*;

use crate::output::{sort_rows, ExperimentOutput, ResultRow};
use crate::{ChannelDataset, ExperimentConfig, ExperimentError, ExperimentKind, InitKind, Method, Result};

const FDD_STREAM: u64 = 0xfdd;

/// Channel matrices and uplink covariances, from the configured dataset or
/// the synthetic generator.
pub fn load_channels(config: &ExperimentConfig) -> Result<ChannelDataset> {
    let ds = match &config.dataset {
        Some(path) => ChannelDataset::read(path)?,
        None => ChannelDataset::synthetic(config.d, config.n_r, config.paths, config.samples, config.seed)?,
    };
    if ds.d != config.d {
        return Err(ExperimentError::Config(format!(
            "dataset has d={}, config has d={}",
            ds.d, config.d
        )));
    }
    if ds.covariances.is_none() {
        return Err(ExperimentError::Config(
            "dataset carries no uplink covariances; FDD designs need them".into(),
        ));
    }
    Ok(ds)
}

/// One MLE variant: the setting label it is reported under, its temperature
/// and its initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub tau: f64,
    pub init: InitKind,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    experiment: &'static str,
    sample: usize,
    r: usize,
    h: &'a CMat,
    prior: CMat,
    rows: Vec<ResultRow>,
}

impl Context<'_> {
    fn push(&mut self, method: &str, setting: &str, rounds: usize, metric: &str, value: f64, flag: String) {
        self.rows.push(ResultRow {
            experiment: self.experiment.into(),
            method: method.into(),
            setting: setting.into(),
            rounds,
            trial: self.sample,
            seed: self.config.seed,
            metric: metric.into(),
            value,
            flag,
        });
    }

    fn setting(&self, variant: &Variant) -> String {
        if variant.label.is_empty() {
            format!("r={}", self.r)
        } else {
            format!("r={},{}", self.r, variant.label)
        }
    }

    fn bp(&self, est: &CMat) -> (f64, String) {
        match beam_precision(est, self.h) {
            Ok(v) if v.is_finite() => (v, String::new()),
            Ok(v) => (v, "non-finite".into()),
            Err(e) => (f64::NAN, format!("error: {e}")),
        }
    }
}

fn error_flag(e: &pmi_core::Error) -> String {
    format!("error: {e}")
}

fn baseline_rows(ctx: &mut Context, method: Method, problem: &EstimationProblem, setting: &str, rounds: usize) {
    let r = ctx.r;
    let mut cfg = BaselineConfig::for_streams(r);
    cfg.max_iters = ctx.config.max_iters;
    cfg.rel_tol = ctx.config.rel_tol;
    if method.needs_cqi() && problem.rounds().iter().any(|x| x.cqi.is_none()) {
        ctx.push(method.name(), setting, rounds, "beam_precision", f64::NAN, "skipped: no cqi".into());
        return;
    }
    let mut rng = stream(ctx.config.seed, &[FDD_STREAM, 1, ctx.sample as u64, r as u64, rounds as u64]);
    match method {
        Method::TwoStage => {
            let first = &problem.rounds()[0];
            let est = &first.q * problem.codebook().codeword(first.pmi);
            let (v, f) = ctx.bp(&est);
            ctx.push(method.name(), setting, rounds, "beam_precision", v, f);
        }
        Method::Spectral => match spectral_estimate(problem, r) {
            Ok(est) => {
                let (v, f) = ctx.bp(&est.h);
                ctx.push(method.name(), setting, rounds, "beam_precision", v, f);
            }
            Err(e) => ctx.push(method.name(), setting, rounds, "beam_precision", f64::NAN, error_flag(&e)),
        },
        Method::Am => {
            let res = if r == 1 {
                am_estimate_single(problem, &cfg, &mut rng)
            } else {
                am_estimate_multi(problem, r, &cfg, &mut rng)
            };
            match res {
                Ok(est) => {
                    let (v, mut f) = ctx.bp(&est.h);
                    if est.degenerate && f.is_empty() && est.h.norm() == 0.0 {
                        f = "degenerate".into();
                    }
                    ctx.push(method.name(), setting, rounds, "beam_precision", v, f);
                }
                Err(e) => ctx.push(method.name(), setting, rounds, "beam_precision", f64::NAN, error_flag(&e)),
            }
        }
        Method::SubspacePr => match subspace_pr_estimate(problem, &ctx.prior, r, &cfg) {
            Ok(est) => {
                // The better of the two variants, as both are reported.
                let mut best: Option<(f64, String)> = None;
                for (name, cand) in [("beam_precision_wf", &est.wirtinger), ("beam_precision_af", &est.amplitude)] {
                    if let Some(c) = cand {
                        let (v, f) = ctx.bp(&c.h);
                        ctx.push(method.name(), setting, rounds, name, v, f.clone());
                        if f.is_empty() && best.as_ref().is_none_or(|b| v > b.0) {
                            best = Some((v, f));
                        }
                    }
                }
                let (v, f) = best.unwrap_or_else(|| ctx.bp(&est.estimate.h));
                ctx.push(method.name(), setting, rounds, "beam_precision", v, f);
            }
            Err(e) => ctx.push(method.name(), setting, rounds, "beam_precision", f64::NAN, error_flag(&e)),
        },
        Method::Mle | Method::SubspaceMle => unreachable!("handled by mle_rows"),
    }
}

fn mle_rows(ctx: &mut Context, method: Method, problem: &EstimationProblem, variant: &Variant, rounds: usize) -> Option<f64> {
    let setting = ctx.setting(variant);
    let init_seed = ctx.config.seed ^ ((ctx.sample as u64) << 16) ^ ((ctx.r as u64) << 8);
    let cfg = ctx.config.mle_config(variant.init, init_seed, Some(variant.tau));
    let prior = match method {
        Method::SubspaceMle => match SubspacePrior::new(ctx.prior.clone()) {
            Ok(p) => Some(p),
            Err(e) => {
                ctx.push(method.name(), &setting, rounds, "beam_precision", f64::NAN, error_flag(&e));
                return None;
            }
        },
        _ => None,
    };
    match solve_mle(problem, &cfg, prior.as_ref()) {
        Ok(sol) => {
            let (v, f) = ctx.bp(&sol.x);
            let ok = f.is_empty();
            ctx.push(method.name(), &setting, rounds, "beam_precision", v, f);
            ctx.push(method.name(), &setting, rounds, "iterations", sol.report.iterations as f64, String::new());
            let capped = (sol.report.stop == StopReason::MaxIters) as u8 as f64;
            ctx.push(method.name(), &setting, rounds, "hit_max_iters", capped, String::new());
            ok.then_some(v)
        }
        Err(e) => {
            ctx.push(method.name(), &setting, rounds, "beam_precision", f64::NAN, error_flag(&e));
            None
        }
    }
}

fn evaluate_sample(
    config: &ExperimentConfig,
    experiment: &'static str,
    ds: &ChannelDataset,
    sample: usize,
    r: usize,
    variants: &[Variant],
    improvement: bool,
) -> Result<Vec<ResultRow>> {
    let h = &ds.channels[sample];
    let sigma = &ds.covariances.as_ref().expect("checked by load_channels")[sample];
    let codebook: Codebook = type1_codebook(r)?;
    if codebook.ports() != config.p {
        return Err(ExperimentError::Config(format!(
            "the Type-I codebook has {} ports, config has p={}",
            codebook.ports(),
            config.p
        )));
    }
    let mut rng = stream(config.seed, &[FDD_STREAM, 0, sample as u64, r as u64]);
    let design_cfg = DesignConfig {
        d: config.d,
        p: config.p,
        n: codebook.len(),
        r,
        scheme: config.scheme,
        seed: config.seed,
    };
    let design = generate_design(&design_cfg, &codebook, config.max_rounds(), Some(sigma), &mut rng)?;
    let full = design.hard_problem(h, config.tau)?;
    let prior = UplinkCovariance::new(sigma.clone(), config.k)?.basis();
    let mut ctx = Context {
        config,
        experiment,
        sample,
        r,
        h,
        prior,
        rows: Vec::new(),
    };
    for &t in &config.rounds {
        let problem = EstimationProblem::new(full.rounds()[..t].to_vec(), codebook.clone(), config.tau)?;
        let mut base_values: Vec<(Method, f64)> = Vec::new();
        for &m in &config.methods {
            if matches!(m, Method::Mle | Method::SubspaceMle) {
                continue;
            }
            let start = ctx.rows.len();
            let plain = ctx.setting(&Variant {
                label: String::new(),
                tau: config.tau,
                init: config.init,
            });
            baseline_rows(&mut ctx, m, &problem, &plain, t);
            // Baselines do not depend on the variant: repeat them per label.
            let produced: Vec<ResultRow> = ctx.rows.drain(start..).collect();
            if let Some(bp) = produced.iter().find(|r| r.metric == "beam_precision" && r.flag.is_empty()) {
                base_values.push((m, bp.value));
            }
            for v in variants {
                let setting = ctx.setting(v);
                for row in &produced {
                    let mut row = row.clone();
                    row.setting = setting.clone();
                    ctx.rows.push(row);
                }
            }
        }
        let spectral = base_values.iter().find(|(m, _)| *m == Method::Spectral).map(|x| x.1);
        for v in variants {
            for &m in &config.methods {
                if !matches!(m, Method::Mle | Method::SubspaceMle) {
                    continue;
                }
                let got = mle_rows(&mut ctx, m, &problem, v, t);
                if improvement {
                    let setting = ctx.setting(v);
                    match (got, spectral) {
                        (Some(a), Some(b)) => {
                            ctx.push(m.name(), &setting, t, "improvement_over_spectral", a - b, String::new())
                        }
                        _ => ctx.push(
                            m.name(),
                            &setting,
                            t,
                            "improvement_over_spectral",
                            f64::NAN,
                            "missing operand".into(),
                        ),
                    }
                }
            }
        }
    }
    Ok(ctx.rows)
}

fn run_variants(config: &ExperimentConfig, experiment: &'static str, variants: &[Variant], improvement: bool) -> Result<ExperimentOutput> {
    config.validate()?;
    let ds = load_channels(config)?;
    let tasks: Vec<(usize, usize)> = (0..ds.len())
        .flat_map(|s| config.streams.iter().map(move |&r| (s, r)))
        .collect();
    let chunks: Vec<Vec<ResultRow>> = tasks
        .par_iter()
        .map(|&(s, r)| evaluate_sample(config, experiment, &ds, s, r, variants, improvement))
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = chunks.into_iter().flatten().collect();
    sort_rows(&mut rows);
    Ok(ExperimentOutput { rows, fit: Vec::new() })
}

pub fn run_fdd_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let variants = [Variant {
        label: String::new(),
        tau: config.tau,
        init: config.init,
    }];
    run_variants(config, "fdd", &variants, false)
}

/// Temperature or initialization sweep, depending on `config.experiment`.
pub fn run_ablation(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    match config.experiment {
        ExperimentKind::AblateTau => {
            let variants: Vec<Variant> = config
                .tau_grid
                .iter()
                .map(|&tau| Variant {
                    label: format!("tau={tau}"),
                    tau,
                    init: config.init,
                })
                .collect();
            run_variants(config, "ablate-tau", &variants, true)
        }
        ExperimentKind::AblateInit => {
            let variants: Vec<Variant> = config
                .inits
                .iter()
                .map(|&init| Variant {
                    label: format!("init={}", init.name()),
                    tau: config.tau,
                    init,
                })
                .collect();
            run_variants(config, "ablate-init", &variants, true)
        }
        other => Err(ExperimentError::Config(format!("{} is not an ablation", other.name()))),
    }
}
