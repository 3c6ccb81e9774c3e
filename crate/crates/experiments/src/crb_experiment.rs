//! MLE error versus the trace Cramér-Rao bound on Haar designs.

use pmi_core::crb::{crb, fisher};
use pmi_core::designs::{complex_gaussian, dft_codebook, haar_stiefel};
use pmi_core::likelihood::solve_mle;
use pmi_core::linalg::{c, CMat};
use pmi_core::metrics::phase_aligned_mse;
use pmi_core::model::Design;
use pmi_core::rng::stream;
use rayon::prelude::*;

use crate::output::{fit_inverse, loglog_slope, mean_stderr, sort_rows, ExperimentOutput, ResultRow};
use crate::{ExperimentConfig, Result};

const TRUTH_STREAM: u64 = 0x7e57;
const TRIAL_STREAM: u64 = 0xc7b;

/// Normalized standard complex Gaussian channel shared by all trials.
pub fn crb_truth(config: &ExperimentConfig) -> CMat {
    let mut rng = stream(config.seed, &[TRUTH_STREAM]);
    let h = complex_gaussian(config.d, 1, &mut rng);
    let n = h.norm();
    h / c(n, 0.0)
}

/// Per-round-count means used for the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbCurvePoint {
    pub rounds: usize,
    pub mse: f64,
    pub mse_stderr: f64,
    pub crb: f64,
}

fn trial(config: &ExperimentConfig, h: &CMat, rounds: usize, t: usize) -> Result<Vec<ResultRow>> {
    let seed_path = [TRIAL_STREAM, rounds as u64, t as u64];
    let mut rng = stream(config.seed, &seed_path);
    let qs = (0..rounds).map(|_| haar_stiefel(config.d, config.p, &mut rng)).collect();
    let design = Design::new(qs, dft_codebook(config.p))?;
    let problem = design.sample_problem(h, config.tau, &mut rng)?;
    let mle = config.mle_config(config.init, config.seed ^ ((t as u64) << 20) ^ rounds as u64, None);
    let sol = solve_mle(&problem, &mle, None)?;
    let bound = crb(&fisher(&design, h, config.tau)?);
    let row = |metric: &str, value: f64, flag: &str| ResultRow {
        experiment: "crb".into(),
        method: "mle".into(),
        setting: format!("d={},p={},tau={}", config.d, config.p, config.tau),
        rounds,
        trial: t,
        seed: config.seed,
        metric: metric.into(),
        value,
        flag: flag.into(),
    };
    Ok(vec![
        row("mse", phase_aligned_mse(&sol.x, h)?, ""),
        row("crb", bound.trace, if bound.deficient { "rank-deficient" } else { "" }),
        row("iterations", sol.report.iterations as f64, ""),
    ])
}

/// Mean MSE and CRB per round count, in increasing order of `T`.
pub fn crb_curve(rows: &[ResultRow]) -> Vec<CrbCurvePoint> {
    let mut ts: Vec<usize> = rows.iter().map(|r| r.rounds).collect();
    ts.sort_unstable();
    ts.dedup();
    ts.into_iter()
        .map(|t| {
            let pick = |m: &str| -> Vec<f64> {
                rows.iter()
                    .filter(|r| r.rounds == t && r.metric == m && r.flag.is_empty())
                    .map(|r| r.value)
                    .collect()
            };
            let (mse, mse_stderr) = mean_stderr(&pick("mse"));
            let (crb, _) = mean_stderr(&pick("crb"));
            CrbCurvePoint {
                rounds: t,
                mse,
                mse_stderr,
                crb,
            }
        })
        .collect()
}

pub fn run_crb_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    if let Some(path) = &config.dataset {
        eprintln!("warning: the CRB experiment is synthetic; ignoring dataset {}", path.display());
    }
    let h = crb_truth(config);
    let tasks: Vec<(usize, usize)> = config
        .rounds
        .iter()
        .flat_map(|&t| (0..config.trials).map(move |k| (t, k)))
        .collect();
    let chunks: Vec<Vec<ResultRow>> = tasks
        .par_iter()
        .map(|&(t, k)| trial(config, &h, t, k))
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = chunks.into_iter().flatten().collect();
    sort_rows(&mut rows);

    let curve = crb_curve(&rows);
    let ts: Vec<f64> = curve.iter().map(|p| p.rounds as f64).collect();
    let crbs: Vec<f64> = curve.iter().map(|p| p.crb).collect();
    let mses: Vec<f64> = curve.iter().map(|p| p.mse).collect();
    let mut fit = vec![("c".to_string(), format!("{}", fit_inverse(&ts, &crbs)))];
    if curve.len() >= 2 {
        fit.push(("crb_loglog_slope".into(), format!("{}", loglog_slope(&ts, &crbs))));
        fit.push(("mse_loglog_slope".into(), format!("{}", loglog_slope(&ts, &mses))));
    }
    if let Some(last) = curve.last() {
        fit.push(("mse_over_crb_at_max_rounds".into(), format!("{}", last.mse / last.crb)));
    }
    Ok(ExperimentOutput { rows, fit })
}
