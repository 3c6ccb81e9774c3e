//! Browser demo: softmax PMI probabilities, a small MSE-vs-CRB sweep and a
//! beam-precision comparison on synthetic FDD channels.
//!
//! Results cross the boundary as flat `Float64Array`s; the layout of each is
//! documented on its export.

use pmi_core::baselines::spectral_estimate;
use pmi_core::crb::{crb, fisher};
use pmi_core::designs::{
    dft_codebook, generate_design, haar_stiefel, synthetic_channel, type1_codebook, DesignConfig, Scheme,
    UplinkCovariance,
};
use pmi_core::likelihood::{solve_mle, Init, MleConfig, SubspacePrior};
use pmi_core::linalg::c;
use pmi_core::metrics::{beam_precision, phase_aligned_mse};
use pmi_core::model::{round_gains, softmax, Design, EstimationProblem};
use pmi_core::rng::stream;
use pmi_core::{CMat, Result};
use wasm_bindgen::prelude::*;

pub const CRB_ROUNDS: [usize; 5] = [50, 100, 200, 400, 800];
pub const FDD_ROUNDS: [usize; 5] = [1, 2, 5, 10, 20];

fn unit_channel(d: usize, seed: u32) -> CMat {
    let h = pmi_core::designs::complex_gaussian(d, 1, &mut stream(seed as u64, &[1]));
    let n = h.norm();
    h / c(n, 0.0)
}

/// Gains and PMI probabilities of one round with `d = 8`, `p = N = 4`.
pub fn pmf(tau: f64, seed: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = unit_channel(8, seed);
    let q = haar_stiefel(8, 4, &mut stream(seed as u64, &[2]));
    let gains = round_gains(&q, &dft_codebook(4), &h)?;
    Ok((softmax(&gains, tau), gains))
}

/// Mean phase-aligned MSE of the MLE and the trace CRB per round count.
pub fn crb_sweep(tau: f64, trials: usize, seed: u32) -> Result<Vec<(usize, f64, f64)>> {
    let (d, p) = (8, 4);
    let h = unit_channel(d, seed);
    let cfg = MleConfig {
        init: Init::Spectral,
        max_iters: 2000,
        rel_tol: 1e-8,
        ..MleConfig::default()
    };
    CRB_ROUNDS
        .iter()
        .map(|&t| {
            let mut mse = 0.0;
            let mut bound = 0.0;
            for k in 0..trials {
                let mut rng = stream(seed as u64, &[3, t as u64, k as u64]);
                let qs = (0..t).map(|_| haar_stiefel(d, p, &mut rng)).collect();
                let design = Design::new(qs, dft_codebook(p))?;
                let problem = design.sample_problem(&h, tau, &mut rng)?;
                mse += phase_aligned_mse(&solve_mle(&problem, &cfg, None)?.x, &h)?;
                bound += crb(&fisher(&design, &h, tau)?).trace;
            }
            Ok((t, mse / trials as f64, bound / trials as f64))
        })
        .collect()
}

/// Mean beam precision of (two-stage, spectral, subspace MLE) per round count
/// on `samples` synthetic 32-antenna channels with structured designs.
pub fn fdd_compare(streams: usize, samples: usize, seed: u32) -> Result<Vec<(usize, [f64; 3])>> {
    let codebook = type1_codebook(streams)?;
    let max_t = *FDD_ROUNDS.last().unwrap();
    let mut sums = vec![[0.0; 3]; FDD_ROUNDS.len()];
    let mle_cfg = MleConfig {
        radius: Some(3.0),
        ..MleConfig::default()
    };
    for s in 0..samples {
        let mut rng = stream(seed as u64, &[4, s as u64]);
        let (channel, sigma) = synthetic_channel(32, 4, 4, &mut rng)?;
        let h = channel.matrix();
        let design_cfg = DesignConfig {
            d: 32,
            p: 8,
            n: codebook.len(),
            r: streams,
            scheme: Scheme::StructuredOuterInner,
            seed: seed as u64,
        };
        let design = generate_design(&design_cfg, &codebook, max_t, Some(&sigma), &mut rng)?;
        let full = design.hard_problem(h, 1.0)?;
        let prior = SubspacePrior::new(UplinkCovariance::new(sigma, 8)?.basis())?;
        let first = &full.rounds()[0];
        let two_stage = beam_precision(&(&first.q * codebook.codeword(first.pmi)), h)?;
        for (i, &t) in FDD_ROUNDS.iter().enumerate() {
            let problem = EstimationProblem::new(full.rounds()[..t].to_vec(), codebook.clone(), 1.0)?;
            sums[i][0] += two_stage;
            sums[i][1] += beam_precision(&spectral_estimate(&problem, streams)?.h, h)?;
            sums[i][2] += beam_precision(&solve_mle(&problem, &mle_cfg, Some(&prior))?.x, h)?;
        }
    }
    Ok(FDD_ROUNDS
        .iter()
        .zip(sums)
        .map(|(&t, s)| (t, s.map(|v| v / samples as f64)))
        .collect())
}

fn js_err(e: pmi_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn check(ok: bool, msg: &str) -> std::result::Result<(), JsError> {
    if ok {
        Ok(())
    } else {
        Err(JsError::new(msg))
    }
}

/// `[p_0, .., p_3, g_0, .., g_3]`: probabilities then gains.
#[wasm_bindgen(js_name = codewordPmf)]
pub fn codeword_pmf(tau: f64, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    check(tau > 0.0 && tau.is_finite(), "tau must be positive")?;
    let (p, g) = pmf(tau, seed).map_err(js_err)?;
    Ok(p.into_iter().chain(g).collect())
}

/// Triples `[T, mse, crb]` for each round count in 50..800.
#[wasm_bindgen(js_name = crbCurve)]
pub fn crb_curve(tau: f64, trials: u32, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    check(tau > 0.0 && tau.is_finite(), "tau must be positive")?;
    check((1..=200).contains(&trials), "trials must lie in 1..=200")?;
    let rows = crb_sweep(tau, trials as usize, seed).map_err(js_err)?;
    Ok(rows.into_iter().flat_map(|(t, m, b)| [t as f64, m, b]).collect())
}

/// Quadruples `[T, two-stage, spectral, subspace MLE]`.
#[wasm_bindgen(js_name = fddBeamPrecision)]
pub fn fdd_beam_precision(streams: u32, samples: u32, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    check(streams == 1 || streams == 2, "streams must be 1 or 2")?;
    check((1..=50).contains(&samples), "samples must lie in 1..=50")?;
    let rows = fdd_compare(streams as usize, samples as usize, seed).map_err(js_err)?;
    Ok(rows
        .into_iter()
        .flat_map(|(t, v)| [t as f64, v[0], v[1], v[2]])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_sharpens_as_tau_shrinks() {
        let (soft, gains) = pmf(10.0, 1).unwrap();
        let (sharp, _) = pmf(0.01, 1).unwrap();
        assert!((soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = gains.iter().cloned().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        assert!(sharp[best] > soft[best]);
        assert!(sharp[best] > 0.9);
    }

    #[test]
    fn crb_falls_with_rounds() {
        let rows = crb_sweep(0.1, 2, 3).unwrap();
        assert_eq!(rows.len(), CRB_ROUNDS.len());
        assert!(rows.windows(2).all(|w| w[1].2 < w[0].2));
        assert!(rows.iter().all(|r| r.1.is_finite() && r.1 >= 0.0));
    }

    #[test]
    fn fdd_rows_are_bounded() {
        let rows = fdd_compare(1, 2, 5).unwrap();
        assert!((rows[0].1[0] - rows[0].1[1]).abs() < 1e-12);
        assert!(rows.iter().all(|(_, v)| v.iter().all(|x| (0.0..=1.0 + 1e-10).contains(x))));
    }

    #[test]
    fn exports_flatten_rows() {
        assert_eq!(codeword_pmf(0.5, 0).unwrap().len(), 8);
        assert_eq!(fdd_beam_precision(2, 1, 0).unwrap().len(), 4 * FDD_ROUNDS.len());
    }
}
