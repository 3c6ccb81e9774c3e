use pmi_core::baselines::spectral_estimate;
use pmi_core::designs::{complex_gaussian, dft_codebook, haar_stiefel, haar_unitary};
use pmi_core::likelihood::{nll, nll_gradient};
use pmi_core::linalg::c;
use pmi_core::metrics::{beam_precision, dist, phase_aligned_mse, procrustes_rel_change};
use pmi_core::model::{round_gains, softmax, Codebook, EstimationProblem, FeedbackRound};
use pmi_core::rng::seeded;
use pmi_core::theory::p_min_value;
use pmi_core::CMat;
use proptest::prelude::*;

fn problem(seed: u64, d: usize, p: usize, t: usize, r: usize, tau: f64) -> EstimationProblem {
    let mut rng = seeded(seed);
    let cb = if r == 1 {
        dft_codebook(p)
    } else {
        Codebook::new(haar_stiefel(p, p, &mut rng), r).unwrap()
    };
    let rounds = (0..t)
        .map(|i| FeedbackRound::new(haar_stiefel(d, p, &mut rng), (i * 3 + seed as usize) % cb.len()))
        .collect();
    EstimationProblem::new(rounds, cb, tau).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution_above_p_min(seed in 0u64..10_000, d in 2usize..8, n in 2usize..7, tau in 0.05f64..3.0, scale in 0.01f64..1.0) {
        let mut rng = seeded(seed);
        let p = (n).min(d);
        let cb = Codebook::new(haar_stiefel(p, p, &mut rng).columns(0, p).into_owned(), 1).unwrap();
        let q = haar_stiefel(d, p, &mut rng);
        let x = complex_gaussian(d, 1, &mut rng);
        let radius = 2.0;
        let x = &x * c(radius * scale / x.norm(), 0.0);
        let probs = softmax(&round_gains(&q, &cb, &x).unwrap(), tau);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let floor = p_min_value(cb.len(), radius, tau);
        prop_assert!(probs.iter().all(|&v| v >= floor * (1.0 - 1e-12)));
    }

    #[test]
    fn nll_is_phase_invariant(seed in 0u64..10_000, phi in -3.2f64..3.2, r in 1usize..3) {
        let pr = problem(seed, 6, 4, 4, r, 0.7);
        let x = complex_gaussian(6, r, &mut seeded(seed + 1));
        let rotated = &x * c(phi.cos(), phi.sin());
        let a = nll(&pr, &x).unwrap();
        let b = nll(&pr, &rotated).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        // The gradient rotates with the iterate.
        let ga = nll_gradient(&pr, &x).unwrap() * c(phi.cos(), phi.sin());
        let gb = nll_gradient(&pr, &rotated).unwrap();
        prop_assert!((&ga - &gb).norm() <= 1e-10 * (1.0 + gb.norm()));
    }

    #[test]
    fn unitary_mixing_leaves_multi_stream_nll_unchanged(seed in 0u64..10_000) {
        let pr = problem(seed, 6, 4, 3, 2, 0.5);
        let mut rng = seeded(seed ^ 0xabc);
        let x = complex_gaussian(6, 2, &mut rng);
        let u = haar_unitary(2, &mut rng);
        let a = nll(&pr, &x).unwrap();
        let b = nll(&pr, &(&x * u)).unwrap();
        prop_assert!((a - b).abs() <= 1e-11 * a.abs().max(1.0));
    }

    #[test]
    fn beam_precision_is_bounded_and_basis_free(seed in 0u64..10_000, nr in 1usize..4, r in 1usize..3, phi in -3.2f64..3.2) {
        let mut rng = seeded(seed);
        let h = complex_gaussian(8, nr, &mut rng);
        let est = complex_gaussian(8, r, &mut rng);
        let bp = beam_precision(&est, &h).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-10).contains(&bp));
        let mixed = &est * haar_unitary(r, &mut rng) * c(2.5 * phi.cos(), 2.5 * phi.sin());
        prop_assert!((beam_precision(&mixed, &h).unwrap() - bp).abs() < 1e-10);
    }

    #[test]
    fn distance_respects_phase(seed in 0u64..10_000, phi in -3.2f64..3.2) {
        let mut rng = seeded(seed);
        let h = complex_gaussian(5, 1, &mut rng);
        let x = complex_gaussian(5, 1, &mut rng);
        let d0 = dist(&x, &h).unwrap();
        prop_assert!(d0 >= 0.0);
        prop_assert!((dist(&(&x * c(phi.cos(), phi.sin())), &h).unwrap() - d0).abs() < 1e-12);
        prop_assert!((phase_aligned_mse(&x, &h).unwrap() - d0 * d0).abs() < 1e-12 * (1.0 + d0 * d0));
        prop_assert!(dist(&h, &h).unwrap() < 1e-12);
    }

    #[test]
    fn procrustes_change_ignores_rotation(seed in 0u64..10_000, r in 1usize..4) {
        let mut rng = seeded(seed);
        let x = complex_gaussian(7, r, &mut rng);
        let u = haar_unitary(r, &mut rng);
        prop_assert!(procrustes_rel_change(&(&x * u), &x).unwrap() < 1e-12);
    }

    #[test]
    fn spectral_columns_are_orthonormal(seed in 0u64..10_000, r in 1usize..3) {
        let pr = problem(seed, 8, 4, 6, r, 1.0);
        let est = spectral_estimate(&pr, r).unwrap();
        let gram = est.h.adjoint() * &est.h;
        prop_assert!((gram - CMat::identity(r, r)).norm() < 1e-10);
    }
}
