//! Domain types and the softmax PMI feedback model.
//!
//! In round `t` the base station applies a reduction matrix `Q_t` (d x p) and
//! the user scores every codeword `V_i` (p x r) by its gain
//! `||V_i^H Q_t^H X||_F^2`. The softmax model reports index `i` with
//! probability proportional to `exp(gain_i / tau)`; the hard rule reports the
//! argmax.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::check_index;
use crate::linalg::{orthonormality_defect, svd_sorted, CMat, C64};
use crate::{Error, Result};

/// Tolerance for `Q^H Q = I` and unit-norm codewords.
pub const ORTHO_TOL: f64 = 1e-10;

/// Downlink channel, d x N_r (N_r = 1 for a single-antenna user).
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    h: CMat,
}

impl Channel {
    pub fn new(h: CMat) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::InvalidArgument("channel must be non-empty".into()));
        }
        if !crate::linalg::all_finite(&h) {
            return Err(Error::InvalidArgument("channel has non-finite entries".into()));
        }
        Ok(Self { h })
    }

    pub fn antennas(&self) -> usize {
        self.h.nrows()
    }

    pub fn receive_antennas(&self) -> usize {
        self.h.ncols()
    }

    pub fn matrix(&self) -> &CMat {
        &self.h
    }

    pub fn into_matrix(self) -> CMat {
        self.h
    }

    pub fn is_real(&self) -> bool {
        crate::linalg::is_real(&self.h)
    }
}

/// Shared codebook: `p x (N * r)` matrix whose column blocks of width `r` are
/// the codewords.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    v: CMat,
    streams: usize,
    coherence: f64,
}

impl Codebook {
    /// Validates shape and unit-norm columns, and caches the coherence.
    pub fn new(v: CMat, streams: usize) -> Result<Self> {
        if streams == 0 || v.ncols() == 0 || !v.ncols().is_multiple_of(streams) {
            return Err(Error::Shape(format!(
                "{} codebook columns are not a positive multiple of {streams} streams",
                v.ncols()
            )));
        }
        if streams > v.nrows() {
            return Err(Error::Shape(format!(
                "{streams} streams exceed {} ports",
                v.nrows()
            )));
        }
        for (j, col) in v.column_iter().enumerate() {
            let n = col.norm();
            if (n - 1.0).abs() > ORTHO_TOL {
                return Err(Error::InvalidArgument(format!(
                    "codebook column {j} has norm {n}"
                )));
            }
        }
        let mut cb = Self {
            v,
            streams,
            coherence: 0.0,
        };
        cb.coherence = cb.scan_coherence();
        Ok(cb)
    }

    /// `max_{i != j} ||V_i^H V_j||_2`; for single-stream codebooks this is
    /// `max |v_i^H v_j|`.
    fn scan_coherence(&self) -> f64 {
        let n = self.len();
        let mut mu = 0.0f64;
        for i in 0..n {
            let vi = self.codeword(i);
            for j in (i + 1)..n {
                let g = vi.adjoint() * self.codeword(j);
                let s = if self.streams == 1 {
                    g[(0, 0)].norm()
                } else {
                    svd_sorted(&g).1[0]
                };
                mu = mu.max(s);
            }
        }
        mu
    }

    /// Number of codewords N.
    pub fn len(&self) -> usize {
        self.v.ncols() / self.streams
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reduced dimension p.
    pub fn ports(&self) -> usize {
        self.v.nrows()
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn coherence(&self) -> f64 {
        self.coherence
    }

    pub fn matrix(&self) -> &CMat {
        &self.v
    }

    /// Codeword `V_i` (p x r).
    pub fn codeword(&self, i: usize) -> CMat {
        self.v.columns(i * self.streams, self.streams).into_owned()
    }

    pub fn is_real(&self) -> bool {
        crate::linalg::is_real(&self.v)
    }
}

/// One round's measurement and report.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackRound {
    pub q: CMat,
    pub pmi: usize,
    pub cqi: Option<f32>,
}

impl FeedbackRound {
    pub fn new(q: CMat, pmi: usize) -> Self {
        Self { q, pmi, cqi: None }
    }

    pub fn with_cqi(q: CMat, pmi: usize, cqi: f32) -> Self {
        Self {
            q,
            pmi,
            cqi: Some(cqi),
        }
    }
}

/// Checks `Q^H Q = I_p` and the row count.
pub fn validate_reduction(q: &CMat, d: usize, p: usize) -> Result<()> {
    if q.nrows() != d || q.ncols() != p {
        return Err(Error::Shape(format!(
            "reduction matrix is {}x{}, expected {d}x{p}",
            q.nrows(),
            q.ncols()
        )));
    }
    let defect = orthonormality_defect(q);
    if defect > ORTHO_TOL {
        return Err(Error::InvalidArgument(format!(
            "reduction matrix is not semi-unitary (defect {defect:.3e})"
        )));
    }
    Ok(())
}

/// T feedback rounds sharing one codebook, plus the softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationProblem {
    rounds: Vec<FeedbackRound>,
    codebook: Codebook,
    tau: f64,
}

impl EstimationProblem {
    pub fn new(rounds: Vec<FeedbackRound>, codebook: Codebook, tau: f64) -> Result<Self> {
        if rounds.is_empty() {
            return Err(Error::InvalidArgument("at least one round is required".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
        }
        let d = rounds[0].q.nrows();
        for r in &rounds {
            validate_reduction(&r.q, d, codebook.ports())?;
            check_index("codebook", r.pmi, codebook.len())?;
        }
        Ok(Self {
            rounds,
            codebook,
            tau,
        })
    }

    pub fn rounds(&self) -> &[FeedbackRound] {
        &self.rounds
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        self.rounds[0].q.nrows()
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn num_codewords(&self) -> usize {
        self.codebook.len()
    }

    pub fn streams(&self) -> usize {
        self.codebook.streams()
    }

    /// True when every matrix is real, i.e. the real-valued analysis applies.
    pub fn is_real(&self) -> bool {
        self.codebook.is_real() && self.rounds.iter().all(|r| crate::linalg::is_real(&r.q))
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.rounds.clone(), self.codebook.clone(), tau)
    }

    /// Same rounds repeated `copies` times.
    pub fn replicated(&self, copies: usize) -> Result<Self> {
        let rounds = (0..copies).flat_map(|_| self.rounds.iter().cloned()).collect();
        Self::new(rounds, self.codebook.clone(), self.tau)
    }
}

/// `a_{t,i} = Q_t V_i` (d x r).
pub fn effective_codeword(problem: &EstimationProblem, t: usize, i: usize) -> Result<CMat> {
    check_index("rounds", t, problem.num_rounds())?;
    check_index("codebook", i, problem.num_codewords())?;
    Ok(&problem.rounds[t].q * problem.codebook.codeword(i))
}

/// `X` may be an `r`-column estimate or a channel with any number of
/// receive antennas; only the row count is fixed.
fn check_rows(x: &CMat, d: usize) -> Result<()> {
    if x.nrows() != d || x.ncols() == 0 {
        return Err(Error::Shape(format!(
            "matrix is {}x{}, expected {d} rows",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

/// `||V_i^H Q^H X||_F^2` for a bare reduction matrix.
pub fn codeword_gain(q: &CMat, codebook: &Codebook, i: usize, x: &CMat) -> Result<f64> {
    check_index("codebook", i, codebook.len())?;
    check_rows(x, q.nrows())?;
    let a = q * codebook.codeword(i);
    Ok((a.adjoint() * x).norm_squared())
}

/// Gains of every codeword under reduction `q`.
pub fn round_gains(q: &CMat, codebook: &Codebook, x: &CMat) -> Result<Vec<f64>> {
    check_rows(x, q.nrows())?;
    let y = q.adjoint() * x; // p x r
    let g = codebook.matrix().adjoint() * y; // (N r) x r
    let r = codebook.streams();
    Ok((0..codebook.len())
        .map(|i| g.rows(i * r, r).norm_squared())
        .collect())
}

pub fn gain(problem: &EstimationProblem, t: usize, i: usize, x: &CMat) -> Result<f64> {
    check_index("rounds", t, problem.num_rounds())?;
    codeword_gain(&problem.rounds[t].q, &problem.codebook, i, x)
}

/// Softmax of `gains / tau` with max subtraction.
pub fn softmax(gains: &[f64], tau: f64) -> Vec<f64> {
    let m = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = gains.iter().map(|&g| ((g - m) / tau).exp()).collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// `tau`-scaled log-sum-exp helper: returns `(max, ln sum_j exp((g_j - max)/tau))`.
///
/// The sum is evaluated as `ln_1p` of the non-maximal terms so that losses
/// near zero keep full relative precision.
pub fn log_sum_exp(gains: &[f64], tau: f64) -> (f64, f64) {
    let (arg, m) = argmax(gains);
    let rest: f64 = gains
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != arg)
        .map(|(_, &g)| ((g - m) / tau).exp())
        .sum();
    (m, rest.ln_1p())
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub fn softmax_pmf(problem: &EstimationProblem, t: usize, x: &CMat) -> Result<Vec<f64>> {
    check_index("rounds", t, problem.num_rounds())?;
    let g = round_gains(&problem.rounds[t].q, &problem.codebook, x)?;
    Ok(softmax(&g, problem.tau))
}

/// Draws one index from `pmf` by inverse CDF.
pub fn sample_index<R: Rng + ?Sized>(pmf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the total slightly below one.
    pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Softmax PMI draw for a bare reduction matrix.
pub fn sample_pmi_for<R: Rng + ?Sized>(
    q: &CMat,
    codebook: &Codebook,
    tau: f64,
    x: &CMat,
    rng: &mut R,
) -> Result<usize> {
    let g = round_gains(q, codebook, x)?;
    Ok(sample_index(&softmax(&g, tau), rng))
}

pub fn sample_pmi<R: Rng + ?Sized>(
    problem: &EstimationProblem,
    t: usize,
    x: &CMat,
    rng: &mut R,
) -> Result<usize> {
    let pmf = softmax_pmf(problem, t, x)?;
    Ok(sample_index(&pmf, rng))
}

/// Hard decision rule: argmax gain, ties to the smallest index.
pub fn hard_pmi(q: &CMat, codebook: &Codebook, x: &CMat) -> Result<usize> {
    let g = round_gains(q, codebook, x)?;
    Ok(argmax(&g).0)
}

/// Gain at the reported index, rounded to the nearest `f32`.
pub fn cqi(q: &CMat, codebook: &Codebook, pmi: usize, x: &CMat) -> Result<f32> {
    Ok(codeword_gain(q, codebook, pmi, x)? as f32)
}

/// Measurement matrices and codebook without observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub qs: Vec<CMat>,
    pub codebook: Codebook,
}

impl Design {
    pub fn new(qs: Vec<CMat>, codebook: Codebook) -> Result<Self> {
        if qs.is_empty() {
            return Err(Error::InvalidArgument("design needs at least one round".into()));
        }
        let d = qs[0].nrows();
        for q in &qs {
            validate_reduction(q, d, codebook.ports())?;
        }
        Ok(Self { qs, codebook })
    }

    pub fn dim(&self) -> usize {
        self.qs[0].nrows()
    }

    pub fn num_rounds(&self) -> usize {
        self.qs.len()
    }

    /// Softmax-sampled PMIs for truth `x` (single draw per round).
    pub fn sample_problem<R: Rng + ?Sized>(
        &self,
        x: &CMat,
        tau: f64,
        rng: &mut R,
    ) -> Result<EstimationProblem> {
        let mut rounds = Vec::with_capacity(self.qs.len());
        for q in &self.qs {
            let pmi = sample_pmi_for(q, &self.codebook, tau, x, rng)?;
            rounds.push(FeedbackRound::new(q.clone(), pmi));
        }
        EstimationProblem::new(rounds, self.codebook.clone(), tau)
    }

    /// Hard-rule PMIs with 32-bit CQI attached.
    pub fn hard_problem(&self, x: &CMat, tau: f64) -> Result<EstimationProblem> {
        let mut rounds = Vec::with_capacity(self.qs.len());
        for q in &self.qs {
            let pmi = hard_pmi(q, &self.codebook, x)?;
            let eta = cqi(q, &self.codebook, pmi, x)?;
            rounds.push(FeedbackRound::with_cqi(q.clone(), pmi, eta));
        }
        EstimationProblem::new(rounds, self.codebook.clone(), tau)
    }

    pub fn prefix(&self, t: usize) -> Result<Self> {
        Self::new(self.qs[..t].to_vec(), self.codebook.clone())
    }
}

/// Flattened effective codewords `A_{t,j}` (dim x r, column-major) for fast
/// evaluation of gains. With a subspace prior `B_k`, the blocks are
/// `B_k^H Q_t V_j` and `dim = k`.
#[derive(Debug, Clone)]
pub struct EffectiveDesign {
    dim: usize,
    streams: usize,
    codewords: usize,
    rounds: usize,
    blocks: Vec<C64>,
    selected: Vec<usize>,
}

impl EffectiveDesign {
    fn build<'a>(
        qs: impl Iterator<Item = &'a CMat>,
        codebook: &Codebook,
        prior: Option<&CMat>,
        selected: Vec<usize>,
    ) -> Self {
        let r = codebook.streams();
        let n = codebook.len();
        let mut blocks = Vec::new();
        let mut rounds = 0;
        let mut dim = 0;
        for q in qs {
            let mut a = q * codebook.matrix(); // d x (N r)
            if let Some(b) = prior {
                a = b.adjoint() * a;
            }
            dim = a.nrows();
            blocks.extend_from_slice(a.as_slice());
            rounds += 1;
        }
        Self {
            dim,
            streams: r,
            codewords: n,
            rounds,
            blocks,
            selected,
        }
    }

    pub fn from_problem(problem: &EstimationProblem) -> Self {
        Self::build(
            problem.rounds.iter().map(|r| &r.q),
            &problem.codebook,
            None,
            problem.rounds.iter().map(|r| r.pmi).collect(),
        )
    }

    /// Restricts the problem to `range(prior)`; `prior` is d x k.
    pub fn from_problem_in_subspace(problem: &EstimationProblem, prior: &CMat) -> Self {
        Self::build(
            problem.rounds.iter().map(|r| &r.q),
            &problem.codebook,
            Some(prior),
            problem.rounds.iter().map(|r| r.pmi).collect(),
        )
    }

    /// Design without observations (selected indices set to 0).
    pub fn from_design(design: &Design) -> Self {
        Self::build(
            design.qs.iter(),
            &design.codebook,
            None,
            vec![0; design.qs.len()],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn codewords(&self) -> usize {
        self.codewords
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn selected(&self, t: usize) -> usize {
        self.selected[t]
    }

    /// Column-major dim x r block of `A_{t,j}`.
    #[inline]
    pub fn block(&self, t: usize, j: usize) -> &[C64] {
        let len = self.dim * self.streams;
        let off = (t * self.codewords + j) * len;
        &self.blocks[off..off + len]
    }

    pub fn block_matrix(&self, t: usize, j: usize) -> CMat {
        DMatrix::from_column_slice(self.dim, self.streams, self.block(t, j))
    }

    /// Writes `G = A_{t,j}^H X` (r x r, column-major) into `g` and returns
    /// `||G||_F^2`.
    #[inline]
    pub fn project(&self, t: usize, j: usize, x: &[C64], g: &mut [C64]) -> f64 {
        let d = self.dim;
        let r = self.streams;
        let a = self.block(t, j);
        let mut total = 0.0;
        for b in 0..r {
            let xb = &x[b * d..(b + 1) * d];
            for c in 0..r {
                let ac = &a[c * d..(c + 1) * d];
                let mut acc = C64::new(0.0, 0.0);
                for (ai, xi) in ac.iter().zip(xb) {
                    acc += ai.conj() * xi;
                }
                g[b * r + c] = acc;
                total += acc.norm_sqr();
            }
        }
        total
    }

    /// All gains of round `t` at `x` (column-major dim x r slice).
    pub fn gains_into(&self, t: usize, x: &[C64], out: &mut [f64]) {
        let mut g = vec![C64::new(0.0, 0.0); self.streams * self.streams];
        for (j, o) in out.iter_mut().enumerate().take(self.codewords) {
            *o = self.project(t, j, x, &mut g);
        }
    }

    /// Adds `w * A_{t,j} G` into `out` (dim x r, column-major).
    #[inline]
    pub fn accumulate(&self, t: usize, j: usize, g: &[C64], w: f64, out: &mut [C64]) {
        let d = self.dim;
        let r = self.streams;
        let a = self.block(t, j);
        for b in 0..r {
            let ob = &mut out[b * d..(b + 1) * d];
            for c in 0..r {
                let coef = g[b * r + c] * w;
                let ac = &a[c * d..(c + 1) * d];
                for (o, ai) in ob.iter_mut().zip(ac) {
                    *o += ai * coef;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{dft_codebook, haar_stiefel};
    use crate::linalg::c;
    use crate::rng::seeded;

    fn identity_design(d: usize, p: usize) -> CMat {
        CMat::identity(d, p)
    }

    fn single_problem(q: CMat, cb: Codebook, pmi: usize, tau: f64) -> EstimationProblem {
        EstimationProblem::new(vec![FeedbackRound::new(q, pmi)], cb, tau).unwrap()
    }

    #[test]
    fn effective_codeword_identity_design() {
        let cb = Codebook::new(CMat::identity(3, 3), 1).unwrap();
        let p = single_problem(identity_design(5, 3), cb, 0, 1.0);
        let a = effective_codeword(&p, 0, 0).unwrap();
        let mut e1 = CMat::zeros(5, 1);
        e1[(0, 0)] = c(1.0, 0.0);
        assert_eq!(a, e1);
        assert!(matches!(
            effective_codeword(&p, 1, 0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            effective_codeword(&p, 0, 3),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn effective_codeword_haar_is_first_column() {
        let mut rng = seeded(11);
        let q = haar_stiefel(4, 2, &mut rng);
        let cb = Codebook::new(CMat::identity(2, 2), 1).unwrap();
        let p = single_problem(q.clone(), cb, 0, 1.0);
        let a = effective_codeword(&p, 0, 0).unwrap();
        // Direct product oracle.
        let direct = CMat::from_fn(4, 1, |i, _| q[(i, 0)] * c(1.0, 0.0) + q[(i, 1)] * c(0.0, 0.0));
        assert!((a.clone() - direct).norm() < 1e-15);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gain_matches_entrywise_sum() {
        let mut rng = seeded(3);
        let q = haar_stiefel(5, 3, &mut rng);
        let cb = dft_codebook(3);
        let x = CMat::from_fn(5, 1, |i, _| c(i as f64 * 0.4 - 0.7, 0.3 * (i as f64).sin()));
        for i in 0..3 {
            let g = codeword_gain(&q, &cb, i, &x).unwrap();
            let mut acc = c(0.0, 0.0);
            for row in 0..5 {
                let mut a = c(0.0, 0.0);
                for k in 0..3 {
                    a += q[(row, k)] * cb.matrix()[(k, i)];
                }
                acc += a.conj() * x[(row, 0)];
            }
            assert!((g - acc.norm_sqr()).abs() < 1e-12);
        }
        assert_eq!(codeword_gain(&q, &cb, 0, &CMat::zeros(5, 1)).unwrap(), 0.0);
        assert!(matches!(
            codeword_gain(&q, &cb, 0, &CMat::zeros(4, 1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gain_of_own_codeword_is_one() {
        let mut rng = seeded(5);
        let q = haar_stiefel(6, 4, &mut rng);
        let cb = dft_codebook(4);
        let a = &q * cb.codeword(2);
        assert!((codeword_gain(&q, &cb, 2, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_two_codewords_formula() {
        let p = softmax(&[1.0, 0.0], 1.0);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (1.0 + e)).abs() < 1e-15);
        let flat = softmax(&[0.3; 5], 0.1);
        assert!(flat.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_pmf_uniform_at_zero() {
        let mut rng = seeded(1);
        let p = single_problem(haar_stiefel(4, 4, &mut rng), dft_codebook(4), 0, 0.5);
        let pmf = softmax_pmf(&p, 0, &CMat::zeros(4, 1)).unwrap();
        assert!(pmf.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_survives_huge_gains() {
        let p = softmax(&[1e6, 1e6 - 1.0, 0.0], 1e-3);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hard_rule_and_ties() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]).0, 1);
        let cb = Codebook::new(CMat::identity(4, 4), 1).unwrap();
        let q = identity_design(4, 4);
        let mut x = CMat::zeros(4, 1);
        x[(3, 0)] = c(2.0, 0.0);
        x[(0, 0)] = c(0.5, 0.0);
        assert_eq!(hard_pmi(&q, &cb, &x).unwrap(), 3);
        let mut tie = CMat::zeros(4, 1);
        tie[(1, 0)] = c(1.0, 0.0);
        tie[(2, 0)] = c(0.0, 1.0);
        assert_eq!(hard_pmi(&q, &cb, &tie).unwrap(), 1);
    }

    #[test]
    fn hard_rule_matches_exhaustive_scan() {
        let mut rng = seeded(9);
        let cb = dft_codebook(4);
        for _ in 0..20 {
            let q = haar_stiefel(8, 4, &mut rng);
            let x = haar_stiefel(8, 1, &mut rng);
            let idx = hard_pmi(&q, &cb, &x).unwrap();
            let gains: Vec<f64> = (0..4).map(|i| codeword_gain(&q, &cb, i, &x).unwrap()).collect();
            assert!(gains.iter().all(|&g| g <= gains[idx]));
        }
    }

    #[test]
    fn cqi_is_f32_rounded_gain() {
        let mut rng = seeded(2);
        let cb = dft_codebook(4);
        let q = haar_stiefel(6, 4, &mut rng);
        assert_eq!(cqi(&q, &cb, 0, &CMat::zeros(6, 1)).unwrap(), 0.0);
        let a = &q * cb.codeword(1);
        assert!((cqi(&q, &cb, 1, &a).unwrap() - 1.0).abs() <= f32::EPSILON);
        let x = haar_stiefel(6, 1, &mut rng).scale(1.7);
        let pmi = hard_pmi(&q, &cb, &x).unwrap();
        let g = codeword_gain(&q, &cb, pmi, &x).unwrap();
        let eta = cqi(&q, &cb, pmi, &x).unwrap() as f64;
        assert!((eta - g).abs() <= g * 2f64.powi(-23));
    }

    #[test]
    fn sample_single_codeword_and_limit() {
        let cb = Codebook::new(CMat::from_element(1, 1, c(1.0, 0.0)), 1).unwrap();
        let mut rng = seeded(4);
        let q = CMat::identity(3, 1);
        let x = CMat::from_element(3, 1, c(0.4, 0.1));
        for _ in 0..50 {
            assert_eq!(sample_pmi_for(&q, &cb, 1.0, &x, &mut rng).unwrap(), 0);
        }
        let cb4 = Codebook::new(CMat::identity(4, 4), 1).unwrap();
        let q4 = CMat::identity(4, 4);
        let x4 = CMat::from_column_slice(4, 1, &[c(0.1, 0.0), c(0.9, 0.0), c(0.5, 0.0), c(0.2, 0.0)]);
        for _ in 0..50 {
            assert_eq!(sample_pmi_for(&q4, &cb4, 1e-6, &x4, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let cb = dft_codebook(4);
        let mut rng = seeded(8);
        let q = haar_stiefel(6, 4, &mut rng);
        let x = haar_stiefel(6, 1, &mut rng);
        let draw = |seed| {
            let mut r = seeded(seed);
            (0..100)
                .map(|_| sample_pmi_for(&q, &cb, 0.3, &x, &mut r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn problem_validation() {
        let cb = dft_codebook(2);
        let bad_q = CMat::from_element(3, 2, c(1.0, 0.0));
        assert!(EstimationProblem::new(vec![FeedbackRound::new(bad_q, 0)], cb.clone(), 1.0).is_err());
        assert!(EstimationProblem::new(vec![], cb.clone(), 1.0).is_err());
        let q = CMat::identity(3, 2);
        assert!(EstimationProblem::new(vec![FeedbackRound::new(q.clone(), 2)], cb.clone(), 1.0).is_err());
        assert!(EstimationProblem::new(vec![FeedbackRound::new(q, 0)], cb, 0.0).is_err());
    }

    #[test]
    fn effective_design_matches_gain() {
        let mut rng = seeded(12);
        let cb = dft_codebook(4);
        let design = Design::new(vec![haar_stiefel(6, 4, &mut rng), haar_stiefel(6, 4, &mut rng)], cb.clone()).unwrap();
        let eff = EffectiveDesign::from_design(&design);
        let x = haar_stiefel(6, 1, &mut rng);
        let mut out = vec![0.0; 4];
        for t in 0..2 {
            eff.gains_into(t, x.as_slice(), &mut out);
            for (i, &o) in out.iter().enumerate() {
                let g = codeword_gain(&design.qs[t], &cb, i, &x).unwrap();
                assert!((o - g).abs() < 1e-13);
            }
        }
    }
}
