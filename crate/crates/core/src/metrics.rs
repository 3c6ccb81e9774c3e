//! Phase-invariant distances and reconstruction-quality metrics.

use crate::linalg::{orthonormal_range, polar_unitary, svd_sorted, CMat, C64};
use crate::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub dist: f64,
    pub mse_phase_aligned: f64,
    pub beam_precision: f64,
}

fn same_shape(a: &CMat, b: &CMat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "operands are {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn inner(x: &CMat, y: &CMat) -> C64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
}

/// `min_phi ||x - e^{j phi} y||`, via `sqrt(|x|^2 + |y|^2 - 2|x^H y|)`.
pub fn dist(x: &CMat, y: &CMat) -> Result<f64> {
    same_shape(x, y)?;
    let v = x.norm_squared() + y.norm_squared() - 2.0 * inner(x, y).norm();
    Ok(v.max(0.0).sqrt())
}

/// `||x_hat e^{-j arg(h^H x_hat)} - h||^2`; equals `dist(x_hat, h)^2`.
pub fn phase_aligned_mse(x_hat: &CMat, h: &CMat) -> Result<f64> {
    same_shape(x_hat, h)?;
    let ip = inner(h, x_hat);
    let rot = if ip.norm() > 0.0 {
        ip.conj() / ip.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    Ok((x_hat * rot - h).norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamPrecision {
    pub value: f64,
    /// `H` has fewer than `r` significant singular directions.
    pub degenerate: bool,
}

/// `tr(H_hat^H H H^H H_hat) / tr(U^H H H^H U)` with `H_hat` orthonormalized
/// and `U` the `r` dominant left singular vectors of `H`.
pub fn beam_precision_report(h_hat: &CMat, h: &CMat) -> Result<BeamPrecision> {
    if h_hat.nrows() != h.nrows() {
        return Err(Error::Shape(format!(
            "estimate has {} rows, channel has {}",
            h_hat.nrows(),
            h.nrows()
        )));
    }
    let r = h_hat.ncols();
    let (_, s, _) = svd_sorted(h);
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Err(Error::InvalidArgument("channel is zero".into()));
    }
    let rank = s.iter().take_while(|&&v| v > RANK_TOL * smax).count();
    let used = r.min(rank);
    let denom: f64 = s[..used].iter().map(|v| v * v).sum();
    let basis = orthonormal_range(h_hat, RANK_TOL);
    let num = (basis.adjoint() * h).norm_squared();
    Ok(BeamPrecision {
        value: num / denom,
        degenerate: rank < r,
    })
}

pub fn beam_precision(h_hat: &CMat, h: &CMat) -> Result<f64> {
    Ok(beam_precision_report(h_hat, h)?.value)
}

/// Relative change between iterates modulo the phase or unitary ambiguity:
/// `min_R ||X_new R - X_old||_F / ||X_old||_F`, with `R` the polar factor of
/// `X_new^H X_old`. For one column this is the phase-aligned change.
pub fn procrustes_rel_change(x_new: &CMat, x_old: &CMat) -> Result<f64> {
    same_shape(x_new, x_old)?;
    let denom = x_old.norm();
    if denom == 0.0 {
        return Ok(f64::INFINITY);
    }
    let m = x_new.adjoint() * x_old;
    let rot = if x_new.ncols() == 1 {
        let z = m[(0, 0)];
        let mut u = CMat::identity(1, 1);
        if z.norm() > 0.0 {
            u[(0, 0)] = z / z.norm();
        }
        u
    } else {
        polar_unitary(&m)
    };
    Ok((x_new * rot - x_old).norm() / denom)
}

pub fn report(x_hat: &CMat, h: &CMat) -> Result<MetricReport> {
    let d = dist(x_hat, h)?;
    Ok(MetricReport {
        dist: d,
        mse_phase_aligned: phase_aligned_mse(x_hat, h)?,
        beam_precision: beam_precision(x_hat, h)?,
    })
}
