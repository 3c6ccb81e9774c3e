//! Dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;

pub const HERMITIAN_TOL: f64 = 1e-10;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest `|A - A^H|` entry relative to `max(1, max |A|)`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    if a.nrows() != a.ncols() {
        return f64::INFINITY;
    }
    let n = a.nrows();
    let mut scale = 1.0f64;
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            scale = scale.max(a[(i, j)].norm());
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

pub fn ensure_hermitian(a: &CMat, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let defect = hermitian_defect(a);
    if defect > HERMITIAN_TOL {
        return Err(Error::InvalidArgument(format!(
            "{what} is not Hermitian (defect {defect:.3e})"
        )));
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending.
///
/// Each eigenvector is rotated so its first non-negligible entry is real and
/// positive, which makes the basis deterministic for simple eigenvalues.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

pub fn hermitian_eigen(a: &CMat) -> Result<HermitianEigen> {
    ensure_hermitian(a, "matrix")?;
    // Symmetrize exactly before handing to the solver.
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let mut vectors = CMat::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut col = eig.eigenvectors.column(src).into_owned();
        normalize_phase(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok(HermitianEigen { values, vectors })
}

/// The `r` dominant eigenvectors (d x r) and their eigenvalues.
pub fn top_eigvecs(a: &CMat, r: usize) -> Result<(CMat, Vec<f64>)> {
    if r > a.nrows() {
        return Err(Error::InvalidArgument(format!(
            "requested {r} eigenvectors of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let eig = hermitian_eigen(a)?;
    Ok((
        eig.vectors.columns(0, r).into_owned(),
        eig.values[..r].to_vec(),
    ))
}

pub fn normalize_phase(col: &mut DVector<C64>) {
    let scale = col.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if scale == 0.0 {
        return;
    }
    if let Some(lead) = col.iter().find(|z| z.norm() > 1e-8 * scale).copied() {
        let rot = lead.conj() / lead.norm();
        for z in col.iter_mut() {
            *z *= rot;
        }
    }
}

/// Real symmetric eigendecomposition, eigenvalues descending.
pub fn sym_eigen(a: &RMat) -> (Vec<f64>, RMat) {
    let sym = (a + a.transpose()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let mut vectors = RMat::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Thin SVD with singular values sorted descending: `(U, sigma, V)`.
pub fn svd_sorted(x: &CMat) -> (CMat, Vec<f64>, CMat) {
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V^H").adjoint();
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .total_cmp(&svd.singular_values[i])
            .then(i.cmp(&j))
    });
    let mut us = CMat::zeros(u.nrows(), k);
    let mut vs = CMat::zeros(v.nrows(), k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        us.set_column(dst, &u.column(src));
        vs.set_column(dst, &v.column(src));
        s.push(svd.singular_values[src]);
    }
    (us, s, vs)
}

/// Orthonormal basis of `range(x)`, dropping directions with singular value
/// below `rel_tol * sigma_max`.
pub fn orthonormal_range(x: &CMat, rel_tol: f64) -> CMat {
    if x.ncols() == 0 || x.nrows() == 0 {
        return CMat::zeros(x.nrows(), 0);
    }
    let (u, s, _) = svd_sorted(x);
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return CMat::zeros(x.nrows(), 0);
    }
    let rank = s.iter().take_while(|&&v| v > rel_tol * smax).count();
    u.columns(0, rank).into_owned()
}

/// Orthonormal basis of the orthogonal complement of `range(basis)`, where
/// `basis` has orthonormal columns.
pub fn complement_basis(basis: &CMat) -> CMat {
    let d = basis.nrows();
    let k = basis.ncols();
    let proj = CMat::identity(d, d) - basis * basis.adjoint();
    let eig = hermitian_eigen(&proj).expect("projector is Hermitian");
    eig.vectors.columns(0, d - k).into_owned()
}

/// Unitary polar factor `U V^H` of `m = U S V^H`.
pub fn polar_unitary(m: &CMat) -> CMat {
    let (u, _, v) = svd_sorted(m);
    u * v.adjoint()
}

/// Moore-Penrose pseudoinverse of a Hermitian PSD matrix with spectral cutoff
/// `rel_tol * lambda_max`.
pub fn pinv_hermitian(a: &CMat, rel_tol: f64) -> Result<CMat> {
    let eig = hermitian_eigen(a)?;
    let lmax = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let n = a.nrows();
    let mut out = CMat::zeros(n, n);
    for (k, &lam) in eig.values.iter().enumerate() {
        if lam.abs() > rel_tol * lmax && lam != 0.0 {
            let v = eig.vectors.column(k);
            out += (v * v.adjoint()).scale(1.0 / lam);
        }
    }
    Ok(out)
}

/// Solves `a x = b` for Hermitian PSD `a`. Falls back to the pseudoinverse
/// when the Cholesky factorization fails; the flag reports the fallback.
pub fn solve_hermitian_psd(a: &CMat, b: &CMat) -> Result<(CMat, bool)> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Ok((x, false));
        }
    }
    let pinv = pinv_hermitian(a, a.nrows() as f64 * f64::EPSILON * 16.0)?;
    Ok((pinv * b, true))
}

/// `max |X^H X - I|` over entries.
pub fn orthonormality_defect(x: &CMat) -> f64 {
    let g = x.adjoint() * x;
    let n = g.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// Largest principal angle (radians) between `range(a)` and `range(b)`.
/// Both inputs must have orthonormal columns and equal column counts.
pub fn max_principal_angle(a: &CMat, b: &CMat) -> f64 {
    let m = a.adjoint() * b;
    let (_, s, _) = svd_sorted(&m);
    let smin = s.last().copied().unwrap_or(0.0).clamp(0.0, 1.0);
    // acos is ill-conditioned near 1; use the sine form instead.
    (1.0 - smin * smin).max(0.0).sqrt().asin()
}

pub fn is_real(x: &CMat) -> bool {
    x.iter().all(|z| z.im == 0.0)
}

pub fn real_part(x: &CMat) -> RMat {
    x.map(|z| z.re)
}

pub fn complexify(x: &RMat) -> CMat {
    x.map(|v| C64::new(v, 0.0))
}

pub fn all_finite(x: &CMat) -> bool {
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hermitian_fixture() -> CMat {
        let b = CMat::from_fn(4, 4, |i, j| c((i + 2 * j) as f64 * 0.3 - 1.0, (i as f64 - j as f64) * 0.7));
        &b * b.adjoint()
    }

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let a = hermitian_fixture();
        let eig = hermitian_eigen(&a).unwrap();
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        let diag = CMat::from_diagonal(&DVector::from_iterator(
            4,
            eig.values.iter().map(|&v| c(v, 0.0)),
        ));
        let rec = &eig.vectors * diag * eig.vectors.adjoint();
        assert!((rec - &a).norm() < 1e-10 * a.norm());
        for k in 0..4 {
            let lead = eig.vectors.column(k).iter().find(|z| z.norm() > 1e-8).copied().unwrap();
            assert!(lead.im.abs() < 1e-12 && lead.re > 0.0);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut a = hermitian_fixture();
        a[(0, 1)] += c(0.0, 1.0);
        assert!(matches!(hermitian_eigen(&a), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn complement_is_orthogonal() {
        let a = hermitian_fixture();
        let (top, _) = top_eigvecs(&a, 2).unwrap();
        let comp = complement_basis(&top);
        assert_eq!(comp.ncols(), 2);
        assert!((top.adjoint() * &comp).norm() < 1e-10);
        assert!(orthonormality_defect(&comp) < 1e-10);
    }

    #[test]
    fn pinv_fallback_on_singular() {
        let v = CMat::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.0, 1.0)]);
        let a = &v * v.adjoint();
        let b = v.scale(3.0);
        let (x, fallback) = solve_hermitian_psd(&a, &b).unwrap();
        assert!(fallback);
        assert!((&a * &x - &b).norm() < 1e-10);
    }
}
