//! Dense complex linear algebra used on grid points: matrix exponentials by
//! scaling and squaring, operator norms, unitarity checks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Largest singular value.
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// `‖M‖_1`, the maximum absolute column sum.
pub fn norm1(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `diag(w)·M`.
pub fn weight_rows(m: &CMatrix, w: &[f64]) -> CMatrix {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= Complex64::new(w[i], 0.0);
    }
    out
}

/// `diag(w)·M·diag(w)^{-1}`.
pub fn weight_similarity(m: &CMatrix, w: &[f64]) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * (w[i] / w[j]))
}

/// `‖U*U - I‖_op`.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let n = u.nrows();
    op_norm(&(u.adjoint() * u - CMatrix::identity(n, n)))
}

/// Replaces `M` by its anti-hermitian part `(M - M*)/2`.
pub fn anti_hermitian_part(m: &CMatrix) -> CMatrix {
    (m - m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Scaled argument bound for the Taylor stage.
const TAYLOR_RADIUS: f64 = 0.5;
const MAX_TAYLOR_TERMS: usize = 40;

/// `e^A - I` with accuracy relative to `‖A‖`.
///
/// The argument is scaled by `2^{-s}` until `‖A‖_1 ≤ 1/2`, `e^X - I` is summed
/// as a Taylor series to a relative truncation of 1e-17, and the result is
/// squared back through `F(2X) = 2F(X) + F(X)²`. Working with `F` instead of
/// `e^A` keeps the off-diagonal entries accurate relative to `A` itself.
pub fn expm1(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Shape("matrix exponential of non-square matrix".into()));
    }
    let norm = norm1(a);
    if !norm.is_finite() {
        return Err(Error::Exponential("non-finite argument".into()));
    }
    if norm == 0.0 {
        return Ok(CMatrix::zeros(n, n));
    }
    let squarings = if norm > TAYLOR_RADIUS {
        (norm / TAYLOR_RADIUS).log2().ceil() as i32
    } else {
        0
    };
    let x = a * Complex64::new(2f64.powi(-squarings), 0.0);
    let xnorm = norm1(&x);

    let mut term = x.clone();
    let mut sum = x.clone();
    let mut term_norm = xnorm;
    let mut converged = false;
    for m in 2..=MAX_TAYLOR_TERMS {
        term = &term * &x * Complex64::new(1.0 / m as f64, 0.0);
        term_norm *= xnorm / m as f64;
        sum += &term;
        if term_norm <= 1e-17 * xnorm {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Exponential("Taylor stage did not converge".into()));
    }
    let two = Complex64::new(2.0, 0.0);
    for _ in 0..squarings {
        let sq = &sum * &sum;
        sum = sum * two + sq;
    }
    if sum.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Exponential("overflow while squaring".into()));
    }
    Ok(sum)
}

pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    Ok(expm1(a)? + CMatrix::identity(n, n))
}

/// `e^A v` by a truncated Taylor series applied to `v`, split into
/// substeps of norm at most the Taylor radius.
pub fn expm_apply(a: &CMatrix, v: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    if a.nrows() != a.ncols() || a.ncols() != v.len() {
        return Err(Error::Shape(
            "matrix exponential action with mismatched operands".into(),
        ));
    }
    let norm = norm1(a);
    if !norm.is_finite() {
        return Err(Error::Exponential("non-finite argument".into()));
    }
    let pieces = (norm / TAYLOR_RADIUS).ceil().max(1.0) as usize;
    let x = a * Complex64::new(1.0 / pieces as f64, 0.0);
    let xnorm = norm / pieces as f64;
    let mut out = v.clone();
    for _ in 0..pieces {
        let mut term = out.clone();
        let mut sum = out.clone();
        let scale = term.norm();
        let mut converged = scale == 0.0;
        for m in 1..=MAX_TAYLOR_TERMS {
            if converged {
                break;
            }
            term = &x * &term * Complex64::new(1.0 / m as f64, 0.0);
            sum += &term;
            converged = term.norm() <= 1e-17 * scale && xnorm / (m as f64 + 1.0) < 1.0;
        }
        if !converged {
            return Err(Error::Exponential("Taylor action did not converge".into()));
        }
        out = sum;
    }
    Ok(out)
}

/// `(e^B, L(B, D))` where `L` is the Fréchet derivative of the exponential
/// at `B` in direction `D`, so that `d/dt e^{B(t)} = L(B, Ḃ)`.
pub fn expm_frechet(b: &CMatrix, direction: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    let n = b.nrows();
    let mut block = CMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(b);
    block.view_mut((n, n), (n, n)).copy_from(b);
    block.view_mut((0, n), (n, n)).copy_from(direction);
    let e = expm(&block)?;
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, n)).into_owned()))
}

/// Eigenvalues of a unitary (or any normal) matrix.
///
/// The hermitian pencil `H = Re M + c·Im M` with an irrational `c` shares the
/// eigenvectors of `M`; eigenvalues are read back as Rayleigh quotients.
pub fn normal_eigenvalues(m: &CMatrix) -> Vec<Complex64> {
    let i = Complex64::new(0.0, 1.0);
    let re = hermitian_part(m);
    let im = (m - m.adjoint()) * (-0.5 * i);
    let c = Complex64::new(std::f64::consts::FRAC_1_SQRT_2 * 1.234_567, 0.0);
    let pencil = &re + &im * c;
    let eig = nalgebra::SymmetricEigen::new(pencil);
    eig.eigenvectors
        .column_iter()
        .map(|v| {
            let mv = m * v;
            v.dotc(&mv)
        })
        .collect()
}
