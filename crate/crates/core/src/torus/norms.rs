//! Weighted operator norms on the torus.
//!
//! For `s > 0` every norm is the coefficient bound `Σ_k ‖X̂_k‖ e^{s|k|_1}`,
//! which dominates the supremum over the complex strip of width `s` (and
//! hence also any real-grid sample). For `s = 0` the supremum over an
//! oversampled real grid is reported.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::{DiagonalPart, GridPlan, OperatorSeries};
use crate::error::{Error, Result};
use crate::linalg::{op_norm, weight_rows, weight_similarity};

/// `‖W X‖_op` with `W = diag(w)`.
pub fn delta_norm_matrix(x: &DMatrix<Complex64>, w: &[f64]) -> f64 {
    op_norm(&weight_rows(x, w))
}

/// `max{‖X‖_op, ‖W X W^{-1}‖_op}`.
pub fn g_norm_matrix(x: &DMatrix<Complex64>, w: &[f64]) -> f64 {
    op_norm(x).max(op_norm(&weight_similarity(x, w)))
}

fn check_shapes(p: &OperatorSeries, base: &DiagonalPart) -> Result<()> {
    if p.dim() != base.dim() {
        return Err(Error::Shape(format!(
            "operator has N={} but diagonal part has {} modes",
            p.dim(),
            base.dim()
        )));
    }
    if let Some((idx, &l)) = base.lambda().iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
        return Err(Error::NonPositiveEigenvalue {
            index: idx + 1,
            value: l,
        });
    }
    Ok(())
}

fn strip_norm(p: &OperatorSeries, s: f64, pointwise: impl Fn(&DMatrix<Complex64>) -> f64 + Sync) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("strip width {s} < 0")));
    }
    if s > 0.0 {
        let modes = p.entries()[0].mode_box();
        let l1 = modes.l1_table();
        let total: Vec<f64> = (0..modes.len())
            .into_par_iter()
            .map(|flat| {
                let m = p.mode_matrix_flat(flat);
                if m.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
                    0.0
                } else {
                    pointwise(&m) * (s * l1[flat] as f64).exp()
                }
            })
            .collect();
        Ok(total.iter().sum())
    } else {
        let plan = GridPlan::new(p.n(), GridPlan::size_for(p.cutoff(), 2).max(8));
        let grid = p.to_grid(&plan)?;
        Ok(grid.par_iter().map(&pointwise).reduce(|| 0.0, f64::max))
    }
}

/// `‖P‖_{δ,s}`: supremum of `‖A^{-δ/d} P(φ)‖` with the eigenvalues of `base`.
pub fn delta_norm(p: &OperatorSeries, base: &DiagonalPart, s: f64) -> Result<f64> {
    check_shapes(p, base)?;
    let w = base.weights();
    strip_norm(p, s, |m| delta_norm_matrix(m, &w))
}

/// `‖B‖^G_s`: supremum of `max{‖B‖, ‖A^{-δ/d} B A^{δ/d}‖}`.
pub fn g_norm(b: &OperatorSeries, base: &DiagonalPart, s: f64) -> Result<f64> {
    check_shapes(b, base)?;
    let w = base.weights();
    strip_norm(b, s, |m| g_norm_matrix(m, &w))
}

/// Plain operator norm `‖P‖_{0,s}` (no weights).
pub fn plain_norm(p: &OperatorSeries, s: f64) -> Result<f64> {
    strip_norm(p, s, op_norm)
}

/// Finite-sample Lipschitz seminorm `max_{ω≠ω'} ‖f(ω) - f(ω')‖ / |ω - ω'|`.
///
/// `distance` supplies the norm of the difference of two members.
pub fn lipschitz_seminorm<T>(family: &[(Vec<f64>, T)], distance: impl Fn(&T, &T) -> Result<f64>) -> Result<f64> {
    if family.len() < 2 {
        return Err(Error::InvalidArgument(
            "Lipschitz seminorm needs at least two samples".into(),
        ));
    }
    let mut best: f64 = 0.0;
    for a in 0..family.len() {
        for b in (a + 1)..family.len() {
            let (wa, fa) = &family[a];
            let (wb, fb) = &family[b];
            let gap = wa.iter().zip(wb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if gap == 0.0 {
                continue;
            }
            best = best.max(distance(fa, fb)? / gap);
        }
    }
    Ok(best)
}
