#![allow(dead_code)]

use kamred::torus::{OperatorSeries, TorusSeries};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Coefficients in the unit square damped by `e^{-rho|k|_1}`.
pub fn analytic_series(rng: &mut impl Rng, n: usize, cutoff: usize, rho: f64) -> TorusSeries {
    TorusSeries::from_fn(n, cutoff, |k| {
        let l1: i64 = k.iter().map(|x| x.abs()).sum();
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * (-rho * l1 as f64).exp()
    })
}

pub fn analytic_operator(rng: &mut impl Rng, dim: usize, n: usize, cutoff: usize, rho: f64) -> OperatorSeries {
    OperatorSeries::from_fn(dim, n, cutoff, |_, _| analytic_series(rng, n, cutoff, rho)).unwrap()
}

/// Direct summation `Σ_k ĉ_k e^{ik·φ}`.
pub fn direct_sum(f: &TorusSeries, phi: &[f64]) -> Complex64 {
    let modes = f.mode_box();
    f.coeffs()
        .iter()
        .enumerate()
        .map(|(flat, z)| {
            let k = modes.mode(flat);
            let arg: f64 = k.iter().zip(phi).map(|(&a, b)| a as f64 * b).sum();
            z * Complex64::from_polar(1.0, arg)
        })
        .sum()
}

/// Largest singular value as the root of the top eigenvalue of `M* M`.
pub fn largest_singular_value(m: &nalgebra::DMatrix<Complex64>) -> f64 {
    let g = m.adjoint() * m;
    nalgebra::SymmetricEigen::new(g).eigenvalues.max().max(0.0).sqrt()
}

/// Dense Fourier–Galerkin solve of `-iω·∂χ + E1 χ + E2 h χ = b` on the box
/// `|k|_∞ ≤ m`.
pub fn galerkin_kuksin(b: &TorusSeries, h: &TorusSeries, e1: f64, e2: f64, omega: &[f64], m: usize) -> TorusSeries {
    let n = b.n();
    let modes = kamred::torus::ModeBox::new(n, m);
    let all: Vec<Vec<i64>> = modes.modes().collect();
    let size = all.len();
    let mut mat = nalgebra::DMatrix::<Complex64>::zeros(size, size);
    let mut rhs = nalgebra::DVector::<Complex64>::zeros(size);
    for (row, k) in all.iter().enumerate() {
        let wk: f64 = k.iter().zip(omega).map(|(&a, w)| a as f64 * w).sum();
        mat[(row, row)] += c(wk + e1, 0.0);
        for (col, l) in all.iter().enumerate() {
            let diff: Vec<i64> = k.iter().zip(l).map(|(a, b)| a - b).collect();
            if diff.iter().all(|d| d.unsigned_abs() as usize <= h.cutoff()) {
                mat[(row, col)] += h.coeff(&diff) * e2;
            }
        }
        if k.iter().all(|x| x.unsigned_abs() as usize <= b.cutoff()) {
            rhs[row] = b.coeff(k);
        }
    }
    let sol = mat.lu().solve(&rhs).expect("Galerkin matrix is invertible");
    TorusSeries::from_coeffs(n, m, sol.iter().copied().collect()).unwrap()
}

/// `Σ_k |f̂_k - ĝ_k|`, a bound for the sup of `|f - g|` on the real torus.
pub fn sup_difference(f: &TorusSeries, g: &TorusSeries) -> f64 {
    let cutoff = f.cutoff().max(g.cutoff());
    f.with_cutoff(cutoff)
        .sub(&g.with_cutoff(cutoff))
        .unwrap()
        .sup_norm_s(0.0)
}

/// `e^X` by Taylor series after scaling `X` below 1/2 in Frobenius norm.
pub fn taylor_expm(x: &nalgebra::DMatrix<Complex64>) -> nalgebra::DMatrix<Complex64> {
    let dim = x.nrows();
    let mut squarings = 0;
    let mut scaled = x.clone();
    while scaled.norm() > 0.5 {
        scaled /= c(2.0, 0.0);
        squarings += 1;
    }
    let mut sum = nalgebra::DMatrix::<Complex64>::identity(dim, dim);
    let mut term = sum.clone();
    for j in 1..30 {
        term = &term * &scaled / c(j as f64, 0.0);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Applies `f(values of ops, diagonal of A)` pointwise on an `m^n` grid and
/// recovers the coefficients with `|k|_∞ ≤ cutoff`.
pub fn map_on_grid(
    ops: &[&OperatorSeries],
    base: &kamred::torus::DiagonalPart,
    m: usize,
    cutoff: usize,
    f: impl Fn(&[nalgebra::DMatrix<Complex64>], &[f64]) -> nalgebra::DMatrix<Complex64>,
) -> OperatorSeries {
    let plan = kamred::torus::GridPlan::new(base.n(), m);
    let grids: Vec<_> = ops.iter().map(|op| op.to_grid(&plan).unwrap()).collect();
    let values: Vec<_> = (0..plan.points())
        .map(|pt| {
            let at: Vec<_> = grids.iter().map(|g| g[pt].clone()).collect();
            f(&at, &base.values_at(&plan.angle(pt)))
        })
        .collect();
    OperatorSeries::from_grid(&plan, &values, cutoff).unwrap().0
}
