//! Homological equations `[A,B] - iḂ + (P - diag P) = 0` for the generator `B`
//! of one conjugation step, with constant and angle-dependent diagonal `A`.
//!
//! Entry `(i,j)` of the equation reads
//! `(ω·k + λ_i - λ_j) B̂_ijk + ((μ_i - μ_j) B_ij)^_k = -P̂_ijk`,
//! so the constant case is a pointwise division and the variable case is
//! the scalar transport equation `-iω·∂χ + E1 χ + E2 h χ = b` solved by an
//! integrating factor.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diophantine::Frequency;
use crate::error::{Error, Result};
use crate::torus::{delta_norm, DiagonalPart, GridPlan, OperatorSeries, TorusSeries};

/// Coefficient noise of a grid transform, relative to the ℓ¹ size of the
/// transformed function.
const ROUNDOFF: f64 = 2.0 * f64::EPSILON;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomologicalSettings {
    /// Divisors below `divisor_scale·(1+|k|)^{-τ}` are treated as resonant.
    pub divisor_scale: f64,
    /// Strip width used to normalize `h = (μ_j - μ_i)/E2`.
    pub strip: f64,
    /// Largest Fourier cutoff of any produced series.
    pub max_cutoff: usize,
    /// ℓ¹ tail mass (relative) dropped when trimming intermediate series.
    pub tail_tol: f64,
    /// Order guard `E1^θ ≥ C·E2` of the scalar solver.
    pub theta: f64,
    pub kuksin_c: f64,
    /// Guard `C_μ/C_λ < C*`.
    pub cstar: f64,
}

impl Default for HomologicalSettings {
    fn default() -> Self {
        Self {
            divisor_scale: 1e-12,
            strip: 0.0,
            max_cutoff: 64,
            tail_tol: 1e-16,
            theta: 0.5,
            kuksin_c: 1.0,
            cstar: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    /// `min E1^θ / (C·E2)` over pairs (infinite when every `E2 = 0`).
    pub kuksin_ratio: f64,
    pub kuksin_ok: bool,
    /// `C_μ / C_λ`
    pub mu_lambda_ratio: f64,
    pub cstar_ok: bool,
}

impl GuardReport {
    pub fn ok(&self) -> bool {
        self.kuksin_ok && self.cstar_ok
    }
}

#[derive(Debug, Clone)]
pub struct HomologicalSolution {
    pub b: OperatorSeries,
    /// `‖[A,B] - iḂ + P - diag P‖_{δ,0} / ‖P - diag P‖_{δ,0}` (0 when `P` is diagonal).
    pub residual: f64,
    /// Smallest `|ω·k + λ_i - λ_j|` met with a nonzero numerator.
    pub divisor_floor: f64,
    pub guard: GuardReport,
    pub warnings: Vec<String>,
}

fn check_shapes(p: &OperatorSeries, base: &DiagonalPart, omega: &Frequency) -> Result<()> {
    if p.dim() != base.dim() || p.n() != base.n() || omega.n() != p.n() {
        return Err(Error::Shape(format!(
            "P is {}x{} on T^{}, base has {} modes on T^{}, ω has {} components",
            p.dim(),
            p.dim(),
            p.n(),
            base.dim(),
            base.n(),
            omega.n()
        )));
    }
    Ok(())
}

fn check_hermitian(p: &OperatorSeries) -> Result<()> {
    let tol = 1e-12 * p.max_coeff().max(1e-300);
    if p.hermiticity_defect() > tol {
        return Err(Error::NotHermitian(format!(
            "hermiticity defect {:.3e}",
            p.hermiticity_defect()
        )));
    }
    Ok(())
}

/// Constant-coefficient solve, `B̂_ijk = -P̂_ijk/(ω·k + λ_i - λ_j)`, `B_ii = 0`.
/// Entries below the diagonal are mirrored, so `B` is exactly anti-hermitian.
pub fn solve_constant(
    p: &OperatorSeries,
    base: &DiagonalPart,
    omega: &Frequency,
    settings: &HomologicalSettings,
) -> Result<HomologicalSolution> {
    check_shapes(p, base, omega)?;
    if !base.has_constant_coefficients() {
        return Err(Error::InvalidArgument(
            "constant solver needs μ ≡ 0; use solve_variable".into(),
        ));
    }
    check_hermitian(p)?;
    let dim = p.dim();
    let lambda = base.lambda();
    let modes = p.entries()[0].mode_box();
    let dots = modes.dot_table(&omega.omega);
    let all: Vec<Vec<i64>> = modes.modes().collect();
    let mut b = OperatorSeries::zeros(dim, p.n(), p.cutoff());
    let mut floor = f64::INFINITY;
    for i in 0..dim {
        for j in (i + 1)..dim {
            let src = p.entry(i, j);
            let mut out = TorusSeries::zeros(p.n(), p.cutoff());
            for (flat, c) in src.coeffs().iter().enumerate() {
                if *c == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let div = dots[flat] + lambda[i] - lambda[j];
                let min = omega.divisor_floor(&all[flat], settings.divisor_scale);
                if !(div.abs() >= min) {
                    return Err(Error::DivisorTooSmall {
                        i: Some(i + 1),
                        j: Some(j + 1),
                        k: all[flat].clone(),
                        value: div.abs(),
                        floor: min,
                    });
                }
                floor = floor.min(div.abs());
                out.coeffs_mut()[flat] = -c / div;
            }
            b.set_entry(j, i, out.conj_on_real_torus().scale(Complex64::new(-1.0, 0.0)));
            b.set_entry(i, j, out);
        }
    }
    let residual = homological_residual(&b, p, base, omega)?;
    let guard = guard_report(base, &[], settings);
    Ok(HomologicalSolution {
        b,
        residual,
        divisor_floor: floor,
        guard,
        warnings: Vec::new(),
    })
}

fn divisor_error(k: Vec<i64>, value: f64, floor: f64) -> Error {
    Error::DivisorTooSmall {
        i: None,
        j: None,
        k,
        value,
        floor,
    }
}

fn check_zero_average(h: &TorusSeries) -> Result<()> {
    let scale = h.sup_norm_s(0.0).max(1.0);
    if !h.is_zero_average(1e-12 * scale) {
        return Err(Error::InvalidArgument(format!(
            "expected zero-average series, mean is {:.3e}",
            h.mean().norm()
        )));
    }
    Ok(())
}

/// `H` with `ω·∂H = h`, `Ĥ_k = ĥ_k/(iω·k)`, `Ĥ_0 = 0`.
pub fn torus_primitive(h: &TorusSeries, omega: &Frequency, settings: &HomologicalSettings) -> Result<TorusSeries> {
    if h.n() != omega.n() {
        return Err(Error::Shape("series and frequency live on different tori".into()));
    }
    check_zero_average(h)?;
    let modes = h.mode_box();
    let dots = modes.dot_table(&omega.omega);
    let mut out = TorusSeries::zeros(h.n(), h.cutoff());
    let zero = modes.index(&vec![0; h.n()]).expect("origin is in every box");
    for (flat, c) in h.coeffs().iter().enumerate() {
        if flat == zero || *c == Complex64::new(0.0, 0.0) {
            continue;
        }
        let k = modes.mode(flat);
        let floor = omega.divisor_floor(&k, settings.divisor_scale);
        if !(dots[flat].abs() >= floor) {
            return Err(divisor_error(k, dots[flat].abs(), floor));
        }
        out.coeffs_mut()[flat] = c / (I * dots[flat]);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct KuksinSolution {
    pub chi: TorusSeries,
    /// `‖Lχ - b‖_0 / ‖b‖_0` with all products formed exactly.
    pub residual: f64,
    /// Smallest `|ω·k + E1|` met.
    pub divisor_floor: f64,
    /// `E1^θ / (C·E2)`, infinite for `E2 = 0`.
    pub guard_ratio: f64,
    pub guard_ok: bool,
}

/// `e^{i c H}` as a series, resolved until the outer shells carry no mass.
fn phase_factor(hp: &TorusSeries, c: f64, settings: &HomologicalSettings) -> Result<TorusSeries> {
    let n = hp.n();
    let scale_tol = settings.tail_tol;
    let mut cut = (2 * hp.cutoff()).max(8).min(settings.max_cutoff.max(1));
    loop {
        let plan = GridPlan::new(n, GridPlan::size_for(cut, 4));
        let values: Vec<Complex64> = plan.to_grid(hp)?.into_iter().map(|v| (I * c * v).exp()).collect();
        let (g, _) = plan.from_grid_with_residue(&values, cut)?;
        let g = g.chopped(ROUNDOFF);
        let masses = g.shell_masses();
        let outer: f64 = masses[cut / 2 + 1..].iter().sum();
        if outer <= scale_tol || cut >= settings.max_cutoff {
            let g = g.trimmed(scale_tol, hp.cutoff().min(cut));
            let check = GridPlan::new(n, GridPlan::size_for(g.cutoff(), 2));
            let defect = check
                .to_grid(&g)?
                .iter()
                .map(|z| (z.norm() - 1.0).abs())
                .fold(0.0, f64::max);
            if defect > 1e-12 {
                return Err(Error::GuardViolated(format!(
                    "integrating factor not unimodular to 1e-12 (defect {defect:.3e}) at cutoff {}",
                    g.cutoff()
                )));
            }
            return Ok(g);
        }
        cut = (2 * cut).min(settings.max_cutoff);
    }
}

fn divide_by(
    v: &TorusSeries,
    e1: f64,
    omega: &Frequency,
    settings: &HomologicalSettings,
    floor: &mut f64,
) -> Result<TorusSeries> {
    let modes = v.mode_box();
    let dots = modes.dot_table(&omega.omega);
    let mut out = TorusSeries::zeros(v.n(), v.cutoff());
    for (flat, c) in v.coeffs().iter().enumerate() {
        if *c == Complex64::new(0.0, 0.0) {
            continue;
        }
        let div = dots[flat] + e1;
        let k = modes.mode(flat);
        let min = omega.divisor_floor(&k, settings.divisor_scale);
        if !(div.abs() >= min) {
            return Err(divisor_error(k, div.abs(), min));
        }
        *floor = floor.min(div.abs());
        out.coeffs_mut()[flat] = c / div;
    }
    Ok(out)
}

/// `Lχ = -iω·∂χ + E1 χ + E2 h χ`, formed exactly.
pub fn kuksin_operator(chi: &TorusSeries, h: &TorusSeries, e1: f64, e2: f64, omega: &Frequency) -> Result<TorusSeries> {
    let transport = chi.directional_derivative(&omega.omega).scale(-I);
    let mut out = transport.add_scaled(chi, Complex64::new(e1, 0.0))?;
    if e2 != 0.0 && !h.is_zero() {
        let (hc, _) = h.product(chi, h.cutoff() + chi.cutoff(), 2)?;
        out = out.add_scaled(&hc, Complex64::new(e2, 0.0))?;
    }
    Ok(out)
}

/// Solves `-iω·∂χ + E1 χ + E2 h χ = b` as `χ = e^{-iE2 H} u` with
/// `ω·∂H = h` and `û_k = (e^{iE2 H} b)^_k / (ω·k + E1)`.
pub fn solve_kuksin(
    b: &TorusSeries,
    h: &TorusSeries,
    e1: f64,
    e2: f64,
    omega: &Frequency,
    settings: &HomologicalSettings,
) -> Result<KuksinSolution> {
    if !(e1 > 0.0) || !(e2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need E1 > 0 and E2 ≥ 0, got {e1}, {e2}"
        )));
    }
    if b.n() != omega.n() || h.n() != omega.n() {
        return Err(Error::Shape("series and frequency live on different tori".into()));
    }
    check_zero_average(h)?;
    let guard_ratio = if e2 == 0.0 {
        f64::INFINITY
    } else {
        e1.powf(settings.theta) / (settings.kuksin_c * e2)
    };
    let mut floor = f64::INFINITY;
    let bnorm = b.sup_norm_s(0.0);
    let tol = settings.tail_tol * bnorm;
    let chi = if e2 == 0.0 || h.is_zero() {
        divide_by(b, e1, omega, settings, &mut floor)?
    } else {
        let hp = torus_primitive(h, omega, settings)?;
        let g = phase_factor(&hp, e2, settings)?;
        let (v, _) = g.product(b, g.cutoff() + b.cutoff(), 2)?;
        let v = v.chopped(ROUNDOFF * g.sup_norm_s(0.0) * bnorm);
        let v = v.trimmed(tol, b.cutoff()).with_cutoff_capped(settings.max_cutoff);
        let u = divide_by(&v, e1, omega, settings, &mut floor)?;
        let (chi, _) = g.conj_on_real_torus().product(&u, g.cutoff() + u.cutoff(), 2)?;
        let chi = chi.chopped(ROUNDOFF * g.sup_norm_s(0.0) * u.sup_norm_s(0.0));
        chi.trimmed(tol, b.cutoff()).with_cutoff_capped(settings.max_cutoff)
    };
    let defect = kuksin_operator(&chi, h, e1, e2, omega)?.sub(b)?;
    let residual = if bnorm == 0.0 {
        defect.sup_norm_s(0.0)
    } else {
        defect.sup_norm_s(0.0) / bnorm
    };
    Ok(KuksinSolution {
        chi,
        residual,
        divisor_floor: floor,
        guard_ratio,
        guard_ok: guard_ratio >= 1.0,
    })
}

trait CapCutoff {
    fn with_cutoff_capped(self, cap: usize) -> Self;
}

impl CapCutoff for TorusSeries {
    fn with_cutoff_capped(self, cap: usize) -> Self {
        if self.cutoff() > cap {
            self.with_cutoff(cap)
        } else {
            self
        }
    }
}

fn guard_report(base: &DiagonalPart, ratios: &[f64], settings: &HomologicalSettings) -> GuardReport {
    let kuksin_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let c_lambda = base.c_lambda();
    let mu_lambda_ratio = base.c_mu(settings.strip) / c_lambda;
    GuardReport {
        kuksin_ratio,
        kuksin_ok: kuksin_ratio >= 1.0,
        mu_lambda_ratio,
        cstar_ok: mu_lambda_ratio < settings.cstar,
    }
}

/// Variable-coefficient solve. Each pair `i < j` is solved once for `B_ji`
/// (where `E1 = λ_j - λ_i > 0`), and `B_ij = -conj(B_ji)` on the real torus.
pub fn solve_variable(
    p: &OperatorSeries,
    base: &DiagonalPart,
    omega: &Frequency,
    settings: &HomologicalSettings,
) -> Result<HomologicalSolution> {
    check_shapes(p, base, omega)?;
    check_hermitian(p)?;
    let dim = p.dim();
    let lambda = base.lambda();
    let mu = base.mu();
    let pairs: Vec<(usize, usize)> = (0..dim).flat_map(|i| ((i + 1)..dim).map(move |j| (i, j))).collect();
    let solved: Vec<Result<(usize, usize, KuksinSolution)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let rhs = p.entry(j, i).scale(Complex64::new(-1.0, 0.0));
            let diff = mu[j].sub(&mu[i])?;
            let e2 = diff.sup_norm_s(settings.strip);
            let h = if e2 > 0.0 {
                diff.scale(Complex64::new(1.0 / e2, 0.0))
            } else {
                TorusSeries::zeros(p.n(), 0)
            };
            let sol = solve_kuksin(&rhs, &h, lambda[j] - lambda[i], e2, omega, settings).map_err(|e| match e {
                Error::DivisorTooSmall { k, value, floor, .. } => Error::DivisorTooSmall {
                    i: Some(j + 1),
                    j: Some(i + 1),
                    k,
                    value,
                    floor,
                },
                other => other,
            })?;
            Ok((i, j, sol))
        })
        .collect();

    let mut cutoff = p.cutoff();
    let mut parts = Vec::with_capacity(pairs.len());
    for r in solved {
        let (i, j, sol) = r?;
        cutoff = cutoff.max(sol.chi.cutoff());
        parts.push((i, j, sol));
    }
    let mut b = OperatorSeries::zeros(dim, p.n(), cutoff);
    let mut floor = f64::INFINITY;
    let mut ratios = Vec::with_capacity(parts.len());
    for (i, j, sol) in parts {
        floor = floor.min(sol.divisor_floor);
        ratios.push(sol.guard_ratio);
        let chi = sol.chi.with_cutoff(cutoff);
        b.set_entry(i, j, chi.conj_on_real_torus().scale(Complex64::new(-1.0, 0.0)));
        b.set_entry(j, i, chi);
    }
    let residual = homological_residual(&b, p, base, omega)?;
    let guard = guard_report(base, &ratios, settings);
    let mut warnings = Vec::new();
    if !guard.kuksin_ok {
        warnings.push(format!(
            "order guard E1^θ ≥ C·E2 violated (worst ratio {:.3e})",
            guard.kuksin_ratio
        ));
    }
    if !guard.cstar_ok {
        warnings.push(format!(
            "C_μ/C_λ = {:.3e} exceeds C* = {}",
            guard.mu_lambda_ratio, settings.cstar
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(HomologicalSolution {
        b,
        residual,
        divisor_floor: floor,
        guard,
        warnings,
    })
}

/// `[A,B] - iω·∂B + (P - diag P)` with `A = diag(λ_i + μ_i(φ))`, formed exactly.
pub fn homological_defect(
    b: &OperatorSeries,
    p: &OperatorSeries,
    base: &DiagonalPart,
    omega: &Frequency,
) -> Result<OperatorSeries> {
    check_shapes(p, base, omega)?;
    let dim = b.dim();
    let lambda = base.lambda();
    let mu = base.mu();
    let cutoff = b.cutoff().max(p.cutoff()) + base.mu_cutoff();
    let entries: Vec<Result<TorusSeries>> = (0..dim * dim)
        .into_par_iter()
        .map(|flat| {
            let (i, j) = (flat / dim, flat % dim);
            if i == j {
                return Ok(TorusSeries::zeros(b.n(), cutoff));
            }
            let bij = b.entry(i, j);
            let mut out = bij
                .directional_derivative(&omega.omega)
                .scale(-I)
                .add_scaled(bij, Complex64::new(lambda[i] - lambda[j], 0.0))?
                .add(p.entry(i, j))?;
            let diff = mu[i].sub(&mu[j])?;
            if !diff.is_zero() {
                let (prod, _) = diff.product(bij, diff.cutoff() + bij.cutoff(), 2)?;
                out = out.add(&prod)?;
            }
            Ok(out.with_cutoff(cutoff))
        })
        .collect();
    OperatorSeries::from_entries(dim, entries.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Relative `δ,0`-norm of [`homological_defect`].
pub fn homological_residual(
    b: &OperatorSeries,
    p: &OperatorSeries,
    base: &DiagonalPart,
    omega: &Frequency,
) -> Result<f64> {
    let defect = homological_defect(b, p, base, omega)?;
    let r = delta_norm(&defect, base, 0.0)?;
    let scale = delta_norm(&p.off_diagonal(), base, 0.0)?;
    Ok(if scale > 0.0 { r / scale } else { r })
}
