//! The anharmonic oscillator `-d²/dx² + Q(x)` with `Q ~ |x|^α`: eigenpairs
//! from a parity-split sinc discretization, perturbation matrices of
//! `V(x, φ) = Σ_m v_m(x) g_m(φ)` in its eigenbasis, and the growth and
//! boundedness diagnostics that place a model inside or outside the
//! reducibility range.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::norms::delta_norm_matrix;
use crate::torus::{DiagonalPart, GridPlan, OperatorSeries, TorusSeries};

/// `coeff·|x|^power`, times `sign(x)` when `odd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerTerm {
    pub coeff: f64,
    pub power: f64,
    #[serde(default)]
    pub odd: bool,
}

impl PowerTerm {
    pub fn even(coeff: f64, power: f64) -> Self {
        Self {
            coeff,
            power,
            odd: false,
        }
    }

    pub fn odd(coeff: f64, power: f64) -> Self {
        Self {
            coeff,
            power,
            odd: true,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let v = self.coeff * x.abs().powf(self.power);
        if self.odd {
            v * x.signum()
        } else {
            v
        }
    }
}

fn eval_terms(terms: &[PowerTerm], x: f64) -> f64 {
    terms.iter().map(|t| t.eval(x)).sum()
}

fn default_tol() -> f64 {
    1e-8
}

fn default_refinements() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorSpec {
    pub alpha: f64,
    /// Even terms of `Q`; `None` means `|x|^α`.
    #[serde(default)]
    pub potential: Option<Vec<PowerTerm>>,
    /// Number of eigenpairs to certify.
    #[serde(rename = "N")]
    pub modes: usize,
    /// Grid spacing; chosen from a WKB estimate of `λ_N` when absent.
    #[serde(default)]
    pub grid_step: Option<f64>,
    /// The grid covers `[-L, L]`; chosen from the WKB decay length when absent.
    #[serde(default)]
    pub half_width: Option<f64>,
    /// Relative eigenvalue change allowed under resolution doubling.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_refinements")]
    pub max_refinements: usize,
}

impl OscillatorSpec {
    pub fn power(alpha: f64, modes: usize) -> Self {
        Self {
            alpha,
            potential: None,
            modes,
            grid_step: None,
            half_width: None,
            tol: default_tol(),
            max_refinements: default_refinements(),
        }
    }

    pub fn potential(&self) -> Vec<PowerTerm> {
        self.potential
            .clone()
            .unwrap_or_else(|| vec![PowerTerm::even(1.0, self.alpha)])
    }

    /// `d = 2α/(α+2)`.
    pub fn growth_exponent(&self) -> f64 {
        2.0 * self.alpha / (self.alpha + 2.0)
    }

    /// Checks that the discretization is well posed. `α = 2` is accepted so
    /// that the harmonic oscillator can serve as an exact reference.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 2.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha = {} must be at least 2",
                self.alpha
            )));
        }
        if self.modes == 0 {
            return Err(Error::InvalidArgument("need at least one mode".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("convergence tolerance must be positive".into()));
        }
        let terms = self.potential();
        if terms.iter().any(|t| t.odd || !(t.power >= 0.0) || !t.coeff.is_finite()) {
            return Err(Error::InvalidArgument(
                "potential terms must be even with finite coefficients and powers >= 0".into(),
            ));
        }
        let lead = terms.iter().fold(f64::NEG_INFINITY, |a, t| a.max(t.power));
        let lead_coeff: f64 = terms.iter().filter(|t| t.power == lead).map(|t| t.coeff).sum();
        if (lead - self.alpha).abs() > 1e-12 || !(lead_coeff > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "potential must grow like |x|^{} with a positive coefficient",
                self.alpha
            )));
        }
        for v in [self.grid_step, self.half_width].into_iter().flatten() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument("grid parameters must be positive".into()));
            }
        }
        Ok(())
    }

    /// `α > 2`, required for the reducibility statement.
    pub fn check_growth(&self) -> Result<()> {
        if self.alpha > 2.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("alpha = {} is not above 2", self.alpha)))
        }
    }
}

/// One diagonalization on `(m+½)h`, `|m| < M`.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub step: f64,
    pub half_width: f64,
    /// Grid abscissae in increasing order.
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Orthonormal eigenvectors as columns, `ψ_i(x_m) ≈ V[m,i]/√h`.
    pub vectors: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCertificate {
    pub step: f64,
    pub half_width: f64,
    pub points: usize,
    pub refined_step: f64,
    pub refined_half_width: f64,
    pub refined_points: usize,
    /// `|λ_i(h) - λ_i(h/2)| / λ_i` for every certified mode.
    pub deltas: Vec<f64>,
    pub max_delta: f64,
    pub tol: f64,
    /// Doublings performed before the certificate held.
    pub refinements: usize,
}

#[derive(Debug, Clone)]
pub struct Oscillator {
    pub spec: OscillatorSpec,
    /// Certified level.
    pub primary: Discretization,
    /// The doubled level used to certify it.
    pub refined: Discretization,
    pub certificate: ConvergenceCertificate,
}

/// Sinc kinetic matrix element `T(i - j)`.
fn kinetic(diff: i64, h: f64) -> f64 {
    if diff == 0 {
        std::f64::consts::PI.powi(2) / (3.0 * h * h)
    } else {
        let sign = if diff % 2 == 0 { 1.0 } else { -1.0 };
        2.0 * sign / (h * h * (diff * diff) as f64)
    }
}

fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(l, v)| (*l, v.iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

fn discretize(terms: &[PowerTerm], step: f64, half_width: f64, modes: usize) -> Result<Discretization> {
    let half = (half_width / step).ceil() as usize;
    if half < modes {
        return Err(Error::InvalidArgument(format!(
            "grid with {} points per side cannot resolve {modes} modes",
            half
        )));
    }
    let xs: Vec<f64> = (0..half).map(|m| (m as f64 + 0.5) * step).collect();
    let block = |sign: f64| {
        DMatrix::from_fn(half, half, |a, b| {
            let t = kinetic(a as i64 - b as i64, step) + sign * kinetic((a + b + 1) as i64, step);
            if a == b {
                t + eval_terms(terms, xs[a])
            } else {
                t
            }
        })
    };
    let (even, odd) = rayon::join(|| sorted_eigen(block(1.0)), || sorted_eigen(block(-1.0)));

    let mut merged: Vec<(f64, f64, Vec<f64>)> = even
        .into_iter()
        .map(|(l, v)| (l, 1.0, v))
        .chain(odd.into_iter().map(|(l, v)| (l, -1.0, v)))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));
    merged.truncate(modes);

    let points = 2 * half;
    let mut x = Vec::with_capacity(points);
    x.extend(xs.iter().rev().map(|v| -v));
    x.extend(xs.iter().copied());
    let mut vectors = DMatrix::zeros(points, modes);
    let mut lambda = Vec::with_capacity(modes);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for (col, (l, parity, v)) in merged.into_iter().enumerate() {
        // Sign convention: the largest amplitude on x > 0 is positive.
        let peak = v
            .iter()
            .copied()
            .fold(0.0f64, |a, c| if c.abs() > a.abs() { c } else { a });
        let s = if peak < 0.0 { -r } else { r };
        for (m, c) in v.iter().enumerate() {
            vectors[(half + m, col)] = s * c;
            vectors[(half - 1 - m, col)] = parity * s * c;
        }
        lambda.push(l);
    }
    Ok(Discretization {
        step,
        half_width,
        x,
        lambda,
        vectors,
    })
}

/// Largest `x ≥ 0` with `Q(x) ≤ level`.
fn turning_point(terms: &[PowerTerm], level: f64) -> f64 {
    let mut hi = 1.0;
    while eval_terms(terms, hi) <= level {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval_terms(terms, mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Bohr-Sommerfeld estimate of `λ_N`.
fn wkb_level(terms: &[PowerTerm], mode: usize) -> f64 {
    let target = std::f64::consts::PI * (mode as f64 - 0.5);
    let action = |l: f64| {
        let xt = turning_point(terms, l);
        2.0 * simpson(|x| (l - eval_terms(terms, x)).max(0.0).sqrt(), 0.0, xt, 2000)
    };
    let mut hi = 1.0;
    while action(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if action(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Automatic `(h, L)`: the grid resolves momenta up to twice `√λ_max` and
/// extends past the outer turning point until the WKB decay exponent
/// reaches 40.
fn auto_grid(terms: &[PowerTerm], modes: usize) -> (f64, f64) {
    let level = 1.2 * wkb_level(terms, modes) + 1.0;
    let qmin = (0..=1000)
        .map(|i| eval_terms(terms, 0.01 * i as f64))
        .fold(f64::INFINITY, f64::min);
    let pmax = (level - qmin.min(0.0)).sqrt();
    let step = std::f64::consts::PI / (2.0 * pmax);
    let xt = turning_point(terms, level);
    let mut x = xt;
    let mut decay = 0.0;
    let dx = 0.01 * xt.max(0.1);
    while decay < 40.0 {
        decay += dx * (eval_terms(terms, x + 0.5 * dx) - level).max(0.0).sqrt();
        x += dx;
    }
    (step, x)
}

/// Eigenpairs of `-d²/dx² + Q` certified by resolution doubling.
///
/// Each doubling halves the grid spacing and widens the domain by 10%.
pub fn build_oscillator(spec: &OscillatorSpec) -> Result<Oscillator> {
    spec.validate()?;
    let terms = spec.potential();
    let (auto_step, auto_width) = auto_grid(&terms, spec.modes);
    let mut step = spec.grid_step.unwrap_or(auto_step);
    let mut width = spec.half_width.unwrap_or(auto_width);
    let mut coarse = discretize(&terms, step, width, spec.modes)?;
    let mut last_bad = None;
    for refinement in 0..=spec.max_refinements {
        step *= 0.5;
        width *= 1.1;
        let fine = discretize(&terms, step, width, spec.modes)?;
        let deltas: Vec<f64> = coarse
            .lambda
            .iter()
            .zip(&fine.lambda)
            .map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE))
            .collect();
        match deltas.iter().position(|d| !(*d < spec.tol)) {
            None => {
                check_simple(&coarse.lambda)?;
                let certificate = ConvergenceCertificate {
                    step: coarse.step,
                    half_width: coarse.half_width,
                    points: coarse.x.len(),
                    refined_step: fine.step,
                    refined_half_width: fine.half_width,
                    refined_points: fine.x.len(),
                    max_delta: deltas.iter().copied().fold(0.0, f64::max),
                    deltas,
                    tol: spec.tol,
                    refinements: refinement,
                };
                return Ok(Oscillator {
                    spec: spec.clone(),
                    primary: coarse,
                    refined: fine,
                    certificate,
                });
            }
            Some(bad) => {
                log::debug!("mode {} moved by {:.3e} at h = {}", bad + 1, deltas[bad], coarse.step);
                last_bad = Some((bad + 1, deltas[bad]));
                coarse = fine;
            }
        }
    }
    let (first_bad, change) = last_bad.expect("at least one refinement ran");
    Err(Error::NotConverged {
        first_bad,
        change,
        tol: spec.tol,
    })
}

fn check_simple(lambda: &[f64]) -> Result<()> {
    if let Some(i) = lambda
        .windows(2)
        .position(|w| !(w[1] - w[0] > 1e-12 * w[1].abs().max(1.0)))
    {
        return Err(Error::InvalidArgument(format!(
            "eigenvalues {} and {} are not separated",
            i + 1,
            i + 2
        )));
    }
    Ok(())
}

impl Oscillator {
    pub fn lambda(&self) -> &[f64] {
        &self.primary.lambda
    }

    pub fn modes(&self) -> usize {
        self.primary.lambda.len()
    }

    /// `max |VᵀV - I|` of the primary eigenvectors.
    pub fn gram_defect(&self) -> f64 {
        let v = &self.primary.vectors;
        let g = v.transpose() * v;
        let n = g.nrows();
        (g - DMatrix::identity(n, n)).amax()
    }

    /// Constant diagonal part from the first `dim` eigenvalues, with
    /// `d = 2α/(α+2)`.
    pub fn diagonal_part(&self, dim: usize, n: usize, delta: f64) -> Result<DiagonalPart> {
        if dim > self.modes() {
            return Err(Error::InvalidArgument(format!(
                "{dim} modes requested but {} are certified",
                self.modes()
            )));
        }
        DiagonalPart::constant(self.lambda()[..dim].to_vec(), n, self.spec.growth_exponent(), delta)
    }
}

/// Least-squares growth exponent of `log λ_i` against `log i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub d: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Fits `λ_i ≈ c·i^d` over the 1-based inclusive range `first..=last`.
pub fn asymptotic_exponent_fit(lambdas: &[f64], first: usize, last: usize) -> Result<ExponentFit> {
    if first == 0 || last > lambdas.len() || last < first {
        return Err(Error::InvalidArgument(format!(
            "range {first}..={last} outside 1..={}",
            lambdas.len()
        )));
    }
    let points = last - first + 1;
    if points < 5 {
        return Err(Error::InvalidArgument(format!(
            "{points} points; the fit needs at least 5"
        )));
    }
    let mut xs = Vec::with_capacity(points);
    let mut ys = Vec::with_capacity(points);
    for i in first..=last {
        let l = lambdas[i - 1];
        if !(l > 0.0) {
            return Err(Error::NonPositiveEigenvalue { index: i, value: l });
        }
        xs.push((i as f64).ln());
        ys.push(l.ln());
    }
    let m = points as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let d = sxy / sxx;
    let intercept = ybar - d * xbar;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - d * x).powi(2)).sum();
    Ok(ExponentFit {
        d,
        stderr: (ssr / (m - 2.0) / sxx).sqrt(),
        intercept,
        points,
    })
}

/// `min_{i≠j≤N} |λ_i - λ_j| / |i^d - j^d|` for every prefix length in `sizes`.
pub fn c_lambda_profile(lambda: &[f64], d: f64, sizes: &[usize]) -> Vec<(usize, f64)> {
    let pw: Vec<f64> = (1..=lambda.len()).map(|i| (i as f64).powf(d)).collect();
    // Running minimum over pairs (i, j) with j < size.
    let mut best_upto = vec![f64::INFINITY; lambda.len()];
    let mut best = f64::INFINITY;
    for j in 0..lambda.len() {
        for i in 0..j {
            best = best.min((lambda[j] - lambda[i]).abs() / (pw[j] - pw[i]));
        }
        best_upto[j] = best;
    }
    sizes
        .iter()
        .filter(|&&s| s >= 2 && s <= lambda.len())
        .map(|&s| (s, best_upto[s - 1]))
        .collect()
}

/// One Fourier coefficient `ĝ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierCoeff {
    pub k: Vec<i64>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl FourierCoeff {
    /// `amp·cos(k·φ)`.
    pub fn cos(k: &[i64], amp: f64) -> Vec<Self> {
        if k.iter().all(|&c| c == 0) {
            return vec![Self {
                k: k.to_vec(),
                re: amp,
                im: 0.0,
            }];
        }
        let neg: Vec<i64> = k.iter().map(|c| -c).collect();
        vec![
            Self {
                k: k.to_vec(),
                re: 0.5 * amp,
                im: 0.0,
            },
            Self {
                k: neg,
                re: 0.5 * amp,
                im: 0.0,
            },
        ]
    }

    /// `amp·sin(k·φ)`.
    pub fn sin(k: &[i64], amp: f64) -> Vec<Self> {
        let neg: Vec<i64> = k.iter().map(|c| -c).collect();
        vec![
            Self {
                k: k.to_vec(),
                re: 0.0,
                im: -0.5 * amp,
            },
            Self {
                k: neg,
                re: 0.0,
                im: 0.5 * amp,
            },
        ]
    }
}

/// `v(x)·g(φ)` with `v` a sum of power terms and `g` a finite real Fourier sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationTerm {
    pub spatial: Vec<PowerTerm>,
    pub fourier: Vec<FourierCoeff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Declared growth `|V(x,φ)| ≲ |x|^β`.
    pub beta: f64,
    pub n: usize,
    pub terms: Vec<PerturbationTerm>,
}

/// Per-entry quadrature agreement between the primary and refined grids.
const QUADRATURE_TOL: f64 = 1e-9;
const PRIMARY_DEGREE: usize = 10;
const REFINED_DEGREE: usize = 14;

impl PerturbationSpec {
    /// `|x|^β cos(φ_1)` (or `x|x|^{β-1}` when `odd`).
    pub fn power_cos(beta: f64, n: usize, odd: bool) -> Self {
        let mut k = vec![0; n];
        k[0] = 1;
        Self {
            beta,
            n,
            terms: vec![PerturbationTerm {
                spatial: vec![PowerTerm {
                    coeff: 1.0,
                    power: beta,
                    odd,
                }],
                fourier: FourierCoeff::cos(&k, 1.0),
            }],
        }
    }

    /// Largest angular cutoff among the `g_m`.
    pub fn cutoff(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|t| t.fourier.iter())
            .flat_map(|c| c.k.iter())
            .map(|c| c.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.terms.is_empty() {
            return Err(Error::InvalidArgument(
                "perturbation needs n >= 1 and at least one term".into(),
            ));
        }
        for (m, t) in self.terms.iter().enumerate() {
            for p in &t.spatial {
                if !(p.power >= 0.0) || p.power > self.beta + 1e-12 || !p.coeff.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "term {} has power {} outside [0, beta = {}]",
                        m + 1,
                        p.power,
                        self.beta
                    )));
                }
            }
            if t.fourier.iter().any(|c| c.k.len() != self.n) {
                return Err(Error::Shape(format!("term {} has a mode of the wrong length", m + 1)));
            }
        }
        Ok(())
    }

    /// `β < (α-2)/2`.
    pub fn within_growth_bound(&self, alpha: f64) -> bool {
        self.beta < 0.5 * (alpha - 2.0)
    }

    fn angular(&self, term: &PerturbationTerm, cutoff: usize) -> Result<TorusSeries> {
        let mut g = TorusSeries::zeros(self.n, cutoff);
        for c in &term.fourier {
            let slot = g
                .coeff_mut(&c.k)
                .ok_or_else(|| Error::InvalidArgument(format!("mode {:?} exceeds cutoff {cutoff}", c.k)))?;
            *slot += Complex64::new(c.re, c.im);
        }
        let scale = g.sup_norm_s(0.0).max(1.0);
        if !g.is_real(1e-14 * scale) {
            return Err(Error::InvalidArgument("angular factor is not real".into()));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone)]
pub struct PerturbationMatrix {
    pub p: OperatorSeries,
    /// Largest primary-vs-refined change of a matrix element, relative to
    /// `max(1, |entry|)`.
    pub quadrature_change: f64,
    pub within_growth_bound: bool,
}

/// Gauss-Legendre rule on `[-L, L]`: panels of width `panel`, with the two
/// panels next to the origin graded geometrically so that `|x|^β` kinks
/// are integrated accurately.
fn graded_rule(half_width: f64, panel: f64, degree: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(NonZeroUsize::new(degree).expect("positive degree"));
    let mut breaks = vec![0.0];
    breaks.extend((1..=40).rev().map(|j| panel * 0.5f64.powi(j)));
    let mut b = panel;
    while b < half_width {
        breaks.push(b);
        b += panel;
    }
    breaks.push(half_width);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in breaks.windows(2) {
        let (a, c) = (w[0], w[1]);
        for (t, wt) in rule.iter() {
            let x = 0.5 * (c - a) * t + 0.5 * (c + a);
            let scale = 0.5 * (c - a) * wt;
            nodes.extend([x, -x]);
            weights.extend([scale, scale]);
        }
    }
    (nodes, weights)
}

/// Values of the sinc interpolants of the first `dim` eigenvectors at `nodes`.
fn interpolate(disc: &Discretization, nodes: &[f64], dim: usize) -> DMatrix<f64> {
    let h = disc.step;
    let norm = h.sqrt().recip();
    let rows: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|&x| {
            disc.x
                .iter()
                .map(|&xm| {
                    let t = std::f64::consts::PI * (x - xm) / h;
                    norm * if t.abs() < 1e-12 { 1.0 } else { t.sin() / t }
                })
                .collect()
        })
        .collect();
    let s = DMatrix::from_fn(nodes.len(), disc.x.len(), |r, c| rows[r][c]);
    s * disc.vectors.columns(0, dim)
}

/// `⟨ψ_i, v ψ_j⟩` for every term, by graded Gauss-Legendre quadrature of
/// the interpolated eigenfunctions.
fn spatial_matrices(disc: &Discretization, terms: &[PerturbationTerm], dim: usize, degree: usize) -> Vec<DMatrix<f64>> {
    let width = disc.x[disc.x.len() - 1] + 0.5 * disc.step;
    let (nodes, weights) = graded_rule(width, disc.step, degree);
    let psi = interpolate(disc, &nodes, dim);
    terms
        .iter()
        .map(|t| {
            let mut scaled = psi.clone();
            for (r, mut row) in scaled.row_iter_mut().enumerate() {
                row *= weights[r] * eval_terms(&t.spatial, nodes[r]);
            }
            psi.transpose() * scaled
        })
        .collect()
}

/// `P_ij(φ) = Σ_m ⟨ψ_i, v_m ψ_j⟩ g_m(φ)` on the first `dim` eigenfunctions.
///
/// Matrix elements come from the primary level and are checked against the
/// refined level, which also uses a higher-degree quadrature rule.
pub fn perturbation_matrix(
    spec: &PerturbationSpec,
    osc: &Oscillator,
    dim: usize,
    cutoff: usize,
) -> Result<PerturbationMatrix> {
    spec.validate()?;
    if dim == 0 || dim > osc.modes() {
        return Err(Error::InvalidArgument(format!(
            "dim = {dim} outside 1..={}",
            osc.modes()
        )));
    }
    if spec.cutoff() > cutoff {
        return Err(Error::InvalidArgument(format!(
            "angular cutoff {} exceeds K = {cutoff}",
            spec.cutoff()
        )));
    }
    let angular = spec
        .terms
        .iter()
        .map(|t| spec.angular(t, cutoff))
        .collect::<Result<Vec<_>>>()?;
    let (primary, refined) = rayon::join(
        || spatial_matrices(&osc.primary, &spec.terms, dim, PRIMARY_DEGREE),
        || spatial_matrices(&osc.refined, &spec.terms, dim, REFINED_DEGREE),
    );
    let spatial: Vec<(DMatrix<f64>, DMatrix<f64>)> = primary.into_iter().zip(refined).collect();

    let mut worst = 0.0f64;
    for (m, (a, b)) in spatial.iter().enumerate() {
        for i in 0..dim {
            for j in 0..dim {
                let change = (a[(i, j)] - b[(i, j)]).abs() / a[(i, j)].abs().max(1.0);
                if !(change <= QUADRATURE_TOL) {
                    return Err(Error::Quadrature {
                        i: i + 1,
                        j: j + 1,
                        term: m + 1,
                        change,
                    });
                }
                worst = worst.max(change);
            }
        }
    }

    let p = OperatorSeries::from_fn(dim, spec.n, cutoff, |i, j| {
        let mut acc = TorusSeries::zeros(spec.n, cutoff);
        for ((a, _), g) in spatial.iter().zip(&angular) {
            // Symmetrize: the quadrature is symmetric up to rounding.
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            acc = acc
                .add_scaled(g, Complex64::new(v, 0.0))
                .expect("angular factors share (n, K)");
        }
        acc
    })?;
    Ok(PerturbationMatrix {
        p,
        quadrature_change: worst,
        within_growth_bound: spec.within_growth_bound(osc.spec.alpha),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessRow {
    pub delta: f64,
    /// `sup_φ ‖A^{-δ/d} P_N(φ)‖` for each leading block size.
    pub norms: Vec<f64>,
    /// Relative increase between the two largest sizes.
    pub increment: f64,
    pub flat: bool,
    /// `β ≤ αδ/d`, when the exponents are known.
    pub theorem_bounded: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub sizes: Vec<usize>,
    pub rows: Vec<BoundednessRow>,
}

/// Relative increment below which a norm-vs-N curve counts as flat.
pub const FLAT_INCREMENT: f64 = 0.01;

/// Weighted norms of the leading blocks `N, N/2, N/4, ...` (down to 4) for
/// every `δ` in `delta_grid`, evaluated as a supremum over an angle grid.
///
/// `exponents = Some((α, β))` adds the comparison `β ≤ αδ/d`.
pub fn delta_boundedness_check(
    p: &OperatorSeries,
    base: &DiagonalPart,
    delta_grid: &[f64],
    exponents: Option<(f64, f64)>,
) -> Result<BoundednessReport> {
    if p.dim() != base.dim() {
        return Err(Error::Shape("operator and diagonal part disagree on N".into()));
    }
    let mut sizes = vec![p.dim()];
    while sizes[sizes.len() - 1] / 2 >= 4 {
        sizes.push(sizes[sizes.len() - 1] / 2);
    }
    sizes.reverse();
    let plan = GridPlan::new(p.n(), GridPlan::size_for(p.cutoff(), 2).max(8));
    let grid = p.to_grid(&plan)?;
    let d = base.d();
    let rows = delta_grid
        .iter()
        .map(|&delta| {
            let q = delta / d;
            let w: Vec<f64> = base.lambda().iter().map(|l| l.powf(-q)).collect();
            let norms: Vec<f64> = sizes
                .iter()
                .map(|&s| {
                    grid.par_iter()
                        .map(|m| delta_norm_matrix(&m.view((0, 0), (s, s)).into_owned(), &w[..s]))
                        .reduce(|| 0.0, f64::max)
                })
                .collect();
            let increment = if norms.len() >= 2 {
                let (a, b) = (norms[norms.len() - 2], norms[norms.len() - 1]);
                (b - a) / a.max(f64::MIN_POSITIVE)
            } else {
                0.0
            };
            BoundednessRow {
                delta,
                increment,
                flat: increment < FLAT_INCREMENT,
                theorem_bounded: exponents.map(|(alpha, beta)| beta <= alpha * delta / d),
                norms,
            }
        })
        .collect();
    Ok(BoundednessReport { sizes, rows })
}
