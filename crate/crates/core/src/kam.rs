//! The KAM iteration: one conjugation step `x = e^{B} y` removing the
//! off-diagonal part of `P` to first order, and the driver iterating it with
//! the shrinking strips `s_l`, thresholds `K_l = lK` and the constant ledger
//! `(γ_l, C_μ, C_λ, C_ω)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diophantine::{check_dio1, check_dio2, Dio2Certificate, Frequency};
use crate::error::{Error, Result};
use crate::homological::{solve_variable, HomologicalSettings};
use crate::linalg::{expm, expm1, op_norm, CMatrix};
use crate::torus::{delta_norm, g_norm, DiagonalPart, GridPlan, OperatorSeries, SeriesDocument, TorusSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KamSettings {
    /// Size of the initial perturbation, `‖P^0‖_{δ,s} ≤ ε`.
    pub epsilon: f64,
    /// Initial strip width.
    pub s: f64,
    pub gamma: f64,
    /// Defaults to `n + 2/(d-1) + 1`.
    pub tau: Option<f64>,
    /// Base threshold `K` of the schedule `K_l = lK`.
    #[serde(rename = "K")]
    pub k_base: usize,
    /// Fourier cutoff of every stored series (default `4K`).
    #[serde(rename = "K_work")]
    pub k_work: Option<usize>,
    /// Horizon `|k|_1` of the per-step (dio2) certificates (default `n·K_work`).
    pub certify_k: Option<usize>,
    /// Guard exponent of the scalar solver, default `(δ/(d-1) + 1)/2`.
    pub theta: Option<f64>,
    pub cstar: f64,
    pub comega_star: f64,
    /// Floor of the certification constant, default `γ/2`.
    pub gamma_star: Option<f64>,
    /// Stop once `‖P^l‖_{δ,s_l} < tol`.
    pub tol: f64,
    pub l_max: usize,
    /// Grid oversampling for conjugation products.
    pub oversample: usize,
    pub divisor_scale: f64,
    /// Turn guard warnings into `GuardViolated` errors.
    pub strict_guards: bool,
}

impl Default for KamSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            s: 0.5,
            gamma: 0.05,
            tau: None,
            k_base: 6,
            k_work: None,
            certify_k: None,
            theta: None,
            cstar: 10.0,
            comega_star: 1.0,
            gamma_star: None,
            tol: 1e-12,
            l_max: 8,
            oversample: 2,
            divisor_scale: 1e-12,
            strict_guards: false,
        }
    }
}

impl KamSettings {
    pub fn tau_for(&self, n: usize, d: f64) -> f64 {
        self.tau.unwrap_or_else(|| crate::diophantine::default_tau(n, d))
    }

    pub fn k_work(&self) -> usize {
        self.k_work.unwrap_or(4 * self.k_base).max(1)
    }

    pub fn certify_k(&self, n: usize) -> usize {
        self.certify_k.unwrap_or(n * self.k_work())
    }

    pub fn theta_for(&self, d: f64, delta: f64) -> f64 {
        self.theta.unwrap_or((delta / (d - 1.0) + 1.0) / 2.0)
    }

    pub fn gamma_star(&self) -> f64 {
        self.gamma_star.unwrap_or(self.gamma / 2.0)
    }

    /// `ε_l = ε^{(4/3)^l}`.
    pub fn scheduled_epsilon(&self, l: usize) -> f64 {
        self.epsilon.powf((4.0f64 / 3.0).powi(l as i32))
    }

    /// `σ_l = s/(4l²)`.
    pub fn sigma(&self, l: usize) -> f64 {
        self.s / (4.0 * (l as f64).powi(2))
    }

    pub fn validate(&self, base: &DiagonalPart) -> Result<()> {
        let (n, d, delta) = (base.n(), base.d(), base.delta());
        let tau = self.tau_for(n, d);
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon {} < 0", self.epsilon));
        }
        if !(self.s > 0.0) {
            return bad(format!("strip width {} must be positive", self.s));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma {} must be positive", self.gamma));
        }
        if !(tau > n as f64 + 2.0 / (d - 1.0)) {
            return bad(format!(
                "tau {tau} must exceed n + 2/(d-1) = {}",
                n as f64 + 2.0 / (d - 1.0)
            ));
        }
        let theta = self.theta_for(d, delta);
        if !(theta > 0.0 && theta < 1.0) {
            return bad(format!("theta {theta} outside (0, 1)"));
        }
        if self.k_base == 0 {
            return bad("K must be positive".into());
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive".into());
        }
        Ok(())
    }

    fn homological(&self, base: &DiagonalPart, strip: f64) -> HomologicalSettings {
        HomologicalSettings {
            divisor_scale: self.divisor_scale,
            strip,
            max_cutoff: self.k_work(),
            theta: self.theta_for(base.d(), base.delta()),
            cstar: self.cstar,
            ..HomologicalSettings::default()
        }
    }
}

/// The constant ledger of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub gamma: f64,
    pub c_mu: f64,
    pub c_lambda: f64,
    pub c_omega: f64,
}

/// Diagnostics of one step, written as one JSON line per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Index `l+1` of the produced perturbation.
    pub step: usize,
    pub norm_in: f64,
    pub norm_out: f64,
    pub s_in: f64,
    pub s_out: f64,
    pub scheduled_epsilon: f64,
    pub generator_g_norm: f64,
    pub homological_residual: f64,
    pub divisor_floor: f64,
    pub truncation_residue: f64,
    pub hermiticity_defect: f64,
    pub unitarity_defect: f64,
    pub certified_gamma: f64,
    pub certificate_margin: f64,
    pub constants: Constants,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct KamState {
    pub l: usize,
    pub base: DiagonalPart,
    pub p: OperatorSeries,
    pub constants: Constants,
    pub s: f64,
    /// `‖P^j‖_{δ,s_j}` for `j = 0..=l`.
    pub norm_history: Vec<f64>,
    pub generators: Vec<OperatorSeries>,
    pub records: Vec<StepRecord>,
}

impl KamState {
    /// Initial state with `γ_0 = γ`, `C_μ = C_ω = 0`, `C_λ` from the spectrum.
    pub fn initial(base: DiagonalPart, p: OperatorSeries, settings: &KamSettings) -> Result<Self> {
        if p.dim() != base.dim() || p.n() != base.n() {
            return Err(Error::Shape("perturbation and diagonal part disagree".into()));
        }
        let norm = delta_norm(&p, &base, settings.s)?;
        let constants = Constants {
            gamma: settings.gamma,
            c_mu: base.c_mu(settings.s),
            c_lambda: base.c_lambda(),
            c_omega: 0.0,
        };
        Ok(Self {
            l: 0,
            p: p.with_cutoff(p.cutoff().min(settings.k_work())),
            base,
            constants,
            s: settings.s,
            norm_history: vec![norm],
            generators: Vec::new(),
            records: Vec::new(),
        })
    }

    pub fn norm(&self) -> f64 {
        *self.norm_history.last().expect("history starts with the initial norm")
    }
}

/// `(mean P_ii, P_ii - mean, P - diag P)`.
pub fn diag_split(p: &OperatorSeries) -> Result<(Vec<f64>, Vec<TorusSeries>, OperatorSeries)> {
    let scale = p.max_coeff().max(1e-300);
    let mut shift = Vec::with_capacity(p.dim());
    let mut mu = Vec::with_capacity(p.dim());
    for i in 0..p.dim() {
        let e = p.entry(i, i);
        let mean = e.mean();
        if mean.im.abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::NotHermitian(format!(
                "diagonal entry {} has complex average {mean}",
                i + 1
            )));
        }
        shift.push(mean.re);
        mu.push(e.without_mean().real_part());
    }
    Ok((shift, mu, p.off_diagonal()))
}

#[derive(Debug, Clone)]
pub struct Conjugation {
    pub p_plus: OperatorSeries,
    /// ℓ¹ mass dropped when re-expanding at the working cutoff.
    pub truncation_residue: f64,
    /// `max_φ ‖X - X*‖/2` before hermitization.
    pub hermiticity_defect: f64,
    /// `max_φ ‖e^{B*} e^{B} - I‖`.
    pub unitarity_defect: f64,
}

/// `P^+ = e^{-B}(A + P)e^{B} - iе^{-B}(ω·∂e^{B}) - A - diag P`, evaluated with
/// `F = e^{B} - I` as
/// `E*[A,F] + F*P + PF + F*PF + (P - diag P) - iE*Ḟ`, `E = I + F`,
/// so that every term is proportional to the perturbation.
pub fn conjugate(
    base: &DiagonalPart,
    p: &OperatorSeries,
    b: &OperatorSeries,
    omega: &Frequency,
    cutoff: usize,
    oversample: usize,
) -> Result<Conjugation> {
    let dim = p.dim();
    if b.dim() != dim || base.dim() != dim {
        return Err(Error::Shape("conjugation operands disagree in size".into()));
    }
    let tol = 1e-12 * b.max_coeff().max(1.0);
    if b.anti_hermiticity_defect() > tol {
        return Err(Error::NotHermitian(format!(
            "generator not anti-hermitian (defect {:.3e})",
            b.anti_hermiticity_defect()
        )));
    }
    let full = b.cutoff() + p.cutoff().max(base.mu_cutoff());
    let m = GridPlan::size_for(full, oversample).max(GridPlan::size_for(cutoff, 2));
    let plan = GridPlan::new(p.n(), m);
    let points = plan.points();
    let bg = b.to_grid(&plan)?;
    let pg = p.to_grid(&plan)?;
    let mug: Vec<Vec<Complex64>> = base.mu().par_iter().map(|mu| plan.to_grid(mu)).collect::<Result<_>>()?;
    let fg: Vec<CMatrix> = bg.par_iter().map(expm1).collect::<Result<_>>()?;
    let dfg = {
        let columns: Vec<Vec<Complex64>> = (0..dim * dim)
            .into_par_iter()
            .map(|e| {
                let (i, j) = (e / dim, e % dim);
                let col: Vec<Complex64> = fg.iter().map(|f| f[(i, j)]).collect();
                plan.derivative_on_grid(&col, &omega.omega)
            })
            .collect();
        crate::torus::assemble_points(dim, points, &columns)
    };
    let lambda = base.lambda();
    let i_unit = Complex64::new(0.0, 1.0);
    let results: Vec<(CMatrix, f64, f64)> = (0..points)
        .into_par_iter()
        .map(|pt| {
            let f = &fg[pt];
            let pm = &pg[pt];
            let a: Vec<f64> = (0..dim).map(|i| lambda[i] + mug[i][pt].re).collect();
            let comm = CMatrix::from_fn(dim, dim, |i, j| f[(i, j)] * (a[i] - a[j]));
            let fa = f.adjoint();
            let e_adj = &fa + CMatrix::identity(dim, dim);
            let mut off = pm.clone();
            for i in 0..dim {
                off[(i, i)] = Complex64::new(0.0, 0.0);
            }
            let fp = &fa * pm;
            let x = &e_adj * &comm + &fp + pm * f + &fp * f + off - &e_adj * &dfg[pt] * i_unit;
            let herm_defect = op_norm(&(&x - x.adjoint())) / 2.0;
            let unit = op_norm(&(&fa + f + &fa * f));
            let h = (&x + x.adjoint()) * Complex64::new(0.5, 0.0);
            (h, herm_defect, unit)
        })
        .collect();
    let hermiticity_defect = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let unitarity_defect = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let values: Vec<CMatrix> = results.into_iter().map(|r| r.0).collect();
    let (p_plus, truncation_residue) = OperatorSeries::from_grid(&plan, &values, cutoff)?;
    Ok(Conjugation {
        p_plus,
        truncation_residue,
        hermiticity_defect,
        unitarity_defect,
    })
}

fn excluded(step: usize, cert: &Dio2Certificate) -> Error {
    match &cert.tightest {
        Some(w) => Error::FrequencyExcluded {
            step,
            i: w.i,
            j: w.j,
            k: w.k.clone(),
            value: w.value,
            bound: w.bound,
        },
        None => Error::GuardViolated(format!("frequency excluded at step {step} without witness")),
    }
}

fn certify(
    base: &DiagonalPart,
    omega: &Frequency,
    gamma: f64,
    tau: f64,
    kmax: usize,
    step: usize,
) -> Result<Dio2Certificate> {
    let cert = check_dio2(&omega.omega, base, gamma, tau, kmax, base.dim());
    if !cert.pass {
        return Err(excluded(step, &cert));
    }
    Ok(cert)
}

/// One step `P^l → P^{l+1}`.
pub fn kam_step(state: &KamState, omega: &Frequency, settings: &KamSettings) -> Result<KamState> {
    let l = state.l;
    let base = &state.base;
    let n = base.n();
    let tau = settings.tau_for(n, base.d());
    let p_norm = delta_norm(&state.p, base, state.s)?;
    if p_norm == 0.0 {
        let mut next = state.clone();
        next.l = l + 1;
        return Ok(next);
    }
    let k_work = settings.k_work();
    let gamma_cert = state.constants.gamma.max(settings.gamma_star());
    let kmax = settings.certify_k(n);
    certify(base, omega, gamma_cert, tau, kmax, l + 1)?;

    let mut warnings = Vec::new();
    let k_next = ((l + 1) * settings.k_base) as f64;
    if !(1.0 + k_next.powf(tau) < state.constants.gamma / p_norm) {
        warnings.push(format!(
            "threshold 1 + K_{}^τ = {:.3e} not below γ_l/‖P^l‖ = {:.3e}",
            l + 1,
            1.0 + k_next.powf(tau),
            state.constants.gamma / p_norm
        ));
    }
    if state.constants.gamma < settings.gamma_star() {
        warnings.push(format!(
            "γ_l = {:.3e} below γ* = {:.3e}; certifying at γ*",
            state.constants.gamma,
            settings.gamma_star()
        ));
    }
    if state.constants.c_omega > settings.comega_star {
        warnings.push(format!(
            "C_ω = {:.3e} exceeds C_ω* = {}",
            state.constants.c_omega, settings.comega_star
        ));
    }
    let scheduled = settings.scheduled_epsilon(l);
    if p_norm > scheduled * (1.0 + 1e-12) {
        warnings.push(format!(
            "‖P^{l}‖ = {p_norm:.3e} exceeds scheduled ε_{l} = {scheduled:.3e}"
        ));
    }

    let (shift, mu_add, _) = diag_split(&state.p)?;
    let hsettings = settings.homological(base, state.s);
    let sol = solve_variable(&state.p, base, omega, &hsettings)?;
    warnings.extend(sol.warnings.iter().cloned());
    let b = sol.b.with_cutoff(sol.b.cutoff().min(k_work));
    let g = g_norm(&b, base, state.s)?;
    if g > 0.5 {
        warnings.push(format!("‖B‖_G = {g:.3e} exceeds 1/2"));
    }

    let conj = conjugate(base, &state.p, &b, omega, k_work, settings.oversample)?;
    if conj.unitarity_defect > 1e-10 {
        warnings.push(format!("e^B unitarity defect {:.3e}", conj.unitarity_defect));
    }
    let mu_cut = base.mu_cutoff().max(state.p.cutoff()).min(k_work);
    let next_base = base.absorb(&shift, &mu_add, mu_cut)?;

    let c = state.constants;
    let constants = Constants {
        gamma: c.gamma - p_norm * (1.0 + k_next.powf(tau)),
        c_mu: c.c_mu + p_norm,
        c_lambda: c.c_lambda - 2.0 * p_norm,
        c_omega: c.c_omega + p_norm,
    };
    if !(constants.c_lambda > 0.0) {
        warnings.push(format!("C_λ = {:.3e} no longer positive", constants.c_lambda));
    }
    let s_next = state.s - settings.sigma(l + 1);
    let cert = certify(&next_base, omega, gamma_cert, tau, kmax, l + 1)?;
    let norm_out = delta_norm(&conj.p_plus, &next_base, s_next)?;

    for w in &warnings {
        log::warn!("step {}: {w}", l + 1);
    }
    if settings.strict_guards && !warnings.is_empty() {
        return Err(Error::GuardViolated(warnings.join("; ")));
    }
    let record = StepRecord {
        step: l + 1,
        norm_in: p_norm,
        norm_out,
        s_in: state.s,
        s_out: s_next,
        scheduled_epsilon: scheduled,
        generator_g_norm: g,
        homological_residual: sol.residual,
        divisor_floor: sol.divisor_floor,
        truncation_residue: conj.truncation_residue,
        hermiticity_defect: conj.hermiticity_defect,
        unitarity_defect: conj.unitarity_defect,
        certified_gamma: gamma_cert,
        certificate_margin: cert.max_gamma,
        constants,
        warnings,
    };
    let mut generators = state.generators.clone();
    generators.push(b);
    let mut norm_history = state.norm_history.clone();
    norm_history.push(norm_out);
    let mut records = state.records.clone();
    records.push(record);
    Ok(KamState {
        l: l + 1,
        base: next_base,
        p: conj.p_plus,
        constants,
        s: s_next,
        norm_history,
        generators,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// The norm stopped decreasing or became non-finite.
    Diverged,
    /// `l_max` reached above the tolerance.
    MaxIterations,
}

/// The reduced system `i χ̇ = diag(λ^∞ + μ^∞(ωt)) χ` with the frame
/// `U(φ) = e^{B^1(φ)} ⋯ e^{B^L(φ)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub lambda_inf: Vec<f64>,
    pub mu_inf: Vec<TorusSeries>,
    pub generators: Vec<OperatorSeries>,
    pub omega: Frequency,
    /// `‖P^L‖_{δ,s_L}` left over.
    pub final_norm: f64,
}

impl ReducedSystem {
    pub fn dim(&self) -> usize {
        self.lambda_inf.len()
    }

    pub fn n(&self) -> usize {
        self.omega.n()
    }

    pub fn frame(&self, phi: &[f64]) -> Result<CMatrix> {
        compose_transformations(self.dim(), &self.generators, phi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedDocument {
    pub lambda_inf: Vec<f64>,
    pub mu_inf: SeriesDocument,
    pub generators: Vec<SeriesDocument>,
    pub omega: Frequency,
    pub final_norm: f64,
}

impl From<&ReducedSystem> for ReducedDocument {
    fn from(rs: &ReducedSystem) -> Self {
        Self {
            lambda_inf: rs.lambda_inf.clone(),
            mu_inf: SeriesDocument::from_diagonal(&rs.mu_inf).expect("reduced systems are never empty"),
            generators: rs.generators.iter().map(SeriesDocument::from).collect(),
            omega: rs.omega.clone(),
            final_norm: rs.final_norm,
        }
    }
}

impl ReducedDocument {
    pub fn to_reduced(&self) -> Result<ReducedSystem> {
        let mu_inf = self.mu_inf.to_diagonal()?;
        if mu_inf.len() != self.lambda_inf.len() {
            return Err(Error::Shape("λ^∞ and μ^∞ disagree in length".into()));
        }
        let generators = self
            .generators
            .iter()
            .map(SeriesDocument::to_operator)
            .collect::<Result<Vec<_>>>()?;
        if generators.iter().any(|g| g.dim() != mu_inf.len()) {
            return Err(Error::Shape("generator size differs from the spectrum".into()));
        }
        Ok(ReducedSystem {
            lambda_inf: self.lambda_inf.clone(),
            mu_inf,
            generators,
            omega: self.omega.clone(),
            final_norm: self.final_norm,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleOutcome {
    pub state: KamState,
    pub reduced: ReducedSystem,
    pub status: RunStatus,
    /// `max_i |λ_i^∞ - λ_i| / (i^δ ε)` (0 for `ε = 0`).
    pub fitted_c: f64,
}

/// Iterates [`kam_step`] from `(A^0, P^0)` until `‖P^l‖ < tol`, divergence,
/// or `l_max`.
pub fn run_schedule(
    base: &DiagonalPart,
    p0: &OperatorSeries,
    omega: &Frequency,
    settings: &KamSettings,
) -> Result<ScheduleOutcome> {
    settings.validate(base)?;
    let tau = settings.tau_for(base.n(), base.d());
    if omega.n() != base.n() {
        return Err(Error::Shape("frequency and model live on different tori".into()));
    }
    let dio1 = check_dio1(&omega.omega, settings.gamma_star(), tau, settings.certify_k(base.n()));
    if !dio1.pass {
        return Err(Error::FrequencyExcluded {
            step: 0,
            i: 0,
            j: 0,
            k: dio1.tightest_k.unwrap_or_default(),
            value: dio1.tightest_value,
            bound: settings.gamma_star(),
        });
    }
    let mut state = KamState::initial(base.clone(), p0.clone(), settings)?;
    if state.norm() > settings.epsilon * (1.0 + 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "‖P^0‖_{{δ,s}} = {:.6e} exceeds ε = {:.6e}",
            state.norm(),
            settings.epsilon
        )));
    }
    let mut status = RunStatus::Converged;
    while state.norm() >= settings.tol {
        if state.l >= settings.l_max {
            status = RunStatus::MaxIterations;
            break;
        }
        let prev = state.norm();
        state = kam_step(&state, omega, settings)?;
        let now = state.norm();
        if !now.is_finite() || now >= prev {
            status = RunStatus::Diverged;
            log::warn!("norm did not decrease at step {}: {prev:.3e} -> {now:.3e}", state.l);
            break;
        }
    }
    let lambda0 = base.lambda();
    let lambda_inf = state.base.lambda().to_vec();
    let fitted_c = if settings.epsilon == 0.0 {
        0.0
    } else {
        lambda_inf
            .iter()
            .zip(lambda0)
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() / (((i + 1) as f64).powf(base.delta()) * settings.epsilon))
            .fold(0.0, f64::max)
    };
    let reduced = ReducedSystem {
        lambda_inf,
        mu_inf: state.base.mu().to_vec(),
        generators: state.generators.clone(),
        omega: omega.clone(),
        final_norm: state.norm(),
    };
    Ok(ScheduleOutcome {
        state,
        reduced,
        status,
        fitted_c,
    })
}

/// `e^{B^1(φ)} e^{B^2(φ)} ⋯ e^{B^L(φ)}` (identity for an empty list).
pub fn compose_transformations(dim: usize, generators: &[OperatorSeries], phi: &[f64]) -> Result<CMatrix> {
    let mut u = CMatrix::identity(dim, dim);
    for b in generators {
        if b.dim() != dim {
            return Err(Error::Shape("generator of the wrong size".into()));
        }
        u *= expm(&b.evaluate(phi))?;
    }
    Ok(u)
}

/// `(U, ω·∂U)` at `φ`, the derivative taken exactly through the Fréchet
/// derivative of each exponential.
pub fn frame_with_derivative(
    dim: usize,
    generators: &[OperatorSeries],
    omega: &[f64],
    phi: &[f64],
) -> Result<(CMatrix, CMatrix)> {
    let mut u = CMatrix::identity(dim, dim);
    let mut du = CMatrix::zeros(dim, dim);
    for b in generators {
        let bm = b.evaluate(phi);
        let db = b.directional_derivative(omega).evaluate(phi);
        let (e, de) = crate::linalg::expm_frechet(&bm, &db)?;
        du = &du * &e + &u * de;
        u *= e;
    }
    Ok((u, du))
}

/// Largest `‖U*U - I‖` over a `points^n` grid.
pub fn frame_unitarity_on_grid(dim: usize, n: usize, generators: &[OperatorSeries], points: usize) -> Result<f64> {
    let total = points.pow(n as u32);
    let defects: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut phi = vec![0.0; n];
            for d in (0..n).rev() {
                phi[d] = 2.0 * PI * (rem % points) as f64 / points as f64;
                rem /= points;
            }
            compose_transformations(dim, generators, &phi).map(|u| crate::linalg::unitarity_defect(&u))
        })
        .collect::<Result<_>>()?;
    Ok(defects.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{random_anti_hermitian, random_hermitian};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn diag_split_examples() {
        let mut p = OperatorSeries::zeros(2, 1, 1);
        let mut f = TorusSeries::constant(1, 1, c(2.0, 0.0));
        *f.coeff_mut(&[1]).unwrap() = c(0.5, 0.0);
        *f.coeff_mut(&[-1]).unwrap() = c(0.5, 0.0);
        p.set_entry(0, 0, f);
        let (shift, mu, off) = diag_split(&p).unwrap();
        assert_eq!(shift, vec![2.0, 0.0]);
        assert!((mu[0].evaluate(&[0.3]) - c(0.3f64.cos(), 0.0)).norm() < 1e-15);
        assert!(off.is_zero());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_hermitian(&mut rng, 4, 2, 2);
        let (shift, mu, off) = diag_split(&q).unwrap();
        let mut back = off.clone();
        for i in 0..4 {
            back.set_entry(i, i, mu[i].add(&TorusSeries::constant(2, 2, c(shift[i], 0.0))).unwrap());
        }
        assert_eq!(back, q);
    }

    #[test]
    fn identity_conjugation_moves_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = DiagonalPart::power_law(4, 1, 1.5, 0.2, 1.0).unwrap();
        let p = random_hermitian(&mut rng, 4, 1, 2).scale(1e-3);
        let b = OperatorSeries::zeros(4, 1, 2);
        let omega = Frequency::new(vec![0.7], 0.0, 3.0).unwrap();
        let conj = conjugate(&base, &p, &b, &omega, 2, 2).unwrap();
        assert!(conj.p_plus.max_coeff_distance(&p.off_diagonal()) < 1e-17);
    }

    #[test]
    fn commuting_generator_gives_zero() {
        let base = DiagonalPart::power_law(3, 1, 1.5, 0.2, 1.0).unwrap();
        let mut b = OperatorSeries::zeros(3, 1, 0);
        b.set_entry(1, 1, TorusSeries::constant(1, 0, c(0.0, 0.4)));
        let omega = Frequency::new(vec![0.7], 0.0, 3.0).unwrap();
        let conj = conjugate(&base, &OperatorSeries::zeros(3, 1, 0), &b, &omega, 2, 2).unwrap();
        assert!(conj.p_plus.max_coeff() < 1e-16);
    }

    #[test]
    fn compose_examples() {
        assert_eq!(
            compose_transformations(3, &[], &[0.1]).unwrap(),
            CMatrix::identity(3, 3)
        );
        let theta = 0.8;
        let mut b = OperatorSeries::zeros(2, 1, 0);
        b.set_entry(0, 1, TorusSeries::constant(1, 0, c(-theta, 0.0)));
        b.set_entry(1, 0, TorusSeries::constant(1, 0, c(theta, 0.0)));
        let u = compose_transformations(2, &[b], &[0.0]).unwrap();
        assert!((u[(0, 0)] - c(theta.cos(), 0.0)).norm() < 1e-15);
        assert!((u[(1, 0)] - c(theta.sin(), 0.0)).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gens: Vec<OperatorSeries> = (0..3).map(|_| random_anti_hermitian(&mut rng, 5, 2, 2, 0.05)).collect();
        assert!(frame_unitarity_on_grid(5, 2, &gens, 8).unwrap() < 1e-10);
    }

    #[test]
    fn zero_perturbation_step_only_advances_index() {
        let base = DiagonalPart::power_law(4, 1, 4.0 / 3.0, 0.2, 1.0).unwrap();
        let settings = KamSettings {
            epsilon: 0.0,
            ..KamSettings::default()
        };
        let state = KamState::initial(base, OperatorSeries::zeros(4, 1, 2), &settings).unwrap();
        let omega = Frequency::new(vec![0.618], 0.05, 8.0).unwrap();
        let next = kam_step(&state, &omega, &settings).unwrap();
        assert_eq!(next.l, 1);
        assert_eq!(next.constants, state.constants);
        assert_eq!(next.p, state.p);
        let out = run_schedule(&state.base, &state.p, &omega, &settings).unwrap();
        assert_eq!(out.state.l, 0);
        assert!(out.reduced.generators.is_empty());
        assert_eq!(out.reduced.lambda_inf, state.base.lambda());
    }

    #[test]
    fn resonant_frequency_is_excluded() {
        let base = DiagonalPart::power_law(4, 2, 4.0 / 3.0, 0.2, 1.0).unwrap();
        let gap = base.lambda()[1] - base.lambda()[0];
        // ω·(-1,2) = λ_2 - λ_1
        let w2 = 0.85;
        let omega = Frequency::new(vec![2.0 * w2 - gap, w2], 0.05, 9.0).unwrap();
        assert!((0.0..=1.0).contains(&omega.omega[0]));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_hermitian(&mut rng, 4, 2, 2);
        let settings = KamSettings {
            epsilon: 1.0,
            ..KamSettings::default()
        };
        let p = p.scale(1e-3 / delta_norm(&p, &base, 0.5).unwrap());
        let state = KamState::initial(base, p, &settings).unwrap();
        match kam_step(&state, &omega, &settings) {
            Err(Error::FrequencyExcluded { i, j, k, .. }) => {
                assert_eq!((i, j), (1, 2));
                assert_eq!(k, vec![-1, 2]);
            }
            other => panic!("expected exclusion, got {other:?}"),
        }
    }
}
