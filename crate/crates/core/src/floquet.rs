//! Independent checks of a reduction: the Floquet spectrum `λ_j^∞ + k·ω`,
//! reconstruction of solutions from the reduced system, brute-force
//! propagation of the truncated forced system, and monodromy quasi-energies
//! in the periodic case.
//!
//! Time evolution follows `i ψ̇ = H ψ`, so a constant eigenvalue `λ`
//! evolves as `e^{-iλt}`.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diophantine::{l1_ball, Frequency};
use crate::error::{Error, Result};
pub use crate::kam::ReducedSystem;
use crate::linalg::{expm, expm_apply, normal_eigenvalues, unitarity_defect, CMatrix};
use crate::torus::{DiagonalPart, OperatorSeries};

pub type State = DVector<Complex64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetEigenvalue {
    /// 1-based mode index.
    pub j: usize,
    pub k: Vec<i64>,
    pub nu: f64,
    /// Number of listed eigenvalues within 1e-12 of this one (itself included).
    pub multiplicity: usize,
}

const COLLISION_TOL: f64 = 1e-12;

/// `ν_{j,k} = λ_j^∞ + k·ω` for `j ≤ N`, `|k|_1 ≤ kmax`, sorted by `ν`.
pub fn floquet_spectrum(lambda_inf: &[f64], omega: &[f64], kmax: usize) -> Vec<FloquetEigenvalue> {
    let mut ks = vec![vec![0; omega.len()]];
    ks.extend(l1_ball(omega.len(), kmax));
    let mut out: Vec<FloquetEigenvalue> = lambda_inf
        .iter()
        .enumerate()
        .flat_map(|(j, &l)| {
            ks.iter().map(move |k| FloquetEigenvalue {
                j: j + 1,
                k: k.clone(),
                nu: l + crate::diophantine::dot(omega, k),
                multiplicity: 1,
            })
        })
        .collect();
    out.sort_by(|a, b| a.nu.total_cmp(&b.nu).then(a.j.cmp(&b.j)).then(a.k.cmp(&b.k)));
    // collisions: clusters of consecutive values closer than the tolerance
    let mut start = 0;
    while start < out.len() {
        let mut end = start + 1;
        while end < out.len() && out[end].nu - out[end - 1].nu <= COLLISION_TOL {
            end += 1;
        }
        for e in &mut out[start..end] {
            e.multiplicity = end - start;
        }
        start = end;
    }
    out
}

/// Phases `F_i(t) = ∫_0^t μ_i(ωs) ds = Σ_{k≠0} μ̂_{i,k}(e^{iω·kt} - 1)/(iω·k)`.
pub fn fluctuation_phases(rs: &ReducedSystem, t: f64, divisor_scale: f64) -> Result<Vec<f64>> {
    let omega = &rs.omega;
    rs.mu_inf
        .iter()
        .map(|mu| {
            let modes = mu.mode_box();
            let dots = modes.dot_table(&omega.omega);
            let mut acc = Complex64::new(0.0, 0.0);
            for (flat, c) in mu.coeffs().iter().enumerate() {
                if *c == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let k = modes.mode(flat);
                if k.iter().all(|&x| x == 0) {
                    continue;
                }
                let w = dots[flat];
                let floor = omega.divisor_floor(&k, divisor_scale);
                if !(w.abs() >= floor) {
                    return Err(Error::DivisorTooSmall {
                        i: None,
                        j: None,
                        k,
                        value: w.abs(),
                        floor,
                    });
                }
                acc += c * (Complex64::new(0.0, w * t).exp() - 1.0) / Complex64::new(0.0, w);
            }
            Ok(acc.re)
        })
        .collect()
}

/// `χ(t)` of `i χ̇ = diag(λ^∞ + μ^∞(ωt)) χ`.
pub fn reduced_state(rs: &ReducedSystem, chi0: &State, t: f64) -> Result<State> {
    if chi0.len() != rs.dim() {
        return Err(Error::Shape(format!(
            "state of length {} for N = {}",
            chi0.len(),
            rs.dim()
        )));
    }
    let phases = fluctuation_phases(rs, t, 1e-12)?;
    Ok(State::from_fn(rs.dim(), |i, _| {
        chi0[i] * Complex64::from_polar(1.0, -(rs.lambda_inf[i] * t + phases[i]))
    }))
}

fn angle(omega: &Frequency, t: f64) -> Vec<f64> {
    omega.omega.iter().map(|w| w * t).collect()
}

/// `ψ(t) = U(ωt) χ(t)`.
pub fn reconstruct_solution(rs: &ReducedSystem, chi0: &State, t: f64) -> Result<State> {
    let chi = reduced_state(rs, chi0, t)?;
    Ok(rs.frame(&angle(&rs.omega, t))? * chi)
}

/// `χ(0) = U(0)* ψ(0)`.
pub fn reduced_initial_state(rs: &ReducedSystem, psi0: &State) -> Result<State> {
    Ok(rs.frame(&vec![0.0; rs.n()])?.adjoint() * psi0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `e^{-ih H(t+h/2)}`, second order.
    #[default]
    Midpoint,
    /// Two-point Gauss Magnus expansion, fourth order.
    Magnus4,
}

/// The truncated forced Hamiltonian `H(t) = A(ωt) + εP(ωt)`.
#[derive(Debug, Clone)]
pub struct ForcedSystem<'a> {
    pub base: &'a DiagonalPart,
    pub p: &'a OperatorSeries,
    pub epsilon: f64,
    pub omega: &'a [f64],
    /// Nonzero `(ω·k, εP̂_k)` for one mode of each `±k` pair (halved at `k = 0`).
    terms: Vec<(f64, CMatrix)>,
}

impl ForcedSystem<'_> {
    pub fn new<'a>(
        base: &'a DiagonalPart,
        p: &'a OperatorSeries,
        epsilon: f64,
        omega: &'a [f64],
    ) -> Result<ForcedSystem<'a>> {
        if p.dim() != base.dim() || p.n() != omega.len() || base.n() != omega.len() {
            return Err(Error::Shape("forced system operands disagree".into()));
        }
        if p.hermiticity_defect() > 1e-12 * p.max_coeff().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument("forcing must be hermitian".into()));
        }
        // P is hermitian, so P̂_{-k} = P̂_k^* and one mode of each pair suffices.
        let modes = p.entries()[0].mode_box();
        let dots = modes.dot_table(omega);
        let zero = Complex64::new(0.0, 0.0);
        let terms = (0..modes.len())
            .filter(|&flat| flat <= modes.negate(flat))
            .filter_map(|flat| {
                let mut m = p.mode_matrix_flat(flat) * Complex64::new(epsilon, 0.0);
                if flat == modes.negate(flat) {
                    m *= Complex64::new(0.5, 0.0);
                }
                m.iter().any(|z| *z != zero).then_some((dots[flat], m))
            })
            .collect();
        Ok(ForcedSystem {
            base,
            p,
            epsilon,
            omega,
            terms,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn hamiltonian(&self, t: f64) -> CMatrix {
        let phi: Vec<f64> = self.omega.iter().map(|w| w * t).collect();
        let dim = self.dim();
        let mut h = CMatrix::zeros(dim, dim);
        for (w, m) in &self.terms {
            let z = Complex64::from_polar(1.0, w * t);
            h.zip_apply(m, |a, b| *a += z * b);
        }
        h = &h + h.adjoint();
        for (i, a) in self.base.values_at(&phi).into_iter().enumerate() {
            h[(i, i)] += a;
        }
        h
    }

    fn max_eigen(&self) -> f64 {
        self.base.lambda().iter().fold(0.0f64, |a, l| a.max(l.abs()))
    }

    /// Propagator over `[t, t+h]` for `i ψ̇ = H ψ`.
    pub fn step(&self, t: f64, h: f64, scheme: Scheme) -> Result<CMatrix> {
        expm(&self.magnus_exponent(t, h, scheme))
    }

    /// Applies the one-step propagator to `psi`.
    pub fn step_state(&self, t: f64, h: f64, scheme: Scheme, psi: &State) -> Result<State> {
        expm_apply(&self.magnus_exponent(t, h, scheme), psi)
    }

    fn magnus_exponent(&self, t: f64, h: f64, scheme: Scheme) -> CMatrix {
        let mi = Complex64::new(0.0, -1.0);
        match scheme {
            Scheme::Midpoint => self.hamiltonian(t + 0.5 * h) * (mi * h),
            Scheme::Magnus4 => {
                let c = 3f64.sqrt() / 6.0;
                let m1 = self.hamiltonian(t + (0.5 - c) * h) * mi;
                let m2 = self.hamiltonian(t + (0.5 + c) * h) * mi;
                let comm = &m2 * &m1 - &m1 * &m2;
                (&m1 + &m2) * Complex64::new(0.5 * h, 0.0) + comm * Complex64::new(3f64.sqrt() * h * h / 12.0, 0.0)
            }
        }
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        let product = dt * self.max_eigen();
        if !(dt > 0.0) || !(product < 0.1) {
            return Err(Error::StepSize { dt, product });
        }
        Ok(())
    }

    /// Propagator from `t0` to `t1` in equal substeps of at most `dt`.
    pub fn propagator(&self, t0: f64, t1: f64, dt: f64, scheme: Scheme) -> Result<CMatrix> {
        self.check_dt(dt)?;
        let steps = ((t1 - t0).abs() / dt).ceil().max(1.0) as usize;
        let h = (t1 - t0) / steps as f64;
        let mut u = CMatrix::identity(self.dim(), self.dim());
        for s in 0..steps {
            u = self.step(t0 + s as f64 * h, h, scheme)? * u;
        }
        Ok(u)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// `max_t |‖ψ(t)‖ - ‖ψ(0)‖|`.
    pub norm_drift: f64,
}

/// Integrates `i ψ̇ = (A(ωt) + εP(ωt)) ψ` from `t = 0` and samples at the
/// sorted non-negative `times`.
pub fn propagate_direct(
    system: &ForcedSystem<'_>,
    psi0: &State,
    times: &[f64],
    dt: f64,
    scheme: Scheme,
) -> Result<Trajectory> {
    system.check_dt(dt)?;
    if psi0.len() != system.dim() {
        return Err(Error::Shape("initial state has the wrong length".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(
            "sample times must be sorted and non-negative".into(),
        ));
    }
    let n0 = psi0.norm();
    let mut psi = psi0.clone();
    let mut now = 0.0;
    let mut states = Vec::with_capacity(times.len());
    let mut drift: f64 = 0.0;
    for &t in times {
        if t > now {
            let steps = ((t - now) / dt).ceil() as usize;
            let h = (t - now) / steps as f64;
            for s in 0..steps {
                psi = system.step_state(now + s as f64 * h, h, scheme, &psi)?;
            }
            now = t;
        }
        drift = drift.max((psi.norm() - n0).abs());
        states.push(psi.clone());
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        norm_drift: drift,
    })
}

/// `[0, T_max]` sampled at `0` and `count - 1` log-uniform points from
/// `t_min` up to `T_max`.
pub fn log_uniform_times(t_min: f64, t_max: f64, count: usize) -> Vec<f64> {
    let mut out = vec![0.0];
    if count > 1 {
        let (a, b) = (t_min.ln(), t_max.ln());
        out.extend((0..count - 1).map(|i| (a + (b - a) * i as f64 / (count - 2).max(1) as f64).exp()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub times: Vec<f64>,
    /// `‖ψ_direct(t) - ψ_reconstructed(t)‖ / ‖ψ0‖` per time.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub direct_norm_drift: f64,
    pub reconstructed_norm_drift: f64,
}

/// Direct propagation against reconstruction from the reduced system.
pub fn compare_trajectories(
    system: &ForcedSystem<'_>,
    rs: &ReducedSystem,
    psi0: &State,
    times: &[f64],
    dt: f64,
    scheme: Scheme,
) -> Result<DeviationReport> {
    let direct = propagate_direct(system, psi0, times, dt, scheme)?;
    let chi0 = reduced_initial_state(rs, psi0)?;
    let recon: Vec<State> = times
        .par_iter()
        .map(|&t| reconstruct_solution(rs, &chi0, t))
        .collect::<Result<_>>()?;
    let n0 = psi0.norm();
    let deviations: Vec<f64> = direct
        .states
        .iter()
        .zip(&recon)
        .map(|(a, b)| (a - b).norm() / n0)
        .collect();
    let reconstructed_norm_drift = recon.iter().map(|s| (s.norm() - n0).abs()).fold(0.0, f64::max);
    Ok(DeviationReport {
        times: times.to_vec(),
        max_deviation: deviations.iter().copied().fold(0.0, f64::max),
        deviations,
        direct_norm_drift: direct.norm_drift,
        reconstructed_norm_drift,
    })
}

/// Quasi-energies `-arg(z)/T ∈ [0, 2π/T)` of the one-period propagator of a
/// periodic (`n = 1`) system, sorted.
pub fn monodromy_quasienergies(system: &ForcedSystem<'_>, steps_per_period: usize) -> Result<Vec<f64>> {
    if system.omega.len() != 1 || !(system.omega[0] > 0.0) {
        return Err(Error::InvalidArgument("monodromy needs n = 1 and ω > 0".into()));
    }
    let period = 2.0 * PI / system.omega[0];
    let dt = period / steps_per_period.max(1) as f64;
    let m = system.propagator(0.0, period, dt, Scheme::Magnus4)?;
    let defect = unitarity_defect(&m);
    if defect > 1e-8 {
        return Err(Error::NonUnitary(defect));
    }
    let mut out: Vec<f64> = normal_eigenvalues(&m)
        .into_iter()
        .map(|z| wrap(-z.arg() / period, 2.0 * PI / period))
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// `x mod p` in `[0, p)`.
pub fn wrap(x: f64, p: f64) -> f64 {
    let r = x.rem_euclid(p);
    if r >= p {
        0.0
    } else {
        r
    }
}

/// Distance on the circle of circumference `p`.
pub fn circular_distance(a: f64, b: f64, p: f64) -> f64 {
    let d = wrap(a - b, p);
    d.min(p - d)
}

/// For each `λ_j` (taken mod `p`), the distance to the nearest quasi-energy.
pub fn match_quasienergies(lambda: &[f64], quasi: &[f64], p: f64) -> Vec<f64> {
    lambda
        .iter()
        .map(|&l| {
            quasi
                .iter()
                .map(|&q| circular_distance(l, q, p))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}
