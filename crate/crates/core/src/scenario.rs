//! Random model generators and the fixed-seed reference scenarios.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diophantine::{default_tau, most_nonresonant, Frequency};
use crate::error::{Error, Result};
use crate::floquet::State;
use crate::oscillator::{build_oscillator, perturbation_matrix, Oscillator, OscillatorSpec, PerturbationSpec};
use crate::torus::{delta_norm, DiagonalPart, OperatorSeries, TorusSeries};

fn unit_disk<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    loop {
        let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if z.norm_sqr() <= 1.0 {
            return z;
        }
    }
}

/// Hermitian series with i.i.d. coefficients in the unit square.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize, n: usize, cutoff: usize) -> OperatorSeries {
    let mut op = OperatorSeries::zeros(dim, n, cutoff);
    for i in 0..dim {
        for j in i..dim {
            let f = TorusSeries::from_fn(n, cutoff, |_| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            if i == j {
                op.set_entry(i, i, f.real_part());
            } else {
                op.set_entry(j, i, f.conj_on_real_torus());
                op.set_entry(i, j, f);
            }
        }
    }
    op
}

/// Anti-hermitian counterpart of [`random_hermitian`], scaled by `scale`.
pub fn random_anti_hermitian<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    n: usize,
    cutoff: usize,
    scale: f64,
) -> OperatorSeries {
    random_hermitian(rng, dim, n, cutoff).scale_complex(Complex64::new(0.0, scale))
}

/// Hermitian perturbation with entries of size `(ij)^{δ/2}/(1+|i-j|)²` and
/// Fourier decay `e^{-ρ|k|_1}`, rescaled so that `‖P‖_{δ,s} = epsilon`.
pub fn analytic_perturbation<R: Rng + ?Sized>(
    rng: &mut R,
    base: &DiagonalPart,
    cutoff: usize,
    rho: f64,
    s: f64,
    epsilon: f64,
) -> Result<OperatorSeries> {
    let dim = base.dim();
    let n = base.n();
    let delta = base.delta();
    let mut op = OperatorSeries::zeros(dim, n, cutoff);
    for i in 0..dim {
        for j in i..dim {
            let size = (((i + 1) * (j + 1)) as f64).powf(delta / 2.0) / (1.0 + (j - i) as f64).powi(2);
            let f = TorusSeries::from_fn(n, cutoff, |k| {
                let l1: i64 = k.iter().map(|c| c.abs()).sum();
                unit_disk(rng) * size * (-rho * l1 as f64).exp()
            });
            if i == j {
                op.set_entry(i, i, f.real_part());
            } else {
                op.set_entry(j, i, f.conj_on_real_torus());
                op.set_entry(i, j, f);
            }
        }
    }
    if epsilon == 0.0 {
        return Ok(OperatorSeries::zeros(dim, n, cutoff));
    }
    let norm = delta_norm(&op, base, s)?;
    Ok(op.scale(epsilon / norm))
}

/// Real zero-average fluctuations with `‖μ_i‖_0 ≤ fraction·g_i`, where
/// `g_i` is the smallest eigenvalue gap adjacent to mode `i`.
pub fn random_mu<R: Rng + ?Sized>(rng: &mut R, base: &DiagonalPart, cutoff: usize, fraction: f64) -> Vec<TorusSeries> {
    let lambda = base.lambda();
    let n = base.n();
    (0..base.dim())
        .map(|i| {
            let left = if i > 0 {
                lambda[i] - lambda[i - 1]
            } else {
                f64::INFINITY
            };
            let right = if i + 1 < lambda.len() {
                lambda[i + 1] - lambda[i]
            } else {
                f64::INFINITY
            };
            let gap = left.min(right);
            let gap = if gap.is_finite() { gap } else { lambda[i] };
            let f = TorusSeries::from_fn(n, cutoff, |k| {
                if k.iter().all(|&c| c == 0) {
                    Complex64::new(0.0, 0.0)
                } else {
                    unit_disk(rng)
                }
            })
            .real_part();
            let norm = f.sup_norm_s(0.0);
            if norm == 0.0 {
                f
            } else {
                f.scale(Complex64::new(fraction * gap * rng.random_range(0.1..1.0) / norm, 0.0))
            }
        })
        .collect()
}

/// Seed of sub-stream `stream` of the root seed.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng.random()
}

/// Unit-norm state with i.i.d. components in the unit disk.
pub fn random_state(dim: usize, seed: u64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = State::from_fn(dim, |_, _| unit_disk(&mut rng));
    let norm = v.norm();
    if norm > 0.0 {
        v / Complex64::new(norm, 0.0)
    } else {
        v
    }
}

fn default_omega_samples() -> usize {
    256
}

fn default_omega_kmax() -> usize {
    12
}

/// A fixed-seed model `(A, εP, ω)` of the abstract type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractScenario {
    #[serde(rename = "N")]
    pub dim: usize,
    pub n: usize,
    pub d: f64,
    pub delta: f64,
    pub s: f64,
    pub gamma: f64,
    /// Defaults to `n + 2/(d-1) + 1`.
    pub tau: Option<f64>,
    #[serde(rename = "K")]
    pub cutoff: usize,
    pub epsilon: f64,
    /// Decay rate of the Fourier coefficients of `P` (default `2s`).
    pub rho: Option<f64>,
    /// Explicit frequency; otherwise the most non-resonant of `omega_samples`
    /// uniform draws is used.
    pub omega: Option<Vec<f64>>,
    #[serde(default = "default_omega_samples")]
    pub omega_samples: usize,
    /// Horizon `|k|_1` used when ranking sampled frequencies.
    #[serde(default = "default_omega_kmax")]
    pub omega_kmax: usize,
}

impl AbstractScenario {
    /// `N=20, n=2, d=4/3, δ=0.2, s=0.5, γ=0.05, K=6, ε=1e-3`.
    pub fn reference_quasi_periodic() -> Self {
        Self {
            dim: 20,
            n: 2,
            d: 4.0 / 3.0,
            delta: 0.2,
            s: 0.5,
            gamma: 0.05,
            tau: None,
            cutoff: 6,
            epsilon: 1e-3,
            rho: None,
            omega: None,
            omega_samples: 256,
            omega_kmax: 12,
        }
    }

    /// Periodic (`n = 1`) counterpart with `N = 12`.
    pub fn reference_periodic() -> Self {
        Self {
            dim: 12,
            n: 1,
            ..Self::reference_quasi_periodic()
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or_else(|| default_tau(self.n, self.d))
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or(2.0 * self.s)
    }

    /// Builds `(A, P, ω)` with `‖P‖_{δ,s} = ε`; all randomness comes from `seed`.
    pub fn build(&self, seed: u64) -> Result<(DiagonalPart, OperatorSeries, Frequency)> {
        if self.dim == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("scenario needs N ≥ 1 and n ≥ 1".into()));
        }
        let base = DiagonalPart::power_law(self.dim, self.n, self.d, self.delta, 1.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = analytic_perturbation(&mut rng, &base, self.cutoff, self.rho(), self.s, self.epsilon)?;
        let omega = match &self.omega {
            Some(w) => w.clone(),
            None => {
                if self.omega_samples == 0 {
                    return Err(Error::InvalidArgument("omega_samples must be positive".into()));
                }
                let stream_seed = rng.random::<u64>();
                most_nonresonant(
                    self.omega_samples,
                    self.tau(),
                    &base,
                    self.omega_kmax,
                    self.dim,
                    stream_seed,
                )
                .0
            }
        };
        let freq = Frequency::new(omega, self.gamma, self.tau())?;
        Ok((base, p, freq))
    }
}

/// The oscillator model `-d²/dx² + Q(x) + εV(x, ωt)` truncated to its
/// first `N` eigenmodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorScenario {
    pub oscillator: OscillatorSpec,
    pub perturbation: PerturbationSpec,
    #[serde(rename = "N")]
    pub dim: usize,
    #[serde(rename = "K")]
    pub cutoff: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub s: f64,
    pub gamma: f64,
    pub tau: Option<f64>,
    pub omega: Option<Vec<f64>>,
    #[serde(default = "default_omega_samples")]
    pub omega_samples: usize,
    #[serde(default = "default_omega_kmax")]
    pub omega_kmax: usize,
}

/// An assembled oscillator model; `p` already carries the factor `ε`.
#[derive(Debug, Clone)]
pub struct OscillatorModel {
    pub oscillator: Oscillator,
    pub base: DiagonalPart,
    pub p: OperatorSeries,
    pub frequency: Frequency,
    /// `‖εP‖_{δ,s}`.
    pub size: f64,
    pub quadrature_change: f64,
    pub within_growth_bound: bool,
}

impl OscillatorScenario {
    /// `α = 4`, `V = |x|^{1/2} cos φ`, `N = 12`, `ε = 1e-3`, periodic forcing.
    pub fn reference() -> Self {
        let d = 4.0 / 3.0;
        Self {
            oscillator: OscillatorSpec::power(4.0, 12),
            perturbation: PerturbationSpec::power_cos(0.5, 1, false),
            dim: 12,
            cutoff: 1,
            delta: 0.5 * d / 4.0 + 0.1,
            epsilon: 1e-3,
            s: 0.5,
            gamma: 0.05,
            tau: None,
            omega: None,
            omega_samples: 256,
            omega_kmax: 12,
        }
    }

    pub fn n(&self) -> usize {
        self.perturbation.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
            .unwrap_or_else(|| default_tau(self.n(), self.oscillator.growth_exponent()))
    }

    pub fn build(&self, seed: u64) -> Result<OscillatorModel> {
        self.oscillator.check_growth()?;
        if self.dim == 0 || self.dim > self.oscillator.modes {
            return Err(Error::InvalidArgument(format!(
                "N = {} outside 1..={} certified modes",
                self.dim, self.oscillator.modes
            )));
        }
        let oscillator = build_oscillator(&self.oscillator)?;
        let base = oscillator.diagonal_part(self.dim, self.n(), self.delta)?;
        let pm = perturbation_matrix(&self.perturbation, &oscillator, self.dim, self.cutoff)?;
        let p = pm.p.scale(self.epsilon);
        let size = delta_norm(&p, &base, self.s)?;
        let omega = match &self.omega {
            Some(w) => w.clone(),
            None => {
                if self.omega_samples == 0 {
                    return Err(Error::InvalidArgument("omega_samples must be positive".into()));
                }
                most_nonresonant(self.omega_samples, self.tau(), &base, self.omega_kmax, self.dim, seed).0
            }
        };
        let frequency = Frequency::new(omega, self.gamma, self.tau())?;
        Ok(OscillatorModel {
            oscillator,
            base,
            p,
            frequency,
            size,
            quadrature_change: pm.quadrature_change,
            within_growth_bound: pm.within_growth_bound,
        })
    }
}
