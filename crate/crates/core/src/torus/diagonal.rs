use super::TorusSeries;
use crate::error::{Error, Result};

/// Diagonal operator `diag(λ_i + μ_i(φ))` with constant eigenvalues `λ_i`
/// and zero-average real fluctuations `μ_i`.
///
/// `d` is the growth exponent (`λ_i ~ i^d`) and `delta` the order of the
/// perturbation; both enter the weights `λ_i^{-δ/d}` of the δ-norms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalPart {
    lambda: Vec<f64>,
    mu: Vec<TorusSeries>,
    d: f64,
    delta: f64,
}

/// Tolerance for the zero-average and reality checks on `μ_i`.
const MU_TOL: f64 = 1e-12;

impl DiagonalPart {
    pub fn new(lambda: Vec<f64>, mu: Vec<TorusSeries>, d: f64, delta: f64) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidArgument("empty spectrum".into()));
        }
        if mu.len() != lambda.len() {
            return Err(Error::Shape(format!(
                "{} eigenvalues but {} fluctuations",
                lambda.len(),
                mu.len()
            )));
        }
        if !(d > 1.0) || !(delta >= 0.0) || !(delta < d - 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need d > 1 and 0 <= delta < d - 1, got d = {d}, delta = {delta}"
            )));
        }
        for (idx, &l) in lambda.iter().enumerate() {
            if !(l > 0.0) {
                return Err(Error::NonPositiveEigenvalue {
                    index: idx + 1,
                    value: l,
                });
            }
        }
        if let Some(idx) = lambda.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "eigenvalues not strictly increasing at modes {} and {}",
                idx + 1,
                idx + 2
            )));
        }
        let (n, cutoff) = (mu[0].n(), mu[0].cutoff());
        for (idx, m) in mu.iter().enumerate() {
            if m.n() != n || m.cutoff() != cutoff {
                return Err(Error::Shape("fluctuations disagree on (n, K)".into()));
            }
            let scale = m.sup_norm_s(0.0).max(1.0);
            if !m.is_zero_average(MU_TOL * scale) {
                return Err(Error::InvalidArgument(format!(
                    "fluctuation of mode {} has nonzero average {}",
                    idx + 1,
                    m.mean()
                )));
            }
            if !m.is_real(MU_TOL * scale) {
                return Err(Error::InvalidArgument(format!(
                    "fluctuation of mode {} is not real",
                    idx + 1
                )));
            }
        }
        Ok(Self { lambda, mu, d, delta })
    }

    /// Constant diagonal (`μ ≡ 0`).
    pub fn constant(lambda: Vec<f64>, n: usize, d: f64, delta: f64) -> Result<Self> {
        let mu = vec![TorusSeries::zeros(n, 0); lambda.len()];
        Self::new(lambda, mu, d, delta)
    }

    /// `λ_i = scale · i^d`, `i = 1..=dim`.
    pub fn power_law(dim: usize, n: usize, d: f64, delta: f64, scale: f64) -> Result<Self> {
        let lambda = (1..=dim).map(|i| scale * (i as f64).powf(d)).collect();
        Self::constant(lambda, n, d, delta)
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn n(&self) -> usize {
        self.mu[0].n()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[TorusSeries] {
        &self.mu
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mu_cutoff(&self) -> usize {
        self.mu[0].cutoff()
    }

    pub fn has_constant_coefficients(&self) -> bool {
        self.mu.iter().all(TorusSeries::is_zero)
    }

    /// `λ_i^{-δ/d}`, the weights realizing `A^{-δ/d}`.
    pub fn weights(&self) -> Vec<f64> {
        let q = self.delta / self.d;
        self.lambda.iter().map(|l| l.powf(-q)).collect()
    }

    /// `min_{i≠j} |λ_i - λ_j| / |i^d - j^d|`.
    pub fn c_lambda(&self) -> f64 {
        let pw: Vec<f64> = (1..=self.dim()).map(|i| (i as f64).powf(self.d)).collect();
        let mut best = f64::INFINITY;
        for i in 0..self.dim() {
            for j in (i + 1)..self.dim() {
                let r = (self.lambda[i] - self.lambda[j]).abs() / (pw[j] - pw[i]);
                best = best.min(r);
            }
        }
        best
    }

    /// `max_i ‖μ_i‖_s / i^δ`.
    pub fn c_mu(&self, s: f64) -> f64 {
        self.mu
            .iter()
            .enumerate()
            .map(|(i, m)| m.sup_norm_s(s) / ((i + 1) as f64).powf(self.delta))
            .fold(0.0, f64::max)
    }

    /// `λ_i + μ_i(φ)` at a real angle.
    pub fn values_at(&self, phi: &[f64]) -> Vec<f64> {
        self.lambda
            .iter()
            .zip(&self.mu)
            .map(|(l, m)| l + m.evaluate(phi).re)
            .collect()
    }

    /// Same exponents with shifted eigenvalues and added fluctuations; every
    /// fluctuation is re-expanded at `cutoff`.
    pub fn absorb(&self, shift: &[f64], mu_add: &[TorusSeries], cutoff: usize) -> Result<Self> {
        if shift.len() != self.dim() || mu_add.len() != self.dim() {
            return Err(Error::Shape("absorbed diagonal has wrong length".into()));
        }
        let lambda = self.lambda.iter().zip(shift).map(|(l, s)| l + s).collect();
        let mu = self
            .mu
            .iter()
            .zip(mu_add)
            .map(|(m, a)| m.add(a).map(|s| s.with_cutoff(cutoff)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lambda, mu, self.d, self.delta)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.lambda.clone(), self.mu.clone(), self.d, delta)
    }

    pub fn leading(&self, dim: usize) -> Result<Self> {
        if dim == 0 || dim > self.dim() {
            return Err(Error::Shape(format!("leading {dim} of {} modes", self.dim())));
        }
        Self::new(self.lambda[..dim].to_vec(), self.mu[..dim].to_vec(), self.d, self.delta)
    }
}
