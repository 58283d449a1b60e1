use num_complex::Complex64;

use super::{GridPlan, ModeBox};
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Truncated Fourier series `f(φ) = Σ_{|k|_∞ ≤ K} ĉ_k e^{ik·φ}` on `T^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusSeries {
    n: usize,
    cutoff: usize,
    coeffs: Vec<Complex64>,
}

impl TorusSeries {
    pub fn zeros(n: usize, cutoff: usize) -> Self {
        assert!(n >= 1, "torus dimension must be positive");
        Self {
            n,
            cutoff,
            coeffs: vec![ZERO; ModeBox::new(n, cutoff).len()],
        }
    }

    pub fn constant(n: usize, cutoff: usize, value: Complex64) -> Self {
        let mut f = Self::zeros(n, cutoff);
        let center = f.mode_box().len() / 2;
        f.coeffs[center] = value;
        f
    }

    pub fn single_mode(n: usize, cutoff: usize, k: &[i64], value: Complex64) -> Result<Self> {
        let mut f = Self::zeros(n, cutoff);
        *f.coeff_mut(k)
            .ok_or_else(|| Error::InvalidArgument(format!("mode {k:?} outside cutoff {cutoff}")))? = value;
        Ok(f)
    }

    pub fn from_coeffs(n: usize, cutoff: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("torus dimension must be positive".into()));
        }
        let expected = ModeBox::new(n, cutoff).len();
        if coeffs.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} coefficients for n={n}, K={cutoff}, got {}",
                coeffs.len()
            )));
        }
        Ok(Self { n, cutoff, coeffs })
    }

    /// Builds a series from a coefficient function of `k`.
    pub fn from_fn(n: usize, cutoff: usize, mut f: impl FnMut(&[i64]) -> Complex64) -> Self {
        let modes = ModeBox::new(n, cutoff);
        let mut coeffs = Vec::with_capacity(modes.len());
        modes.for_each_mode(|_, k| coeffs.push(f(k)));
        Self { n, cutoff, coeffs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn mode_box(&self) -> ModeBox {
        ModeBox::new(self.n, self.cutoff)
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// `ĉ_k`, zero outside the retained box.
    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        self.mode_box().index(k).map_or(ZERO, |idx| self.coeffs[idx])
    }

    pub fn coeff_mut(&mut self, k: &[i64]) -> Option<&mut Complex64> {
        let idx = self.mode_box().index(k)?;
        Some(&mut self.coeffs[idx])
    }

    pub fn mean(&self) -> Complex64 {
        self.coeffs[self.coeffs.len() / 2]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == ZERO)
    }

    /// Copy with the mean removed.
    pub fn without_mean(&self) -> Self {
        let mut out = self.clone();
        let center = out.coeffs.len() / 2;
        out.coeffs[center] = ZERO;
        out
    }

    pub fn is_zero_average(&self, tol: f64) -> bool {
        self.mean().norm() <= tol
    }

    /// True when `ĉ_{-k} = conj(ĉ_k)` to within `tol`, i.e. the series is real
    /// on the real torus.
    pub fn is_real(&self, tol: f64) -> bool {
        let b = self.mode_box();
        (0..self.coeffs.len()).all(|f| (self.coeffs[b.negate(f)] - self.coeffs[f].conj()).norm() <= tol)
    }

    /// The series `φ ↦ conj(f(φ))` for real `φ`: `ĝ_k = conj(ĉ_{-k})`.
    pub fn conj_on_real_torus(&self) -> Self {
        let b = self.mode_box();
        let coeffs = (0..self.coeffs.len())
            .map(|f| self.coeffs[b.negate(f)].conj())
            .collect();
        Self {
            n: self.n,
            cutoff: self.cutoff,
            coeffs,
        }
    }

    /// Projection onto real-valued functions: `(f + conj f) / 2`.
    pub fn real_part(&self) -> Self {
        let c = self.conj_on_real_torus();
        let coeffs = self.coeffs.iter().zip(&c.coeffs).map(|(a, b)| (a + b) * 0.5).collect();
        Self {
            n: self.n,
            cutoff: self.cutoff,
            coeffs,
        }
    }

    /// Copy re-expanded at another cutoff (zero padding or truncation).
    pub fn with_cutoff(&self, cutoff: usize) -> Self {
        if cutoff == self.cutoff {
            return self.clone();
        }
        let src = self.mode_box();
        let mut out = Self::zeros(self.n, cutoff);
        let dst = out.mode_box();
        let coeffs = &self.coeffs;
        let slots = &mut out.coeffs;
        src.for_each_mode(|flat, k| {
            if let Some(idx) = dst.index(k) {
                slots[idx] = coeffs[flat];
            }
        });
        out
    }

    /// ℓ¹ mass of the coefficients that [`TorusSeries::with_cutoff`] would drop.
    pub fn truncation_residue(&self, cutoff: usize) -> f64 {
        self.coeffs
            .iter()
            .zip(self.mode_box().shell_table())
            .filter(|(_, r)| *r > cutoff)
            .map(|(c, _)| c.norm())
            .sum()
    }

    /// `Σ_{|k|_∞ = r} |ĉ_k|` for every shell `r = 0..=K`.
    pub fn shell_masses(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cutoff + 1];
        for (c, r) in self.coeffs.iter().zip(self.mode_box().shell_table()) {
            out[r] += c.norm();
        }
        out
    }

    /// Copy cut to the smallest cutoff `≥ min_cutoff` whose discarded tail
    /// has ℓ¹ mass at most `tol`.
    pub fn trimmed(&self, tol: f64, min_cutoff: usize) -> Self {
        let masses = self.shell_masses();
        let mut tail = 0.0;
        let mut cut = self.cutoff;
        while cut > min_cutoff && tail + masses[cut] <= tol {
            tail += masses[cut];
            cut -= 1;
        }
        self.with_cutoff(cut)
    }

    /// Zeroes every coefficient of modulus below `floor` (transform round-off).
    pub fn chopped(&self, floor: f64) -> Self {
        self.map(|c| if c.norm() < floor { Complex64::new(0.0, 0.0) } else { c })
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        self.map(|c| c * factor)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            n: self.n,
            cutoff: self.cutoff,
            coeffs: self.coeffs.iter().map(|&c| f(c)).collect(),
        }
    }

    /// `self + factor·other`, expanded at the larger of the two cutoffs.
    pub fn add_scaled(&self, other: &Self, factor: Complex64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Shape(format!(
                "cannot combine series on T^{} and T^{}",
                self.n, other.n
            )));
        }
        let cutoff = self.cutoff.max(other.cutoff);
        let mut out = self.with_cutoff(cutoff);
        let rhs = other.with_cutoff(cutoff);
        for (a, b) in out.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += factor * b;
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, Complex64::new(1.0, 0.0))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, Complex64::new(-1.0, 0.0))
    }

    /// Direct summation at a (possibly complex-shifted) real angle.
    pub fn evaluate(&self, phi: &[f64]) -> Complex64 {
        let phases = phase_table(self.n, self.cutoff, phi);
        self.evaluate_with(&phases)
    }

    pub(crate) fn evaluate_with(&self, phases: &[Vec<Complex64>]) -> Complex64 {
        let side = 2 * self.cutoff + 1;
        let mut total = ZERO;
        for (flat, c) in self.coeffs.iter().enumerate() {
            if *c == ZERO {
                continue;
            }
            let mut rem = flat;
            let mut term = *c;
            for d in (0..self.n).rev() {
                term *= phases[d][rem % side];
                rem /= side;
            }
            total += term;
        }
        total
    }

    /// `ω·∂_φ f`: coefficient `k` becomes `i(ω·k)ĉ_k`.
    pub fn directional_derivative(&self, omega: &[f64]) -> Self {
        let dots = self.mode_box().dot_table(omega);
        Self {
            n: self.n,
            cutoff: self.cutoff,
            coeffs: self
                .coeffs
                .iter()
                .zip(dots)
                .map(|(c, w)| c * Complex64::new(0.0, w))
                .collect(),
        }
    }

    /// `Σ_k |ĉ_k| e^{s|k|_1}`, an upper bound for the sup of `|f|` on the
    /// strip `|Im φ_l| ≤ s`.
    pub fn sup_norm_s(&self, s: f64) -> f64 {
        let l1 = self.mode_box().l1_table();
        self.coeffs
            .iter()
            .zip(l1)
            .map(|(c, k)| c.norm() * (s * k as f64).exp())
            .sum()
    }

    /// `(Σ_k |ĉ_k|²)^{1/2}`, the L² mean on the real torus.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_coeff_distance(&self, other: &Self) -> f64 {
        let cutoff = self.cutoff.max(other.cutoff);
        let a = self.with_cutoff(cutoff);
        let b = other.with_cutoff(cutoff);
        a.coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    /// Reconstruction from equispaced samples on a `grid_size^n` grid.
    pub fn transform_roundtrip(&self, grid_size: usize) -> Result<Self> {
        let plan = GridPlan::new(self.n, grid_size);
        plan.check_resolves(self.cutoff)?;
        let vals = plan.to_grid(self)?;
        plan.from_grid(&vals, self.cutoff)
    }

    /// Product evaluated on a grid of `oversample`×Nyquist size for the exact
    /// product, then truncated to `cutoff`. Returns the product and the ℓ¹ mass
    /// discarded by the truncation.
    pub fn product(&self, other: &Self, cutoff: usize, oversample: usize) -> Result<(Self, f64)> {
        if self.n != other.n {
            return Err(Error::Shape("product of series on different tori".into()));
        }
        let full = self.cutoff + other.cutoff;
        let plan = GridPlan::new(self.n, GridPlan::size_for(full, oversample.max(2)));
        let a = plan.to_grid(self)?;
        let b = plan.to_grid(other)?;
        let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let (exact, _) = plan.from_grid_with_residue(&prod, full)?;
        let residue = exact.truncation_residue(cutoff);
        Ok((exact.with_cutoff(cutoff), residue))
    }
}

/// `e^{i k φ_d}` for `k = -K..=K`, one row per angle.
pub(crate) fn phase_table(n: usize, cutoff: usize, phi: &[f64]) -> Vec<Vec<Complex64>> {
    (0..n)
        .map(|d| {
            (-(cutoff as i64)..=cutoff as i64)
                .map(|k| Complex64::from_polar(1.0, k as f64 * phi[d]))
                .collect()
        })
        .collect()
}
