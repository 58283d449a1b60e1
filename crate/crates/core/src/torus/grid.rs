//! Equispaced grids on the torus and the box of retained Fourier modes.

use std::f64::consts::TAU;
use std::sync::{Arc, LazyLock, Mutex};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::TorusSeries;
use crate::error::{Error, Result};

/// The box `{k ∈ ℤ^n : |k|_∞ ≤ cutoff}` with row-major flat indexing
/// (the last angle varies fastest).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeBox {
    pub n: usize,
    pub cutoff: usize,
}

impl ModeBox {
    pub fn new(n: usize, cutoff: usize) -> Self {
        Self { n, cutoff }
    }

    pub fn side(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        k.len() == self.n && k.iter().all(|&c| c.unsigned_abs() as usize <= self.cutoff)
    }

    /// Flat index of `k`; `None` outside the box.
    pub fn index(&self, k: &[i64]) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let side = self.side();
        let shift = self.cutoff as i64;
        Some(k.iter().fold(0usize, |acc, &c| acc * side + (c + shift) as usize))
    }

    pub fn mode(&self, mut flat: usize) -> Vec<i64> {
        let side = self.side();
        let mut k = vec![0i64; self.n];
        for slot in k.iter_mut().rev() {
            *slot = (flat % side) as i64 - self.cutoff as i64;
            flat /= side;
        }
        k
    }

    pub fn modes(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len()).map(move |f| self.mode(f))
    }

    /// Calls `f(flat, k)` for every mode in flat order without allocating per mode.
    pub fn for_each_mode(&self, mut f: impl FnMut(usize, &[i64])) {
        let r = self.cutoff as i64;
        let mut k = vec![-r; self.n];
        for flat in 0..self.len() {
            f(flat, &k);
            for slot in k.iter_mut().rev() {
                if *slot < r {
                    *slot += 1;
                    break;
                }
                *slot = -r;
            }
        }
    }

    /// Flat index of `-k` for the mode at `flat`.
    pub fn negate(&self, flat: usize) -> usize {
        self.len() - 1 - flat
    }

    /// `ω·k` for every mode of the box, in flat order.
    pub fn dot_table(&self, omega: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each_mode(|_, k| out.push(k.iter().zip(omega).map(|(&c, &w)| c as f64 * w).sum()));
        out
    }

    /// `|k|_1` for every mode of the box, in flat order.
    pub fn l1_table(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each_mode(|_, k| out.push(k.iter().map(|c| c.unsigned_abs()).sum()));
        out
    }

    /// `|k|_∞` for every mode of the box, in flat order.
    pub fn shell_table(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each_mode(|_, k| out.push(k.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0)));
        out
    }
}

/// FFT plan for an `m^n` equispaced grid `φ_j = 2π j / m`.
///
/// Grid values follow the same row-major layout as [`ModeBox`]. Evaluation
/// (`to_grid`) is exact for any `m`; recovering coefficients (`from_grid`)
/// requires `m ≥ 2K + 2`.
#[derive(Clone)]
pub struct GridPlan {
    n: usize,
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GridPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridPlan")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

impl GridPlan {
    pub fn new(n: usize, m: usize) -> Self {
        assert!(n >= 1 && m >= 1, "grid needs n >= 1 and m >= 1");
        // The planner caches plans by length; sharing it makes plans cheap.
        static PLANNER: LazyLock<Mutex<FftPlanner<f64>>> = LazyLock::new(|| Mutex::new(FftPlanner::new()));
        let mut planner = PLANNER.lock().unwrap_or_else(|e| e.into_inner());
        Self {
            n,
            m,
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        }
    }

    /// Smallest even grid size that resolves `cutoff` after `oversample`-fold
    /// refinement of the Nyquist count.
    pub fn size_for(cutoff: usize, oversample: usize) -> usize {
        let base = 2 * cutoff + 2;
        let m = base * oversample.max(1) / 2;
        let m = m.max(base);
        m + (m % 2)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn points(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    pub fn angle(&self, mut flat: usize) -> Vec<f64> {
        let mut phi = vec![0.0; self.n];
        for slot in phi.iter_mut().rev() {
            *slot = TAU * (flat % self.m) as f64 / self.m as f64;
            flat /= self.m;
        }
        phi
    }

    /// Signed frequency represented by bin `b` (Nyquist bin reported as `-m/2`).
    pub fn bin_frequency(&self, b: usize) -> i64 {
        if b < self.m.div_ceil(2) {
            b as i64
        } else {
            b as i64 - self.m as i64
        }
    }

    fn bin_of(&self, k: i64) -> usize {
        k.rem_euclid(self.m as i64) as usize
    }

    /// Samples of `f` at every grid point.
    pub fn to_grid(&self, f: &TorusSeries) -> Result<Vec<Complex64>> {
        if f.n() != self.n {
            return Err(Error::Shape(format!(
                "series has {} angles, grid has {}",
                f.n(),
                self.n
            )));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.points()];
        let coeffs = f.coeffs();
        f.mode_box().for_each_mode(|flat, k| {
            let c = coeffs[flat];
            if c != Complex64::new(0.0, 0.0) {
                let idx = k.iter().fold(0usize, |acc, &c| acc * self.m + self.bin_of(c));
                buf[idx] += c;
            }
        });
        self.transform(&mut buf, true);
        Ok(buf)
    }

    /// Normalized discrete spectrum of grid samples, indexed by bin.
    pub fn spectrum(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut buf = values.to_vec();
        self.transform(&mut buf, false);
        let scale = 1.0 / self.points() as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        buf
    }

    /// Coefficients with `|k|_∞ ≤ cutoff` recovered from grid samples.
    pub fn from_grid(&self, values: &[Complex64], cutoff: usize) -> Result<TorusSeries> {
        let (series, _) = self.from_grid_with_residue(values, cutoff)?;
        Ok(series)
    }

    /// As [`GridPlan::from_grid`], also returning the ℓ¹ mass of the discarded
    /// bins (the truncation residue).
    pub fn from_grid_with_residue(&self, values: &[Complex64], cutoff: usize) -> Result<(TorusSeries, f64)> {
        self.check_resolves(cutoff)?;
        if values.len() != self.points() {
            return Err(Error::Shape(format!(
                "expected {} grid values, got {}",
                self.points(),
                values.len()
            )));
        }
        let spec = self.spectrum(values);
        let modes = ModeBox::new(self.n, cutoff);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); modes.len()];
        let mut kept = vec![false; spec.len()];
        modes.for_each_mode(|flat, k| {
            let idx = k.iter().fold(0usize, |acc, &c| acc * self.m + self.bin_of(c));
            coeffs[flat] = spec[idx];
            kept[idx] = true;
        });
        let residue = spec.iter().zip(&kept).filter(|(_, &k)| !k).map(|(c, _)| c.norm()).sum();
        Ok((TorusSeries::from_coeffs(self.n, cutoff, coeffs)?, residue))
    }

    pub fn check_resolves(&self, cutoff: usize) -> Result<()> {
        let required = 2 * cutoff + 2;
        if self.m < required {
            return Err(Error::Aliasing {
                grid: self.m,
                cutoff,
                required,
            });
        }
        Ok(())
    }

    /// Grid samples of `ω·∂_φ g` where `g` is the trigonometric interpolant of
    /// `values`; the Nyquist bin is dropped.
    pub fn derivative_on_grid(&self, values: &[Complex64], omega: &[f64]) -> Vec<Complex64> {
        let mut spec = self.spectrum(values);
        let nyquist = self.m.is_multiple_of(2).then_some(self.m / 2);
        for (idx, c) in spec.iter_mut().enumerate() {
            let mut rem = idx;
            let mut dot = 0.0;
            let mut drop = false;
            for d in (0..self.n).rev() {
                let b = rem % self.m;
                rem /= self.m;
                if Some(b) == nyquist {
                    drop = true;
                }
                dot += self.bin_frequency(b) as f64 * omega[d];
            }
            *c = if drop {
                Complex64::new(0.0, 0.0)
            } else {
                *c * Complex64::new(0.0, dot)
            };
        }
        self.transform(&mut spec, true);
        spec
    }

    /// Unnormalized separable FFT along every axis.
    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        let m = self.m;
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        // last axis: contiguous lines
        for line in buf.chunks_exact_mut(m) {
            fft.process_with_scratch(line, &mut scratch);
        }
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        for axis in 0..self.n.saturating_sub(1) {
            let stride = m.pow((self.n - 1 - axis) as u32);
            let block = stride * m;
            for start in (0..buf.len()).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for (t, slot) in line.iter_mut().enumerate() {
                        *slot = buf[base + t * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (t, v) in line.iter().enumerate() {
                        buf[base + t * stride] = *v;
                    }
                }
            }
        }
    }
}
