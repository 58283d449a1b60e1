use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::series::phase_table;
use super::{GridPlan, TorusSeries};
use crate::error::{Error, Result};

/// `N×N` matrix of torus series sharing `(n, K)`: an angle-dependent
/// operator written in the eigenbasis of the unperturbed part.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSeries {
    dim: usize,
    n: usize,
    cutoff: usize,
    entries: Vec<TorusSeries>,
}

/// Operator samples at every point of a [`GridPlan`], in grid order.
pub type GridOperator = Vec<DMatrix<Complex64>>;

impl OperatorSeries {
    pub fn zeros(dim: usize, n: usize, cutoff: usize) -> Self {
        Self {
            dim,
            n,
            cutoff,
            entries: vec![TorusSeries::zeros(n, cutoff); dim * dim],
        }
    }

    pub fn from_fn(
        dim: usize,
        n: usize,
        cutoff: usize,
        mut f: impl FnMut(usize, usize) -> TorusSeries,
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(f(i, j));
            }
        }
        let op = Self::from_entries(dim, entries)?;
        if op.n != n {
            return Err(Error::Shape(format!("entries live on T^{} not T^{n}", op.n)));
        }
        Ok(op.with_cutoff(cutoff))
    }

    /// Row-major entries; every entry must share `n` and `K`.
    pub fn from_entries(dim: usize, entries: Vec<TorusSeries>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::Shape(format!(
                "expected {} entries for N={dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let (n, cutoff) = entries
            .first()
            .map(|e| (e.n(), e.cutoff()))
            .ok_or_else(|| Error::Shape("empty operator".into()))?;
        if entries.iter().any(|e| e.n() != n || e.cutoff() != cutoff) {
            return Err(Error::Shape("entries disagree on (n, K)".into()));
        }
        Ok(Self {
            dim,
            n,
            cutoff,
            entries,
        })
    }

    /// Angle-independent operator.
    pub fn constant(matrix: &DMatrix<Complex64>, n: usize, cutoff: usize) -> Self {
        let dim = matrix.nrows();
        let mut out = Self::zeros(dim, n, cutoff);
        for i in 0..dim {
            for j in 0..dim {
                out.entries[i * dim + j] = TorusSeries::constant(n, cutoff, matrix[(i, j)]);
            }
        }
        out
    }

    pub fn identity(dim: usize, n: usize, cutoff: usize) -> Self {
        Self::constant(&DMatrix::identity(dim, dim), n, cutoff)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn entries(&self) -> &[TorusSeries] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> &TorusSeries {
        &self.entries[i * self.dim + j]
    }

    /// Replaces entry `(i, j)`; the series is re-expanded at this operator's cutoff.
    pub fn set_entry(&mut self, i: usize, j: usize, value: TorusSeries) {
        self.entries[i * self.dim + j] = value.with_cutoff(self.cutoff);
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(TorusSeries::is_zero)
    }

    /// Fourier coefficient matrix `P̂_k`.
    pub fn mode_matrix(&self, k: &[i64]) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(i, j).coeff(k))
    }

    /// Coefficient matrix at a flat mode index of the shared box.
    pub fn mode_matrix_flat(&self, flat: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(i, j).coeffs()[flat])
    }

    pub fn evaluate(&self, phi: &[f64]) -> DMatrix<Complex64> {
        let phases = phase_table(self.n, self.cutoff, phi);
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(i, j).evaluate_with(&phases))
    }

    /// Operator whose value at real `φ` is the adjoint of this one's.
    pub fn adjoint_on_real_torus(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.entries[i * self.dim + j] = self.entry(j, i).conj_on_real_torus();
            }
        }
        out
    }

    /// Largest coefficient gap between the operator and its adjoint.
    pub fn hermiticity_defect(&self) -> f64 {
        self.max_coeff_distance(&self.adjoint_on_real_torus())
    }

    pub fn anti_hermiticity_defect(&self) -> f64 {
        self.max_coeff_distance(&self.adjoint_on_real_torus().scale(-1.0))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn is_anti_hermitian(&self, tol: f64) -> bool {
        self.anti_hermiticity_defect() <= tol
    }

    pub fn max_coeff(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.coeffs().iter().map(|c| c.norm()))
            .fold(0.0, f64::max)
    }

    pub fn max_coeff_distance(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.max_coeff_distance(b))
            .fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> Self {
        let mut out = Self::zeros(self.dim, self.n, self.cutoff);
        for i in 0..self.dim {
            out.entries[i * self.dim + i] = self.entry(i, i).clone();
        }
        out
    }

    pub fn off_diagonal(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.entries[i * self.dim + i] = TorusSeries::zeros(self.n, self.cutoff);
        }
        out
    }

    pub fn with_cutoff(&self, cutoff: usize) -> Self {
        Self {
            dim: self.dim,
            n: self.n,
            cutoff,
            entries: self.entries.iter().map(|e| e.with_cutoff(cutoff)).collect(),
        }
    }

    /// Upper-left `dim×dim` block.
    pub fn leading_block(&self, dim: usize) -> Result<Self> {
        if dim == 0 || dim > self.dim {
            return Err(Error::Shape(format!("block {dim} of operator with N={}", self.dim)));
        }
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(self.entry(i, j).clone());
            }
        }
        Self::from_entries(dim, entries)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.scale_complex(Complex64::new(factor, 0.0))
    }

    pub fn scale_complex(&self, factor: Complex64) -> Self {
        Self {
            dim: self.dim,
            n: self.n,
            cutoff: self.cutoff,
            entries: self.entries.iter().map(|e| e.scale(factor)).collect(),
        }
    }

    pub fn add_scaled(&self, other: &Self, factor: Complex64) -> Result<Self> {
        if self.dim != other.dim || self.n != other.n {
            return Err(Error::Shape("operator shapes differ".into()));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.add_scaled(b, factor))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(self.dim, entries)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, Complex64::new(1.0, 0.0))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, Complex64::new(-1.0, 0.0))
    }

    pub fn directional_derivative(&self, omega: &[f64]) -> Self {
        Self {
            dim: self.dim,
            n: self.n,
            cutoff: self.cutoff,
            entries: self.entries.iter().map(|e| e.directional_derivative(omega)).collect(),
        }
    }

    /// Samples at every grid point.
    pub fn to_grid(&self, plan: &GridPlan) -> Result<GridOperator> {
        let columns: Vec<Vec<Complex64>> = self
            .entries
            .par_iter()
            .map(|e| plan.to_grid(e))
            .collect::<Result<_>>()?;
        Ok(assemble_points(self.dim, plan.points(), &columns))
    }

    /// Coefficients at `cutoff` recovered from grid samples, plus the largest
    /// per-entry ℓ¹ truncation residue.
    pub fn from_grid(plan: &GridPlan, values: &[DMatrix<Complex64>], cutoff: usize) -> Result<(Self, f64)> {
        let dim = values.first().map_or(0, |m| m.nrows());
        if values.len() != plan.points() {
            return Err(Error::Shape("grid operator has wrong number of points".into()));
        }
        let results: Vec<(TorusSeries, f64)> = (0..dim * dim)
            .into_par_iter()
            .map(|e| {
                let (i, j) = (e / dim, e % dim);
                let column: Vec<Complex64> = values.iter().map(|m| m[(i, j)]).collect();
                plan.from_grid_with_residue(&column, cutoff)
            })
            .collect::<Result<_>>()?;
        let residue = results.iter().map(|r| r.1).fold(0.0, f64::max);
        let entries = results.into_iter().map(|r| r.0).collect();
        Ok((Self::from_entries(dim, entries)?, residue))
    }
}

pub(crate) fn assemble_points(dim: usize, points: usize, columns: &[Vec<Complex64>]) -> GridOperator {
    (0..points)
        .into_par_iter()
        .map(|p| DMatrix::from_fn(dim, dim, |i, j| columns[i * dim + j][p]))
        .collect()
}
