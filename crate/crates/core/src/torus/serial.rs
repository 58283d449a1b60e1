use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{OperatorSeries, TorusSeries};
use crate::error::{Error, Result};

/// JSON document for operator (or scalar, `N = 1`) series.
///
/// Entry indices are 1-based. Only nonzero coefficients are listed; the
/// cutoff `K` fixes the box of the reconstructed series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDocument {
    pub n: usize,
    #[serde(rename = "K")]
    pub cutoff: usize,
    #[serde(rename = "N")]
    pub dim: usize,
    pub entries: Vec<EntryDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDocument {
    pub i: usize,
    pub j: usize,
    pub coeffs: Vec<CoeffDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffDocument {
    pub k: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

fn entry_doc(i: usize, j: usize, f: &TorusSeries) -> Option<EntryDocument> {
    let modes = f.mode_box();
    let coeffs: Vec<CoeffDocument> = f
        .coeffs()
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != Complex64::new(0.0, 0.0))
        .map(|(flat, c)| CoeffDocument {
            k: modes.mode(flat),
            re: c.re,
            im: c.im,
        })
        .collect();
    (!coeffs.is_empty()).then_some(EntryDocument { i, j, coeffs })
}

impl From<&OperatorSeries> for SeriesDocument {
    fn from(op: &OperatorSeries) -> Self {
        let mut entries = Vec::new();
        for i in 0..op.dim() {
            for j in 0..op.dim() {
                entries.extend(entry_doc(i + 1, j + 1, op.entry(i, j)));
            }
        }
        Self {
            n: op.n(),
            cutoff: op.cutoff(),
            dim: op.dim(),
            entries,
        }
    }
}

impl From<&TorusSeries> for SeriesDocument {
    fn from(f: &TorusSeries) -> Self {
        Self {
            n: f.n(),
            cutoff: f.cutoff(),
            dim: 1,
            entries: entry_doc(1, 1, f).into_iter().collect(),
        }
    }
}

impl SeriesDocument {
    /// Diagonal document holding one scalar series per mode.
    pub fn from_diagonal(series: &[TorusSeries]) -> Result<Self> {
        let first = series.first().ok_or_else(|| Error::Shape("empty diagonal".into()))?;
        Ok(Self {
            n: first.n(),
            cutoff: first.cutoff(),
            dim: series.len(),
            entries: series
                .iter()
                .enumerate()
                .filter_map(|(i, f)| entry_doc(i + 1, i + 1, &f.with_cutoff(first.cutoff())))
                .collect(),
        })
    }

    pub fn to_operator(&self) -> Result<OperatorSeries> {
        if self.n == 0 || self.dim == 0 {
            return Err(Error::Shape("document with n = 0 or N = 0".into()));
        }
        let mut op = OperatorSeries::zeros(self.dim, self.n, self.cutoff);
        for e in &self.entries {
            if e.i == 0 || e.j == 0 || e.i > self.dim || e.j > self.dim {
                return Err(Error::Shape(format!(
                    "entry ({}, {}) outside 1..={}",
                    e.i, e.j, self.dim
                )));
            }
            let mut f = TorusSeries::zeros(self.n, self.cutoff);
            for c in &e.coeffs {
                let slot = f
                    .coeff_mut(&c.k)
                    .ok_or_else(|| Error::Shape(format!("mode {:?} outside cutoff {}", c.k, self.cutoff)))?;
                *slot = Complex64::new(c.re, c.im);
            }
            op.set_entry(e.i - 1, e.j - 1, f);
        }
        Ok(op)
    }

    pub fn to_series(&self) -> Result<TorusSeries> {
        if self.dim != 1 {
            return Err(Error::Shape(format!("scalar document has N = {}", self.dim)));
        }
        Ok(self.to_operator()?.entry(0, 0).clone())
    }

    pub fn to_diagonal(&self) -> Result<Vec<TorusSeries>> {
        let op = self.to_operator()?;
        Ok((0..self.dim).map(|i| op.entry(i, i).clone()).collect())
    }
}
