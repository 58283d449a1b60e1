use std::fs;
use std::path::{Path, PathBuf};

use kamred::floquet::Scheme;
use kamred::kam::KamSettings;
use kamred::scenario::{AbstractScenario, OscillatorScenario};
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, Kind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSource,
    #[serde(default)]
    pub kam: KamOverrides,
    #[serde(default)]
    pub frequencies: Option<FrequencySection>,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub inspect: InspectSection,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Abstract(AbstractScenario),
    Oscillator(OscillatorScenario),
}

/// Engine knobs. `ε`, `s`, `γ` and `τ` come from the model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KamOverrides {
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k_base: Option<usize>,
    #[serde(rename = "K_work", default, skip_serializing_if = "Option::is_none")]
    pub k_work: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certify_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cstar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comega_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oversample: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divisor_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict_guards: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySection {
    pub gammas: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_kmax")]
    pub kmax: usize,
    /// Largest mode index in the (dio2) checks; defaults to the model's `N`.
    #[serde(default)]
    pub nmax: Option<usize>,
    /// A single frequency to certify at every `γ` of the grid.
    #[serde(default)]
    pub omega: Option<Vec<f64>>,
}

fn default_samples() -> usize {
    10_000
}

fn default_kmax() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub t_min: f64,
    pub t_max: f64,
    pub times: usize,
    /// Step size; defaults to `0.09 / max λ`.
    pub dt: Option<f64>,
    pub scheme: Scheme,
    pub tol: f64,
    /// Monodromy resolution for periodic models.
    pub steps_per_period: usize,
    pub quasi_modes: usize,
    pub quasi_tol: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            t_min: 0.1,
            t_max: 50.0,
            times: 12,
            dt: None,
            scheme: Scheme::Magnus4,
            tol: 1e-4,
            steps_per_period: 4000,
            quasi_modes: 10,
            quasi_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// `|k|_1` horizon of the tabulated `ν_{j,k} = λ_j^∞ + k·ω`.
    pub kmax: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { kmax: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InspectSection {
    /// 1-based inclusive range of the growth-exponent fit, clipped to the
    /// certified modes.
    pub fit_range: [usize; 2],
    /// `δ` values of the boundedness study; defaults to the model's `δ`.
    pub delta_grid: Vec<f64>,
    /// Largest block of the boundedness study (default `min(128, certified modes)`).
    pub boundedness_dim: Option<usize>,
}

impl Default for InspectSection {
    fn default() -> Self {
        Self {
            fit_range: [20, 200],
            delta_grid: Vec::new(),
            boundedness_dim: None,
        }
    }
}

pub struct ModelParams {
    pub s: f64,
    pub gamma: f64,
    pub tau: Option<f64>,
    pub cutoff: usize,
}

impl ModelSource {
    pub fn params(&self) -> ModelParams {
        match self {
            ModelSource::Abstract(a) => ModelParams {
                s: a.s,
                gamma: a.gamma,
                tau: a.tau,
                cutoff: a.cutoff,
            },
            ModelSource::Oscillator(o) => ModelParams {
                s: o.s,
                gamma: o.gamma,
                tau: o.tau,
                cutoff: o.cutoff,
            },
        }
    }
}

impl KamOverrides {
    /// Full settings with `epsilon` the measured size of `εP`.
    pub fn settings(&self, params: &ModelParams, epsilon: f64) -> KamSettings {
        let d = KamSettings::default();
        KamSettings {
            epsilon,
            s: params.s,
            gamma: params.gamma,
            tau: params.tau,
            k_base: self.k_base.unwrap_or(params.cutoff.max(1)),
            k_work: self.k_work,
            certify_k: self.certify_k,
            theta: self.theta,
            cstar: self.cstar.unwrap_or(d.cstar),
            comega_star: self.comega_star.unwrap_or(d.comega_star),
            gamma_star: self.gamma_star,
            tol: self.tol.unwrap_or(d.tol),
            l_max: self.l_max.unwrap_or(d.l_max),
            oversample: self.oversample.unwrap_or(d.oversample),
            divisor_scale: self.divisor_scale.unwrap_or(d.divisor_scale),
            strict_guards: self.strict_guards.unwrap_or(d.strict_guards),
        }
    }
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Failure::new(Kind::Schema, format!("manifest field `{path}`: {}", e.inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::new(Kind::Usage, format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
