use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context as _, Result};
use kamred::diophantine::{
    check_dio1, check_dio2, default_tau, rejection_curve, Dio1Certificate, Dio2Certificate, Frequency,
};
use kamred::floquet::{
    compare_trajectories, floquet_spectrum, log_uniform_times, match_quasienergies, monodromy_quasienergies,
    DeviationReport, ForcedSystem,
};
use kamred::io::{fmt_f64, to_json};
use kamred::kam::{run_schedule, KamSettings, ReducedDocument, RunStatus, StepRecord};
use kamred::oscillator::{
    asymptotic_exponent_fit, build_oscillator, c_lambda_profile, delta_boundedness_check, perturbation_matrix,
    BoundednessReport, ConvergenceCertificate, ExponentFit,
};
use kamred::scenario::{derive_seed, random_state};
use kamred::torus::{delta_norm, DiagonalPart, OperatorSeries};
use serde::{Deserialize, Serialize};

use crate::artifacts::ArtifactDir;
use crate::failure::{Failure, Kind};
use crate::manifest::{ModelSource, RunManifest};

/// Sub-streams of the root seed.
const STREAM_STATE: u64 = 1;
const STREAM_FREQUENCIES: u64 = 2;

pub struct Context {
    pub manifest: RunManifest,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    pub fn new(manifest: RunManifest, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        let seed = seed.unwrap_or(manifest.seed);
        let out = out
            .or_else(|| manifest.output.clone())
            .unwrap_or_else(|| Path::new("runs").join(&manifest.name));
        Self { manifest, seed, out }
    }

    /// The manifest as replayed: resolved seed, no output path.
    fn resolved_manifest(&self) -> RunManifest {
        RunManifest {
            seed: self.seed,
            output: None,
            ..self.manifest.clone()
        }
    }
}

struct Model {
    base: DiagonalPart,
    /// Includes the factor `ε`.
    p: OperatorSeries,
    frequency: Frequency,
    size: f64,
}

fn build_model(ctx: &Context) -> Result<Model, Failure> {
    match &ctx.manifest.model {
        ModelSource::Abstract(sc) => {
            let (base, p, frequency) = sc.build(ctx.seed)?;
            let size = delta_norm(&p, &base, sc.s)?;
            Ok(Model {
                base,
                p,
                frequency,
                size,
            })
        }
        ModelSource::Oscillator(sc) => {
            let m = sc.build(ctx.seed)?;
            Ok(Model {
                base: m.base,
                p: m.p,
                frequency: m.frequency,
                size: m.size,
            })
        }
    }
}

fn json_line<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut text = to_json(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

/// Least-squares line through `(x, y)` with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn line_fit(x: &[f64], y: &[f64]) -> LineFit {
    let m = x.len() as f64;
    let xb = x.iter().sum::<f64>() / m;
    let yb = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - xb).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xb) * (b - yb)).sum();
    let syy: f64 = y.iter().map(|v| (v - yb).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = yb - slope * xb;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    LineFit { slope, intercept, r2 }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrequencyCertificate {
    pub gamma: f64,
    pub pass: bool,
    pub dio1: Dio1Certificate,
    pub dio2: Dio2Certificate,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub name: String,
    pub seed: u64,
    pub tau: f64,
    pub samples: usize,
    pub kmax: usize,
    pub nmax: usize,
    pub gammas: Vec<f64>,
    pub rejection: Vec<f64>,
    pub fit: LineFit,
    pub omega: Option<Vec<f64>>,
    pub certificates: Vec<FrequencyCertificate>,
}

pub fn frequencies(ctx: &Context) -> Result<()> {
    let section = ctx
        .manifest
        .frequencies
        .clone()
        .ok_or_else(|| Failure::new(Kind::Usage, "manifest has no `frequencies` section"))?;
    if section.gammas.is_empty() {
        return Err(Failure::new(Kind::Usage, "empty gamma grid").into());
    }
    if section.gammas.iter().any(|g| !(*g > 0.0)) || section.samples == 0 {
        return Err(Failure::new(Kind::Usage, "gammas must be positive and samples nonzero").into());
    }
    let model = build_model(ctx)?;
    let params = ctx.manifest.model.params();
    let tau = params
        .tau
        .unwrap_or_else(|| default_tau(model.base.n(), model.base.d()));
    let nmax = section.nmax.unwrap_or(model.base.dim()).min(model.base.dim());
    let started = Instant::now();
    let rejection = rejection_curve(
        &section.gammas,
        section.samples,
        tau,
        &model.base,
        section.kmax,
        nmax,
        derive_seed(ctx.seed, STREAM_FREQUENCIES),
    );
    let certificates = match &section.omega {
        Some(w) if w.len() != model.base.n() => {
            return Err(Failure::new(
                Kind::Usage,
                format!("omega has {} components, model has n = {}", w.len(), model.base.n()),
            )
            .into())
        }
        Some(w) => section
            .gammas
            .iter()
            .map(|&gamma| {
                let dio1 = check_dio1(w, gamma, tau, section.kmax);
                let dio2 = check_dio2(w, &model.base, gamma, tau, section.kmax, nmax);
                FrequencyCertificate {
                    gamma,
                    pass: dio1.pass && dio2.pass,
                    dio1,
                    dio2,
                }
            })
            .collect(),
        None => Vec::new(),
    };
    log::info!("frequency screening took {:?}", started.elapsed());
    let report = FrequencyReport {
        name: ctx.manifest.name.clone(),
        seed: ctx.seed,
        tau,
        samples: section.samples,
        kmax: section.kmax,
        nmax,
        fit: line_fit(&section.gammas, &rejection),
        gammas: section.gammas.clone(),
        rejection,
        omega: section.omega.clone(),
        certificates,
    };
    let mut store = ArtifactDir::create(&ctx.out)?;
    store.write("manifest.json", &json_line(&ctx.resolved_manifest())?)?;
    store.write("frequencies.json", &json_line(&report)?)?;
    let mut csv = String::from("gamma,rejection_fraction\n");
    for (g, r) in report.gammas.iter().zip(&report.rejection) {
        csv.push_str(&format!("{},{}\n", fmt_f64(*g), fmt_f64(*r)));
    }
    store.write("rejection.csv", csv.as_bytes())?;
    for c in &report.certificates {
        println!("gamma {}: {}", c.gamma, if c.pass { "pass" } else { "fail" });
    }
    Ok(())
}

/// Final artifact of `reduce`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunDocument {
    pub name: String,
    pub seed: u64,
    pub status: RunStatus,
    pub steps: usize,
    pub norm_history: Vec<f64>,
    pub fitted_c: f64,
    pub settings: KamSettings,
    pub reduced: ReducedDocument,
}

#[derive(Debug, Serialize, Deserialize)]
struct FailureDocument {
    kind: String,
    message: String,
}

fn spectrum_csv(lambda_inf: &[f64], omega: &[f64], kmax: usize) -> String {
    let n = omega.len();
    let mut csv = String::from("j");
    for a in 1..=n {
        csv.push_str(&format!(",k{a}"));
    }
    csv.push_str(",nu,multiplicity\n");
    for e in floquet_spectrum(lambda_inf, omega, kmax) {
        csv.push_str(&e.j.to_string());
        for c in &e.k {
            csv.push_str(&format!(",{c}"));
        }
        csv.push_str(&format!(",{},{}\n", fmt_f64(e.nu), e.multiplicity));
    }
    csv
}

pub fn reduce(ctx: &Context) -> Result<()> {
    let model = build_model(ctx)?;
    let params = ctx.manifest.model.params();
    let settings = ctx.manifest.kam.settings(&params, model.size);
    let mut store = ArtifactDir::create(&ctx.out)?;
    store.write("manifest.json", &json_line(&ctx.resolved_manifest())?)?;
    let started = Instant::now();
    let outcome = match run_schedule(&model.base, &model.p, &model.frequency, &settings) {
        Ok(o) => o,
        Err(e) => {
            let failure = Failure::from(e);
            store.write(
                "failure.json",
                &json_line(&FailureDocument {
                    kind: failure.kind.label().into(),
                    message: failure.message.clone(),
                })?,
            )?;
            return Err(failure.into());
        }
    };
    log::info!("schedule took {:?}", started.elapsed());

    let mut steps = Vec::new();
    for r in &outcome.state.records {
        steps.extend(json_line::<StepRecord>(r)?);
    }
    store.write("steps.jsonl", &steps)?;
    let doc = RunDocument {
        name: ctx.manifest.name.clone(),
        seed: ctx.seed,
        status: outcome.status,
        steps: outcome.state.records.len(),
        norm_history: outcome.state.norm_history.clone(),
        fitted_c: outcome.fitted_c,
        settings,
        reduced: ReducedDocument::from(&outcome.reduced),
    };
    store.write("reduced.json", &json_line(&doc)?)?;
    let csv = spectrum_csv(
        &outcome.reduced.lambda_inf,
        &outcome.reduced.omega.omega,
        ctx.manifest.spectrum.kmax,
    );
    store.write("spectrum.csv", csv.as_bytes())?;
    println!(
        "{:?} after {} steps, final norm {:.3e}",
        outcome.status,
        doc.steps,
        doc.norm_history.last().copied().unwrap_or(0.0)
    );
    if outcome.status != RunStatus::Converged {
        let failure = Failure::new(
            Kind::Diverged,
            format!("schedule ended with status {:?}", outcome.status),
        );
        store.write(
            "failure.json",
            &json_line(&FailureDocument {
                kind: failure.kind.label().into(),
                message: failure.message.clone(),
            })?,
        )?;
        return Err(failure.into());
    }
    Ok(())
}

fn load_run(store: &ArtifactDir) -> Result<RunDocument, Failure> {
    let bytes = store.read("reduced.json")?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::new(Kind::Artifact, format!("reduced.json: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuasiEnergyCheck {
    pub steps_per_period: usize,
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub trajectory: DeviationReport,
    pub tol: f64,
    pub pass: bool,
    pub quasi_energies: Option<QuasiEnergyCheck>,
}

pub fn verify(ctx: &Context) -> Result<()> {
    let mut store = ArtifactDir::open(&ctx.out)?;
    let run = load_run(&store)?;
    if run.seed != ctx.seed {
        return Err(Failure::new(
            Kind::Usage,
            format!(
                "artifacts were produced with seed {} but seed {} was requested",
                run.seed, ctx.seed
            ),
        )
        .into());
    }
    let model = build_model(ctx)?;
    let rs = run
        .reduced
        .to_reduced()
        .map_err(|e| Failure::new(Kind::Artifact, e.to_string()))?;
    let cfg = &ctx.manifest.verify;
    let lmax = model.base.lambda().iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let dt = cfg.dt.unwrap_or(0.09 / lmax.max(1.0));
    let system = ForcedSystem::new(&model.base, &model.p, 1.0, &model.frequency.omega)?;
    let psi0 = random_state(model.base.dim(), derive_seed(ctx.seed, STREAM_STATE));
    let times = log_uniform_times(cfg.t_min, cfg.t_max, cfg.times);
    let started = Instant::now();
    let trajectory = compare_trajectories(&system, &rs, &psi0, &times, dt, cfg.scheme)?;
    log::info!("trajectory comparison took {:?}", started.elapsed());

    let quasi_energies = if model.frequency.n() == 1 {
        let period = 2.0 * std::f64::consts::PI / model.frequency.omega[0];
        let steps = cfg.steps_per_period.max((period * lmax / 0.09).ceil() as usize);
        let quasi = monodromy_quasienergies(&system, steps)?;
        let modes = cfg.quasi_modes.min(rs.lambda_inf.len());
        let distances = match_quasienergies(&rs.lambda_inf[..modes], &quasi, model.frequency.omega[0]);
        let max_distance = distances.iter().copied().fold(0.0, f64::max);
        Some(QuasiEnergyCheck {
            steps_per_period: steps,
            distances,
            max_distance,
            tol: cfg.quasi_tol,
            pass: max_distance < cfg.quasi_tol,
        })
    } else {
        None
    };
    let pass = trajectory.max_deviation < cfg.tol && quasi_energies.as_ref().is_none_or(|q| q.pass);
    let report = VerifyReport {
        name: ctx.manifest.name.clone(),
        seed: ctx.seed,
        dt,
        pass,
        tol: cfg.tol,
        trajectory,
        quasi_energies,
    };
    store.write("verify.json", &json_line(&report)?)?;
    println!(
        "max deviation {:.3e} (tol {:.1e})",
        report.trajectory.max_deviation, cfg.tol
    );
    if let Some(q) = &report.quasi_energies {
        println!("max quasi-energy distance {:.3e} (tol {:.1e})", q.max_distance, q.tol);
    }
    if !pass {
        return Err(Failure::new(Kind::Verification, "verification tolerance exceeded").into());
    }
    Ok(())
}

pub fn spectrum(ctx: &Context, kmax: Option<usize>) -> Result<()> {
    let mut store = ArtifactDir::open(&ctx.out)?;
    let run = load_run(&store)?;
    let kmax = kmax.unwrap_or(ctx.manifest.spectrum.kmax);
    let csv = spectrum_csv(&run.reduced.lambda_inf, &run.reduced.omega.omega, kmax);
    store.write("spectrum.csv", csv.as_bytes())?;
    println!("{} Floquet eigenvalues written", csv.lines().count() - 1);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub alpha: f64,
    pub d: f64,
    pub lambda: Vec<f64>,
    pub certificate: ConvergenceCertificate,
    pub gram_defect: f64,
    pub fit_range: Option<[usize; 2]>,
    pub fit: Option<ExponentFit>,
    pub c_lambda: Vec<(usize, f64)>,
    pub beta: f64,
    pub within_growth_bound: bool,
    pub quadrature_change: f64,
    pub boundedness: BoundednessReport,
}

pub fn model(ctx: &Context) -> Result<()> {
    let ModelSource::Oscillator(sc) = &ctx.manifest.model else {
        return Err(Failure::new(Kind::Usage, "`model` needs an oscillator model").into());
    };
    let started = Instant::now();
    let osc = build_oscillator(&sc.oscillator)?;
    log::info!("oscillator built in {:?}", started.elapsed());
    let modes = osc.modes();
    let [first, last] = ctx.manifest.inspect.fit_range;
    let (first, last) = (first.max(1), last.min(modes));
    let (fit_range, fit) = if last >= first + 4 {
        (
            Some([first, last]),
            Some(asymptotic_exponent_fit(osc.lambda(), first, last)?),
        )
    } else {
        (None, None)
    };
    let d = sc.oscillator.growth_exponent();
    let mut sizes: Vec<usize> = std::iter::successors(Some(2usize), |s| Some(s * 2))
        .take_while(|&s| s < modes)
        .collect();
    sizes.push(modes);
    let c_lambda = c_lambda_profile(osc.lambda(), d, &sizes);
    let dim = ctx.manifest.inspect.boundedness_dim.unwrap_or(128).min(modes);
    let pm = perturbation_matrix(&sc.perturbation, &osc, dim, sc.cutoff).context("assembling the perturbation")?;
    let base = osc.diagonal_part(dim, sc.n(), sc.delta)?;
    let grid = if ctx.manifest.inspect.delta_grid.is_empty() {
        vec![sc.delta]
    } else {
        ctx.manifest.inspect.delta_grid.clone()
    };
    let boundedness = delta_boundedness_check(&pm.p, &base, &grid, Some((sc.oscillator.alpha, sc.perturbation.beta)))?;
    let report = ModelReport {
        name: ctx.manifest.name.clone(),
        alpha: sc.oscillator.alpha,
        d,
        lambda: osc.lambda().to_vec(),
        gram_defect: osc.gram_defect(),
        certificate: osc.certificate.clone(),
        fit_range,
        fit,
        c_lambda,
        beta: sc.perturbation.beta,
        within_growth_bound: pm.within_growth_bound,
        quadrature_change: pm.quadrature_change,
        boundedness,
    };
    let mut store = ArtifactDir::create(&ctx.out)?;
    store.write("manifest.json", &json_line(&ctx.resolved_manifest())?)?;
    store.write("model.json", &json_line(&report)?)?;
    let mut csv = String::from("i,lambda,doubling_delta\n");
    for (i, (l, dl)) in osc.lambda().iter().zip(&osc.certificate.deltas).enumerate() {
        csv.push_str(&format!("{},{},{}\n", i + 1, fmt_f64(*l), fmt_f64(*dl)));
    }
    store.write("eigenvalues.csv", csv.as_bytes())?;
    if let Some(f) = &report.fit {
        println!("growth exponent {:.5} ± {:.1e} (d = {:.5})", f.d, f.stderr, d);
    }
    for row in &report.boundedness.rows {
        println!("delta {}: increment {:.3e} flat {}", row.delta, row.increment, row.flat);
    }
    Ok(())
}
