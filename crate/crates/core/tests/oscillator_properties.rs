use std::sync::LazyLock;

use kamred::floquet::{match_quasienergies, monodromy_quasienergies, ForcedSystem};
use kamred::kam::{run_schedule, KamSettings, RunStatus};
use kamred::oscillator::{
    asymptotic_exponent_fit, build_oscillator, c_lambda_profile, delta_boundedness_check, perturbation_matrix,
    Oscillator, OscillatorSpec, PerturbationSpec,
};
use kamred::scenario::OscillatorScenario;
use kamred::torus::{delta_norm, OperatorSeries};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

const D4: f64 = 4.0 / 3.0;

static QUARTIC: LazyLock<Oscillator> = LazyLock::new(|| build_oscillator(&OscillatorSpec::power(4.0, 200)).unwrap());

/// Lowest eigenvalue of `-d²/dx² + x⁴` from a plain three-point finite
/// difference on `[-L, L]`, Richardson-extrapolated in the step.
fn quartic_ground_state_fd() -> f64 {
    let level = |h: f64| {
        let l = 7.0;
        let m = (2.0 * l / h).round() as usize - 1;
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            let x = -l + (i + 1) as f64 * h;
            a[(i, i)] = 2.0 / (h * h) + x.powi(4);
            if i + 1 < m {
                a[(i, i + 1)] = -1.0 / (h * h);
                a[(i + 1, i)] = -1.0 / (h * h);
            }
        }
        SymmetricEigen::new(a).eigenvalues.min()
    };
    let (e1, e2, e3) = (level(0.02), level(0.01), level(0.005));
    // Error series in h², h⁴.
    let r1 = (4.0 * e2 - e1) / 3.0;
    let r2 = (4.0 * e3 - e2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

#[test]
fn quartic_ground_state_matches_finite_differences() {
    let fd = quartic_ground_state_fd();
    assert!(
        (QUARTIC.lambda()[0] - fd).abs() < 1e-8,
        "{} vs {fd}",
        QUARTIC.lambda()[0]
    );
}

#[test]
fn spectrum_is_simple_increasing_and_orthonormal() {
    let l = QUARTIC.lambda();
    assert!(l[0] > 0.0);
    assert!(l.windows(2).all(|w| w[1] > w[0]));
    assert!(QUARTIC.gram_defect() < 1e-10);
    assert!(QUARTIC.certificate.max_delta <= QUARTIC.certificate.tol);
}

#[test]
fn quartic_growth_exponent() {
    let fit = asymptotic_exponent_fit(QUARTIC.lambda(), 20, 200).unwrap();
    assert!((fit.d / D4 - 1.0).abs() < 0.03, "{fit:?}");
}

#[test]
fn c_lambda_is_positive_and_settles() {
    let profile = c_lambda_profile(QUARTIC.lambda(), D4, &[25, 50, 100, 200]);
    assert_eq!(profile.len(), 4);
    assert!(profile.iter().all(|(_, c)| *c > 0.0));
    let (a, b) = (profile[2].1, profile[3].1);
    assert!((a - b).abs() / a < 0.05, "{profile:?}");
}

#[test]
fn position_matrix_decays_along_rows() {
    let spec = PerturbationSpec::power_cos(1.0, 1, true);
    let pm = perturbation_matrix(&spec, &QUARTIC, 24, 1).unwrap();
    assert!(!pm.within_growth_bound);
    let m = pm.p.mode_matrix(&[1]);
    // Parity: x couples modes of opposite parity only.
    for i in 0..24 {
        for j in 0..24 {
            if (i + j) % 2 == 0 {
                assert!(m[(i, j)].norm() < 1e-9, "({i},{j})");
            }
        }
    }
    let row: Vec<f64> = (1..24).step_by(2).map(|j| m[(0, j)].norm()).collect();
    assert!(row.windows(2).all(|w| w[1] < w[0]), "{row:?}");
    let base = QUARTIC.diagonal_part(24, 1, 0.25).unwrap();
    assert!(delta_norm(&pm.p, &base, 0.5).unwrap().is_finite());
}

#[test]
fn boundedness_at_the_boundary() {
    let dim = 128;
    let base = QUARTIC.diagonal_part(dim, 1, 0.25).unwrap();
    let identity = OperatorSeries::identity(dim, 1, 1);
    let id = delta_boundedness_check(&identity, &base, &[0.0, 0.2], None).unwrap();
    assert!(id.rows.iter().all(|r| r.flat && r.increment.abs() < 1e-12));

    let check = |beta: f64, delta: f64| {
        let pm = perturbation_matrix(&PerturbationSpec::power_cos(beta, 1, false), &QUARTIC, dim, 1).unwrap();
        delta_boundedness_check(&pm.p, &base, &[delta], Some((4.0, beta)))
            .unwrap()
            .rows[0]
            .clone()
    };
    let bounded = check(0.5, 0.5 * D4 / 4.0 + 0.1);
    assert!(bounded.flat, "{bounded:?}");
    assert_eq!(bounded.theorem_bounded, Some(true));
    for delta in [0.1, 0.25] {
        let growing = check(1.5, delta);
        assert!(!growing.flat, "{growing:?}");
    }
}

#[test]
fn cosine_forcing_is_diagonal() {
    let osc = build_oscillator(&OscillatorSpec::power(6.0, 10)).unwrap();
    let pm = perturbation_matrix(&PerturbationSpec::power_cos(0.0, 1, false), &osc, 10, 1).unwrap();
    let m = pm.p.evaluate(&[0.9]);
    let want = DMatrix::<Complex64>::identity(10, 10) * Complex64::new(0.9f64.cos(), 0.0);
    assert!((m - want).iter().all(|z| z.norm() < 1e-12));
}

#[test]
fn reference_model_reduces_and_matches_monodromy() {
    let sc = OscillatorScenario::reference();
    let model = sc.build(1).unwrap();
    assert!(model.within_growth_bound);
    let settings = KamSettings {
        epsilon: model.size,
        s: sc.s,
        gamma: sc.gamma,
        tau: sc.tau,
        k_base: sc.cutoff,
        ..KamSettings::default()
    };
    let out = run_schedule(&model.base, &model.p, &model.frequency, &settings).unwrap();
    assert_eq!(out.status, RunStatus::Converged);
    let sys = ForcedSystem::new(&model.base, &model.p, 1.0, &model.frequency.omega).unwrap();
    let quasi = monodromy_quasienergies(&sys, 4000).unwrap();
    let dist = match_quasienergies(&out.reduced.lambda_inf[..10], &quasi, model.frequency.omega[0]);
    assert!(dist.iter().all(|d| *d < 1e-6), "{dist:?}");
}
