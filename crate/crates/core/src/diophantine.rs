//! Non-resonance certificates for frequency vectors, resonance slabs and
//! Monte-Carlo estimates of the excluded measure.
//!
//! `|k|` always denotes `|k|_1` here. Mode indices in certificates are 1-based.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::DiagonalPart;

/// A frequency vector `ω ∈ [0,1]^n` with its diophantine constants and the
/// horizon up to which they were checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub omega: Vec<f64>,
    pub gamma: f64,
    pub tau: f64,
    /// Largest `|k|_1` covered by the last certification (0: uncertified).
    pub certified_k: usize,
    /// Largest mode index covered by the last certification.
    pub certified_n: usize,
}

impl Frequency {
    pub fn new(omega: Vec<f64>, gamma: f64, tau: f64) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidArgument("empty frequency vector".into()));
        }
        if let Some(w) = omega.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidArgument(format!(
                "frequency component {w} outside [0, 1]"
            )));
        }
        if !(gamma >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid gamma {gamma} or tau {tau}")));
        }
        Ok(Self {
            omega,
            gamma,
            tau,
            certified_k: 0,
            certified_n: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.omega.len()
    }

    pub fn dot(&self, k: &[i64]) -> f64 {
        dot(&self.omega, k)
    }

    /// Round-off floor `scale·(1+|k|)^{-τ}` separating genuine small divisors
    /// from resonance.
    pub fn divisor_floor(&self, k: &[i64], scale: f64) -> f64 {
        scale * (1.0 + l1(k) as f64).powf(-self.tau)
    }

    /// Checks (dio1) and (dio2) up to `(kmax, nmax)` and records the horizon.
    pub fn certify(&self, base: &DiagonalPart, kmax: usize, nmax: usize) -> (Self, Dio1Certificate, Dio2Certificate) {
        let c1 = check_dio1(&self.omega, self.gamma, self.tau, kmax);
        let c2 = check_dio2(&self.omega, base, self.gamma, self.tau, kmax, nmax);
        let mut out = self.clone();
        out.certified_k = kmax;
        out.certified_n = nmax.min(base.dim());
        (out, c1, c2)
    }
}

/// Default `τ = n + 2/(d-1) + 1`.
pub fn default_tau(n: usize, d: f64) -> f64 {
    n as f64 + 2.0 / (d - 1.0) + 1.0
}

pub(crate) fn dot(omega: &[f64], k: &[i64]) -> f64 {
    omega.iter().zip(k).map(|(w, &c)| w * c as f64).sum()
}

pub(crate) fn l1(k: &[i64]) -> u64 {
    k.iter().map(|c| c.unsigned_abs()).sum()
}

/// All `k ∈ ℤ^n` with `0 < |k|_1 ≤ kmax`.
pub fn l1_ball(n: usize, kmax: usize) -> Vec<Vec<i64>> {
    fn rec(prefix: &mut Vec<i64>, left: usize, budget: i64, out: &mut Vec<Vec<i64>>) {
        if left == 0 {
            if prefix.iter().any(|&c| c != 0) {
                out.push(prefix.clone());
            }
            return;
        }
        for c in -budget..=budget {
            prefix.push(c);
            rec(prefix, left - 1, budget - c.abs(), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), n, kmax as i64, &mut out);
    out
}

/// Representatives of `±k` (first nonzero component positive).
pub fn l1_half_ball(n: usize, kmax: usize) -> Vec<Vec<i64>> {
    l1_ball(n, kmax)
        .into_iter()
        .filter(|k| k.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dio1Certificate {
    pub pass: bool,
    pub gamma: f64,
    pub tau: f64,
    pub kmax: usize,
    /// The `k` minimizing `|ω·k| |k|^τ` (the violating one on failure).
    pub tightest_k: Option<Vec<i64>>,
    pub tightest_value: f64,
    /// Largest `γ` for which the check passes, `min_k |ω·k| |k|^τ`.
    pub max_gamma: f64,
}

/// `|ω·k| ≥ γ / |k|^τ` for all `0 < |k|_1 ≤ kmax`.
pub fn check_dio1(omega: &[f64], gamma: f64, tau: f64, kmax: usize) -> Dio1Certificate {
    let mut best = f64::INFINITY;
    let mut tightest = None;
    let mut value = f64::NAN;
    for k in l1_half_ball(omega.len(), kmax) {
        let w = dot(omega, &k).abs();
        let r = w * (l1(&k) as f64).powf(tau);
        if r < best {
            best = r;
            value = w;
            tightest = Some(k);
        }
    }
    Dio1Certificate {
        pass: best >= gamma,
        gamma,
        tau,
        kmax,
        tightest_k: tightest,
        tightest_value: value,
        max_gamma: best,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dio2Witness {
    pub i: usize,
    pub j: usize,
    pub k: Vec<i64>,
    /// `|λ_i - λ_j + ω·k|`
    pub value: f64,
    /// `γ |i^d - j^d| / (1 + |k|^τ)`
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dio2Certificate {
    pub pass: bool,
    pub gamma: f64,
    pub tau: f64,
    pub kmax: usize,
    pub nmax: usize,
    /// Triple with the smallest normalized divisor among the tested ones.
    pub tightest: Option<Dio2Witness>,
    /// Lower estimate of the largest passing `γ` (exact over tested triples,
    /// a guaranteed bound over pruned ones).
    pub max_gamma: f64,
    pub tested: usize,
    pub pruned: usize,
    /// Every pair satisfies `C_λ|i^d - j^d| > kmax·|ω|_∞ + γ`, so no triple
    /// beyond the horizon can resonate with `|k| ≤ kmax`.
    pub tail_safe: bool,
}

/// `|λ_i - λ_j + ω·k| ≥ γ |i^d - j^d| / (1 + |k|^τ)` for `i ≠ j ≤ nmax`,
/// `|k|_1 ≤ kmax`.
///
/// A pair is skipped for every `k` with
/// `|λ_i - λ_j| - |ω|_∞ |k|_1 ≥ γ |i^d - j^d|`, which already implies the
/// bound (the non-resonance mechanism behind the emptiness of `R_ijk`).
pub fn check_dio2(
    omega: &[f64],
    base: &DiagonalPart,
    gamma: f64,
    tau: f64,
    kmax: usize,
    nmax: usize,
) -> Dio2Certificate {
    let lambda = base.lambda();
    let nmax = nmax.min(lambda.len());
    let d = base.d();
    let pw: Vec<f64> = (1..=nmax).map(|i| (i as f64).powf(d)).collect();
    let winf = omega.iter().fold(0.0f64, |a, w| a.max(w.abs()));
    let mut ks = l1_ball(omega.len(), kmax);
    ks.push(vec![0; omega.len()]);
    let table: Vec<(f64, f64, u64)> = ks
        .iter()
        .map(|k| (dot(omega, k), 1.0 + (l1(k) as f64).powf(tau), l1(k)))
        .collect();

    let mut best = f64::INFINITY;
    let mut tightest: Option<Dio2Witness> = None;
    let (mut tested, mut pruned) = (0usize, 0usize);
    let c_lambda = base.leading(nmax.max(1)).map(|b| b.c_lambda()).unwrap_or(f64::INFINITY);
    for i in 0..nmax {
        for j in (i + 1)..nmax {
            let gap = lambda[i] - lambda[j];
            let weight = pw[j] - pw[i];
            let safe_radius = (gap.abs() - gamma * weight) / winf.max(f64::MIN_POSITIVE);
            for (idx, &(wk, denom, norm1)) in table.iter().enumerate() {
                if (norm1 as f64) <= safe_radius {
                    pruned += 1;
                    let lower = (gap.abs() - winf * norm1 as f64) * denom / weight;
                    best = best.min(lower);
                    continue;
                }
                tested += 1;
                let value = (gap + wk).abs();
                let r = value * denom / weight;
                if r < best || tightest.is_none() && r <= best {
                    best = r;
                    tightest = Some(Dio2Witness {
                        i: i + 1,
                        j: j + 1,
                        k: ks[idx].clone(),
                        value,
                        bound: gamma * weight / denom,
                    });
                }
            }
        }
    }
    if let Some(w) = tightest.as_mut() {
        let weight = pw[w.j - 1] - pw[w.i - 1];
        w.bound = gamma * weight / (1.0 + (l1(&w.k) as f64).powf(tau));
    }
    let min_weight = (1..nmax).map(|i| pw[i] - pw[i - 1]).fold(f64::INFINITY, f64::min);
    Dio2Certificate {
        pass: best >= gamma,
        gamma,
        tau,
        kmax,
        nmax,
        tightest,
        max_gamma: best,
        tested,
        pruned,
        tail_safe: c_lambda * min_weight > kmax as f64 * winf + gamma,
    }
}

/// `min` of the largest passing `γ` for (dio1) and (dio2): the frequency is
/// admissible at `γ` iff `γ ≤ critical_gamma`.
pub fn critical_gamma(omega: &[f64], base: &DiagonalPart, tau: f64, kmax: usize, nmax: usize) -> f64 {
    let c1 = check_dio1(omega, 0.0, tau, kmax);
    let c2 = check_dio2(omega, base, 0.0, tau, kmax, nmax);
    c1.max_gamma.min(c2.max_gamma)
}

/// Slab `R_ijk(α) = {ω ∈ [0,1]^n : |λ_i - λ_j - ω·k| ≤ α}` for
/// angle-independent eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSet {
    pub i: usize,
    pub j: usize,
    pub k: Vec<i64>,
    pub alpha: f64,
    /// `λ_i - λ_j`
    pub center: f64,
}

impl ResonanceSet {
    /// 1-based mode indices.
    pub fn new(base: &DiagonalPart, i: usize, j: usize, k: Vec<i64>, alpha: f64) -> Result<Self> {
        if i == 0 || j == 0 || i > base.dim() || j > base.dim() {
            return Err(Error::InvalidArgument(format!("modes ({i}, {j}) out of range")));
        }
        Ok(Self {
            i,
            j,
            center: base.lambda()[i - 1] - base.lambda()[j - 1],
            k,
            alpha,
        })
    }

    pub fn contains(&self, omega: &[f64]) -> bool {
        (self.center - dot(omega, &self.k)).abs() <= self.alpha
    }

    /// Exact emptiness test against the range of `ω·k` over the unit box.
    pub fn is_empty(&self) -> bool {
        let lo: f64 = self.k.iter().map(|&c| (c.min(0)) as f64).sum();
        let hi: f64 = self.k.iter().map(|&c| (c.max(0)) as f64).sum();
        self.center + self.alpha < lo || self.center - self.alpha > hi
    }

    /// `4α/|k|_1`.
    pub fn measure_bound(&self) -> Result<f64> {
        let norm = l1(&self.k);
        if norm == 0 {
            return Err(Error::InvalidArgument("measure bound needs k != 0".into()));
        }
        Ok(4.0 * self.alpha / norm as f64)
    }

    pub fn measure_monte_carlo(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut omega = vec![0.0; self.k.len()];
        let mut hits = 0usize;
        for _ in 0..samples {
            omega.iter_mut().for_each(|w| *w = rng.random::<f64>());
            hits += self.contains(&omega) as usize;
        }
        hits as f64 / samples as f64
    }
}

/// Deterministic uniform sample of `[0,1]^n`; sample `index` is drawn from
/// its own ChaCha stream of the root seed.
pub fn uniform_frequencies(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .into_par_iter()
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            (0..n).map(|_| rng.random::<f64>()).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSample {
    pub accepted: Vec<Vec<f64>>,
    pub samples: usize,
    pub rejection_fraction: f64,
}

/// Uniform samples filtered by (dio1) ∧ (dio2); never fails.
pub fn screen_frequencies(
    count: usize,
    gamma: f64,
    tau: f64,
    base: &DiagonalPart,
    kmax: usize,
    nmax: usize,
    seed: u64,
) -> AdmissibleSample {
    let n = base.n();
    let omegas = uniform_frequencies(n, count, seed);
    let accepted: Vec<Vec<f64>> = omegas
        .into_par_iter()
        .filter(|w| check_dio1(w, gamma, tau, kmax).pass && check_dio2(w, base, gamma, tau, kmax, nmax).pass)
        .collect();
    let rejection_fraction = 1.0 - accepted.len() as f64 / count.max(1) as f64;
    AdmissibleSample {
        accepted,
        samples: count,
        rejection_fraction,
    }
}

/// As [`screen_frequencies`], but an empty acceptance set is an error.
pub fn sample_admissible(
    count: usize,
    gamma: f64,
    tau: f64,
    base: &DiagonalPart,
    kmax: usize,
    nmax: usize,
    seed: u64,
) -> Result<AdmissibleSample> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let out = screen_frequencies(count, gamma, tau, base, kmax, nmax, seed);
    if out.accepted.is_empty() {
        return Err(Error::NoAdmissibleFrequency { samples: count, gamma });
    }
    Ok(out)
}

/// Rejection fractions for a grid of `γ` values from one shared sample.
pub fn rejection_curve(
    gammas: &[f64],
    count: usize,
    tau: f64,
    base: &DiagonalPart,
    kmax: usize,
    nmax: usize,
    seed: u64,
) -> Vec<f64> {
    let critical: Vec<f64> = uniform_frequencies(base.n(), count, seed)
        .into_par_iter()
        .map(|w| critical_gamma(&w, base, tau, kmax, nmax))
        .collect();
    gammas
        .iter()
        .map(|&g| critical.iter().filter(|&&c| c < g).count() as f64 / count.max(1) as f64)
        .collect()
}

/// The sampled frequency with the largest critical `γ`.
pub fn most_nonresonant(
    count: usize,
    tau: f64,
    base: &DiagonalPart,
    kmax: usize,
    nmax: usize,
    seed: u64,
) -> (Vec<f64>, f64) {
    uniform_frequencies(base.n(), count, seed)
        .into_par_iter()
        .map(|w| {
            let c = critical_gamma(&w, base, tau, kmax, nmax);
            (w, c)
        })
        .reduce(
            || (Vec::new(), f64::NEG_INFINITY),
            |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
        )
}
