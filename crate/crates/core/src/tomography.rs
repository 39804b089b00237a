//! Two-qubit state tomography from coincidence counts in 16 product bases.
//!
//! The reconstruction maximises the Poisson likelihood of the counts with an
//! unknown overall rate. Because the 16 projectors do not add up to a
//! multiple of the identity, the rate is profiled out, which gives
//! `L(ρ) = Σ N_k ln(p_k / Σ_j p_j)` with `p_k = tr(ρ Π_k)`.
//!
//! The maximiser is a diluted `RρR` iteration, `ρ ← AρA† / tr(AρA†)` with
//! `A = I + ε (H⁻¹R - I)`, where `R = Σ (f_k / p_k) Π_k` with `f_k` the count
//! fractions and `H = Σ Π_k / Σ p_k`. At `ε = 1` this is the extended `RρR`
//! map `H⁻¹RρRH⁻¹`; its fixed points are the stationary points of `L`. Every
//! step keeps ρ positive, and `ε` is adapted so that each accepted step
//! increases `L`.
//!
//! The fixed-point map converges linearly and can crawl near mixed states,
//! so once its progress per step is small the estimate is polished with
//! damped Newton steps on the Cholesky factor, `ρ = TT† / tr(TT†)`. In
//! those 16 real parameters every `p_k` is a quadratic form, which makes the
//! exact Hessian cheap. Both stages only accept steps that do not lower `L`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{entry_summaries, CountSummary};
use crate::model::CellIndex;
use crate::quantum::{entanglement_fidelity, product_ket, DensityMatrix, QubitBasisVector, C64};
use crate::rng;
use crate::sequencer::{EventLog, LogHeader, TrialKind};

pub const MAX_ITERATIONS: usize = 5000;
pub const TOLERANCE: f64 = 1e-10;
pub const MIN_RESAMPLES: usize = 100;
const MAX_FAILED_FRACTION: f64 = 0.05;
const MIN_STEP: f64 = 1e-14;
const MAX_STEP: f64 = 1e8;
const BASIS_MATCH_TOL: f64 = 1e-6;
/// Relative gain per fixed-point step below which the Newton stage takes over.
const POLISH_SWITCH: f64 = 1e-7;
const MAX_DAMPING: f64 = 1e16;

type Params = SVector<f64, 16>;
type ParamMatrix = SMatrix<f64, 16, 16>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TomographyError {
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("no convergence after {iterations} iterations (last relative change {last_change:e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        log_likelihood: f64,
    },
    #[error("need at least {MIN_RESAMPLES} resamples, got {0}")]
    TooFewResamples(usize),
    #[error("{failed} of {total} bootstrap resamples failed")]
    Bootstrap { failed: usize, total: usize },
    #[error("missing measurement settings: {0:?}")]
    IncompleteData(Vec<String>),
}

const BASIS_NAMES: [&str; 4] = ["L", "R", "(L+R)/sqrt2", "(L-iR)/sqrt2"];

/// The four single-qubit measurement states, in table order.
pub fn single_qubit_bases() -> [QubitBasisVector; 4] {
    [
        QubitBasisVector::L,
        QubitBasisVector::R,
        QubitBasisVector::new(FRAC_PI_4, 0.0),
        QubitBasisVector::new(FRAC_PI_4, 3.0 * FRAC_PI_2),
    ]
}

/// Setting `k = 4 s + a` pairs signal state `s` with atom state `a`.
pub fn canonical_bases() -> [(QubitBasisVector, QubitBasisVector); 16] {
    let b = single_qubit_bases();
    std::array::from_fn(|k| (b[k / 4], b[k % 4]))
}

pub fn setting_label(k: usize) -> String {
    format!("({}, {})", BASIS_NAMES[k / 4], BASIS_NAMES[k % 4])
}

fn canonical_kets() -> [Vector4<C64>; 16] {
    let bases = canonical_bases();
    std::array::from_fn(|k| product_ket(&bases[k].0, &bases[k].1))
}

/// Rank-one projectors `Π_s ⊗ Π_a` in table order.
pub fn canonical_projectors() -> [Matrix4<C64>; 16] {
    let kets = canonical_kets();
    std::array::from_fn(|k| kets[k] * kets[k].adjoint())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CountsTable([f64; 16]);

impl CountsTable {
    pub fn new(counts: [f64; 16]) -> Result<Self, TomographyError> {
        if let Some((k, c)) = counts
            .iter()
            .enumerate()
            .find(|(_, c)| !(c.is_finite() && **c >= 0.0))
        {
            return Err(TomographyError::InvalidCounts(format!(
                "setting {k} has count {c}"
            )));
        }
        if counts.iter().all(|c| *c == 0.0) {
            return Err(TomographyError::InvalidCounts("all counts are zero".into()));
        }
        Ok(Self(counts))
    }

    pub fn counts(&self) -> &[f64; 16] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, TomographyError> {
        Self::new(self.0.map(|c| c * factor))
    }

    /// Expected counts of `rho` with `per_setting` events in a setting of unit
    /// probability.
    pub fn expected(rho: &DensityMatrix, per_setting: f64) -> Result<Self, TomographyError> {
        Self::new(canonical_kets().map(|k| rho.expectation(&k).max(0.0) * per_setting))
    }
}

impl TryFrom<Vec<f64>> for CountsTable {
    type Error = TomographyError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; 16] = v.try_into().map_err(|v: Vec<f64>| {
            TomographyError::InvalidCounts(format!("expected 16 counts, got {}", v.len()))
        })?;
        Self::new(arr)
    }
}

impl From<CountsTable> for Vec<f64> {
    fn from(t: CountsTable) -> Self {
        t.0.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyResult {
    pub rho: DensityMatrix,
    pub log_likelihood: f64,
    /// Fidelity maximised over the relative phase.
    pub fidelity: f64,
    /// Fidelity with the zero-phase target state.
    pub fidelity_fixed: f64,
    pub fidelity_sigma: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iterations: MAX_ITERATIONS,
            tolerance: TOLERANCE,
        }
    }
}

struct Problem {
    counts: [f64; 16],
    total: f64,
    kets: [Vector4<C64>; 16],
    projectors: [Matrix4<C64>; 16],
    projector_sum_inv: Matrix4<C64>,
    /// `p_k = θᵀ M_k θ` in the Cholesky parameters.
    forms: [ParamMatrix; 16],
    form_sum: ParamMatrix,
}

impl Problem {
    fn new(counts: &CountsTable) -> Self {
        let kets = canonical_kets();
        let projectors = canonical_projectors();
        let projector_sum = projectors.iter().fold(Matrix4::zeros(), |acc, p| acc + p);
        let projector_sum_inv = projector_sum
            .try_inverse()
            .expect("the measurement set is informationally complete");
        let forms: [ParamMatrix; 16] = std::array::from_fn(|k| {
            let u: [Vector4<C64>; 16] =
                std::array::from_fn(|a| cholesky_basis(a).adjoint() * kets[k]);
            ParamMatrix::from_fn(|a, b| u[a].dotc(&u[b]).re)
        });
        let form_sum = forms.iter().fold(ParamMatrix::zeros(), |acc, m| acc + m);
        Self {
            counts: counts.0,
            total: counts.total(),
            kets,
            projectors,
            projector_sum_inv,
            forms,
            form_sum,
        }
    }

    fn param_log_likelihood(&self, theta: &Params) -> f64 {
        let p: [f64; 16] = std::array::from_fn(|k| theta.dot(&(self.forms[k] * theta)));
        self.log_likelihood(&p)
    }

    /// Gradient and Hessian of `L` in the Cholesky parameters.
    fn param_derivatives(&self, theta: &Params) -> (Params, ParamMatrix) {
        let mut grad = Params::zeros();
        let mut hess = ParamMatrix::zeros();
        let mut term = |weight: f64, m: &ParamMatrix| {
            let mt = m * theta;
            let p = theta.dot(&mt);
            grad += mt * (2.0 * weight / p);
            hess += m * (2.0 * weight / p) - mt * mt.transpose() * (4.0 * weight / (p * p));
        };
        for k in 0..16 {
            if self.counts[k] > 0.0 {
                term(self.counts[k], &self.forms[k]);
            }
        }
        term(-self.total, &self.form_sum);
        (grad, hess)
    }

    fn probabilities(&self, rho: &Matrix4<C64>) -> [f64; 16] {
        std::array::from_fn(|k| (self.kets[k].adjoint() * rho * self.kets[k])[(0, 0)].re)
    }

    fn log_likelihood(&self, p: &[f64; 16]) -> f64 {
        let norm: f64 = p.iter().sum();
        self.counts
            .iter()
            .zip(p)
            .filter(|(n, _)| **n > 0.0)
            .map(|(n, pk)| {
                if *pk > 0.0 {
                    n * (pk / norm).ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .sum()
    }

    /// `H⁻¹R - I` at ρ.
    fn direction(&self, p: &[f64; 16]) -> Matrix4<C64> {
        let norm: f64 = p.iter().sum();
        let mut r = Matrix4::zeros();
        for k in 0..16 {
            if self.counts[k] > 0.0 {
                r += self.projectors[k] * C64::new(self.counts[k] / (self.total * p[k]), 0.0);
            }
        }
        self.projector_sum_inv * r * C64::new(norm, 0.0) - Matrix4::identity()
    }
}

/// Basis of lower-triangular 4x4 matrices with a real diagonal.
fn cholesky_basis(a: usize) -> Matrix4<C64> {
    const OFF_DIAGONAL: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];
    let mut m = Matrix4::zeros();
    match a {
        0..4 => m[(a, a)] = C64::new(1.0, 0.0),
        _ => {
            let (i, j) = OFF_DIAGONAL[(a - 4) / 2];
            m[(i, j)] = if (a - 4) % 2 == 0 {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 1.0)
            };
        }
    }
    m
}

fn params_from_rho(rho: &Matrix4<C64>) -> Params {
    let mut reg = 0.0;
    let l = loop {
        let shifted = rho + Matrix4::identity() * C64::new(reg, 0.0);
        if let Some(c) = shifted.cholesky() {
            break c.l();
        }
        reg = if reg == 0.0 { 1e-14 } else { reg * 10.0 };
    };
    Params::from_fn(|a, _| {
        let b = cholesky_basis(a);
        // Each basis matrix has exactly one non-zero entry, 1 or i.
        let (idx, unit) = b
            .iter()
            .enumerate()
            .find(|(_, z)| z.norm() > 0.0)
            .expect("non-zero basis entry");
        (l[idx] * unit.conj()).re
    })
}

fn rho_from_params(theta: &Params) -> Matrix4<C64> {
    let t = (0..16).fold(Matrix4::zeros(), |acc, a| {
        acc + cholesky_basis(a) * C64::new(theta[a], 0.0)
    });
    normalised(t * t.adjoint())
}

fn normalised(m: Matrix4<C64>) -> Matrix4<C64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let tr = h.trace().re;
    h / C64::new(tr, 0.0)
}

/// Log-likelihood after every accepted iteration, starting from `I/4`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MleTrace {
    pub log_likelihood: Vec<f64>,
}

pub fn mle_reconstruct(counts: &CountsTable) -> Result<TomographyResult, TomographyError> {
    mle_reconstruct_with(counts, &MleOptions::default(), None)
}

pub fn mle_reconstruct_with(
    counts: &CountsTable,
    options: &MleOptions,
    mut trace: Option<&mut MleTrace>,
) -> Result<TomographyResult, TomographyError> {
    let problem = Problem::new(counts);
    let mut rho: Matrix4<C64> = Matrix4::identity() * C64::new(0.25, 0.0);
    let mut p = problem.probabilities(&rho);
    let mut ll = problem.log_likelihood(&p);
    if let Some(t) = trace.as_deref_mut() {
        t.log_likelihood.push(ll);
    }
    let mut step = 1.0;
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let dir = problem.direction(&p);
        let mut accepted = None;
        while step >= MIN_STEP {
            let a = Matrix4::identity() + dir * C64::new(step, 0.0);
            let candidate = normalised(a * rho * a.adjoint());
            let cp = problem.probabilities(&candidate);
            let cll = problem.log_likelihood(&cp);
            if cll >= ll {
                accepted = Some((candidate, cp, cll));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, cp, cll)) = accepted else {
            // No ascent at any step size; let the Newton stage decide.
            break;
        };
        last_change = (cll - ll).abs() / cll.abs().max(f64::MIN_POSITIVE);
        rho = candidate;
        p = cp;
        ll = cll;
        if let Some(t) = trace.as_deref_mut() {
            t.log_likelihood.push(ll);
        }
        step = (step * 2.0).min(MAX_STEP);
        if last_change < POLISH_SWITCH.max(options.tolerance) {
            break;
        }
    }
    if !converged {
        let mut theta = params_from_rho(&rho);
        let mut theta_ll = problem.param_log_likelihood(&theta);
        if theta_ll >= ll {
            ll = theta_ll;
        } else {
            // The factorisation was regularised; keep the fixed-point state.
            theta_ll = ll;
        }
        let mut damping = 1e-10;
        let mut settled = 0;
        while iterations < options.max_iterations {
            iterations += 1;
            let (grad, hess) = problem.param_derivatives(&theta);
            let scale = hess.diagonal().amax().max(f64::MIN_POSITIVE);
            // L cannot resolve gains below this; such steps are taken on the
            // strength of the quadratic model alone.
            let rounding = 1e-12 * theta_ll.abs();
            let mut accepted = None;
            while damping <= MAX_DAMPING {
                let system = -hess + ParamMatrix::identity() * (damping * scale);
                if let Some(delta) = system.cholesky().map(|c| c.solve(&grad)) {
                    let candidate = theta + delta;
                    let cll = problem.param_log_likelihood(&candidate);
                    let predicted = 0.5 * grad.dot(&delta);
                    let full_step = damping < 1e-6;
                    if cll >= theta_ll
                        || (full_step && predicted <= rounding && cll >= theta_ll - rounding)
                    {
                        accepted = Some((candidate, cll, predicted, full_step));
                        break;
                    }
                }
                damping *= 10.0;
            }
            let Some((candidate, cll, predicted, full_step)) = accepted else {
                converged = true;
                break;
            };
            last_change = (cll - theta_ll).abs() / cll.abs().max(f64::MIN_POSITIVE);
            // L does not depend on the scale of θ.
            theta = candidate / candidate.norm();
            theta_ll = cll;
            rho = rho_from_params(&theta);
            if cll > ll {
                ll = cll;
                if let Some(t) = trace.as_deref_mut() {
                    t.log_likelihood.push(ll);
                }
            }
            damping = (damping / 100.0).max(1e-15);
            // Once a full Newton step gains less than the tolerance, one more
            // step leaves an error quadratically smaller still.
            if full_step && predicted < options.tolerance * cll.abs() {
                settled += 1;
                if settled == 2 {
                    converged = true;
                    break;
                }
            }
        }
        ll = theta_ll;
    }
    if !converged {
        return Err(TomographyError::NonConvergence {
            iterations,
            last_change,
            log_likelihood: ll,
        });
    }
    let rho = DensityMatrix::from_psd(rho);
    Ok(TomographyResult {
        fidelity: entanglement_fidelity(&rho, true),
        fidelity_fixed: entanglement_fidelity(&rho, false),
        rho,
        log_likelihood: ll,
        fidelity_sigma: 0.0,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub sigma: f64,
    pub mean: f64,
    pub failed: usize,
    pub resamples: usize,
}

/// Standard deviation of the phase-optimised fidelity over Poisson
/// resamples of the table. Resample `k` uses stream `(seed, domain, k)`.
pub fn poisson_bootstrap(
    counts: &CountsTable,
    n_resamples: usize,
    seed: u64,
    domain: u64,
) -> Result<BootstrapSummary, TomographyError> {
    if n_resamples < MIN_RESAMPLES {
        return Err(TomographyError::TooFewResamples(n_resamples));
    }
    let fidelities: Vec<Option<f64>> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(seed, domain, k);
            let drawn = counts.0.map(|c| {
                if c > 0.0 {
                    Poisson::new(c).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
                } else {
                    0.0
                }
            });
            let table = CountsTable::new(drawn).ok()?;
            mle_reconstruct(&table).ok().map(|r| r.fidelity)
        })
        .collect();
    let ok: Vec<f64> = fidelities.iter().flatten().copied().collect();
    let failed = n_resamples - ok.len();
    if failed as f64 > MAX_FAILED_FRACTION * n_resamples as f64 || ok.len() < 2 {
        return Err(TomographyError::Bootstrap {
            failed,
            total: n_resamples,
        });
    }
    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
    let var = ok.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64;
    Ok(BootstrapSummary {
        sigma: var.sqrt(),
        mean,
        failed,
        resamples: n_resamples,
    })
}

fn same_state(a: &QubitBasisVector, b: &QubitBasisVector) -> bool {
    let (ka, kb) = (a.ket(), b.ket());
    // Equal up to a global phase: |⟨a|b⟩| = 1.
    ((ka.adjoint() * kb)[(0, 0)].norm() - 1.0).abs() < BASIS_MATCH_TOL
}

fn setting_index(signal: &QubitBasisVector, idler: &QubitBasisVector) -> Option<usize> {
    let b = single_qubit_bases();
    let s = b.iter().position(|x| same_state(x, signal))?;
    let a = b.iter().position(|x| same_state(x, idler))?;
    Some(4 * s + a)
}

/// Coincidence table of a pair at one storage time, pooled over entries.
pub fn counts_from_summaries(
    header: &LogHeader,
    summaries: &[CountSummary],
    left: CellIndex,
    right: CellIndex,
    storage_time_us: f64,
) -> Result<CountsTable, TomographyError> {
    let mut counts = [0.0; 16];
    let mut seen = [false; 16];
    for (e, s) in header.entries.iter().zip(summaries) {
        let TrialKind::Pair {
            left: l, right: r, ..
        } = e.entry.trial
        else {
            continue;
        };
        if (l, r) != (left, right) || (e.entry.storage_time_us - storage_time_us).abs() > 1e-9 {
            continue;
        }
        let basis = |k: usize| e.programs.get(k).and_then(|p| p.superposition_basis());
        let (Some(sig), Some(idl)) = (basis(2), basis(3)) else {
            continue;
        };
        if let Some(k) = setting_index(&sig, &idl) {
            counts[k] += s.c_si as f64;
            seen[k] = true;
        }
    }
    let missing: Vec<String> = (0..16).filter(|k| !seen[*k]).map(setting_label).collect();
    if !missing.is_empty() {
        return Err(TomographyError::IncompleteData(missing));
    }
    CountsTable::new(counts)
}

/// Reconstructs the pair state from a log and attaches the bootstrap error.
pub fn tomography_from_log(
    log: &EventLog,
    left: CellIndex,
    right: CellIndex,
    storage_time_us: f64,
    n_resamples: usize,
    seed: u64,
) -> Result<TomographyResult, TomographyError> {
    let summaries = entry_summaries(log.header.entries.len(), &log.records);
    tomography_from_summaries(
        &log.header,
        &summaries,
        left,
        right,
        storage_time_us,
        n_resamples,
        seed,
    )
}

pub fn tomography_from_summaries(
    header: &LogHeader,
    summaries: &[CountSummary],
    left: CellIndex,
    right: CellIndex,
    storage_time_us: f64,
    n_resamples: usize,
    seed: u64,
) -> Result<TomographyResult, TomographyError> {
    let counts = counts_from_summaries(header, summaries, left, right, storage_time_us)?;
    let mut result = mle_reconstruct(&counts)?;
    // Bootstrap streams live in their own domain, keyed by the pair.
    let domain = (1u64 << 48)
        ^ ((left.x as u64) << 36)
        ^ ((left.y as u64) << 24)
        ^ ((right.x as u64) << 12)
        ^ right.y as u64;
    result.fidelity_sigma = poisson_bootstrap(&counts, n_resamples, seed, domain)?.sigma;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{bell_state, trace_norm_distance, werner};
    use proptest::prelude::*;

    fn herm_dev(m: &Matrix4<C64>) -> f64 {
        (m - m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn projector_examples() {
        let p = canonical_projectors();
        let mut ll = Matrix4::zeros();
        ll[(0, 0)] = C64::new(1.0, 0.0);
        assert!((p[0] - ll).norm() < 1e-15);
        // |++⟩⟨++| has every entry 1/4.
        assert!(p[10]
            .iter()
            .all(|z| (z - C64::new(0.25, 0.0)).norm() < 1e-15));
        for a in 0..16 {
            assert!((p[a] * p[a] - p[a]).norm() < 1e-14);
            for b in 0..a {
                assert!((p[a] - p[b]).norm() > 0.1);
            }
        }
        assert_eq!(setting_label(14), "((L-iR)/sqrt2, (L+R)/sqrt2)");
    }

    #[test]
    fn counts_validation() {
        assert!(CountsTable::new([0.0; 16]).is_err());
        let mut c = [1.0; 16];
        c[3] = -1.0;
        assert!(CountsTable::new(c).is_err());
        let t: Result<CountsTable, _> = serde_json::from_str("[1,2,3]");
        assert!(t.is_err());
    }

    #[test]
    fn exact_bell_counts() {
        let counts = CountsTable::expected(&bell_state(0.0), 1e6).unwrap();
        let r = mle_reconstruct(&counts).unwrap();
        assert!(r.fidelity >= 0.999, "{r:?}");
    }

    #[test]
    fn uniform_counts_give_maximally_mixed() {
        let r = mle_reconstruct(&CountsTable::new([500.0; 16]).unwrap()).unwrap();
        let d = r.rho.matrix() - DensityMatrix::maximally_mixed().matrix();
        assert!(d.iter().all(|z| z.norm() < 1e-3), "{:?}", r.rho);
    }

    #[test]
    fn werner_counts_give_werner_fidelity() {
        let counts = CountsTable::expected(&werner(0.9, 0.0).unwrap(), 1e4).unwrap();
        let r = mle_reconstruct(&counts).unwrap();
        assert!(
            (r.fidelity_fixed - 0.925).abs() < 1e-6,
            "{}",
            r.fidelity_fixed
        );
        assert!((r.fidelity - 0.925).abs() < 1e-6);
    }

    #[test]
    fn likelihood_never_decreases() {
        let counts = CountsTable::new([
            31.0, 2.0, 5.0, 40.0, 0.0, 17.0, 9.0, 3.0, 22.0, 21.0, 8.0, 0.0, 1.0, 30.0, 12.0, 6.0,
        ])
        .unwrap();
        let mut trace = MleTrace::default();
        mle_reconstruct_with(&counts, &MleOptions::default(), Some(&mut trace)).unwrap();
        assert!(trace.log_likelihood.len() > 2);
        for w in trace.log_likelihood.windows(2) {
            assert!(w[1] >= w[0], "{w:?}");
        }
    }

    #[test]
    fn scale_invariance() {
        let counts = CountsTable::expected(&werner(0.7, 0.3).unwrap(), 1000.0).unwrap();
        let a = mle_reconstruct(&counts).unwrap();
        let b = mle_reconstruct(&counts.scaled(37.0).unwrap()).unwrap();
        let d = (a.rho.matrix() - b.rho.matrix()).camax();
        assert!(d < 1e-8, "{d:e} {} {}", a.iterations, b.iterations);
    }

    #[test]
    fn bootstrap_scaling_and_stability() {
        // Large enough that the positivity constraint does not clip the spread.
        let counts = CountsTable::expected(&werner(0.85, 0.0).unwrap(), 4000.0).unwrap();
        let small = poisson_bootstrap(&counts, 200, 1, 0).unwrap();
        let large = poisson_bootstrap(&counts.scaled(100.0).unwrap(), 200, 1, 0).unwrap();
        let ratio = small.sigma / large.sigma;
        assert!((ratio / 10.0 - 1.0).abs() < 0.3, "{ratio}");
        let more = poisson_bootstrap(&counts, 1000, 2, 0).unwrap();
        assert!((more.sigma / small.sigma - 1.0).abs() < 0.3);
        assert!(matches!(
            poisson_bootstrap(&counts, 99, 1, 0),
            Err(TomographyError::TooFewResamples(99))
        ));
    }

    #[test]
    fn vanishing_noise_limit() {
        let counts = CountsTable::expected(&bell_state(0.0), 1e8).unwrap();
        let b = poisson_bootstrap(&counts, 100, 3, 0).unwrap();
        assert!(b.sigma < 1e-3 && b.mean > 0.99, "{b:?}");
    }

    #[test]
    fn error_shrinks_with_counts() {
        let truth = werner(0.8, 0.0).unwrap();
        let probs = CountsTable::expected(&truth, 1.0).unwrap();
        let mut medians = Vec::new();
        for (level, n) in [100.0, 1000.0, 10000.0].into_iter().enumerate() {
            let mut d: Vec<f64> = (0..50u64)
                .map(|rep| {
                    let mut rng = rng::stream(99, level as u64, rep);
                    let drawn = probs
                        .counts()
                        .map(|p| Poisson::new(p * n).unwrap().sample(&mut rng));
                    let r = mle_reconstruct(&CountsTable::new(drawn).unwrap()).unwrap();
                    trace_norm_distance(&r.rho, &truth)
                })
                .collect();
            d.sort_by(f64::total_cmp);
            medians.push(d[25]);
        }
        assert!(
            medians[0] > medians[1] && medians[1] > medians[2],
            "{medians:?}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn output_is_always_a_state(raw in prop::array::uniform16(prop_oneof![Just(0.0), 0.0..1e4f64, 0.0..3.0f64])) {
            prop_assume!(raw.iter().any(|c| *c > 0.0));
            let r = mle_reconstruct(&CountsTable::new(raw).unwrap()).unwrap();
            let m = r.rho.matrix();
            prop_assert!(herm_dev(m) < 1e-12);
            prop_assert!((m.trace().re - 1.0).abs() < 1e-12);
            prop_assert!(r.rho.eigenvalues()[0] >= -1e-10);
        }
    }
}
