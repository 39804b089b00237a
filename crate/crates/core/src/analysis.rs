//! Estimators over event logs: cross-correlation, maps and decay fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addressing::Channel;
use crate::model::{ArrayGeometry, CellIndex};
use crate::sequencer::{EventLog, LogHeader, TrialKind, TrialRecord};

const FIT_MAX_ITERATIONS: usize = 200;
const FIT_STEP_TOLERANCE: f64 = 1e-9;
const LAMBDA_CEILING: f64 = 1e20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("g_c undefined: {0}")]
    Undefined(String),
    #[error("no coincidences at the crosstalk target {0}")]
    Normalization(CellIndex),
    #[error("fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("point {index}: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("all g_c values are at or below 1")]
    Degenerate,
    #[error("fit did not converge after {} iterations (g0 = {}, tau = {} us)", .0.iterations, .0.g0, .0.tau_us)]
    NonConvergence(Box<FitResult>),
}

/// Attempt-normalised counts: `trials` is the number of write attempts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSummary {
    pub trials: u64,
    pub c_s: u64,
    pub c_i: u64,
    pub c_si: u64,
}

impl CountSummary {
    /// Adds one trial. For pair records the signal count is the detector in
    /// the measured signal basis (outcomes 1 and 2).
    pub fn add(&mut self, r: &TrialRecord) {
        self.trials += r.attempts;
        self.c_i += r.clean_idler_clicks;
        if let Some(o) = r.outcome {
            let signal = o.signal_click && o.pair_basis_outcome.is_none_or(|b| b <= 2);
            self.c_s += signal as u64;
            self.c_i += o.idler_click as u64;
            self.c_si += (signal && o.idler_click) as u64;
        }
    }

    pub fn merge(&mut self, other: &CountSummary) {
        self.trials += other.trials;
        self.c_s += other.c_s;
        self.c_i += other.c_i;
        self.c_si += other.c_si;
    }
}

/// Per-entry summaries of a record stream.
pub fn entry_summaries<'a>(
    n_entries: usize,
    records: impl IntoIterator<Item = &'a TrialRecord>,
) -> Vec<CountSummary> {
    let mut out = vec![CountSummary::default(); n_entries];
    for r in records {
        if let Some(s) = out.get_mut(r.entry as usize) {
            s.add(r);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcEstimate {
    pub g_c: f64,
    pub sigma: f64,
}

/// `g_c = C_si T / (C_s C_i)` with independent-Poisson error propagation.
pub fn estimate_gc(c: &CountSummary) -> Result<GcEstimate, AnalysisError> {
    if c.trials == 0 || c.c_s == 0 || c.c_i == 0 {
        return Err(AnalysisError::Undefined(format!(
            "T = {}, C_s = {}, C_i = {}",
            c.trials, c.c_s, c.c_i
        )));
    }
    let (t, s, i, si) = (c.trials as f64, c.c_s as f64, c.c_i as f64, c.c_si as f64);
    let g_c = si * t / (s * i);
    let rel2 = if c.c_si > 0 { 1.0 / si } else { 0.0 } + 1.0 / s + 1.0 / i;
    let sigma = if c.c_si > 0 {
        g_c * rel2.sqrt()
    } else {
        t / (s * i)
    };
    Ok(GcEstimate { g_c, sigma })
}

/// Row-major (x fastest) grid of optional per-cell values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMap<T> {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<Option<T>>,
}

impl<T: Copy> CellMap<T> {
    pub fn empty(geo: &ArrayGeometry) -> Self {
        Self {
            nx: geo.nx,
            ny: geo.ny,
            values: vec![None; geo.nx * geo.ny],
        }
    }

    fn slot(&self, c: CellIndex) -> Option<usize> {
        (c.x >= 1 && c.x <= self.nx && c.y >= 1 && c.y <= self.ny)
            .then(|| (c.y - 1) * self.nx + (c.x - 1))
    }

    pub fn get(&self, c: CellIndex) -> Option<T> {
        self.slot(c).and_then(|i| self.values[i])
    }

    pub fn set(&mut self, c: CellIndex, v: T) {
        if let Some(i) = self.slot(c) {
            self.values[i] = Some(v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellIndex, Option<T>)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (CellIndex::new(i % self.nx + 1, i / self.nx + 1), *v))
    }
}

/// g_c of every cell with single-cell data; counts of repeated entries for a
/// cell are pooled.
pub fn correlation_map_from(header: &LogHeader, summaries: &[CountSummary]) -> CellMap<GcEstimate> {
    let mut pooled: CellMap<CountSummary> = CellMap::empty(&header.geometry);
    for (e, s) in header.entries.iter().zip(summaries) {
        if let TrialKind::SingleCell { cell } = e.entry.trial {
            let mut acc = pooled.get(cell).unwrap_or_default();
            acc.merge(s);
            pooled.set(cell, acc);
        }
    }
    let mut map = CellMap::empty(&header.geometry);
    for (cell, s) in pooled.iter() {
        if let Some(est) = s.and_then(|s| estimate_gc(&s).ok()) {
            map.set(cell, est);
        }
    }
    map
}

pub fn correlation_map(log: &EventLog) -> CellMap<GcEstimate> {
    correlation_map_from(
        &log.header,
        &entry_summaries(log.header.entries.len(), &log.records),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkPoint {
    pub scanned: CellIndex,
    pub coincidences: u64,
    pub attempts: u64,
    /// Coincidences per attempt relative to the unscanned target.
    pub relative: f64,
    pub sigma: f64,
}

/// Relative coincidence rates of a crosstalk scan. Rates are per attempt,
/// so scans with different attempt counts are comparable.
pub fn crosstalk_map_from(
    header: &LogHeader,
    summaries: &[CountSummary],
    target: CellIndex,
    channel: Channel,
) -> Result<Vec<CrosstalkPoint>, AnalysisError> {
    let mut scans: Vec<(CellIndex, CountSummary)> = Vec::new();
    for (e, s) in header.entries.iter().zip(summaries) {
        if let TrialKind::Crosstalk {
            target: t,
            scanned,
            channel: ch,
        } = e.entry.trial
        {
            if t == target && ch == channel {
                match scans.iter_mut().find(|(c, _)| *c == scanned) {
                    Some((_, acc)) => acc.merge(s),
                    None => scans.push((scanned, *s)),
                }
            }
        }
    }
    let reference = scans
        .iter()
        .find(|(c, _)| *c == target)
        .map(|(_, s)| *s)
        .filter(|s| s.c_si > 0 && s.trials > 0)
        .ok_or(AnalysisError::Normalization(target))?;
    let ref_rate = reference.c_si as f64 / reference.trials as f64;
    Ok(scans
        .into_iter()
        .map(|(scanned, s)| {
            let rate = if s.trials > 0 {
                s.c_si as f64 / s.trials as f64
            } else {
                0.0
            };
            let relative = rate / ref_rate;
            // Zero counts get the one-count scale as their uncertainty.
            let n = (s.c_si as f64).max(1.0);
            let sigma = (rate.max(1.0 / s.trials.max(1) as f64) / ref_rate)
                * (1.0 / n + 1.0 / reference.c_si as f64).sqrt();
            CrosstalkPoint {
                scanned,
                coincidences: s.c_si,
                attempts: s.trials,
                relative,
                sigma,
            }
        })
        .collect())
}

pub fn crosstalk_map(
    log: &EventLog,
    target: CellIndex,
    channel: Channel,
) -> Result<Vec<CrosstalkPoint>, AnalysisError> {
    crosstalk_map_from(
        &log.header,
        &entry_summaries(log.header.entries.len(), &log.records),
        target,
        channel,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub t_us: f64,
    pub g_c: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub g0: f64,
    pub tau_us: f64,
    /// Covariance of `(g0, tau)` from the weighted normal matrix.
    pub covariance: [[f64; 2]; 2],
    pub chi2_reduced: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn g0_sigma(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn tau_sigma(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }
}

pub fn decay_model(t: f64, g0: f64, tau: f64) -> f64 {
    1.0 + g0 * (-(t * t) / (tau * tau)).exp()
}

struct Normal {
    jtj: [[f64; 2]; 2],
    jtr: [f64; 2],
    chi2: f64,
}

fn normal_equations(points: &[DecayPoint], g0: f64, tau: f64) -> Normal {
    let mut n = Normal {
        jtj: [[0.0; 2]; 2],
        jtr: [0.0; 2],
        chi2: 0.0,
    };
    for p in points {
        let e = (-(p.t_us * p.t_us) / (tau * tau)).exp();
        let w = 1.0 / p.sigma;
        let j = [
            e * w,
            g0 * e * 2.0 * p.t_us * p.t_us / (tau * tau * tau) * w,
        ];
        let r = (p.g_c - 1.0 - g0 * e) * w;
        for a in 0..2 {
            n.jtr[a] += j[a] * r;
            for b in 0..2 {
                n.jtj[a][b] += j[a] * j[b];
            }
        }
        n.chi2 += r * r;
    }
    n
}

fn solve2(m: [[f64; 2]; 2], v: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([
        (m[1][1] * v[0] - m[0][1] * v[1]) / det,
        (m[0][0] * v[1] - m[1][0] * v[0]) / det,
    ])
}

fn invert2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

/// Weighted Levenberg–Marquardt fit of `g_c = 1 + g0 exp(-t²/τ²)`.
pub fn fit_gaussian_decay(points: &[DecayPoint]) -> Result<FitResult, AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::TooFewPoints(points.len()));
    }
    for (index, p) in points.iter().enumerate() {
        if !(p.sigma > 0.0 && p.sigma.is_finite()) {
            return Err(AnalysisError::InvalidPoint {
                index,
                reason: format!("sigma {} must be positive", p.sigma),
            });
        }
        if !(p.t_us.is_finite() && p.g_c.is_finite()) {
            return Err(AnalysisError::InvalidPoint {
                index,
                reason: "non-finite value".into(),
            });
        }
    }
    if points.iter().all(|p| p.g_c <= 1.0) {
        return Err(AnalysisError::Degenerate);
    }
    // A canonical order makes the result independent of the input order.
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| {
        a.t_us
            .total_cmp(&b.t_us)
            .then(a.g_c.total_cmp(&b.g_c))
            .then(a.sigma.total_cmp(&b.sigma))
    });

    let mut g0 = pts.iter().map(|p| p.g_c).fold(f64::NEG_INFINITY, f64::max) - 1.0;
    let smallest_positive_t = pts
        .iter()
        .map(|p| p.t_us.abs())
        .filter(|t| *t > 0.0)
        .fold(f64::INFINITY, f64::min);
    let mut tau = pts
        .iter()
        .filter(|p| p.g_c - 1.0 > g0 / std::f64::consts::E)
        .map(|p| p.t_us.abs())
        .fold(0.0, f64::max)
        .max(if smallest_positive_t.is_finite() {
            smallest_positive_t
        } else {
            1.0
        });

    let mut lambda = 1e-3;
    let mut current = normal_equations(&pts, g0, tau);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < FIT_MAX_ITERATIONS {
        iterations += 1;
        let mut damped = current.jtj;
        damped[0][0] *= 1.0 + lambda;
        damped[1][1] *= 1.0 + lambda;
        let Some(step) = solve2(damped, current.jtr) else {
            break;
        };
        let (g_new, tau_new) = (g0 + step[0], tau + step[1]);
        let trial = (tau_new > 0.0).then(|| normal_equations(&pts, g_new, tau_new));
        match trial {
            Some(next) if next.chi2 <= current.chi2 => {
                let small = step[0].abs()
                    <= FIT_STEP_TOLERANCE * g_new.abs().max(f64::MIN_POSITIVE)
                    && step[1].abs() <= FIT_STEP_TOLERANCE * tau_new;
                g0 = g_new;
                tau = tau_new;
                current = next;
                lambda = (lambda / 10.0).max(1e-12);
                if small {
                    converged = true;
                    break;
                }
            }
            _ => {
                lambda *= 10.0;
                if lambda > LAMBDA_CEILING {
                    // No downhill step exists at any damping: a minimum.
                    converged = true;
                    break;
                }
            }
        }
    }
    let dof = (pts.len() - 2) as f64;
    let result = FitResult {
        g0,
        tau_us: tau,
        covariance: invert2(normal_equations(&pts, g0, tau).jtj),
        chi2_reduced: current.chi2 / dof,
        iterations,
    };
    if converged && tau > 0.0 {
        Ok(result)
    } else {
        Err(AnalysisError::NonConvergence(Box::new(result)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal as Gauss};

    fn synthetic(g0: f64, tau: f64, times: &[f64]) -> Vec<DecayPoint> {
        times
            .iter()
            .map(|&t| DecayPoint {
                t_us: t,
                g_c: decay_model(t, g0, tau),
                sigma: 0.5,
            })
            .collect()
    }

    fn larmor_times(n: usize) -> Vec<f64> {
        (0..n).map(|k| k as f64 * 5.8).collect()
    }

    #[test]
    fn gc_arithmetic() {
        let c = CountSummary {
            trials: 100_000,
            c_s: 1000,
            c_i: 1000,
            c_si: 100,
        };
        let est = estimate_gc(&c).unwrap();
        assert!((est.g_c - 10.0).abs() < 1e-12);
        assert!((est.sigma - 10.0 * (0.01f64 + 0.001 + 0.001).sqrt()).abs() < 1e-12);
        let acc = CountSummary {
            trials: 1_000_000,
            c_s: 2000,
            c_i: 3000,
            c_si: 6,
        };
        assert!((estimate_gc(&acc).unwrap().g_c - 1.0).abs() < 1e-12);
        assert!(estimate_gc(&CountSummary { c_s: 0, ..c }).is_err());
        assert!(estimate_gc(&CountSummary { trials: 0, ..c }).is_err());
    }

    #[test]
    fn noiseless_recovery() {
        for (g0, tau) in [(25.3, 27.5), (16.7, 30.1)] {
            let fit = fit_gaussian_decay(&synthetic(g0, tau, &larmor_times(8))).unwrap();
            assert!((fit.g0 - g0).abs() < 1e-6 * g0, "{fit:?}");
            assert!((fit.tau_us - tau).abs() < 1e-6 * tau, "{fit:?}");
        }
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_gaussian_decay(&synthetic(2.0, 3.0, &[0.0, 1.0])),
            Err(AnalysisError::TooFewPoints(2))
        ));
        let flat: Vec<_> = (0..4)
            .map(|k| DecayPoint {
                t_us: k as f64,
                g_c: 0.9,
                sigma: 0.1,
            })
            .collect();
        assert!(matches!(
            fit_gaussian_decay(&flat),
            Err(AnalysisError::Degenerate)
        ));
        let mut bad = synthetic(2.0, 3.0, &[0.0, 1.0, 2.0]);
        bad[1].sigma = 0.0;
        assert!(matches!(
            fit_gaussian_decay(&bad),
            Err(AnalysisError::InvalidPoint { index: 1, .. })
        ));
    }

    #[test]
    fn chi2_in_statistical_band() {
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 2.0).collect();
        let mut chis = Vec::new();
        for rep in 0..200 {
            let mut rng = stream(17, 0, rep);
            let pts: Vec<_> = times
                .iter()
                .map(|&t| {
                    let truth = decay_model(t, 25.3, 27.5);
                    let sigma = 0.05 * truth;
                    DecayPoint {
                        t_us: t,
                        g_c: truth + Gauss::new(0.0, sigma).unwrap().sample(&mut rng),
                        sigma,
                    }
                })
                .collect();
            chis.push(fit_gaussian_decay(&pts).unwrap().chi2_reduced);
        }
        chis.sort_by(f64::total_cmp);
        let median = chis[chis.len() / 2];
        assert!((0.5..=1.5).contains(&median), "{median}");
        let inside = chis.iter().filter(|c| (0.5..=1.5).contains(*c)).count();
        assert!(inside as f64 / chis.len() as f64 > 0.85, "{inside}");
    }

    #[test]
    fn maps_index_cells_row_major() {
        let geo = ArrayGeometry::default();
        let mut m: CellMap<f64> = CellMap::empty(&geo);
        m.set(CellIndex::new(3, 2), 7.0);
        assert_eq!(m.get(CellIndex::new(3, 2)), Some(7.0));
        assert_eq!(m.values[15 + 2], Some(7.0));
        assert_eq!(m.get(CellIndex::new(16, 2)), None);
        assert_eq!(m.iter().nth(17).unwrap().0, CellIndex::new(3, 2));
    }

    proptest! {
        #[test]
        fn gc_invariant_under_duplication(t in 1u64..1_000_000, s in 1u64..1000, i in 1u64..1000, si in 0u64..1000) {
            let c = CountSummary { trials: t, c_s: s, c_i: i, c_si: si.min(s).min(i) };
            let d = CountSummary { trials: 2 * t, c_s: 2 * s, c_i: 2 * i, c_si: 2 * c.c_si };
            let (a, b) = (estimate_gc(&c).unwrap(), estimate_gc(&d).unwrap());
            prop_assert!((a.g_c - b.g_c).abs() <= 1e-12 * a.g_c.max(1.0));
        }

        #[test]
        fn fit_invariant_under_reordering(seed in 0u64..1000, g0 in 5.0..30.0f64, tau in 10.0..40.0f64) {
            let mut rng = stream(seed, 1, 0);
            let mut pts: Vec<_> = larmor_times(8)
                .into_iter()
                .map(|t| {
                    let truth = decay_model(t, g0, tau);
                    DecayPoint { t_us: t, g_c: truth + Gauss::new(0.0, 0.3).unwrap().sample(&mut rng), sigma: 0.3 }
                })
                .collect();
            let a = fit_gaussian_decay(&pts).unwrap();
            pts.reverse();
            pts.swap(1, 5);
            let b = fit_gaussian_decay(&pts).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
