//! Photon-counting model of one write/read attempt and its exact rates.
//!
//! A write pulse creates `n` signal/spin-wave pairs with thermal statistics
//! `P(n) = (1-p) pⁿ`. Signal detection is a click detector with efficiency
//! `eta_s` and dark probability `dark_s`. After storage each excitation
//! survives retrieval independently; the retrieved photons reach a click
//! detector with efficiency `eta_i` and idler-mode noise `idler_noise`.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addressing::{beam_weight_at_cell, single_cell_program, AddressingError, Channel};
use crate::model::{ArrayGeometry, CellIndex, MemoryArray, MemoryCell, ModelError};
use crate::quantum::{born_probability, werner, DensityMatrix, QuantumError, QubitBasisVector};

/// Truncation bound on the neglected photon-number tail.
const TAIL_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("{0}: {1}")]
    InvalidParameter(&'static str, String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Addressing(#[from] AddressingError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

/// Detector outcome of one attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    #[serde(rename = "s")]
    pub signal_click: bool,
    #[serde(rename = "i")]
    pub idler_click: bool,
    /// Joint projector index in pair mode: 1 = (b_s, b_a), 2 = (b_s, b_a⊥),
    /// 3 = (b_s⊥, b_a), 4 = (b_s⊥, b_a⊥).
    #[serde(rename = "b", default, skip_serializing_if = "Option::is_none")]
    pub pair_basis_outcome: Option<u8>,
}

/// Per-attempt click probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub p_s: f64,
    pub p_i: f64,
    pub p_si: f64,
    pub p_i_given_s: f64,
    pub g_c: f64,
}

/// Everything one write/read attempt depends on, with beam weights and the
/// storage time already folded in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptParams {
    pub p: f64,
    pub eta_s: f64,
    pub dark_s: f64,
    /// Probability that one stored excitation is converted into an idler photon.
    pub retrieval: f64,
    pub eta_i: f64,
    /// Idler click probability without any retrieved photon.
    pub idler_noise: f64,
}

fn check_unit(name: &'static str, v: f64) -> Result<(), SamplerError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(SamplerError::InvalidParameter(
            name,
            format!("{v} is not in [0, 1]"),
        ))
    }
}

impl AttemptParams {
    pub fn for_cell(cell: &MemoryCell, t_us: f64) -> Self {
        let ph = &cell.physics;
        Self {
            p: ph.p,
            eta_s: ph.eta_s,
            dark_s: ph.dark_s,
            retrieval: cell.retrieval(t_us),
            eta_i: ph.eta_i,
            idler_noise: ph.idler_noise(),
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        check_unit("p", self.p)?;
        if self.p >= 0.5 {
            return Err(SamplerError::InvalidParameter(
                "p",
                format!("{} must be below 0.5", self.p),
            ));
        }
        check_unit("eta_s", self.eta_s)?;
        check_unit("dark_s", self.dark_s)?;
        check_unit("retrieval", self.retrieval)?;
        check_unit("eta_i", self.eta_i)?;
        check_unit("idler_noise", self.idler_noise)
    }

    /// Smallest `N` with `P(n > N) = p^{N+1}` below the tail bound.
    fn n_max(&self) -> usize {
        if self.p <= 0.0 {
            return 0;
        }
        (TAIL_MASS.ln() / self.p.ln()).ceil().max(0.0) as usize
    }

    /// Exact rates by summing over the photon number.
    pub fn analytic_rates(&self) -> RateSet {
        let q_s = 1.0 - self.eta_s;
        let q_i = 1.0 - self.retrieval * self.eta_i;
        let (mut p_s, mut p_i, mut p_si) = (0.0, 0.0, 0.0);
        let mut weight = 1.0 - self.p;
        let (mut qs_n, mut qi_n) = (1.0, 1.0);
        for _ in 0..=self.n_max() {
            let no_s = qs_n * (1.0 - self.dark_s);
            let no_i = qi_n * (1.0 - self.idler_noise);
            p_s += weight * (1.0 - no_s);
            p_i += weight * (1.0 - no_i);
            p_si += weight * (1.0 - no_s) * (1.0 - no_i);
            weight *= self.p;
            qs_n *= q_s;
            qi_n *= q_i;
        }
        let p_i_given_s = if p_s > 0.0 { p_si / p_s } else { 0.0 };
        let g_c = if p_s > 0.0 && p_i > 0.0 {
            p_si / (p_s * p_i)
        } else {
            0.0
        };
        RateSet {
            p_s,
            p_i,
            p_si,
            p_i_given_s,
            g_c,
        }
    }

    fn photon_number(&self) -> Geometric {
        Geometric::new(1.0 - self.p).expect("p validated below 0.5")
    }

    fn signal_given<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> bool {
        let miss = (1.0 - self.eta_s).powi(n as i32) * (1.0 - self.dark_s);
        rng.random::<f64>() >= miss
    }

    fn idler_given<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> bool {
        let m = (0..n)
            .filter(|_| rng.random::<f64>() < self.retrieval)
            .count();
        let miss = (1.0 - self.eta_i).powi(m as i32) * (1.0 - self.idler_noise);
        rng.random::<f64>() >= miss
    }
}

/// Rates of `cell` after storing for `t_us`.
pub fn analytic_rates(cell: &MemoryCell, t_us: f64) -> RateSet {
    AttemptParams::for_cell(cell, t_us).analytic_rates()
}

/// One attempt drawn directly from the generative model.
pub fn sample_attempt<R: Rng + ?Sized>(params: &AttemptParams, rng: &mut R) -> TrialOutcome {
    let n = params.photon_number().sample(rng);
    let signal_click = params.signal_given(n, rng);
    let idler_click = params.idler_given(n, rng);
    TrialOutcome {
        signal_click,
        idler_click,
        pair_basis_outcome: None,
    }
}

pub fn sample_single_cell<R: Rng + ?Sized>(
    cell: &MemoryCell,
    t_us: f64,
    rng: &mut R,
) -> TrialOutcome {
    sample_attempt(&AttemptParams::for_cell(cell, t_us), rng)
}

/// Attempt parameters seen by `target` while the `channel` beam is steered to
/// `scanned` and every other channel stays on the target.
pub fn crosstalk_params(
    array: &MemoryArray,
    target: CellIndex,
    scanned: CellIndex,
    channel: Channel,
    t_us: f64,
) -> Result<AttemptParams, SamplerError> {
    let geo: &ArrayGeometry = &array.geometry;
    geo.check(scanned)?;
    let base = AttemptParams::for_cell(array.cell(target)?, t_us);
    let program = single_cell_program(channel, scanned)?;
    let w = beam_weight_at_cell(&program, target, geo, geo.write_waist_um)?;
    let ph = &array.cell(target)?.physics;
    match channel {
        Channel::Write => Ok(AttemptParams {
            p: base.p * w,
            ..base
        }),
        Channel::Read => Ok(AttemptParams {
            retrieval: base.retrieval * w,
            idler_noise: 1.0 - (1.0 - ph.dark_i) * (1.0 - ph.read_noise * w),
            ..base
        }),
        other => Err(SamplerError::InvalidParameter(
            "channel",
            format!("crosstalk scans move the write or read beam, not {other:?}"),
        )),
    }
}

pub fn sample_crosstalk_trial<R: Rng + ?Sized>(
    array: &MemoryArray,
    target: CellIndex,
    scanned: CellIndex,
    channel: Channel,
    t_us: f64,
    rng: &mut R,
) -> Result<TrialOutcome, SamplerError> {
    Ok(sample_attempt(
        &crosstalk_params(array, target, scanned, channel, t_us)?,
        rng,
    ))
}

/// Result of repeating attempts until a signal click or the attempt cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeraldRun {
    pub attempts: u64,
    pub herald: Option<Herald>,
    /// Idler clicks registered in the windows of unheralded attempts.
    pub clean_idler_clicks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Herald {
    pub excitations: u64,
    pub idler_click: bool,
}

/// Repeats attempts of the generative model until a herald.
///
/// Attempts with no excitation and no click in any tracked detector carry no
/// information, so the sampler jumps over runs of them with one geometric
/// draw and only simulates the remaining attempts in detail. The sequence of
/// observable events has exactly the distribution of attempt-by-attempt
/// sampling.
#[derive(Debug, Clone)]
pub struct HeraldSampler {
    params: AttemptParams,
    track_idler: bool,
    noise: f64,
    eventful: f64,
    gap: Option<Geometric>,
    photon_excess: Geometric,
}

impl HeraldSampler {
    /// With `track_idler` false the idler detector is ignored in every
    /// attempt and heralds report `idler_click = false`.
    pub fn new(params: AttemptParams, track_idler: bool) -> Result<Self, SamplerError> {
        params.validate()?;
        let noise = if track_idler { params.idler_noise } else { 0.0 };
        let quiet = (1.0 - params.p) * (1.0 - params.dark_s) * (1.0 - noise);
        let eventful = 1.0 - quiet;
        let gap = if eventful > 0.0 {
            Geometric::new(eventful).ok()
        } else {
            None
        };
        Ok(Self {
            params,
            track_idler,
            noise,
            eventful,
            gap,
            photon_excess: params.photon_number(),
        })
    }

    pub fn params(&self) -> &AttemptParams {
        &self.params
    }

    pub fn run<R: Rng + ?Sized>(&self, cap: u64, rng: &mut R) -> HeraldRun {
        let mut attempts = 0u64;
        let mut clean = 0u64;
        let Some(gap) = &self.gap else {
            return HeraldRun {
                attempts: cap,
                herald: None,
                clean_idler_clicks: 0,
            };
        };
        while attempts < cap {
            let skip = gap.sample(rng);
            if skip >= cap - attempts {
                break;
            }
            attempts += skip + 1;
            let (n, signal, idler) = self.eventful_attempt(rng);
            if signal {
                return HeraldRun {
                    attempts,
                    herald: Some(Herald {
                        excitations: n,
                        idler_click: idler,
                    }),
                    clean_idler_clicks: clean,
                };
            }
            clean += idler as u64;
        }
        HeraldRun {
            attempts: cap,
            herald: None,
            clean_idler_clicks: clean,
        }
    }

    /// One attempt conditioned on not being quiet.
    fn eventful_attempt<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, bool, bool) {
        let pr = &self.params;
        if rng.random::<f64>() * self.eventful < pr.p {
            let n = 1 + self.photon_excess.sample(rng);
            let signal = pr.signal_given(n, rng);
            let idler = self.track_idler && pr.idler_given(n, rng);
            return (n, signal, idler);
        }
        let only_s = pr.dark_s * (1.0 - self.noise);
        let only_i = (1.0 - pr.dark_s) * self.noise;
        let both = pr.dark_s * self.noise;
        let u = rng.random::<f64>() * (only_s + only_i + both);
        if u < only_s {
            (0, true, false)
        } else if u < only_s + only_i {
            (0, false, true)
        } else {
            (0, true, true)
        }
    }
}

/// Effective entangled-pair model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairModel {
    /// Visibility of the stored atom-photon state before read-out noise.
    pub visibility: f64,
    /// Optional Gaussian decay of the visibility itself, µs. Without it the
    /// measured fidelity decays only through the retrieval efficiency.
    #[serde(default)]
    pub pair_tau_us: Option<f64>,
    /// Relative phase of the stored state, radians.
    #[serde(default)]
    pub phase: f64,
}

impl PairModel {
    pub fn validate(&self) -> Result<(), SamplerError> {
        check_unit("visibility", self.visibility)?;
        if let Some(tau) = self.pair_tau_us {
            if !(tau > 0.0) {
                return Err(SamplerError::InvalidParameter(
                    "pair_tau_us",
                    format!("must be positive, got {tau}"),
                ));
            }
        }
        Ok(())
    }
}

/// A two-cell source measured in fixed signal and idler bases.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSource {
    pub write: AttemptParams,
    pub rho: DensityMatrix,
    pub signal_basis: QubitBasisVector,
    pub idler_basis: QubitBasisVector,
    /// Probability that the stored excitation produces an idler click.
    pub efficiency: f64,
    pub idler_noise: f64,
    probs: [f64; 4],
}

/// Visibility of the pair state after storing for `t_us`.
pub fn pair_visibility(model: &PairModel, larmor_factor: f64, t_us: f64) -> f64 {
    match model.pair_tau_us {
        None => model.visibility,
        Some(tau) => model.visibility * (-(t_us * t_us) / (tau * tau)).exp() * larmor_factor,
    }
}

impl PairSource {
    pub fn new(
        array: &MemoryArray,
        left: CellIndex,
        right: CellIndex,
        signal_basis: QubitBasisVector,
        idler_basis: QubitBasisVector,
        model: &PairModel,
        t_us: f64,
    ) -> Result<Self, SamplerError> {
        model.validate()?;
        if left == right || (left.x != right.x && left.y != right.y) {
            return Err(SamplerError::UnsupportedGeometry(format!(
                "pair {left}-{right} is not two distinct cells on one row or column"
            )));
        }
        let (a, b) = (array.cell(left)?, array.cell(right)?);
        let mean = |f: &dyn Fn(&MemoryCell) -> f64| 0.5 * (f(a) + f(b));
        let write = AttemptParams {
            p: mean(&|c| c.physics.p),
            eta_s: mean(&|c| c.physics.eta_s),
            dark_s: mean(&|c| c.physics.dark_s),
            retrieval: mean(&|c| c.retrieval(t_us)),
            eta_i: mean(&|c| c.physics.eta_i),
            idler_noise: mean(&|c| c.physics.idler_noise()),
        };
        let efficiency = mean(&|c| c.retrieval(t_us) * c.physics.eta_i);
        let larmor = mean(&|c| c.physics.larmor_factor(t_us));
        let rho = werner(pair_visibility(model, larmor, t_us), model.phase)?;
        let (s, s_perp) = (signal_basis, signal_basis.orthogonal());
        let (i, i_perp) = (idler_basis, idler_basis.orthogonal());
        let mut probs = [
            born_probability(&rho, &s, &i),
            born_probability(&rho, &s, &i_perp),
            born_probability(&rho, &s_perp, &i),
            born_probability(&rho, &s_perp, &i_perp),
        ];
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|q| *q /= total);
        Ok(Self {
            write,
            rho,
            signal_basis,
            idler_basis,
            efficiency,
            idler_noise: write.idler_noise,
            probs,
        })
    }

    /// Born probabilities of the four joint outcomes.
    pub fn outcome_probabilities(&self) -> [f64; 4] {
        self.probs
    }

    /// Read stage after a herald: projective outcome, then the idler click.
    pub fn read<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialOutcome {
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        let mut outcome = 4u8;
        for (k, q) in self.probs.iter().enumerate().take(3) {
            acc += q;
            if u < acc {
                outcome = k as u8 + 1;
                break;
            }
        }
        let atom_in_basis = matches!(outcome, 1 | 3);
        let click = if atom_in_basis {
            1.0 - (1.0 - self.efficiency) * (1.0 - self.idler_noise)
        } else {
            self.idler_noise
        };
        TrialOutcome {
            signal_click: true,
            idler_click: rng.random::<f64>() < click,
            pair_basis_outcome: Some(outcome),
        }
    }
}

/// One attempt of a pair source: herald with the write statistics, then the
/// read stage if heralded.
pub fn sample_pair_trial<R: Rng + ?Sized>(source: &PairSource, rng: &mut R) -> TrialOutcome {
    let n = source.write.photon_number().sample(rng);
    if source.write.signal_given(n, rng) {
        source.read(rng)
    } else {
        TrialOutcome {
            signal_click: false,
            idler_click: false,
            pair_basis_outcome: None,
        }
    }
}
