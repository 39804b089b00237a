//! The write/clean/read control loop and the campaign runner.
//!
//! A trial repeats write/clean cycles until the signal detector fires, waits
//! for the storage time and reads the memory out. A campaign runs an ordered
//! list of plan entries; every trial draws from its own counter-based random
//! stream, so trials are computed in parallel while the log stays identical
//! for any worker count.

use std::f64::consts::FRAC_PI_4;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addressing::{
    single_cell_program, superposition_program, AddressingError, AddressingProgram, Channel,
    SuperpositionBasis,
};
use crate::model::{ArrayGeometry, CellIndex, MemoryArray};
use crate::quantum::QubitBasisVector;
use crate::rng;
use crate::sampler::{
    crosstalk_params, AttemptParams, HeraldSampler, PairModel, PairSource, SamplerError,
    TrialOutcome,
};

pub const LOG_FORMAT: &str = "mxmem-events/1";
const PARALLEL_CHUNK_LIMIT: u64 = 1 << 15;
const ATTEMPT_BUDGET_CHUNK: u64 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequencerError {
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("plan entry {index}: {reason}")]
    InvalidEntry { index: usize, reason: String },
    #[error(
        "plan entry {index} ({kind}): {exhausted} trials exhausted the attempt cap (limit {limit})"
    )]
    Exhausted {
        index: usize,
        kind: String,
        exhausted: u64,
        limit: u64,
    },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Addressing(#[from] AddressingError),
}

/// Pulse timing in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub write_pulse_ns: u64,
    pub write_clean_delay_ns: u64,
    pub clean_pulse_ns: u64,
    pub cycle_period_ns: u64,
    pub max_attempts: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            write_pulse_ns: 100,
            write_clean_delay_ns: 500,
            clean_pulse_ns: 100,
            cycle_period_ns: 1000,
            max_attempts: 1_000_000,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<(), SequencerError> {
        let busy = self.write_pulse_ns + self.write_clean_delay_ns + self.clean_pulse_ns;
        if self.cycle_period_ns < busy {
            return Err(SequencerError::Timing(format!(
                "cycle_period_ns {} shorter than write + delay + clean = {busy}",
                self.cycle_period_ns
            )));
        }
        if self.max_attempts == 0 {
            return Err(SequencerError::Timing(
                "max_attempts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// What a plan entry addresses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrialKind {
    SingleCell {
        cell: CellIndex,
    },
    /// All channels on `target` except `channel`, which points at `scanned`.
    Crosstalk {
        target: CellIndex,
        scanned: CellIndex,
        channel: Channel,
    },
    Pair {
        left: CellIndex,
        right: CellIndex,
        signal_basis: SuperpositionBasis,
        idler_basis: SuperpositionBasis,
    },
}

impl TrialKind {
    pub fn label(&self) -> String {
        match self {
            Self::SingleCell { cell } => format!("cell {cell}"),
            Self::Crosstalk {
                target,
                scanned,
                channel,
            } => {
                format!("crosstalk {target} {channel:?} beam at {scanned}")
            }
            Self::Pair {
                left,
                right,
                signal_basis,
                idler_basis,
            } => format!(
                "pair {left}-{right} signal ({:.4},{:.4}) idler ({:.4},{:.4})",
                signal_basis.theta, signal_basis.phi, idler_basis.theta, idler_basis.phi
            ),
        }
    }

    /// RF programs of the write, read, signal and idler channels.
    pub fn programs(&self) -> Result<Vec<AddressingProgram>, AddressingError> {
        let channels = [
            Channel::Write,
            Channel::Read,
            Channel::Signal,
            Channel::Idler,
        ];
        match *self {
            Self::SingleCell { cell } => channels
                .iter()
                .map(|&ch| single_cell_program(ch, cell))
                .collect(),
            Self::Crosstalk {
                target,
                scanned,
                channel,
            } => channels
                .iter()
                .map(|&ch| single_cell_program(ch, if ch == channel { scanned } else { target }))
                .collect(),
            Self::Pair {
                left,
                right,
                signal_basis,
                idler_basis,
            } => {
                let even = SuperpositionBasis::new(FRAC_PI_4, 0.0)?;
                Ok(vec![
                    superposition_program(Channel::Write, left, right, even)?,
                    superposition_program(Channel::Read, left, right, even)?,
                    superposition_program(Channel::Signal, left, right, signal_basis)?,
                    superposition_program(Channel::Idler, left, right, idler_basis)?,
                ])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Budget {
    /// Run until this many heralded trials are recorded.
    Heralds(u64),
    /// Run until this many write attempts have been spent.
    Attempts(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignEntry {
    pub trial: TrialKind,
    pub storage_time_us: f64,
    pub budget: Budget,
}

/// One write-store-read trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(rename = "id")]
    pub trial_id: u64,
    /// Index of the plan entry; the entry carries the addressed cells,
    /// programs and basis settings.
    #[serde(rename = "e")]
    pub entry: u32,
    #[serde(rename = "a")]
    pub attempts: u64,
    #[serde(rename = "h", default, skip_serializing_if = "Option::is_none")]
    pub herald_time_ns: Option<u64>,
    #[serde(rename = "t")]
    pub storage_time_us: f64,
    #[serde(rename = "o", default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TrialOutcome>,
    /// Idler clicks in the clean windows of the unheralded attempts.
    #[serde(rename = "c", default, skip_serializing_if = "is_zero")]
    pub clean_idler_clicks: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl TrialRecord {
    pub fn heralded(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn herald_time_us(&self) -> Option<f64> {
        self.herald_time_ns.map(|ns| ns as f64 / 1000.0)
    }
}

/// The physics behind one plan entry at its storage time.
#[derive(Debug, Clone)]
pub enum Source {
    /// Single-cell or crosstalk statistics; idler clicks tracked in every window.
    Cell(HeraldSampler),
    Pair {
        write: HeraldSampler,
        read: PairSource,
    },
}

/// Fixed context shared by every entry of a campaign.
#[derive(Debug, Clone)]
pub struct SourceContext {
    pub array: MemoryArray,
    pub pair_model: PairModel,
}

pub fn build_source(ctx: &SourceContext, entry: &CampaignEntry) -> Result<Source, SequencerError> {
    let t = entry.storage_time_us;
    match entry.trial {
        TrialKind::SingleCell { cell } => {
            let params =
                AttemptParams::for_cell(ctx.array.cell(cell).map_err(SamplerError::from)?, t);
            Ok(Source::Cell(HeraldSampler::new(params, true)?))
        }
        TrialKind::Crosstalk {
            target,
            scanned,
            channel,
        } => {
            let params = crosstalk_params(&ctx.array, target, scanned, channel, t)?;
            Ok(Source::Cell(HeraldSampler::new(params, true)?))
        }
        TrialKind::Pair { left, right, .. } => {
            let programs = entry.trial.programs()?;
            let basis = |k: usize| {
                programs[k]
                    .superposition_basis()
                    .unwrap_or(QubitBasisVector::L)
            };
            let model = PairModel {
                phase: basis(0).phi,
                ..ctx.pair_model
            };
            let read = PairSource::new(&ctx.array, left, right, basis(2), basis(3), &model, t)?;
            Ok(Source::Pair {
                write: HeraldSampler::new(read.write, false)?,
                read,
            })
        }
    }
}

/// Runs write/clean cycles until a herald or `cap` attempts, then the read.
pub fn run_heralded_trial<R: Rng + ?Sized>(
    timing: &TimingConfig,
    source: &Source,
    storage_time_us: f64,
    cap: u64,
    rng: &mut R,
) -> TrialRecord {
    let (run, outcome) = match source {
        Source::Cell(sampler) => {
            let run = sampler.run(cap, rng);
            let outcome = run.herald.map(|h| TrialOutcome {
                signal_click: true,
                idler_click: h.idler_click,
                pair_basis_outcome: None,
            });
            (run, outcome)
        }
        Source::Pair { write, read } => {
            let run = write.run(cap, rng);
            let outcome = run.herald.map(|_| read.read(rng));
            (run, outcome)
        }
    };
    TrialRecord {
        trial_id: 0,
        entry: 0,
        attempts: run.attempts,
        herald_time_ns: outcome.map(|_| run.attempts * timing.cycle_period_ns),
        storage_time_us,
        outcome,
        clean_idler_clicks: run.clean_idler_clicks,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignTotals {
    pub records: u64,
    pub heralded: u64,
    pub exhausted: u64,
    pub attempts: u64,
}

impl CampaignTotals {
    fn add(&mut self, r: &TrialRecord) {
        self.records += 1;
        self.attempts += r.attempts;
        if r.heralded() {
            self.heralded += 1;
        } else {
            self.exhausted += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignOptions {
    pub seed: u64,
    /// Tolerated trials per entry that hit `max_attempts` without a herald.
    pub max_exhausted: u64,
}

fn trial<R: Rng>(
    timing: &TimingConfig,
    source: &Source,
    entry: &CampaignEntry,
    index: u32,
    id: u64,
    cap: u64,
    mut rng: R,
) -> TrialRecord {
    TrialRecord {
        trial_id: id,
        entry: index,
        ..run_heralded_trial(timing, source, entry.storage_time_us, cap, &mut rng)
    }
}

pub fn validate_plan(plan: &[CampaignEntry], geo: &ArrayGeometry) -> Result<(), SequencerError> {
    plan.iter()
        .enumerate()
        .try_for_each(|(i, e)| validate_entry(i, e, geo))
}

fn validate_entry(
    index: usize,
    entry: &CampaignEntry,
    geo: &ArrayGeometry,
) -> Result<(), SequencerError> {
    let bad = |reason: String| SequencerError::InvalidEntry { index, reason };
    if !(entry.storage_time_us >= 0.0 && entry.storage_time_us.is_finite()) {
        return Err(bad(format!(
            "storage time {} us must be non-negative",
            entry.storage_time_us
        )));
    }
    let cells = match entry.trial {
        TrialKind::SingleCell { cell } => vec![cell],
        TrialKind::Crosstalk {
            target,
            scanned,
            channel,
        } => {
            if !matches!(channel, Channel::Write | Channel::Read) {
                return Err(bad(format!(
                    "crosstalk scans use the write or read beam, not {channel:?}"
                )));
            }
            vec![target, scanned]
        }
        TrialKind::Pair { left, right, .. } => vec![left, right],
    };
    for c in cells {
        if !geo.contains(c) {
            return Err(bad(format!(
                "cell {c} outside the {}x{} array",
                geo.nx, geo.ny
            )));
        }
    }
    Ok(())
}

/// Runs every plan entry in order, passing each record to `sink` in log order.
pub fn run_campaign_with(
    plan: &[CampaignEntry],
    ctx: &SourceContext,
    timing: &TimingConfig,
    options: &CampaignOptions,
    mut sink: impl FnMut(&TrialRecord),
) -> Result<CampaignTotals, SequencerError> {
    timing.validate()?;
    validate_plan(plan, &ctx.array.geometry)?;
    let mut totals = CampaignTotals::default();
    for (i, entry) in plan.iter().enumerate() {
        let source = build_source(ctx, entry)?;
        let index = i as u32;
        let stream = |id: u64| rng::stream(options.seed, i as u64, id);
        let exhausted_error = |exhausted| SequencerError::Exhausted {
            index: i,
            kind: entry.trial.label(),
            exhausted,
            limit: options.max_exhausted,
        };
        let mut next_id = 0u64;
        let mut exhausted = 0u64;
        match entry.budget {
            Budget::Heralds(target) => {
                let mut heralded = 0u64;
                while heralded < target {
                    let chunk = (target - heralded).min(PARALLEL_CHUNK_LIMIT);
                    let records: Vec<TrialRecord> = (next_id..next_id + chunk)
                        .into_par_iter()
                        .map(|id| {
                            trial(
                                timing,
                                &source,
                                entry,
                                index,
                                id,
                                timing.max_attempts,
                                stream(id),
                            )
                        })
                        .collect();
                    for r in &records {
                        if heralded == target {
                            break;
                        }
                        if r.heralded() {
                            heralded += 1;
                        } else {
                            exhausted += 1;
                            if exhausted > options.max_exhausted {
                                return Err(exhausted_error(exhausted));
                            }
                        }
                        totals.add(r);
                        sink(r);
                        next_id += 1;
                    }
                }
            }
            Budget::Attempts(budget) => {
                let mut used = 0u64;
                'outer: while used < budget {
                    let records: Vec<TrialRecord> = (next_id..next_id + ATTEMPT_BUDGET_CHUNK)
                        .into_par_iter()
                        .map(|id| {
                            trial(
                                timing,
                                &source,
                                entry,
                                index,
                                id,
                                timing.max_attempts,
                                stream(id),
                            )
                        })
                        .collect();
                    for r in records {
                        let left = budget - used;
                        let r = if r.attempts > left {
                            // Same stream with a tighter cap: the truncated trial.
                            trial(
                                timing,
                                &source,
                                entry,
                                index,
                                r.trial_id,
                                left,
                                stream(r.trial_id),
                            )
                        } else {
                            if !r.heralded() {
                                exhausted += 1;
                                if exhausted > options.max_exhausted {
                                    return Err(exhausted_error(exhausted));
                                }
                            }
                            r
                        };
                        used += r.attempts;
                        totals.add(&r);
                        sink(&r);
                        next_id += 1;
                        if used >= budget {
                            break 'outer;
                        }
                    }
                }
            }
        }
    }
    Ok(totals)
}

/// Plan entry as stored in the log header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryHeader {
    pub index: u32,
    #[serde(flatten)]
    pub entry: CampaignEntry,
    pub programs: Vec<AddressingProgram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub seed: u64,
    /// SHA-256 of the canonical configuration text; empty when run without one.
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub conventions: Vec<String>,
    pub geometry: ArrayGeometry,
    pub timing: TimingConfig,
    pub entries: Vec<EntryHeader>,
    pub totals: CampaignTotals,
}

pub fn conventions() -> Vec<String> {
    vec![
        "storage time is measured from the heralding write pulse".into(),
        "times in records: herald_time_ns = attempts * cycle_period_ns".into(),
        "clean-window idler clicks of unheralded attempts use the read statistics at the entry storage time".into(),
        "pair outcomes: 1=(b_s,b_a) 2=(b_s,b_a_perp) 3=(b_s_perp,b_a) 4=(b_s_perp,b_a_perp)".into(),
    ]
}

impl LogHeader {
    pub fn new(
        plan: &[CampaignEntry],
        geometry: ArrayGeometry,
        timing: TimingConfig,
        seed: u64,
    ) -> Result<Self, SequencerError> {
        let entries = plan
            .iter()
            .enumerate()
            .map(|(i, e)| {
                Ok(EntryHeader {
                    index: i as u32,
                    entry: *e,
                    programs: e.trial.programs()?,
                })
            })
            .collect::<Result<Vec<_>, SequencerError>>()?;
        Ok(Self {
            format: LOG_FORMAT.into(),
            seed,
            config_sha256: String::new(),
            config: serde_json::Value::Null,
            conventions: conventions(),
            geometry,
            timing,
            entries,
            totals: CampaignTotals::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub header: LogHeader,
    pub records: Vec<TrialRecord>,
}

impl EventLog {
    pub fn plan(&self) -> impl Iterator<Item = &CampaignEntry> {
        self.header.entries.iter().map(|e| &e.entry)
    }
}

pub fn run_campaign(
    plan: &[CampaignEntry],
    ctx: &SourceContext,
    timing: &TimingConfig,
    options: &CampaignOptions,
) -> Result<EventLog, SequencerError> {
    validate_plan(plan, &ctx.array.geometry)?;
    let mut header = LogHeader::new(plan, ctx.array.geometry, *timing, options.seed)?;
    let mut records = Vec::new();
    header.totals = run_campaign_with(plan, ctx, timing, options, |r| records.push(*r))?;
    Ok(EventLog { header, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CellPhysics, OpticalDepthProfile};

    fn ctx() -> SourceContext {
        let geo = ArrayGeometry::default();
        let array = MemoryArray::uniform(
            geo,
            OpticalDepthProfile::for_geometry(&geo, 20.0, 40.0),
            CellPhysics::default(),
        )
        .unwrap();
        SourceContext {
            array,
            pair_model: PairModel {
                visibility: 0.95,
                pair_tau_us: None,
                phase: 0.0,
            },
        }
    }

    fn opts(seed: u64) -> CampaignOptions {
        CampaignOptions {
            seed,
            max_exhausted: 16,
        }
    }

    fn entry(cell: CellIndex, budget: Budget) -> CampaignEntry {
        CampaignEntry {
            trial: TrialKind::SingleCell { cell },
            storage_time_us: 0.5,
            budget,
        }
    }

    #[test]
    fn timing_defaults_and_validation() {
        let t = TimingConfig::default();
        t.validate().unwrap();
        assert!(TimingConfig {
            cycle_period_ns: 600,
            ..t
        }
        .validate()
        .is_err());
        assert!(TimingConfig {
            max_attempts: 0,
            ..t
        }
        .validate()
        .is_err());
    }

    #[test]
    fn certain_herald_takes_one_cycle() {
        let params = AttemptParams {
            p: 0.0,
            eta_s: 0.5,
            dark_s: 1.0,
            retrieval: 0.0,
            eta_i: 0.5,
            idler_noise: 0.0,
        };
        let src = Source::Cell(HeraldSampler::new(params, true).unwrap());
        let mut rng = rng::stream(0, 0, 0);
        let r = run_heralded_trial(&TimingConfig::default(), &src, 0.5, 100, &mut rng);
        assert_eq!(r.attempts, 1);
        assert_eq!(r.herald_time_us(), Some(1.0));
        assert!(r.outcome.unwrap().signal_click);
    }

    #[test]
    fn mean_attempts_is_inverse_herald_probability() {
        let params = AttemptParams {
            p: 0.0,
            eta_s: 0.5,
            dark_s: 0.01,
            retrieval: 0.0,
            eta_i: 0.5,
            idler_noise: 0.0,
        };
        let src = Source::Cell(HeraldSampler::new(params, true).unwrap());
        let timing = TimingConfig::default();
        let n = 20_000;
        let total: u64 = (0..n)
            .map(|i| {
                run_heralded_trial(
                    &timing,
                    &src,
                    0.0,
                    timing.max_attempts,
                    &mut rng::stream(1, 0, i),
                )
                .attempts
            })
            .sum();
        let mean = total as f64 / n as f64;
        // Geometric: sd of the mean is sqrt(1-q)/q/sqrt(n).
        assert!(
            (mean - 100.0).abs() < 4.0 * (0.99f64).sqrt() / 0.01 / (n as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn empty_budget_gives_empty_log() {
        let log = run_campaign(
            &[entry(CellIndex::new(8, 8), Budget::Heralds(0))],
            &ctx(),
            &TimingConfig::default(),
            &opts(1),
        )
        .unwrap();
        assert!(log.records.is_empty());
        assert_eq!(log.header.entries.len(), 1);
        assert_eq!(log.header.entries[0].programs.len(), 4);
    }

    #[test]
    fn heralds_budget_and_bookkeeping() {
        let plan = [
            entry(CellIndex::new(8, 8), Budget::Heralds(300)),
            entry(CellIndex::new(2, 3), Budget::Heralds(200)),
        ];
        let log = run_campaign(&plan, &ctx(), &TimingConfig::default(), &opts(5)).unwrap();
        assert_eq!(log.records.len(), 500);
        assert_eq!(log.header.totals.heralded, 500);
        for r in &log.records {
            assert!(r.heralded());
            assert!(r.outcome.unwrap().signal_click);
            assert_eq!(r.herald_time_ns, Some(r.attempts * 1000));
            assert!(r.attempts <= 1_000_000);
        }
        assert_eq!(log.records.iter().filter(|r| r.entry == 1).count(), 200);
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let plan = [entry(CellIndex::new(8, 8), Budget::Heralds(100))];
        let a = run_campaign(&plan, &ctx(), &TimingConfig::default(), &opts(11)).unwrap();
        let b = run_campaign(&plan, &ctx(), &TimingConfig::default(), &opts(11)).unwrap();
        let c = run_campaign(&plan, &ctx(), &TimingConfig::default(), &opts(12)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn attempts_budget_is_exact() {
        let plan = [entry(CellIndex::new(8, 8), Budget::Attempts(123_457))];
        let log = run_campaign(&plan, &ctx(), &TimingConfig::default(), &opts(3)).unwrap();
        assert_eq!(log.records.iter().map(|r| r.attempts).sum::<u64>(), 123_457);
        assert!(log.records[..log.records.len() - 1]
            .iter()
            .all(|r| r.heralded()));
    }

    #[test]
    fn exhaustion_is_recorded_then_fails_the_entry() {
        let timing = TimingConfig {
            max_attempts: 3,
            ..TimingConfig::default()
        };
        let plan = [entry(CellIndex::new(8, 8), Budget::Heralds(5))];
        let err = run_campaign(&plan, &ctx(), &timing, &opts(1)).unwrap_err();
        assert!(
            matches!(err, SequencerError::Exhausted { index: 0, .. }),
            "{err}"
        );
        let lenient = CampaignOptions {
            seed: 1,
            max_exhausted: u64::MAX,
        };
        let log = run_campaign(&plan, &ctx(), &timing, &lenient).unwrap();
        assert!(log
            .records
            .iter()
            .any(|r| !r.heralded() && r.outcome.is_none() && r.attempts == 3));
    }

    #[test]
    fn invalid_entries_are_rejected() {
        let bad = [entry(CellIndex::new(16, 1), Budget::Heralds(1))];
        assert!(matches!(
            run_campaign(&bad, &ctx(), &TimingConfig::default(), &opts(1)),
            Err(SequencerError::InvalidEntry { index: 0, .. })
        ));
        let crosstalk = CampaignEntry {
            trial: TrialKind::Crosstalk {
                target: CellIndex::new(8, 8),
                scanned: CellIndex::new(9, 8),
                channel: Channel::Idler,
            },
            storage_time_us: 0.5,
            budget: Budget::Attempts(10),
        };
        assert!(run_campaign(&[crosstalk], &ctx(), &TimingConfig::default(), &opts(1)).is_err());
    }

    #[test]
    fn pair_entries_record_basis_outcomes() {
        let d = SuperpositionBasis::new(FRAC_PI_4, 0.0).unwrap();
        let plan = [CampaignEntry {
            trial: TrialKind::Pair {
                left: CellIndex::new(8, 8),
                right: CellIndex::new(9, 8),
                signal_basis: d,
                idler_basis: d,
            },
            storage_time_us: 0.5,
            budget: Budget::Heralds(50),
        }];
        let log = run_campaign(&plan, &ctx(), &TimingConfig::default(), &opts(2)).unwrap();
        assert!(log
            .records
            .iter()
            .all(|r| r.outcome.unwrap().pair_basis_outcome.is_some()));
        assert_eq!(log.header.entries[0].programs[2].tones_x.len(), 2);
    }
}
