use std::path::PathBuf;

use log::{info, warn};
use serde::Serialize;

use crate::addressing::{Channel, SuperpositionBasis};
use crate::analysis::{
    correlation_map_from, crosstalk_map_from, estimate_gc, fit_gaussian_decay, CountSummary,
    DecayPoint, FitResult,
};
use crate::model::{on_larmor_grid, CellIndex};
use crate::quantum::DensityMatrix;
use crate::sequencer::{
    run_campaign_with, validate_plan, Budget, CampaignEntry, CampaignOptions, LogHeader,
    SequencerError, TrialKind,
};
use crate::tomography::{canonical_bases, tomography_from_summaries, TomographyResult};

use super::config::{resolve, ExperimentConfig, Resolved};
use super::output::{num, svg, EventLogWriter, Table};
use super::CliError;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunFlags {
    pub dry_run: bool,
    pub allow_off_larmor: bool,
    pub svg: bool,
}

pub struct Session {
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub flags: RunFlags,
    command: &'static str,
}

fn sequencer_error(e: SequencerError) -> CliError {
    match e {
        SequencerError::InvalidEntry { .. }
        | SequencerError::Timing(_)
        | SequencerError::Addressing(_) => CliError::Validation(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

impl Session {
    pub fn new(
        config: ExperimentConfig,
        flags: RunFlags,
        command: &'static str,
    ) -> Result<Self, CliError> {
        let resolved = resolve(&config)?;
        for w in &resolved.warnings {
            warn!("{w}");
        }
        Ok(Self {
            config,
            resolved,
            flags,
            command,
        })
    }

    fn path(&self, suffix: &str) -> PathBuf {
        self.config
            .output_dir
            .join(format!("{}{suffix}", self.command))
    }

    fn table(&self, columns: &[&'static str]) -> Table {
        let mut t = Table::new(columns);
        t.meta("command", self.command)
            .meta("config_sha256", self.config.sha256())
            .meta("seed", self.config.seed);
        t
    }

    fn write_svg(&self, body: String) -> Result<(), CliError> {
        if self.flags.svg {
            let path = self.path(".svg");
            std::fs::write(&path, body).map_err(|e| super::output::io_error(&path, e))?;
        }
        Ok(())
    }

    /// Runs the plan, streaming the event log; `None` on a dry run.
    fn campaign(
        &self,
        plan: &[CampaignEntry],
    ) -> Result<Option<(LogHeader, Vec<CountSummary>)>, CliError> {
        let ctx = &self.resolved.context;
        validate_plan(plan, &ctx.array.geometry).map_err(sequencer_error)?;
        self.config.timing.validate().map_err(sequencer_error)?;
        let mut header = LogHeader::new(
            plan,
            ctx.array.geometry,
            self.config.timing,
            self.config.seed,
        )
        .map_err(sequencer_error)?;
        if self.flags.dry_run {
            println!(
                "{}: {} plan entries (dry run, nothing sampled)",
                self.command,
                plan.len()
            );
            for (i, e) in plan.iter().enumerate() {
                println!(
                    "  [{i}] {} at {} us, {:?}",
                    e.trial.label(),
                    e.storage_time_us,
                    e.budget
                );
            }
            return Ok(None);
        }
        header.config = self.config.canonical_json();
        header.config_sha256 = self.config.sha256();
        std::fs::create_dir_all(&self.config.output_dir)
            .map_err(|e| super::output::io_error(&self.config.output_dir, e))?;
        let mut writer = EventLogWriter::create(self.path(".events.jsonl"))?;
        let mut summaries = vec![CountSummary::default(); plan.len()];
        info!("{}: running {} plan entries", self.command, plan.len());
        let options = CampaignOptions {
            seed: self.config.seed,
            max_exhausted: self.config.max_exhausted,
        };
        let totals = run_campaign_with(plan, ctx, &self.config.timing, &options, |r| {
            summaries[r.entry as usize].add(r);
            writer.record(r);
        })
        .map_err(sequencer_error)?;
        header.totals = totals;
        writer.finish(&header)?;
        info!(
            "{}: {} records, {} attempts",
            self.command, totals.records, totals.attempts
        );
        Ok(Some((header, summaries)))
    }

    fn warn_off_larmor(&self, times: &[f64]) {
        let period = self.config.physics.larmor_period_us;
        let off: Vec<String> = times
            .iter()
            .filter(|t| !on_larmor_grid(**t, period))
            .map(|t| t.to_string())
            .collect();
        if !off.is_empty() && !self.flags.allow_off_larmor {
            warn!(
                "storage times {} us are off the Larmor grid (period {period} us); retrieval there is reduced by the \
                 Larmor modulation. Sample at integer periods or pass --allow-off-larmor",
                off.join(", ")
            );
        }
    }
}

fn pair_plan(
    left: CellIndex,
    right: CellIndex,
    t: f64,
    heralds: u64,
) -> Result<Vec<CampaignEntry>, CliError> {
    canonical_bases()
        .iter()
        .map(|(s, a)| {
            let basis =
                |b| SuperpositionBasis::from_qubit(b).map_err(|e| CliError::Runtime(e.to_string()));
            Ok(CampaignEntry {
                trial: TrialKind::Pair {
                    left,
                    right,
                    signal_basis: basis(s)?,
                    idler_basis: basis(a)?,
                },
                storage_time_us: t,
                budget: Budget::Heralds(heralds),
            })
        })
        .collect()
}

fn reconstruct(
    session: &Session,
    header: &LogHeader,
    summaries: &[CountSummary],
    [l, r]: [CellIndex; 2],
    t: f64,
    resamples: usize,
) -> Result<TomographyResult, CliError> {
    tomography_from_summaries(header, summaries, l, r, t, resamples, session.config.seed)
        .map_err(|e| CliError::Runtime(format!("pair {l}-{r} at {t} us: {e}")))
}

pub fn correlation_map(s: &Session) -> Result<(), CliError> {
    let c = &s.config.correlation_map;
    let geo = s.config.geometry;
    let plan: Vec<CampaignEntry> = geo
        .cells()
        .map(|cell| CampaignEntry {
            trial: TrialKind::SingleCell { cell },
            storage_time_us: c.storage_time_us,
            budget: Budget::Heralds(c.heralds_per_cell),
        })
        .collect();
    let Some((header, summaries)) = s.campaign(&plan)? else {
        return Ok(());
    };
    let map = correlation_map_from(&header, &summaries);
    let mut table = s.table(&["x", "y", "g_c", "sigma", "attempts", "c_s", "c_i", "c_si"]);
    let values: Vec<f64> = map.iter().filter_map(|(_, v)| v.map(|e| e.g_c)).collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let above = values.iter().filter(|g| **g > 2.0).count();
    table
        .meta("storage_time_us", num(c.storage_time_us))
        .meta("heralds_per_cell", c.heralds_per_cell)
        .meta("min_gc", num(min))
        .meta("max_gc", num(max))
        .meta("cells_above_2", format!("{above}/{}", geo.cell_count()));
    let mut cells = Vec::new();
    for (e, summary) in header.entries.iter().zip(&summaries) {
        let TrialKind::SingleCell { cell } = e.entry.trial else {
            continue;
        };
        let est = map.get(cell);
        let (g, sigma) = est.map_or((f64::NAN, f64::NAN), |e| (e.g_c, e.sigma));
        if g.is_finite() {
            cells.push((cell.x, cell.y, g));
        }
        table.row(vec![
            cell.x.to_string(),
            cell.y.to_string(),
            num(g),
            num(sigma),
            summary.trials.to_string(),
            summary.c_s.to_string(),
            summary.c_i.to_string(),
            summary.c_si.to_string(),
        ]);
    }
    table.write(&s.path(".csv"))?;
    s.write_svg(svg::heat_map(
        "cross-correlation g_c",
        geo.nx,
        geo.ny,
        &cells,
    ))?;
    println!(
        "correlation-map: g_c min {min:.3} max {max:.3}, {above}/{} cells above 2",
        geo.cell_count()
    );
    if above < geo.cell_count() {
        warn!(
            "{} cells at or below the classical bound g_c = 2",
            geo.cell_count() - above
        );
    }
    Ok(())
}

pub fn crosstalk(s: &Session, channel: Channel) -> Result<(), CliError> {
    let c = &s.config.crosstalk;
    let geo = s.config.geometry;
    let r = c.radius as isize;
    let mut plan = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (c.target.x as isize + dx, c.target.y as isize + dy);
            if x < 1 || y < 1 {
                continue;
            }
            let scanned = CellIndex::new(x as usize, y as usize);
            if geo.contains(scanned) {
                plan.push(CampaignEntry {
                    trial: TrialKind::Crosstalk {
                        target: c.target,
                        scanned,
                        channel,
                    },
                    storage_time_us: c.storage_time_us,
                    budget: Budget::Attempts(c.attempts_per_cell),
                });
            }
        }
    }
    let Some((header, summaries)) = s.campaign(&plan)? else {
        return Ok(());
    };
    let points = crosstalk_map_from(&header, &summaries, c.target, channel)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let worst = points
        .iter()
        .filter(|p| p.scanned != c.target)
        .map(|p| p.relative)
        .fold(0.0, f64::max);
    let mut table = s.table(&[
        "x",
        "y",
        "dx",
        "dy",
        "coincidences",
        "attempts",
        "relative",
        "sigma",
    ]);
    table
        .meta("channel", format!("{channel:?}").to_lowercase())
        .meta("target", c.target)
        .meta("attempts_per_cell", c.attempts_per_cell)
        .meta("max_neighbor_relative", num(worst));
    for p in &points {
        table.row(vec![
            p.scanned.x.to_string(),
            p.scanned.y.to_string(),
            (p.scanned.x as isize - c.target.x as isize).to_string(),
            (p.scanned.y as isize - c.target.y as isize).to_string(),
            p.coincidences.to_string(),
            p.attempts.to_string(),
            num(p.relative),
            num(p.sigma),
        ]);
    }
    table.write(&s.path(".csv"))?;
    let cells: Vec<(usize, usize, f64)> = points
        .iter()
        .map(|p| {
            (
                (p.scanned.x + c.radius + 1).saturating_sub(c.target.x),
                (p.scanned.y + c.radius + 1).saturating_sub(c.target.y),
                p.relative,
            )
        })
        .collect();
    let side = 2 * c.radius + 1;
    s.write_svg(svg::heat_map(
        &format!("{channel:?} beam crosstalk around {}", c.target),
        side,
        side,
        &cells,
    ))?;
    println!(
        "crosstalk ({channel:?} scan): largest neighbour coincidence {:.3e} of the target",
        worst
    );
    Ok(())
}

#[derive(Serialize)]
struct PairState<'a> {
    left: CellIndex,
    right: CellIndex,
    storage_time_us: f64,
    fidelity: f64,
    fidelity_sigma: f64,
    fidelity_fixed: f64,
    log_likelihood: f64,
    iterations: usize,
    rho: &'a DensityMatrix,
}

pub fn entangle(s: &Session) -> Result<(), CliError> {
    let c = &s.config.entangle;
    let t = c.storage_time_us;
    let mut plan = Vec::new();
    for [l, r] in &c.pairs {
        plan.extend(pair_plan(*l, *r, t, c.heralds_per_setting)?);
    }
    let Some((header, summaries)) = s.campaign(&plan)? else {
        return Ok(());
    };
    let mut table = s.table(&[
        "left_x",
        "left_y",
        "right_x",
        "right_y",
        "fidelity",
        "fidelity_sigma",
        "fidelity_fixed",
        "log_likelihood",
        "iterations",
        "entangled",
    ]);
    let results: Vec<TomographyResult> = c
        .pairs
        .iter()
        .map(|pair| reconstruct(s, &header, &summaries, *pair, t, c.bootstrap_resamples))
        .collect::<Result<_, _>>()?;
    let failing = results.iter().filter(|r| r.fidelity <= 0.5).count();
    table
        .meta("storage_time_us", num(t))
        .meta("heralds_per_setting", c.heralds_per_setting)
        .meta("pairs_at_or_below_half", failing);
    let mut states = Vec::new();
    let mut bars = Vec::new();
    for (i, ([l, r], res)) in c.pairs.iter().zip(&results).enumerate() {
        table.row(vec![
            l.x.to_string(),
            l.y.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            num(res.fidelity),
            num(res.fidelity_sigma),
            num(res.fidelity_fixed),
            num(res.log_likelihood),
            res.iterations.to_string(),
            (res.fidelity > 0.5).to_string(),
        ]);
        println!(
            "pair {l}-{r}: F = {:.4} +/- {:.4}",
            res.fidelity, res.fidelity_sigma
        );
        states.push(PairState {
            left: *l,
            right: *r,
            storage_time_us: t,
            fidelity: res.fidelity,
            fidelity_sigma: res.fidelity_sigma,
            fidelity_fixed: res.fidelity_fixed,
            log_likelihood: res.log_likelihood,
            iterations: res.iterations,
            rho: &res.rho,
        });
        bars.push(((i + 1) as f64, res.fidelity, res.fidelity_sigma));
    }
    table.write(&s.path(".csv"))?;
    write_json(s, ".states.json", &states)?;
    s.write_svg(svg::scatter(
        "entanglement fidelity per pair",
        "pair",
        "F_e",
        &bars,
        Some(&|_| 0.5),
    ))?;
    if failing > 0 {
        warn!("{failing} pairs show no entanglement (F <= 1/2)");
    }
    Ok(())
}

fn write_json(s: &Session, suffix: &str, value: &impl Serialize) -> Result<(), CliError> {
    let path = s.path(suffix);
    let mut text = serde_json::to_string_pretty(value).expect("results serialise");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| super::output::io_error(&path, e))
}

pub fn storage_scan(s: &Session) -> Result<(), CliError> {
    let c = &s.config.storage_scan;
    let times = s.config.storage_scan_times();
    s.warn_off_larmor(&times);
    match c.pair {
        Some(pair) => pair_storage_scan(s, pair, &times),
        None => cell_storage_scan(
            s,
            c.cell.unwrap_or_else(|| s.config.geometry.center_cell()),
            &times,
        ),
    }
}

fn cell_storage_scan(s: &Session, cell: CellIndex, times: &[f64]) -> Result<(), CliError> {
    let heralds = s.config.storage_scan.heralds_per_point;
    let plan: Vec<CampaignEntry> = times
        .iter()
        .map(|&t| CampaignEntry {
            trial: TrialKind::SingleCell { cell },
            storage_time_us: t,
            budget: Budget::Heralds(heralds),
        })
        .collect();
    let Some((_, summaries)) = s.campaign(&plan)? else {
        return Ok(());
    };
    let mut table = s.table(&["t_us", "g_c", "sigma", "attempts", "c_s", "c_i", "c_si"]);
    let mut points = Vec::new();
    for (t, summary) in times.iter().zip(&summaries) {
        let est = estimate_gc(summary).ok();
        let (g, sigma) = est.map_or((f64::NAN, f64::NAN), |e| (e.g_c, e.sigma));
        if est.is_some() && sigma > 0.0 {
            points.push(DecayPoint {
                t_us: *t,
                g_c: g,
                sigma,
            });
        }
        table.row(vec![
            num(*t),
            num(g),
            num(sigma),
            summary.trials.to_string(),
            summary.c_s.to_string(),
            summary.c_i.to_string(),
            summary.c_si.to_string(),
        ]);
    }
    table.meta("cell", cell).meta("heralds_per_point", heralds);
    let fit: Option<FitResult> = match fit_gaussian_decay(&points) {
        Ok(f) => Some(f),
        Err(e) => {
            warn!("no decay fit: {e}");
            None
        }
    };
    if let Some(f) = &fit {
        table
            .meta("fit_g0", num(f.g0))
            .meta("fit_g0_sigma", num(f.g0_sigma()))
            .meta("fit_tau_us", num(f.tau_us))
            .meta("fit_tau_sigma", num(f.tau_sigma()))
            .meta("fit_chi2_reduced", num(f.chi2_reduced));
        println!(
            "storage-scan {cell}: g0 = {:.3} +/- {:.3}, tau = {:.3} +/- {:.3} us",
            f.g0,
            f.g0_sigma(),
            f.tau_us,
            f.tau_sigma()
        );
    }
    table.write(&s.path(".csv"))?;
    write_json(s, ".fit.json", &fit)?;
    let scatter: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.t_us, p.g_c, p.sigma)).collect();
    let model = fit.map(|f| move |t: f64| crate::analysis::decay_model(t, f.g0, f.tau_us));
    s.write_svg(svg::scatter(
        &format!("g_c decay of cell {cell}"),
        "storage time (us)",
        "g_c",
        &scatter,
        model.as_ref().map(|m| m as &dyn Fn(f64) -> f64),
    ))
}

fn pair_storage_scan(s: &Session, pair: [CellIndex; 2], times: &[f64]) -> Result<(), CliError> {
    let c = &s.config.storage_scan;
    let mut plan = Vec::new();
    for &t in times {
        plan.extend(pair_plan(pair[0], pair[1], t, c.heralds_per_point)?);
    }
    let Some((header, summaries)) = s.campaign(&plan)? else {
        return Ok(());
    };
    let mut table = s.table(&[
        "t_us",
        "fidelity",
        "fidelity_sigma",
        "fidelity_fixed",
        "entangled",
    ]);
    table
        .meta("pair", format!("{}-{}", pair[0], pair[1]))
        .meta("heralds_per_setting", c.heralds_per_point);
    let mut points = Vec::new();
    for &t in times {
        let r = reconstruct(s, &header, &summaries, pair, t, c.bootstrap_resamples)?;
        table.row(vec![
            num(t),
            num(r.fidelity),
            num(r.fidelity_sigma),
            num(r.fidelity_fixed),
            (r.fidelity > 0.5).to_string(),
        ]);
        println!(
            "storage-scan {}-{} at {t} us: F = {:.4} +/- {:.4}",
            pair[0], pair[1], r.fidelity, r.fidelity_sigma
        );
        points.push((t, r.fidelity, r.fidelity_sigma));
    }
    table.write(&s.path(".csv"))?;
    s.write_svg(svg::scatter(
        &format!("fidelity decay of pair {}-{}", pair[0], pair[1]),
        "storage time (us)",
        "F_e",
        &points,
        Some(&|_| 0.5),
    ))
}

pub fn validate(s: &Session) -> Result<(), CliError> {
    let ctx = &s.resolved.context;
    println!("configuration valid (sha256 {})", s.config.sha256());
    println!("  seed {}", s.config.seed);
    println!(
        "  {}x{} cells",
        ctx.array.geometry.nx, ctx.array.geometry.ny
    );
    if let Some(cal) = &s.resolved.calibration {
        println!(
            "  calibrated eta_ret0 {:.6}, od_to_eta {:.6}",
            cal.eta_ret0, cal.od_to_eta
        );
        println!(
            "  cell dephasing times: centre {:.4} us, edge {:.4} us",
            cal.center_cell_tau_us, cal.edge_cell_tau_us
        );
    }
    println!("  pair visibility {:.6}", ctx.pair_model.visibility);
    Ok(())
}
