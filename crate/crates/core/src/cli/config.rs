//! Experiment configuration: a TOML file (or the JSON copy embedded in an
//! event log header) with every section optional except `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{
    calibrate, calibrate_pair_visibility, larmor_grid, ArrayGeometry, CalibrationTargets,
    CellIndex, CellPhysics, MemoryArray, OpticalDepthProfile,
};
use crate::sampler::PairModel;
use crate::sequencer::{SourceContext, TimingConfig};

use super::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Not part of the hashed configuration: moving the output does not change
    /// what is computed.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    /// Solve `eta_ret0`, `od_to_eta` and the dephasing times from
    /// `[calibration]`; otherwise `[physics]` and `[profile]` are used as given.
    #[serde(default = "yes")]
    pub calibrate: bool,
    /// Trials per plan entry allowed to hit `timing.max_attempts` unheralded.
    #[serde(default = "default_max_exhausted")]
    pub max_exhausted: u64,
    #[serde(default)]
    pub geometry: ArrayGeometry,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub physics: CellPhysics,
    #[serde(default)]
    pub calibration: CalibrationTargets,
    #[serde(default)]
    pub pair: PairConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub correlation_map: CorrelationMapConfig,
    #[serde(default)]
    pub crosstalk: CrosstalkConfig,
    #[serde(default)]
    pub entangle: EntangleConfig,
    #[serde(default)]
    pub storage_scan: StorageScanConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

fn default_max_exhausted() -> u64 {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub od_center: f64,
    /// Defaults to a quarter of the cloud diameter.
    pub sigma_um: Option<f64>,
    /// Used only with `calibrate = false`.
    pub od_to_eta: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            od_center: 20.0,
            sigma_um: None,
            od_to_eta: 70.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    /// Stored-state visibility. When absent it is solved so that
    /// `calibration_pair` shows `target_fidelity` at `calibration_time_us`.
    pub visibility: Option<f64>,
    pub target_fidelity: f64,
    pub calibration_time_us: f64,
    pub calibration_pair: [CellIndex; 2],
    pub pair_tau_us: Option<f64>,
    pub phase: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            visibility: None,
            target_fidelity: 0.90,
            calibration_time_us: 0.5,
            calibration_pair: [CellIndex::new(8, 8), CellIndex::new(9, 8)],
            pair_tau_us: None,
            phase: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationMapConfig {
    pub heralds_per_cell: u64,
    pub storage_time_us: f64,
}

impl Default for CorrelationMapConfig {
    fn default() -> Self {
        Self {
            heralds_per_cell: 10_000,
            storage_time_us: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrosstalkConfig {
    pub target: CellIndex,
    /// Half-width of the scanned square around the target.
    pub radius: usize,
    pub attempts_per_cell: u64,
    pub storage_time_us: f64,
}

impl Default for CrosstalkConfig {
    fn default() -> Self {
        Self {
            target: CellIndex::new(8, 8),
            radius: 1,
            attempts_per_cell: 1_000_000,
            storage_time_us: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntangleConfig {
    pub pairs: Vec<[CellIndex; 2]>,
    pub heralds_per_setting: u64,
    pub storage_time_us: f64,
    pub bootstrap_resamples: usize,
}

impl Default for EntangleConfig {
    fn default() -> Self {
        let c = CellIndex::new;
        Self {
            pairs: vec![
                [c(8, 8), c(9, 8)],
                [c(8, 9), c(8, 10)],
                [c(10, 10), c(11, 10)],
                [c(11, 12), c(12, 12)],
                [c(13, 13), c(13, 14)],
                [c(14, 15), c(15, 15)],
            ],
            heralds_per_setting: 10_000,
            storage_time_us: 0.5,
            bootstrap_resamples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorageScanConfig {
    /// Cell of a g_c scan; the array centre when absent.
    pub cell: Option<CellIndex>,
    /// Scans the fidelity of this pair instead of a cell's g_c.
    pub pair: Option<[CellIndex; 2]>,
    /// Defaults to the Larmor grid over seven periods.
    pub times_us: Option<Vec<f64>>,
    pub heralds_per_point: u64,
    pub bootstrap_resamples: usize,
}

impl Default for StorageScanConfig {
    fn default() -> Self {
        Self {
            cell: None,
            pair: None,
            times_us: None,
            heralds_per_point: 10_000,
            bootstrap_resamples: 200,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Canonical JSON of the effective configuration.
    pub fn canonical_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serialises")
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn storage_scan_times(&self) -> Vec<f64> {
        self.storage_scan
            .times_us
            .clone()
            .unwrap_or_else(|| larmor_grid(self.physics.larmor_period_us, 7))
    }

    /// Checks every field that has a constraint and reports all violations
    /// with their paths.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, path: &str, msg: String| {
            if !ok {
                errors.push(format!("{path}: {msg}"));
            }
        };
        let geo = &self.geometry;
        if let Err(e) = geo.validate() {
            check(false, "geometry", e.to_string());
        }
        if let Err(e) = self.physics.validate() {
            check(false, "physics", e.to_string());
        }
        if let Err(e) = self.timing.validate() {
            check(false, "timing", e.to_string());
        }
        let p = &self.profile;
        check(
            p.od_center > 0.0 && p.od_center.is_finite(),
            "profile.od_center",
            format!("must be positive, got {}", p.od_center),
        );
        if let Some(s) = p.sigma_um {
            check(
                s > 0.0 && s.is_finite(),
                "profile.sigma_um",
                format!("must be positive, got {s}"),
            );
        }
        check(
            p.od_to_eta > 0.0 && p.od_to_eta.is_finite(),
            "profile.od_to_eta",
            format!("must be positive, got {}", p.od_to_eta),
        );

        let outside = |c: CellIndex, path: &str| {
            (!geo.contains(c))
                .then(|| format!("{path}: cell {c} outside the {}x{} array", geo.nx, geo.ny))
        };
        errors.extend(outside(self.calibration.center, "calibration.center"));
        errors.extend(outside(self.calibration.edge, "calibration.edge"));
        errors.extend(outside(self.crosstalk.target, "crosstalk.target"));
        errors.extend(
            self.storage_scan
                .cell
                .and_then(|c| outside(c, "storage_scan.cell")),
        );
        let pairs = self
            .entangle
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("entangle.pairs[{i}]"), *p))
            .chain(
                self.storage_scan
                    .pair
                    .map(|p| ("storage_scan.pair".to_string(), p)),
            )
            .chain(std::iter::once((
                "pair.calibration_pair".to_string(),
                self.pair.calibration_pair,
            )));
        for (path, [a, b]) in pairs {
            errors.extend(outside(a, &path));
            errors.extend(outside(b, &path));
            if a == b {
                errors.push(format!(
                    "{path}: a pair needs two distinct cells, got {a} twice"
                ));
            } else if !a.is_axis_neighbor(&b) {
                errors.push(format!("{path}: cells {a} and {b} are not axis-adjacent"));
            }
        }

        let mut check = |ok: bool, path: &str, msg: String| {
            if !ok {
                errors.push(format!("{path}: {msg}"));
            }
        };
        let time = |t: f64| t >= 0.0 && t.is_finite();
        check(
            self.correlation_map.heralds_per_cell > 0,
            "correlation_map.heralds_per_cell",
            "must be at least 1".into(),
        );
        check(
            time(self.correlation_map.storage_time_us),
            "correlation_map.storage_time_us",
            "must be non-negative".into(),
        );
        check(
            self.crosstalk.attempts_per_cell > 0,
            "crosstalk.attempts_per_cell",
            "must be at least 1".into(),
        );
        check(
            time(self.crosstalk.storage_time_us),
            "crosstalk.storage_time_us",
            "must be non-negative".into(),
        );
        check(
            !self.entangle.pairs.is_empty(),
            "entangle.pairs",
            "must list at least one pair".into(),
        );
        check(
            self.entangle.heralds_per_setting > 0,
            "entangle.heralds_per_setting",
            "must be at least 1".into(),
        );
        check(
            time(self.entangle.storage_time_us),
            "entangle.storage_time_us",
            "must be non-negative".into(),
        );
        check(
            self.entangle.bootstrap_resamples >= crate::tomography::MIN_RESAMPLES,
            "entangle.bootstrap_resamples",
            format!("must be at least {}", crate::tomography::MIN_RESAMPLES),
        );
        check(
            self.storage_scan.bootstrap_resamples >= crate::tomography::MIN_RESAMPLES,
            "storage_scan.bootstrap_resamples",
            format!("must be at least {}", crate::tomography::MIN_RESAMPLES),
        );
        check(
            self.storage_scan.heralds_per_point > 0,
            "storage_scan.heralds_per_point",
            "must be at least 1".into(),
        );
        let times = self.storage_scan_times();
        check(
            !times.is_empty(),
            "storage_scan.times_us",
            "must list at least one time".into(),
        );
        for (i, t) in times.iter().enumerate() {
            check(
                time(*t),
                &format!("storage_scan.times_us[{i}]"),
                format!("{t} must be non-negative"),
            );
        }
        let pc = &self.pair;
        if let Some(v) = pc.visibility {
            check(
                (0.0..=1.0).contains(&v),
                "pair.visibility",
                format!("{v} is not in [0, 1]"),
            );
        }
        check(
            pc.target_fidelity > 0.25 && pc.target_fidelity <= 1.0,
            "pair.target_fidelity",
            format!("{} is not in (0.25, 1]", pc.target_fidelity),
        );
        check(
            time(pc.calibration_time_us),
            "pair.calibration_time_us",
            "must be non-negative".into(),
        );
        if let Some(tau) = pc.pair_tau_us {
            check(
                tau > 0.0,
                "pair.pair_tau_us",
                format!("must be positive, got {tau}"),
            );
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(errors.join("\n")))
        }
    }
}

/// Physics resolved from a configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub context: SourceContext,
    pub calibration: Option<crate::model::Calibration>,
    pub warnings: Vec<String>,
}

pub fn resolve(config: &ExperimentConfig) -> Result<Resolved, CliError> {
    config.validate()?;
    let geo = config.geometry;
    let warnings = geo
        .validate()
        .map_err(|e| CliError::Validation(format!("geometry: {e}")))?;
    let profile = OpticalDepthProfile {
        od_center: config.profile.od_center,
        sigma_um: config
            .profile
            .sigma_um
            .unwrap_or_else(|| geo.default_od_sigma_um()),
        od_to_eta: config.profile.od_to_eta,
    };
    let (array, calibration) = if config.calibrate {
        let cal = calibrate(geo, profile, config.physics, &config.calibration)
            .map_err(|e| CliError::Validation(format!("calibration: {e}")))?;
        (cal.array.clone(), Some(cal))
    } else {
        let array = MemoryArray::uniform(geo, profile, config.physics)
            .map_err(|e| CliError::Validation(format!("physics: {e}")))?;
        (array, None)
    };
    let pc = &config.pair;
    let visibility = match pc.visibility {
        Some(v) => v,
        None => {
            let [a, b] = pc.calibration_pair;
            calibrate_pair_visibility(
                &array,
                a,
                b,
                pc.target_fidelity,
                pc.calibration_time_us,
                pc.pair_tau_us,
            )
            .map_err(|e| CliError::Validation(format!("pair: {e}")))?
        }
    };
    let pair_model = PairModel {
        visibility,
        pair_tau_us: pc.pair_tau_us,
        phase: pc.phase,
    };
    pair_model
        .validate()
        .map_err(|e| CliError::Validation(format!("pair: {e}")))?;
    Ok(Resolved {
        context: SourceContext { array, pair_model },
        calibration,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c: ExperimentConfig = toml::from_str("seed = 7").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.entangle.pairs.len(), 6);
        assert_eq!(c.storage_scan_times().len(), 8);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_missing_seed_fail() {
        assert!(toml::from_str::<ExperimentConfig>("").is_err());
        assert!(toml::from_str::<ExperimentConfig>("seed = 1\nsed = 2").is_err());
        assert!(toml::from_str::<ExperimentConfig>("seed = 1\n[physics]\ntau = 3.0").is_err());
    }

    #[test]
    fn validation_reports_paths() {
        let c: ExperimentConfig = toml::from_str(
            "seed = 1\n[correlation_map]\nheralds_per_cell = 0\n[entangle]\npairs = [[[3, 3], [3, 3]]]",
        )
        .unwrap();
        let Err(CliError::Validation(msg)) = c.validate() else {
            panic!()
        };
        assert!(msg.contains("correlation_map.heralds_per_cell"), "{msg}");
        assert!(msg.contains("entangle.pairs[0]"), "{msg}");
    }

    #[test]
    fn hash_ignores_output_dir_but_not_seed() {
        let a: ExperimentConfig = toml::from_str("seed = 1\noutput_dir = \"a\"").unwrap();
        let b: ExperimentConfig = toml::from_str("seed = 1\noutput_dir = \"b\"").unwrap();
        let c: ExperimentConfig = toml::from_str("seed = 2").unwrap();
        assert_eq!(a.sha256(), b.sha256());
        assert_ne!(a.sha256(), c.sha256());
        let back: ExperimentConfig = serde_json::from_value(a.canonical_json()).unwrap();
        assert_eq!(back.sha256(), a.sha256());
    }
}
