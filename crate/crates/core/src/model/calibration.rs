//! Anchors the per-cell model to measured correlation and decay values.
//!
//! Two numbers are solved for: the zero-delay retrieval scale `eta_ret0`
//! (shared by every cell) fixes the centre cell's correlation, and the OD
//! saturation constant `od_to_eta` fixes how much of it is lost at the edge
//! cell. The dephasing time of each anchor cell is then chosen so that a
//! Gaussian fit to its noiseless storage scan returns the requested decay
//! constant; other cells interpolate linearly in optical depth.

use serde::Serialize;
use thiserror::Error;

use super::{
    cell_position, optical_depth, ArrayGeometry, CellIndex, CellPhysics, MemoryArray, MemoryCell,
    ModelError, OpticalDepthProfile,
};
use crate::analysis::{fit_gaussian_decay, DecayPoint};
use crate::quantum::QubitBasisVector;
use crate::sampler::{analytic_rates, PairModel, PairSource, SamplerError};

const MAX_BISECTIONS: usize = 200;
const RESIDUAL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("cell {cell}: g_c {target} is at or above the source ceiling 1 + 1/p = {ceiling}")]
    ExceedsSourceCeiling {
        cell: CellIndex,
        target: f64,
        ceiling: f64,
    },
    #[error("cell {cell}: g_c {target} needs retrieval above unity (reaches {reachable} at eta_ret0 = 1)")]
    RetrievalBound {
        cell: CellIndex,
        target: f64,
        reachable: f64,
    },
    #[error("cell {cell}: g_c {target} is below the accidental floor {floor}")]
    BelowAccidentalFloor {
        cell: CellIndex,
        target: f64,
        floor: f64,
    },
    #[error(
        "edge g_c {target} is out of reach of the optical-depth profile (closest {reachable})"
    )]
    ProfileContrast { target: f64, reachable: f64 },
    #[error("cell {cell}: no dephasing time gives a fitted decay constant of {target} us")]
    DecayBound { cell: CellIndex, target: f64 },
    #[error("pair fidelity {target} needs visibility {required} > 1")]
    VisibilityBound { target: f64, required: f64 },
    #[error("cell {cell}: residual {relative:e} exceeds tolerance")]
    Residual { cell: CellIndex, relative: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationTargets {
    pub center: CellIndex,
    pub edge: CellIndex,
    pub center_gc: f64,
    pub edge_gc: f64,
    pub center_tau_us: f64,
    pub edge_tau_us: f64,
    /// Larmor periods covered by the anchoring storage scan.
    pub scan_periods: usize,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            center: CellIndex::new(8, 8),
            edge: CellIndex::new(15, 8),
            center_gc: 26.3,
            edge_gc: 17.7,
            center_tau_us: 27.5,
            edge_tau_us: 30.1,
            scan_periods: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub array: MemoryArray,
    pub eta_ret0: f64,
    pub od_to_eta: f64,
    /// Cell dephasing times at the centre and edge anchors.
    pub center_cell_tau_us: f64,
    pub edge_cell_tau_us: f64,
    /// Relative g_c mismatch at the centre and edge anchors.
    pub residuals: [f64; 2],
}

pub fn zero_delay_gc(cell: &MemoryCell) -> f64 {
    analytic_rates(cell, 0.0).g_c
}

fn probe(index: CellIndex, od: f64, od_to_eta: f64, physics: CellPhysics) -> MemoryCell {
    MemoryCell {
        index,
        od,
        od_to_eta,
        physics,
    }
}

/// Bisection for an increasing-or-decreasing `f` with a sign change on `[lo, hi]`.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The `eta_ret0` giving zero-delay `g_c = target` for a cell at `od`.
pub fn solve_retrieval_scale(
    template: &CellPhysics,
    index: CellIndex,
    od: f64,
    od_to_eta: f64,
    target: f64,
) -> Result<f64, CalibrationError> {
    let g = |eta: f64| {
        zero_delay_gc(&probe(
            index,
            od,
            od_to_eta,
            CellPhysics {
                eta_ret0: eta,
                ..*template
            },
        ))
    };
    if (target - 1.0).abs() < 1e-12 {
        return Ok(0.0);
    }
    let ceiling = 1.0 + 1.0 / template.p;
    if target >= ceiling {
        return Err(CalibrationError::ExceedsSourceCeiling {
            cell: index,
            target,
            ceiling,
        });
    }
    let reachable = g(1.0);
    if reachable < target {
        return Err(CalibrationError::RetrievalBound {
            cell: index,
            target,
            reachable,
        });
    }
    let floor = g(0.0);
    if floor > target || target < 1.0 {
        return Err(CalibrationError::BelowAccidentalFloor {
            cell: index,
            target,
            floor: floor.max(1.0),
        });
    }
    Ok(bisect(0.0, 1.0, |eta| g(eta) - target))
}

fn anchor_od(
    geo: &ArrayGeometry,
    profile: &OpticalDepthProfile,
    idx: CellIndex,
) -> Result<f64, ModelError> {
    Ok(optical_depth(cell_position(idx, geo)?, profile))
}

/// Decay constant of the unweighted Gaussian fit to the noiseless scan of
/// `cell` on the Larmor grid.
fn fitted_tau(cell: &MemoryCell, periods: usize) -> Option<f64> {
    let points: Vec<DecayPoint> = (0..=periods)
        .map(|k| {
            let t = k as f64 * cell.physics.larmor_period_us;
            DecayPoint {
                t_us: t,
                g_c: analytic_rates(cell, t).g_c,
                sigma: 1.0,
            }
        })
        .collect();
    fit_gaussian_decay(&points).ok().map(|f| f.tau_us)
}

fn solve_cell_tau(cell: &MemoryCell, target: f64, periods: usize) -> Result<f64, CalibrationError> {
    let err = CalibrationError::DecayBound {
        cell: cell.index,
        target,
    };
    let at = |tau: f64| {
        let c = MemoryCell {
            physics: CellPhysics {
                tau_us: tau,
                ..cell.physics
            },
            ..*cell
        };
        fitted_tau(&c, periods).map(|t| t - target)
    };
    let (lo, hi) = (0.5 * target, 2.0 * target);
    match (at(lo), at(hi)) {
        (Some(a), Some(b)) if a < 0.0 && b > 0.0 => {}
        _ => return Err(err),
    }
    Ok(bisect(lo, hi, |tau| at(tau).unwrap_or(f64::NAN)))
}

/// Builds the calibrated array. `profile.od_to_eta` is ignored and replaced
/// by the solved value.
pub fn calibrate(
    geometry: ArrayGeometry,
    profile: OpticalDepthProfile,
    template: CellPhysics,
    targets: &CalibrationTargets,
) -> Result<Calibration, CalibrationError> {
    geometry.validate()?;
    geometry.check(targets.center)?;
    geometry.check(targets.edge)?;
    template.validate()?;
    let probe_profile = OpticalDepthProfile {
        od_to_eta: 1.0,
        ..profile
    };
    probe_profile.validate()?;
    let od_c = anchor_od(&geometry, &probe_profile, targets.center)?;
    let od_e = anchor_od(&geometry, &probe_profile, targets.edge)?;
    if od_e >= od_c {
        return Err(CalibrationError::ProfileContrast {
            target: targets.edge_gc,
            reachable: targets.center_gc,
        });
    }

    let center_eta =
        |k: f64| solve_retrieval_scale(&template, targets.center, od_c, k, targets.center_gc);
    let edge_gc = |k: f64| -> Result<f64, CalibrationError> {
        let eta = center_eta(k)?;
        Ok(zero_delay_gc(&probe(
            targets.edge,
            od_e,
            k,
            CellPhysics {
                eta_ret0: eta,
                ..template
            },
        )))
    };

    // Larger od_to_eta means less saturation, so more centre-to-edge contrast
    // but a larger eta_ret0; the feasible range ends where eta_ret0 hits 1.
    let k_lo = 1e-3 * od_c;
    center_eta(k_lo)?;
    let mut k_hi = 1e3 * od_c;
    if center_eta(k_hi).is_err() {
        let feasible = bisect(k_lo.ln(), k_hi.ln(), |lk| {
            if center_eta(lk.exp()).is_ok() {
                1.0
            } else {
                -1.0
            }
        });
        k_hi = feasible.exp();
        while center_eta(k_hi).is_err() {
            k_hi *= 1.0 - 1e-12;
        }
    }
    let most_contrast = edge_gc(k_hi)?;
    if most_contrast > targets.edge_gc {
        return Err(CalibrationError::ProfileContrast {
            target: targets.edge_gc,
            reachable: most_contrast,
        });
    }
    let least_contrast = edge_gc(k_lo)?;
    if least_contrast < targets.edge_gc {
        return Err(CalibrationError::ProfileContrast {
            target: targets.edge_gc,
            reachable: least_contrast,
        });
    }
    let od_to_eta = bisect(k_lo.ln(), k_hi.ln(), |lk| {
        edge_gc(lk.exp())
            .map(|g| g - targets.edge_gc)
            .unwrap_or(-1.0)
    })
    .exp();
    let eta_ret0 = center_eta(od_to_eta)?;

    let with = |physics: CellPhysics, idx, od| probe(idx, od, od_to_eta, physics);
    let base = CellPhysics {
        eta_ret0,
        ..template
    };
    let tau_c = solve_cell_tau(
        &with(base, targets.center, od_c),
        targets.center_tau_us,
        targets.scan_periods,
    )?;
    let tau_e = solve_cell_tau(
        &with(base, targets.edge, od_e),
        targets.edge_tau_us,
        targets.scan_periods,
    )?;

    let profile = OpticalDepthProfile {
        od_to_eta,
        ..profile
    };
    let array = MemoryArray::from_fn(geometry, profile, |_, od| {
        let s = (od_c - od) / (od_c - od_e);
        CellPhysics {
            tau_us: (tau_c + s * (tau_e - tau_c)).max(f64::MIN_POSITIVE),
            ..base
        }
    })?;

    let mut residuals = [0.0; 2];
    for (slot, (idx, target)) in [
        (targets.center, targets.center_gc),
        (targets.edge, targets.edge_gc),
    ]
    .iter()
    .enumerate()
    {
        let rel = (zero_delay_gc(array.cell(*idx)?) - target).abs() / target;
        if rel > RESIDUAL_LIMIT {
            return Err(CalibrationError::Residual {
                cell: *idx,
                relative: rel,
            });
        }
        residuals[slot] = rel;
    }
    Ok(Calibration {
        array,
        eta_ret0,
        od_to_eta,
        center_cell_tau_us: tau_c,
        edge_cell_tau_us: tau_e,
        residuals,
    })
}

/// Stored-state visibility for which the measured (noise-diluted) state of
/// the pair has entanglement fidelity `target_fidelity` at `t_us`.
///
/// Idler noise adds the signal marginal times the identity to the coincidence
/// data, so a Werner state of visibility `V` is observed with visibility
/// `V e / (e + 2n)`, where `e` is the idler click probability due to the
/// retrieved excitation and `n` the noise probability.
pub fn calibrate_pair_visibility(
    array: &MemoryArray,
    left: CellIndex,
    right: CellIndex,
    target_fidelity: f64,
    t_us: f64,
    pair_tau_us: Option<f64>,
) -> Result<f64, CalibrationError> {
    let unit = PairModel {
        visibility: 1.0,
        pair_tau_us,
        phase: 0.0,
    };
    let src = PairSource::new(
        array,
        left,
        right,
        QubitBasisVector::L,
        QubitBasisVector::L,
        &unit,
        t_us,
    )?;
    let n = src.idler_noise;
    let e = src.efficiency * (1.0 - n);
    let observed = (4.0 * target_fidelity - 1.0) / 3.0;
    // Decay of the stored visibility itself, when modelled.
    let decay =
        crate::sampler::pair_visibility(&unit, larmor_mean(array, left, right, t_us)?, t_us);
    let required = observed * (e + 2.0 * n) / e / decay;
    if !(0.0..=1.0).contains(&required) {
        return Err(CalibrationError::VisibilityBound {
            target: target_fidelity,
            required,
        });
    }
    Ok(required)
}

fn larmor_mean(
    array: &MemoryArray,
    a: CellIndex,
    b: CellIndex,
    t_us: f64,
) -> Result<f64, ModelError> {
    Ok(0.5
        * (array.cell(a)?.physics.larmor_factor(t_us) + array.cell(b)?.physics.larmor_factor(t_us)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_calibration() -> Calibration {
        let geo = ArrayGeometry::default();
        calibrate(
            geo,
            OpticalDepthProfile::for_geometry(&geo, 20.0, 1.0),
            CellPhysics::default(),
            &CalibrationTargets::default(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_reproduces_targets() {
        let cal = default_calibration();
        let t = CalibrationTargets::default();
        let gc = zero_delay_gc(cal.array.cell(t.center).unwrap());
        let ge = zero_delay_gc(cal.array.cell(t.edge).unwrap());
        assert!((gc / 26.3 - 1.0).abs() < 1e-6, "{gc}");
        assert!((ge / 17.7 - 1.0).abs() < 1e-6, "{ge}");
        assert!(cal.residuals.iter().all(|r| *r < 1e-6));
        assert!(cal.eta_ret0 > 0.0 && cal.eta_ret0 <= 1.0);
    }

    #[test]
    fn anchor_scans_fit_requested_decay() {
        let cal = default_calibration();
        let t = CalibrationTargets::default();
        let c = fitted_tau(cal.array.cell(t.center).unwrap(), 7).unwrap();
        let e = fitted_tau(cal.array.cell(t.edge).unwrap(), 7).unwrap();
        assert!((c - 27.5).abs() < 1e-6, "{c}");
        assert!((e - 30.1).abs() < 1e-6, "{e}");
    }

    #[test]
    fn every_cell_is_nonclassical_and_radially_ordered() {
        let cal = default_calibration();
        let gc = |x, y| zero_delay_gc(cal.array.cell(CellIndex::new(x, y)).unwrap());
        for cell in cal.array.cells() {
            assert!(zero_delay_gc(cell) > 10.0, "{}", cell.index);
        }
        assert!(gc(8, 8) > gc(15, 8) && gc(15, 8) > gc(1, 1));
    }

    #[test]
    fn infeasible_targets_name_the_constraint() {
        let geo = ArrayGeometry::default();
        let profile = OpticalDepthProfile::for_geometry(&geo, 20.0, 1.0);
        let strong = CellPhysics {
            p: 0.04,
            ..CellPhysics::default()
        };
        let err = calibrate(geo, profile, strong, &CalibrationTargets::default()).unwrap_err();
        assert!(
            matches!(err, CalibrationError::ExceedsSourceCeiling { .. }),
            "{err}"
        );

        let noisy = CellPhysics {
            read_noise: 0.05,
            ..CellPhysics::default()
        };
        let err = calibrate(geo, profile, noisy, &CalibrationTargets::default()).unwrap_err();
        assert!(
            matches!(err, CalibrationError::RetrievalBound { .. }),
            "{err}"
        );

        let flat = CalibrationTargets {
            edge_gc: 26.2,
            ..CalibrationTargets::default()
        };
        assert!(calibrate(geo, profile, CellPhysics::default(), &flat).is_ok());
        let steep = CalibrationTargets {
            edge_gc: 2.0,
            ..CalibrationTargets::default()
        };
        let err = calibrate(geo, profile, CellPhysics::default(), &steep).unwrap_err();
        assert!(
            matches!(err, CalibrationError::ProfileContrast { .. }),
            "{err}"
        );
    }

    #[test]
    fn unit_target_means_no_retrieval() {
        let eta = solve_retrieval_scale(
            &CellPhysics::default(),
            CellIndex::new(8, 8),
            20.0,
            30.0,
            1.0,
        )
        .unwrap();
        assert_eq!(eta, 0.0);
    }

    #[test]
    fn pair_visibility_hits_fidelity() {
        let cal = default_calibration();
        let (l, r) = (CellIndex::new(8, 8), CellIndex::new(9, 8));
        let v = calibrate_pair_visibility(&cal.array, l, r, 0.9, 0.5, None).unwrap();
        assert!(v > 0.8667 && v < 1.0, "{v}");
        assert!(matches!(
            calibrate_pair_visibility(&cal.array, l, r, 0.999, 0.5, None),
            Err(CalibrationError::VisibilityBound { .. })
        ));
    }
}
