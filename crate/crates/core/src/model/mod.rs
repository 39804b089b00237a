//! Array geometry, per-cell physics and the storage-time dependent retrieval
//! efficiency.

mod calibration;

pub use calibration::{
    calibrate, calibrate_pair_visibility, solve_retrieval_scale, zero_delay_gc, Calibration,
    CalibrationError, CalibrationTargets,
};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("cell ({x}, {y}) outside the {nx}x{ny} array")]
    OutOfBounds {
        x: usize,
        y: usize,
        nx: usize,
        ny: usize,
    },
    #[error("{field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

fn check_probability(field: &'static str, value: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(invalid(field, format!("{value} is not in [0, 1]")))
    }
}

/// Layout constants of the cell grid. Lengths in µm unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayGeometry {
    pub nx: usize,
    pub ny: usize,
    pub spacing_um: f64,
    /// Gaussian width of the write and read beams at the ensemble.
    pub write_waist_um: f64,
    /// Gaussian width of the signal and idler collection modes.
    pub signal_waist_um: f64,
    pub cloud_diameter_mm: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            nx: 15,
            ny: 15,
            spacing_um: 126.0,
            write_waist_um: 60.0,
            signal_waist_um: 35.0,
            cloud_diameter_mm: 3.5,
        }
    }
}

impl ArrayGeometry {
    /// Checks the hard invariants and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>, ModelError> {
        if self.nx == 0 || self.ny == 0 {
            return Err(invalid(
                "nx/ny",
                "grid must have at least one cell per axis",
            ));
        }
        for (field, v) in [
            ("spacing_um", self.spacing_um),
            ("write_waist_um", self.write_waist_um),
            ("signal_waist_um", self.signal_waist_um),
            ("cloud_diameter_mm", self.cloud_diameter_mm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        let mut warnings = Vec::new();
        let extent = (self.nx.max(self.ny) - 1) as f64 * self.spacing_um;
        if extent > self.cloud_diameter_mm * 1000.0 {
            warnings.push(format!(
                "grid extent {extent} um exceeds the cloud diameter {} mm",
                self.cloud_diameter_mm
            ));
        }
        Ok(warnings)
    }

    pub fn contains(&self, idx: CellIndex) -> bool {
        (1..=self.nx).contains(&idx.x) && (1..=self.ny).contains(&idx.y)
    }

    pub fn check(&self, idx: CellIndex) -> Result<(), ModelError> {
        if self.contains(idx) {
            Ok(())
        } else {
            Err(ModelError::OutOfBounds {
                x: idx.x,
                y: idx.y,
                nx: self.nx,
                ny: self.ny,
            })
        }
    }

    /// All cells, row-major (x fastest).
    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (1..=self.ny).flat_map(move |y| (1..=self.nx).map(move |x| CellIndex::new(x, y)))
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub(crate) fn linear(&self, idx: CellIndex) -> usize {
        (idx.y - 1) * self.nx + (idx.x - 1)
    }

    /// Centre cell of an odd grid (rounded up for even sizes).
    pub fn center_cell(&self) -> CellIndex {
        CellIndex::new(self.nx.div_ceil(2), self.ny.div_ceil(2))
    }

    pub fn is_edge(&self, idx: CellIndex) -> bool {
        idx.x == 1 || idx.y == 1 || idx.x == self.nx || idx.y == self.ny
    }

    /// Default Gaussian radius of the optical-depth profile: a quarter of the
    /// cloud diameter.
    pub fn default_od_sigma_um(&self) -> f64 {
        self.cloud_diameter_mm * 1000.0 / 4.0
    }
}

/// One-based cell coordinates `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct CellIndex {
    pub x: usize,
    pub y: usize,
}

impl CellIndex {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Cells that differ by exactly one step along exactly one axis.
    pub fn is_axis_neighbor(&self, other: &CellIndex) -> bool {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y) == 1
    }
}

impl From<[usize; 2]> for CellIndex {
    fn from(v: [usize; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<CellIndex> for [usize; 2] {
    fn from(c: CellIndex) -> Self {
        [c.x, c.y]
    }
}

impl std::fmt::Display for CellIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Position of a cell centre relative to the grid midpoint, in µm.
pub fn cell_position(idx: CellIndex, geo: &ArrayGeometry) -> Result<(f64, f64), ModelError> {
    geo.check(idx)?;
    let x = (idx.x as f64 - (geo.nx as f64 + 1.0) / 2.0) * geo.spacing_um;
    let y = (idx.y as f64 - (geo.ny as f64 + 1.0) / 2.0) * geo.spacing_um;
    Ok((x, y))
}

/// Stochastic parameters of one memory cell.
///
/// Probabilities are per write or read gate. `read_noise` is the idler-mode
/// noise generated by the read beam itself; unlike the detector dark counts it
/// follows the read beam, so it vanishes when the read beam points elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellPhysics {
    pub p: f64,
    pub eta_s: f64,
    pub eta_i: f64,
    pub eta_ret0: f64,
    pub dark_s: f64,
    pub dark_i: f64,
    pub read_noise: f64,
    /// Gaussian dephasing time, µs.
    pub tau_us: f64,
    pub larmor_period_us: f64,
    pub larmor_visibility: f64,
}

impl Default for CellPhysics {
    fn default() -> Self {
        Self {
            p: 0.004,
            eta_s: 0.5,
            eta_i: 0.5,
            eta_ret0: 0.7,
            dark_s: 1e-5,
            dark_i: 1e-5,
            read_noise: 3e-3,
            tau_us: 27.5,
            larmor_period_us: 5.8,
            larmor_visibility: 0.2,
        }
    }
}

impl CellPhysics {
    pub fn validate(&self) -> Result<(), ModelError> {
        check_probability("p", self.p)?;
        if self.p >= 0.5 {
            return Err(invalid("p", format!("{} must be below 0.5", self.p)));
        }
        check_probability("eta_s", self.eta_s)?;
        check_probability("eta_i", self.eta_i)?;
        check_probability("eta_ret0", self.eta_ret0)?;
        check_probability("dark_s", self.dark_s)?;
        check_probability("dark_i", self.dark_i)?;
        check_probability("read_noise", self.read_noise)?;
        check_probability("larmor_visibility", self.larmor_visibility)?;
        if !(self.tau_us > 0.0) {
            return Err(invalid(
                "tau_us",
                format!("must be positive, got {}", self.tau_us),
            ));
        }
        if !(self.larmor_period_us > 0.0) {
            return Err(invalid(
                "larmor_period_us",
                format!("must be positive, got {}", self.larmor_period_us),
            ));
        }
        Ok(())
    }

    /// Larmor modulation `(1 - v) + v cos²(π t / T_L)`; equals one at integer
    /// periods.
    pub fn larmor_factor(&self, t_us: f64) -> f64 {
        let c = (PI * t_us / self.larmor_period_us).cos();
        (1.0 - self.larmor_visibility) + self.larmor_visibility * c * c
    }

    /// Combined idler noise probability per read gate at full read intensity.
    pub fn idler_noise(&self) -> f64 {
        1.0 - (1.0 - self.dark_i) * (1.0 - self.read_noise)
    }
}

/// Gaussian optical-depth profile across the cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalDepthProfile {
    pub od_center: f64,
    pub sigma_um: f64,
    /// Saturation constant of the OD → retrieval map `1 - exp(-od / od_to_eta)`.
    pub od_to_eta: f64,
}

impl OpticalDepthProfile {
    pub fn for_geometry(geo: &ArrayGeometry, od_center: f64, od_to_eta: f64) -> Self {
        Self {
            od_center,
            sigma_um: geo.default_od_sigma_um(),
            od_to_eta,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.od_center > 0.0 && self.od_center.is_finite()) {
            return Err(invalid(
                "od_center",
                format!("must be positive, got {}", self.od_center),
            ));
        }
        if !(self.sigma_um > 0.0) {
            return Err(invalid(
                "sigma_um",
                format!("must be positive, got {}", self.sigma_um),
            ));
        }
        if !(self.od_to_eta > 0.0) {
            return Err(invalid(
                "od_to_eta",
                format!("must be positive, got {}", self.od_to_eta),
            ));
        }
        Ok(())
    }

    /// Fraction of the zero-delay retrieval efficiency reached at `od`.
    pub fn saturation(&self, od: f64) -> f64 {
        1.0 - (-od / self.od_to_eta).exp()
    }
}

pub fn optical_depth(pos: (f64, f64), profile: &OpticalDepthProfile) -> f64 {
    let r2 = pos.0 * pos.0 + pos.1 * pos.1;
    profile.od_center * (-r2 / (2.0 * profile.sigma_um * profile.sigma_um)).exp()
}

/// Retrieval efficiency after storing for `t_us`.
pub fn retrieval_efficiency(cell: &CellPhysics, od: f64, od_to_eta: f64, t_us: f64) -> f64 {
    let saturation = 1.0 - (-od / od_to_eta).exp();
    let dephasing = (-(t_us * t_us) / (cell.tau_us * cell.tau_us)).exp();
    (cell.eta_ret0 * saturation * dephasing * cell.larmor_factor(t_us)).clamp(0.0, 1.0)
}

/// Integer multiples of the Larmor period, `0, T_L, ..., periods·T_L`.
pub fn larmor_grid(larmor_period_us: f64, periods: usize) -> Vec<f64> {
    (0..=periods).map(|k| k as f64 * larmor_period_us).collect()
}

/// Whether `t_us` lies on an integer Larmor period (to 1 ns).
pub fn on_larmor_grid(t_us: f64, larmor_period_us: f64) -> bool {
    let k = (t_us / larmor_period_us).round();
    (t_us - k * larmor_period_us).abs() < 1e-3
}

/// A cell of the array with its location-dependent optical depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryCell {
    pub index: CellIndex,
    pub od: f64,
    pub od_to_eta: f64,
    pub physics: CellPhysics,
}

impl MemoryCell {
    pub fn retrieval(&self, t_us: f64) -> f64 {
        retrieval_efficiency(&self.physics, self.od, self.od_to_eta, t_us)
    }
}

/// Per-cell physics for the whole array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryArray {
    pub geometry: ArrayGeometry,
    pub profile: OpticalDepthProfile,
    cells: Vec<MemoryCell>,
}

impl MemoryArray {
    /// Every cell gets `template`; only the optical depth varies.
    pub fn uniform(
        geometry: ArrayGeometry,
        profile: OpticalDepthProfile,
        template: CellPhysics,
    ) -> Result<Self, ModelError> {
        Self::from_fn(geometry, profile, |_, _| template)
    }

    /// Builds the array from a per-cell physics function of `(index, od)`.
    pub fn from_fn(
        geometry: ArrayGeometry,
        profile: OpticalDepthProfile,
        mut physics: impl FnMut(CellIndex, f64) -> CellPhysics,
    ) -> Result<Self, ModelError> {
        geometry.validate()?;
        profile.validate()?;
        let cells = geometry
            .cells()
            .map(|index| {
                let od = optical_depth(cell_position(index, &geometry)?, &profile);
                let physics = physics(index, od);
                physics.validate()?;
                Ok(MemoryCell {
                    index,
                    od,
                    od_to_eta: profile.od_to_eta,
                    physics,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Self {
            geometry,
            profile,
            cells,
        })
    }

    pub fn cell(&self, idx: CellIndex) -> Result<&MemoryCell, ModelError> {
        self.geometry.check(idx)?;
        Ok(&self.cells[self.geometry.linear(idx)])
    }

    pub fn cells(&self) -> &[MemoryCell] {
        &self.cells
    }
}
