//! Simulation and analysis toolkit for a 15×15 multiplexed atomic-ensemble
//! quantum memory operated in the heralded write/read (DLCZ) regime.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: array geometry, per-cell physics, retrieval efficiency and
//!   the calibration that anchors the model to the measured correlations.
//! * [`addressing`]: RF tone programs for the crossed deflectors, including
//!   two-path superposition programs and beam-overlap crosstalk.
//! * [`quantum`]: exact two-qubit state algebra (density matrices, local
//!   projectors, Born probabilities, entanglement fidelity).
//! * [`sampler`]: the stochastic photon-counting model and its exact
//!   enumeration oracle.
//! * [`sequencer`]: the write/clean/read control loop and campaign runner.
//! * [`analysis`]: cross-correlation estimators, maps and decay fits.
//! * [`tomography`]: maximum-likelihood state reconstruction with Poisson
//!   Monte Carlo error bars.
//! * [`cli`]: configuration, file formats and the command-line subcommands.

pub mod addressing;
pub mod analysis;
pub mod cli;
pub mod model;
pub mod quantum;
pub mod rng;
pub mod sampler;
pub mod sequencer;
pub mod tomography;

pub use addressing::{AddressingProgram, Channel, RfTone, SuperpositionBasis};
pub use model::{
    ArrayGeometry, CellIndex, CellPhysics, MemoryArray, MemoryCell, OpticalDepthProfile,
};
pub use quantum::{DensityMatrix, QubitBasisVector};
pub use sampler::{RateSet, TrialOutcome};
pub use sequencer::{EventLog, TimingConfig, TrialRecord};
