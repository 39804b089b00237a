//! Two-qubit state algebra for the path-encoded signal photon (s) and the
//! collective atomic excitation (a).
//!
//! Matrices are written in the ordered product basis
//! `{|L⟩s|L⟩a, |L⟩s|R⟩a, |R⟩s|L⟩a, |R⟩s|R⟩a}`, signal qubit first.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type C64 = Complex64;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_FLOOR: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantumError {
    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("trace is {0}, expected 1")]
    BadTrace(f64),
    #[error("negative eigenvalue {0:e}")]
    NotPositive(f64),
    #[error("expected 16 complex entries, got {0}")]
    WrongLength(usize),
    #[error("visibility {0} outside [0, 1]")]
    Visibility(f64),
}

/// The single-qubit state `cos θ|L⟩ + e^{iφ} sin θ|R⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitBasisVector {
    pub theta: f64,
    pub phi: f64,
}

impl QubitBasisVector {
    pub const L: Self = Self {
        theta: 0.0,
        phi: 0.0,
    };
    pub const R: Self = Self {
        theta: std::f64::consts::FRAC_PI_2,
        phi: 0.0,
    };

    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi }
    }

    pub fn ket(&self) -> Vector2<C64> {
        Vector2::new(
            C64::new(self.theta.cos(), 0.0),
            C64::from_polar(self.theta.sin(), self.phi),
        )
    }

    /// The orthogonal state `sin θ|L⟩ - e^{iφ} cos θ|R⟩`.
    pub fn orthogonal(&self) -> Self {
        Self {
            theta: std::f64::consts::FRAC_PI_2 - self.theta,
            phi: self.phi + std::f64::consts::PI,
        }
    }
}

pub fn projector(b: &QubitBasisVector) -> Matrix2<C64> {
    let k = b.ket();
    k * k.adjoint()
}

/// `|b_s⟩ ⊗ |b_a⟩` in the product basis.
pub fn product_ket(b_s: &QubitBasisVector, b_a: &QubitBasisVector) -> Vector4<C64> {
    let (s, a) = (b_s.ket(), b_a.ket());
    Vector4::new(s[0] * a[0], s[0] * a[1], s[1] * a[0], s[1] * a[1])
}

/// A validated two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(Matrix4<C64>);

impl DensityMatrix {
    /// Accepts `m` only if it is Hermitian, unit-trace and positive
    /// semidefinite within the numerical floors.
    pub fn try_from_matrix(m: Matrix4<C64>) -> Result<Self, QuantumError> {
        let herm = (m - m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm > HERMITIAN_TOL {
            return Err(QuantumError::NotHermitian(herm));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(QuantumError::BadTrace(tr.re));
        }
        let rho = Self(m);
        let min = rho.eigenvalues()[0];
        if min < PSD_FLOOR {
            return Err(QuantumError::NotPositive(min));
        }
        Ok(rho)
    }

    /// Hermitian-symmetrises and trace-normalises a PSD-by-construction matrix.
    pub(crate) fn from_psd(m: Matrix4<C64>) -> Self {
        let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
        let tr = h.trace().re;
        Self(h / C64::new(tr, 0.0))
    }

    pub fn maximally_mixed() -> Self {
        Self(Matrix4::identity() * C64::new(0.25, 0.0))
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let ev = self.0.symmetric_eigenvalues();
        let mut out = [ev[0], ev[1], ev[2], ev[3]];
        out.sort_by(f64::total_cmp);
        out
    }

    /// Row-major `[re, im]` pairs.
    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(16);
        for r in 0..4 {
            for c in 0..4 {
                let z = self.0[(r, c)];
                out.push([z.re, z.im]);
            }
        }
        out
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self, QuantumError> {
        if pairs.len() != 16 {
            return Err(QuantumError::WrongLength(pairs.len()));
        }
        let m = Matrix4::from_fn(|r, c| {
            let [re, im] = pairs[4 * r + c];
            C64::new(re, im)
        });
        Self::try_from_matrix(m)
    }

    /// Probability of the rank-one projector onto `ket`.
    pub fn expectation(&self, ket: &Vector4<C64>) -> f64 {
        (ket.adjoint() * self.0 * ket)[(0, 0)].re
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_pairs().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Self::from_pairs(&pairs).map_err(serde::de::Error::custom)
    }
}

/// `(|LL⟩ + e^{iφ}|RR⟩)/√2` as a pure-state density matrix.
pub fn bell_state(phi: f64) -> DensityMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let psi = Vector4::new(
        C64::new(h, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::from_polar(h, phi),
    );
    DensityMatrix::from_psd(psi * psi.adjoint())
}

/// White-noise mixture `V·bell(φ) + (1-V)·I/4`.
pub fn werner(visibility: f64, phi: f64) -> Result<DensityMatrix, QuantumError> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(QuantumError::Visibility(visibility));
    }
    let bell = bell_state(phi);
    let m = bell.0 * C64::new(visibility, 0.0)
        + Matrix4::identity() * C64::new((1.0 - visibility) / 4.0, 0.0);
    Ok(DensityMatrix::from_psd(m))
}

/// Pure dephasing: the Bell populations are kept and the `|LL⟩⟨RR|`
/// coherence is scaled by `V`.
pub fn dephased_bell(visibility: f64, phi: f64) -> Result<DensityMatrix, QuantumError> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(QuantumError::Visibility(visibility));
    }
    let mut m = bell_state(phi).0;
    m[(0, 3)] *= visibility;
    m[(3, 0)] *= visibility;
    Ok(DensityMatrix::from_psd(m))
}

/// `tr(ρ · Π_s⊗Π_a)`, clamped to `[0, 1]`.
pub fn born_probability(
    rho: &DensityMatrix,
    b_s: &QubitBasisVector,
    b_a: &QubitBasisVector,
) -> f64 {
    rho.expectation(&product_ket(b_s, b_a)).clamp(0.0, 1.0)
}

/// Overlap with the maximally entangled state `(|LL⟩ + e^{iφ}|RR⟩)/√2`,
/// either at φ = 0 or maximised over φ.
pub fn entanglement_fidelity(rho: &DensityMatrix, optimize_phase: bool) -> f64 {
    let pop = 0.5 * (rho.get(0, 0).re + rho.get(3, 3).re);
    let coh = rho.get(0, 3);
    let f = if optimize_phase {
        pop + coh.norm()
    } else {
        pop + coh.re
    };
    f.clamp(0.0, 1.0)
}

/// Trace norm `‖a - b‖₁` (sum of absolute eigenvalues of the difference).
pub fn trace_norm_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    let d = a.0 - b.0;
    d.symmetric_eigenvalues().iter().map(|v| v.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bell_state_entries() {
        let rho = bell_state(0.0);
        for r in 0..4 {
            for c in 0..4 {
                let expect = if (r == 0 || r == 3) && (c == 0 || c == 3) {
                    0.5
                } else {
                    0.0
                };
                assert!(close(rho.get(r, c).re, expect, 1e-15) && rho.get(r, c).im.abs() < 1e-15);
            }
        }
        let flipped = bell_state(PI);
        assert!(close(flipped.get(0, 3).re, -0.5, 1e-15));
        assert!(close(flipped.get(3, 0).re, -0.5, 1e-15));
        let ev = rho.eigenvalues();
        assert!(close(ev[3], 1.0, 1e-12) && ev[..3].iter().all(|v| v.abs() < 1e-12));
        assert!(close(rho.matrix().trace().re, 1.0, 1e-15));
    }

    #[test]
    fn werner_limits_and_fidelity() {
        assert!((werner(1.0, 0.4).unwrap().matrix() - bell_state(0.4).matrix()).norm() < 1e-15);
        let mixed = werner(0.0, 0.0).unwrap();
        assert!((mixed.matrix() - DensityMatrix::maximally_mixed().matrix()).norm() < 1e-15);
        let w = werner(0.9, 0.0).unwrap();
        assert!(close(entanglement_fidelity(&w, false), 0.925, 1e-12));
        assert!(werner(1.1, 0.0).is_err());
    }

    #[test]
    fn dephased_keeps_populations() {
        let d = dephased_bell(0.6, 0.0).unwrap();
        assert!(close(d.get(0, 0).re, 0.5, 1e-15));
        assert!(close(d.get(0, 3).re, 0.3, 1e-15));
        assert!(close(entanglement_fidelity(&d, true), 0.8, 1e-12));
    }

    #[test]
    fn projector_examples() {
        let p = projector(&QubitBasisVector::L);
        assert!(
            close(p[(0, 0)].re, 1.0, 1e-15) && p[(1, 1)].norm() < 1e-15 && p[(0, 1)].norm() < 1e-15
        );
        let plus = projector(&QubitBasisVector::new(FRAC_PI_4, 0.0));
        assert!(plus
            .iter()
            .all(|z| close(z.re, 0.5, 1e-15) && z.im.abs() < 1e-15));
        let ip = projector(&QubitBasisVector::new(FRAC_PI_4, FRAC_PI_2));
        // |L⟩⟨R| coefficient is e^{-iφ}/2 = -i/2
        assert!(close(ip[(0, 1)].im, -0.5, 1e-15) && close(ip[(1, 0)].im, 0.5, 1e-15));
    }

    #[test]
    fn born_examples() {
        let plus = QubitBasisVector::new(FRAC_PI_4, 0.0);
        assert!(close(
            born_probability(&bell_state(0.0), &plus, &plus),
            0.5,
            1e-14
        ));
        assert!(
            born_probability(&bell_state(0.0), &QubitBasisVector::L, &QubitBasisVector::R) < 1e-15
        );
        let mm = DensityMatrix::maximally_mixed();
        assert!(close(
            born_probability(&mm, &plus, &QubitBasisVector::new(0.3, 1.1)),
            0.25,
            1e-14
        ));
    }

    #[test]
    fn fidelity_examples() {
        assert!(close(
            entanglement_fidelity(&bell_state(0.3), true),
            1.0,
            1e-12
        ));
        let mm = DensityMatrix::maximally_mixed();
        assert!(close(entanglement_fidelity(&mm, true), 0.25, 1e-15));
        assert!(close(entanglement_fidelity(&mm, false), 0.25, 1e-15));
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let mut m = *DensityMatrix::maximally_mixed().matrix();
        m[(0, 1)] = C64::new(0.1, 0.0);
        assert!(matches!(
            DensityMatrix::try_from_matrix(m),
            Err(QuantumError::NotHermitian(_))
        ));
        let m = Matrix4::identity() * C64::new(0.3, 0.0);
        assert!(matches!(
            DensityMatrix::try_from_matrix(m),
            Err(QuantumError::BadTrace(_))
        ));
        let m = Matrix4::from_diagonal(&Vector4::new(
            C64::new(1.2, 0.0),
            C64::new(-0.2, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        ));
        assert!(matches!(
            DensityMatrix::try_from_matrix(m),
            Err(QuantumError::NotPositive(_))
        ));
        assert!(DensityMatrix::from_pairs(&[[0.0, 0.0]; 3]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let w = werner(0.7, 1.2).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        let back: DensityMatrix = serde_json::from_str(&s).unwrap();
        assert!((back.matrix() - w.matrix()).norm() < 1e-15);
    }

    fn basis() -> impl Strategy<Value = QubitBasisVector> {
        (0.0..FRAC_PI_2, 0.0..2.0 * PI).prop_map(|(t, p)| QubitBasisVector::new(t, p))
    }

    fn state() -> impl Strategy<Value = DensityMatrix> {
        (0.0..=1.0f64, 0.0..2.0 * PI, any::<bool>()).prop_map(|(v, phi, deph)| {
            if deph {
                dephased_bell(v, phi).unwrap()
            } else {
                werner(v, phi).unwrap()
            }
        })
    }

    proptest! {
        #[test]
        fn complete_local_bases_sum_to_one(rho in state(), bs in basis(), ba in basis()) {
            let total: f64 = [bs, bs.orthogonal()]
                .iter()
                .flat_map(|s| [ba, ba.orthogonal()].map(|a| born_probability(&rho, s, &a)))
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }

        #[test]
        fn optimized_fidelity_dominates(rho in state()) {
            prop_assert!(entanglement_fidelity(&rho, true) >= entanglement_fidelity(&rho, false) - 1e-15);
        }

        #[test]
        fn bell_fidelity_is_one(phi in -10.0..10.0f64) {
            prop_assert!((entanglement_fidelity(&bell_state(phi), true) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn projector_periodic_in_phi(b in basis()) {
            let shifted = QubitBasisVector::new(b.theta, b.phi + 2.0 * PI);
            prop_assert!((projector(&b) - projector(&shifted)).norm() < 1e-12);
            let p = projector(&b);
            prop_assert!((p * p - p).norm() < 1e-12);
            prop_assert!((p - p.adjoint()).norm() < 1e-12);
        }
    }
}
