//! Exact evolution under a time-independent Hamiltonian by full
//! eigendecomposition.

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::hilbert::{
    hermiticity_defect, matvec, FockSpec, HybridState, LabeledOperator, C64, ONE, ZERO,
};

/// Largest Hilbert-space dimension accepted by [`eigendecompose`].
pub const MAX_DIM: usize = 20_000;

/// Tolerance used when validating density matrices.
pub const DENSITY_TOLERANCE: f64 = 1e-10;

/// Largest occupation tail tolerated when truncating a thermal state.
pub const THERMAL_LEAKAGE_BOUND: f64 = 1e-8;

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hamiltonian.
#[derive(Clone, Debug)]
pub struct EigSystem {
    energies: Vec<f64>,
    vectors: Mat<C64>,
    layout: Vec<usize>,
}

impl EigSystem {
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn vectors(&self) -> &Mat<C64> {
        &self.vectors
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn source_dim(&self) -> usize {
        self.energies.len()
    }

    /// V diag(E) V†.
    pub fn reconstruct(&self) -> LabeledOperator {
        let n = self.source_dim();
        let scaled = Mat::from_fn(n, n, |r, c| self.vectors[(r, c)] * self.energies[c]);
        LabeledOperator::new(&scaled * self.vectors.adjoint(), self.layout.clone())
            .expect("layout matches")
    }

    /// exp(−iHt) as a dense operator.
    pub fn propagator(&self, t: f64) -> LabeledOperator {
        let n = self.source_dim();
        let phased = Mat::from_fn(n, n, |r, c| self.vectors[(r, c)] * phase(self.energies[c], t));
        LabeledOperator::new(&phased * self.vectors.adjoint(), self.layout.clone())
            .expect("layout matches")
    }

    fn check_layout(&self, layout: &[usize]) -> Result<()> {
        if layout != self.layout.as_slice() {
            return Err(Error::LayoutMismatch {
                expected: self.layout.clone(),
                found: layout.to_vec(),
            });
        }
        Ok(())
    }
}

fn phase(e: f64, t: f64) -> C64 {
    let (s, c) = (e * t).sin_cos();
    C64::new(c, -s)
}

/// Rejects dimensions above [`MAX_DIM`].
pub fn check_dimension(dim: usize) -> Result<()> {
    if dim > MAX_DIM {
        return Err(Error::DimensionGuard { dim, max: MAX_DIM });
    }
    Ok(())
}

pub fn eigendecompose(h: &LabeledOperator) -> Result<EigSystem> {
    let n = h.dim();
    check_dimension(n)?;
    if !h.is_hermitian() {
        return Err(Error::NotHermitian {
            defect: h.hermiticity_defect(),
        });
    }
    let eig = h
        .matrix()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let vals = eig.S().column_vector();
    let energies: Vec<f64> = (0..n).map(|i| vals[i].re).collect();
    Ok(EigSystem {
        energies,
        vectors: eig.U().to_owned(),
        layout: h.layout().to_vec(),
    })
}

/// exp(−iHt) for a Hermitian `h`.
pub fn propagator(h: &LabeledOperator, t: f64) -> Result<LabeledOperator> {
    Ok(eigendecompose(h)?.propagator(t))
}

/// ψ(t) = V e^{−iEt} V† ψ.
pub fn evolve(psi: &HybridState, eig: &EigSystem, t: f64) -> Result<HybridState> {
    eig.check_layout(psi.layout())?;
    let v = &eig.vectors;
    let mut coeffs = matvec(&v.adjoint().to_owned(), psi.amplitudes());
    for (c, &e) in coeffs.iter_mut().zip(&eig.energies) {
        *c *= phase(e, t);
    }
    HybridState::new(matvec(v, &coeffs), eig.layout.clone())
}

/// Validated density matrix over a tensor-product layout.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    matrix: Mat<C64>,
    layout: Vec<usize>,
}

impl DensityMatrix {
    /// Checks Hermiticity, unit trace and positivity within
    /// [`DENSITY_TOLERANCE`].
    pub fn new(matrix: Mat<C64>, layout: Vec<usize>) -> Result<Self> {
        let dim: usize = layout.iter().product();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::LayoutMismatch {
                expected: layout,
                found: vec![matrix.nrows(), matrix.ncols()],
            });
        }
        let defect = hermiticity_defect(&matrix);
        if defect > DENSITY_TOLERANCE {
            return Err(Error::InvalidDensity(format!(
                "not Hermitian (defect {defect:.3e})"
            )));
        }
        let trace: C64 = (0..dim).map(|i| matrix[(i, i)]).sum();
        if (trace - ONE).norm() > DENSITY_TOLERANCE {
            return Err(Error::InvalidDensity(format!("trace {trace} differs from 1")));
        }
        let eig = matrix
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let min = eig.S().column_vector()[0].re;
        if min < -DENSITY_TOLERANCE {
            return Err(Error::InvalidDensity(format!(
                "negative eigenvalue {min:.3e}"
            )));
        }
        Ok(Self { matrix, layout })
    }

    pub fn pure(psi: &HybridState) -> Self {
        let a = psi.amplitudes();
        let n = a.len();
        Self {
            matrix: Mat::from_fn(n, n, |r, c| a[r] * a[c].conj()),
            layout: psi.layout().to_vec(),
        }
    }

    /// Thermal state of one mode with mean occupation `nbar`; the
    /// truncated weights are renormalized.
    pub fn thermal(nbar: f64, spec: FockSpec) -> Result<Self> {
        if !(nbar >= 0.0) || !nbar.is_finite() {
            return Err(Error::Domain(format!(
                "mean occupation must be non-negative, got {nbar}"
            )));
        }
        let n = spec.n_levels();
        let ratio = nbar / (nbar + 1.0);
        let leakage = ratio.powi(n as i32);
        if leakage > THERMAL_LEAKAGE_BOUND {
            return Err(Error::Truncation {
                what: format!("thermal state with nbar = {nbar}"),
                leakage,
                bound: THERMAL_LEAKAGE_BOUND,
            });
        }
        let weights: Vec<f64> = (0..n).map(|k| ratio.powi(k as i32)).collect();
        let total: f64 = weights.iter().sum();
        Ok(Self {
            matrix: Mat::from_fn(n, n, |r, c| {
                if r == c {
                    C64::new(weights[r] / total, 0.0)
                } else {
                    ZERO
                }
            }),
            layout: vec![n],
        })
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.matrix
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn trace(&self) -> C64 {
        (0..self.matrix.nrows()).map(|i| self.matrix[(i, i)]).sum()
    }

    pub fn purity(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut s = 0.0;
        for r in 0..n {
            for c in 0..n {
                s += self.matrix[(r, c)].norm_sqr();
            }
        }
        s
    }

    /// Tensor product ρ ⊗ σ.
    pub fn kron(&self, other: &DensityMatrix) -> DensityMatrix {
        let mut layout = self.layout.clone();
        layout.extend_from_slice(&other.layout);
        DensityMatrix {
            matrix: self.matrix.kron(&other.matrix),
            layout,
        }
    }

    /// U ρ U†.
    pub fn conjugate(&self, u: &LabeledOperator) -> Result<DensityMatrix> {
        if u.layout() != self.layout.as_slice() {
            return Err(Error::LayoutMismatch {
                expected: self.layout.clone(),
                found: u.layout().to_vec(),
            });
        }
        let m = u.matrix() * &self.matrix * u.matrix().adjoint();
        Ok(DensityMatrix {
            matrix: m,
            layout: self.layout.clone(),
        })
    }

    /// ⟨φ|ρ|φ⟩.
    pub fn population(&self, phi: &HybridState) -> Result<f64> {
        if phi.layout() != self.layout.as_slice() {
            return Err(Error::LayoutMismatch {
                expected: self.layout.clone(),
                found: phi.layout().to_vec(),
            });
        }
        let rp = matvec(&self.matrix, phi.amplitudes());
        let v: C64 = phi
            .amplitudes()
            .iter()
            .zip(&rp)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(v.re)
    }

    /// Partial trace over every factor but the first.
    pub fn reduced_first(&self) -> Mat<C64> {
        let d0 = self.layout[0];
        let rest = self.matrix.nrows() / d0;
        Mat::from_fn(d0, d0, |i, j| {
            (0..rest)
                .map(|k| self.matrix[(i * rest + k, j * rest + k)])
                .sum()
        })
    }
}

/// ρ(t) = e^{−iHt} ρ e^{iHt}, computed in the eigenbasis.
pub fn evolve_density(rho: &DensityMatrix, eig: &EigSystem, t: f64) -> Result<DensityMatrix> {
    eig.check_layout(&rho.layout)?;
    let v = &eig.vectors;
    let n = eig.source_dim();
    let in_eigenbasis = v.adjoint() * &rho.matrix * v;
    let rotated = Mat::from_fn(n, n, |r, c| {
        in_eigenbasis[(r, c)] * phase(eig.energies[r] - eig.energies[c], t)
    });
    Ok(DensityMatrix {
        matrix: v * &rotated * v.adjoint(),
        layout: rho.layout.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::coherent_trajectory;
    use crate::hilbert::{coherent_state, fock_ops, tensor, Kron};
    use crate::model::{hamiltonian_1d, CouplingSet};
    use std::f64::consts::TAU;

    fn spec(n: usize) -> FockSpec {
        FockSpec::new(n).unwrap()
    }

    fn check_invariants(h: &LabeledOperator, eig: &EigSystem) {
        let scale = h.max_abs_entry().max(1e-300);
        assert!(eig.reconstruct().max_abs_diff(h).unwrap() <= 1e-9 * scale);
        let v = LabeledOperator::new(eig.vectors().clone(), h.layout().to_vec()).unwrap();
        let id = LabeledOperator::identity(h.layout());
        assert!(v.adjoint().matmul(&v).unwrap().max_abs_diff(&id).unwrap() <= 1e-10);
        assert!(eig.energies().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn number_operator_spectrum() {
        let h = fock_ops(spec(5)).number;
        let eig = eigendecompose(&h).unwrap();
        for (k, e) in eig.energies().iter().enumerate() {
            assert!((e - k as f64).abs() < 1e-12);
        }
        check_invariants(&h, &eig);
    }

    #[test]
    fn degenerate_identity() {
        let h = LabeledOperator::identity(&[3, 4]);
        let eig = eigendecompose(&h).unwrap();
        check_invariants(&h, &eig);
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = Mat::<C64>::zeros(2, 2);
        m[(0, 1)] = ONE;
        let h = LabeledOperator::new(m, vec![2]).unwrap();
        assert!(matches!(eigendecompose(&h), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn dimension_guard() {
        assert!(check_dimension(MAX_DIM).is_ok());
        assert!(matches!(
            check_dimension(3 * 7000),
            Err(Error::DimensionGuard { dim: 21000, .. })
        ));
    }

    #[test]
    fn axial_invariants() {
        let h = hamiltonian_1d(&CouplingSet::new(0.05, 0.1).with_d(2.0), spec(30));
        let eig = eigendecompose(&h).unwrap();
        check_invariants(&h, &eig);
    }

    #[test]
    fn evolution_basics() {
        let c = CouplingSet::new(0.05, 0.1).with_d(1.3);
        let h = hamiltonian_1d(&c, spec(30));
        let eig = eigendecompose(&h).unwrap();
        let psi = tensor(&[
            &HybridState::basis(&[3], &[0]).unwrap(),
            &coherent_state(C64::new(0.7, 0.2), spec(30)).unwrap(),
        ])
        .unwrap();
        let same = evolve(&psi, &eig, 0.0).unwrap();
        for (a, b) in psi.amplitudes().iter().zip(same.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
        let e0 = psi.expectation(&h).unwrap().re;
        for k in 0..=8 {
            let t = TAU * k as f64 / 8.0;
            let out = evolve(&psi, &eig, t).unwrap();
            assert!((out.norm() - 1.0).abs() < 1e-10);
            assert!((out.expectation(&h).unwrap().re - e0).abs() < 1e-10);
        }
        let (t1, t2) = (1.1, 2.9);
        let direct = evolve(&psi, &eig, t1 + t2).unwrap();
        let composed = evolve(&evolve(&psi, &eig, t1).unwrap(), &eig, t2).unwrap();
        for (a, b) in direct.amplitudes().iter().zip(composed.amplitudes()) {
            assert!((a - b).norm() < 1e-10);
        }
        let wrong = HybridState::basis(&[3, 29], &[0, 0]).unwrap();
        assert!(matches!(
            evolve(&wrong, &eig, 1.0),
            Err(Error::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn matches_analytic_trajectory() {
        let c = CouplingSet::new(0.05, 0.1);
        let n = spec(60);
        let beta = C64::new(1.0, 0.0);
        let eig = eigendecompose(&hamiltonian_1d(&c, n)).unwrap();
        let up = HybridState::basis(&[3], &[0]).unwrap();
        let psi = up.kron(&coherent_state(beta, n).unwrap());
        for t in [0.4, 2.0, TAU] {
            let out = evolve(&psi, &eig, t).unwrap();
            let traj = coherent_trajectory(beta, 1, t, &c);
            let want = up.kron(&traj.state(n).unwrap());
            let overlap = want.inner(&out).unwrap();
            assert!(overlap.norm() >= 1.0 - 1e-8, "t = {t}: {}", overlap.norm());
            // the global phase matches too
            assert!((overlap - ONE).norm() < 1e-7, "t = {t}: {overlap}");
        }
    }

    #[test]
    fn density_matches_pure_evolution() {
        let c = CouplingSet::new(0.05, 0.1).with_d(1.3);
        let h = hamiltonian_1d(&c, spec(20));
        let eig = eigendecompose(&h).unwrap();
        let psi = tensor(&[
            &HybridState::new(
                vec![C64::new(0.6, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.8)],
                vec![3],
            )
            .unwrap(),
            &coherent_state(C64::new(0.5, -0.3), spec(20)).unwrap(),
        ])
        .unwrap();
        let rho = DensityMatrix::pure(&psi);
        let t = 2.3;
        let rho_t = evolve_density(&rho, &eig, t).unwrap();
        let psi_t = evolve(&psi, &eig, t).unwrap();
        let want = DensityMatrix::pure(&psi_t);
        let n = psi.dim();
        for r in 0..n {
            for col in 0..n {
                assert!((rho_t.matrix()[(r, col)] - want.matrix()[(r, col)]).norm() < 1e-12);
            }
        }
        assert!((rho_t.trace() - ONE).norm() < 1e-10);
        DensityMatrix::new(rho_t.matrix().clone(), rho_t.layout().to_vec()).unwrap();
    }

    #[test]
    fn thermal_state_is_stationary_and_purity_conserved() {
        let rho = DensityMatrix::thermal(2.0, spec(60)).unwrap();
        let h = fock_ops(spec(60)).number;
        let eig = eigendecompose(&h).unwrap();
        let out = evolve_density(&rho, &eig, 1.7).unwrap();
        for r in 0..60 {
            for c in 0..60 {
                assert!((out.matrix()[(r, c)] - rho.matrix()[(r, c)]).norm() < 1e-12);
            }
        }
        let spin = DensityMatrix::pure(
            &HybridState::normalized(vec![ONE, ONE, ZERO], vec![3]).unwrap(),
        );
        let joint = spin.kron(&DensityMatrix::thermal(0.5, spec(40)).unwrap());
        let c = CouplingSet::new(0.1, 0.05).with_d(0.7);
        let eig = eigendecompose(&hamiltonian_1d(&c, spec(40))).unwrap();
        let p0 = joint.purity();
        for t in [0.5, 3.0, TAU] {
            let p = evolve_density(&joint, &eig, t).unwrap().purity();
            assert!((p - p0).abs() < 1e-10);
        }
    }

    #[test]
    fn thermal_mean_occupation() {
        let rho = DensityMatrix::thermal(3.0, spec(120)).unwrap();
        let n: f64 = (0..120).map(|k| k as f64 * rho.matrix()[(k, k)].re).sum();
        assert!((n - 3.0).abs() < 1e-6);
        assert!(matches!(
            DensityMatrix::thermal(5.0, spec(20)),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn density_validation() {
        let mut m = Mat::<C64>::zeros(2, 2);
        m[(0, 0)] = C64::new(1.5, 0.0);
        m[(1, 1)] = C64::new(-0.5, 0.0);
        assert!(matches!(
            DensityMatrix::new(m.clone(), vec![2]),
            Err(Error::InvalidDensity(_))
        ));
        m[(0, 0)] = C64::new(0.7, 0.0);
        assert!(DensityMatrix::new(m.clone(), vec![2]).is_err());
        m[(1, 1)] = C64::new(0.3, 0.0);
        m[(0, 1)] = C64::new(0.1, 0.0);
        assert!(DensityMatrix::new(m.clone(), vec![2]).is_err());
        m[(1, 0)] = C64::new(0.1, 0.0);
        DensityMatrix::new(m, vec![2]).unwrap();
    }
}
