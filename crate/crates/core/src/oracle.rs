//! Dense reference evolution for small chains.
//!
//! Operators are assembled as Kronecker products over all sites, independent
//! of the strided kernels in [`crate::statevec`], and evolved exactly through
//! an eigendecomposition of the full Hamiltonian.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};

use crate::error::{Error, Result};
use crate::gates::{hermitian_eigen, pauli_x, pauli_y, pauli_z, TermKind};
use crate::model::ChainModel;
use crate::statevec::StateVector;
use crate::C64;

/// Largest chain the dense oracle accepts (a 4096 × 4096 matrix).
pub const MAX_DENSE_SITES: usize = 12;

fn identity2() -> DMatrix<C64> {
    DMatrix::identity(2, 2)
}

/// `⊗_s op_s` over `num_sites` sites with identity where no operator is
/// given. Site `s` is bit `s`, so the last factor is site 0.
pub fn kron_sites(num_sites: usize, ops: &[(usize, DMatrix<C64>)]) -> DMatrix<C64> {
    let mut full = DMatrix::<C64>::identity(1, 1);
    for site in (0..num_sites).rev() {
        let factor = ops
            .iter()
            .find(|(s, _)| *s == site)
            .map(|(_, m)| m.clone())
            .unwrap_or_else(identity2);
        full = full.kronecker(&factor);
    }
    full
}

fn unit(r: usize, c: usize) -> DMatrix<C64> {
    let mut e = DMatrix::zeros(2, 2);
    e[(r, c)] = C64::new(1.0, 0.0);
    e
}

/// Full-space matrix of a single-site operator.
pub fn embed_site(num_sites: usize, site: usize, u: &Matrix2<C64>) -> DMatrix<C64> {
    let m = DMatrix::from_iterator(2, 2, u.iter().copied());
    kron_sites(num_sites, &[(site, m)])
}

/// Full-space matrix of a two-site operator whose index is
/// `bit_a + 2 * bit_b`, expanded as `Σ u[r, c] |r⟩⟨c|` with each outer
/// product factored over the two sites.
pub fn embed_pair(num_sites: usize, site_a: usize, site_b: usize, u: &Matrix4<C64>) -> DMatrix<C64> {
    let dim = 1 << num_sites;
    let mut full = DMatrix::zeros(dim, dim);
    for r in 0..4 {
        for c in 0..4 {
            let coeff = u[(r, c)];
            if coeff == C64::new(0.0, 0.0) {
                continue;
            }
            let ops = [
                (site_a, unit(r & 1, c & 1)),
                (site_b, unit(r >> 1, c >> 1)),
            ];
            full += kron_sites(num_sites, &ops) * coeff;
        }
    }
    full
}

/// Dense Hamiltonian of `model`.
pub fn hamiltonian(model: &ChainModel) -> Result<DMatrix<C64>> {
    let n = model.num_sites();
    if n > MAX_DENSE_SITES {
        return Err(Error::param(format!(
            "dense oracle supports at most {MAX_DENSE_SITES} sites, got {n}"
        )));
    }
    let dim = 1 << n;
    let mut h = DMatrix::zeros(dim, dim);
    let bond = model.bond_term();
    let j = C64::from(bond.coupling);
    for b in model.bonds() {
        let pair = |p: DMatrix<C64>| kron_sites(n, &[(b.left, p.clone()), (b.right(), p)]);
        match bond.kind {
            TermKind::XxPlusYy => h -= (pair(pauli_x()) + pair(pauli_y())) * j,
            TermKind::Zz => h -= pair(pauli_z()) * j,
            TermKind::XField => unreachable!("bond terms are two-site"),
        }
    }
    if let Some(site) = model.site_term() {
        let field = C64::from(site.coupling);
        for s in 0..n {
            h += kron_sites(n, &[(s, pauli_x())]) * field;
        }
    }
    Ok(h)
}

/// Exact propagator `exp(-i H t)` from one eigendecomposition of `H`.
#[derive(Clone, Debug)]
pub struct ExactPropagator {
    num_sites: usize,
    hamiltonian: DMatrix<C64>,
    energies: DVector<f64>,
    vectors: DMatrix<C64>,
}

impl ExactPropagator {
    pub fn new(model: &ChainModel) -> Result<Self> {
        let hamiltonian = hamiltonian(model)?;
        let (energies, vectors) = hermitian_eigen(&hamiltonian)?;
        Ok(ExactPropagator {
            num_sites: model.num_sites(),
            hamiltonian,
            energies,
            vectors,
        })
    }

    pub fn hamiltonian(&self) -> &DMatrix<C64> {
        &self.hamiltonian
    }

    /// Eigenvalues in the order returned by the eigensolver.
    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    /// `exp(-i H t) |ψ⟩`.
    pub fn evolve(&self, state: &StateVector, t: f64) -> Result<StateVector> {
        if state.num_sites() != self.num_sites {
            return Err(Error::DimensionMismatch {
                expected: self.num_sites,
                actual: state.num_sites(),
            });
        }
        let psi = DVector::from_column_slice(state.amplitudes());
        let mut coeffs = self.vectors.adjoint() * psi;
        for (c, e) in coeffs.iter_mut().zip(self.energies.iter()) {
            *c *= C64::from_polar(1.0, -e * t);
        }
        let out = &self.vectors * coeffs;
        StateVector::from_amplitudes(out.as_slice().to_vec())
    }

    /// `⟨ψ|H|ψ⟩`.
    pub fn energy(&self, state: &StateVector) -> Result<f64> {
        if state.num_sites() != self.num_sites {
            return Err(Error::DimensionMismatch {
                expected: self.num_sites,
                actual: state.num_sites(),
            });
        }
        let psi = DVector::from_column_slice(state.amplitudes());
        Ok((psi.adjoint() * &self.hamiltonian * &psi)[(0, 0)].re)
    }
}

/// Applies a dense operator to a state.
pub fn apply_dense(op: &DMatrix<C64>, state: &StateVector) -> Result<StateVector> {
    if op.nrows() != state.dim() || op.ncols() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            actual: op.nrows(),
        });
    }
    let out = op * DVector::from_column_slice(state.amplitudes());
    StateVector::from_amplitudes(out.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{dense_exp, max_abs_diff, TermSpec};
    use crate::model::ModelKind;
    use crate::statevec::Spin;

    fn close(a: &StateVector, b: &StateVector) -> f64 {
        a.amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn xy_two_sites_flip_flop_element() {
        let h = hamiltonian(&ChainModel::xy(2).unwrap()).unwrap();
        // |↑↓⟩ is index 2 (site 1 down), |↓↑⟩ is index 1.
        assert!((h[(1, 2)] - C64::new(-2.0, 0.0)).norm() < 1e-15);
        assert!((h[(2, 1)] - C64::new(-2.0, 0.0)).norm() < 1e-15);
        for i in 0..4 {
            assert_eq!(h[(i, i)], C64::new(0.0, 0.0));
        }
        assert_eq!(h[(0, 3)], C64::new(0.0, 0.0));
    }

    #[test]
    fn single_field_term_is_half_sigma_x() {
        let h = TermSpec::new(TermKind::XField, 0.5).hamiltonian();
        assert!(max_abs_diff(&h, &(pauli_x() * C64::from(0.5))) < 1e-15);
        let embedded = kron_sites(1, &[(0, h.clone())]);
        assert_eq!(embedded, h);
    }

    #[test]
    fn tfi_without_field_spectrum() {
        let model = ChainModel::new(ModelKind::Tfi, 2, 1.0, 0.0).unwrap();
        let prop = ExactPropagator::new(&model).unwrap();
        let mut e: Vec<f64> = prop.energies().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        for (got, want) in e.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        for model in [ChainModel::xy(6).unwrap(), ChainModel::tfi(5, 0.7).unwrap()] {
            let h = hamiltonian(&model).unwrap();
            assert!(max_abs_diff(&h, &h.adjoint()) < 1e-15);
        }
        assert!(hamiltonian(&ChainModel::xy(14).unwrap()).is_err());
    }

    #[test]
    fn zero_time_is_identity() {
        let model = ChainModel::tfi(4, 0.5).unwrap();
        let prop = ExactPropagator::new(&model).unwrap();
        let psi = model.initial_state().unwrap();
        assert!(close(&prop.evolve(&psi, 0.0).unwrap(), &psi) < 1e-12);
    }

    #[test]
    fn eigenstate_only_gains_phase() {
        let model = ChainModel::tfi(3, 0.8).unwrap();
        let prop = ExactPropagator::new(&model).unwrap();
        let k = 2;
        let v: Vec<C64> = prop.vectors.column(k).iter().copied().collect();
        let psi = StateVector::from_amplitudes(v).unwrap();
        let t = 1.7;
        let out = prop.evolve(&psi, t).unwrap();
        let phase = C64::from_polar(1.0, -prop.energies()[k] * t);
        let expect = StateVector::from_amplitudes(psi.amplitudes().iter().map(|a| a * phase).collect()).unwrap();
        assert!(close(&out, &expect) < 1e-12);
    }

    #[test]
    fn evolution_composes() {
        let model = ChainModel::xy(6).unwrap();
        let prop = ExactPropagator::new(&model).unwrap();
        let psi = model.initial_state().unwrap();
        let a = prop.evolve(&prop.evolve(&psi, 0.4).unwrap(), 0.9).unwrap();
        let b = prop.evolve(&psi, 1.3).unwrap();
        assert!(close(&a, &b) < 1e-12);
    }

    #[test]
    fn evolution_matches_dense_exponential() {
        let model = ChainModel::tfi(4, 2.0).unwrap();
        let prop = ExactPropagator::new(&model).unwrap();
        let psi = model.initial_state().unwrap();
        let u = dense_exp(prop.hamiltonian(), 0.6).unwrap();
        let a = apply_dense(&u, &psi).unwrap();
        assert!(close(&a, &prop.evolve(&psi, 0.6).unwrap()) < 1e-12);
    }

    #[test]
    fn energy_is_conserved() {
        let model = ChainModel::tfi(6, 0.5).unwrap();
        let prop = ExactPropagator::new(&model).unwrap();
        let psi = StateVector::basis_state(6, &[Spin::Up, Spin::Down, Spin::Down, Spin::Up, Spin::Up, Spin::Down]).unwrap();
        let e0 = prop.energy(&psi).unwrap();
        for t in [0.3, 1.0, 4.0] {
            let e = prop.energy(&prop.evolve(&psi, t).unwrap()).unwrap();
            assert!((e - e0).abs() < 1e-10);
        }
    }

    #[test]
    fn embed_pair_of_adjacent_bond_matches_kronecker() {
        let spec = TermSpec::new(TermKind::XxPlusYy, 0.8);
        let h4 = spec.hamiltonian();
        let u = Matrix4::from_iterator(h4.iter().copied());
        let via_pair = embed_pair(4, 1, 2, &u);
        let direct = kron_sites(4, &[(1, pauli_x()), (2, pauli_x())]) + kron_sites(4, &[(1, pauli_y()), (2, pauli_y())]);
        assert!(max_abs_diff(&via_pair, &(direct * C64::from(-0.8))) < 1e-15);
    }
}
