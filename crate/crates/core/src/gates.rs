//! Closed-form exponentials of the Hamiltonian terms, and a dense
//! exponential used to validate them.
//!
//! Conventions: `ħ = 1`, every exponential is `exp(-i H t)`, and two-site
//! matrices use the `bit_a + 2 * bit_b` ordering from [`crate::statevec`].

use nalgebra::{DMatrix, Matrix2, Matrix4};

use crate::error::{Error, Result};
use crate::C64;

/// Hermiticity tolerance for [`dense_exp`].
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TermKind {
    /// `-J (σ^x σ^x + σ^y σ^y)` on a bond.
    XxPlusYy,
    /// `-J σ^z σ^z` on a bond.
    Zz,
    /// `h σ^x` on a site.
    XField,
}

impl TermKind {
    pub fn arity(self) -> usize {
        match self {
            TermKind::XxPlusYy | TermKind::Zz => 2,
            TermKind::XField => 1,
        }
    }
}

/// One Hamiltonian term family together with its coupling (`J` or `h`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermSpec {
    pub kind: TermKind,
    pub coupling: f64,
}

impl TermSpec {
    pub fn new(kind: TermKind, coupling: f64) -> Self {
        TermSpec { kind, coupling }
    }

    /// `exp(-i H_term t)` in closed form.
    pub fn exp(&self, t: f64) -> GateMatrix {
        match self.kind {
            TermKind::XxPlusYy => GateMatrix::Two(exp_xy(self.coupling, t)),
            TermKind::Zz => GateMatrix::Two(exp_zz(self.coupling, t)),
            TermKind::XField => GateMatrix::One(exp_x(self.coupling, t)),
        }
    }

    /// Dense Hermitian matrix of the term (2×2 or 4×4).
    pub fn hamiltonian(&self) -> DMatrix<C64> {
        let c = C64::from(self.coupling);
        match self.kind {
            TermKind::XxPlusYy => {
                let (x, y) = (pauli_x(), pauli_y());
                (x.kronecker(&x) + y.kronecker(&y)) * (-c)
            }
            TermKind::Zz => {
                let z = pauli_z();
                z.kronecker(&z) * (-c)
            }
            TermKind::XField => pauli_x() * c,
        }
    }
}

/// A 2×2 or 4×4 unitary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateMatrix {
    One(Matrix2<C64>),
    Two(Matrix4<C64>),
}

impl GateMatrix {
    pub fn dim(&self) -> usize {
        match self {
            GateMatrix::One(_) => 2,
            GateMatrix::Two(_) => 4,
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match self {
            GateMatrix::One(m) => DMatrix::from_iterator(2, 2, m.iter().copied()),
            GateMatrix::Two(m) => DMatrix::from_iterator(4, 4, m.iter().copied()),
        }
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let m = self.to_dense();
        let n = m.nrows();
        max_abs_diff(&(m.adjoint() * &m), &DMatrix::identity(n, n)) <= tol
    }
}

/// `exp(i J t (σ^x σ^x + σ^y σ^y))`: identity on `|00⟩, |11⟩`, and
/// `[[cos 2Jt, i sin 2Jt], [i sin 2Jt, cos 2Jt]]` on `{|01⟩, |10⟩}`.
pub fn exp_xy(coupling: f64, t: f64) -> Matrix4<C64> {
    let theta = 2.0 * coupling * t;
    let c = C64::new(theta.cos(), 0.0);
    let s = C64::new(0.0, theta.sin());
    let mut m = Matrix4::zeros();
    m[(0, 0)] = C64::new(1.0, 0.0);
    m[(3, 3)] = C64::new(1.0, 0.0);
    m[(1, 1)] = c;
    m[(2, 2)] = c;
    m[(1, 2)] = s;
    m[(2, 1)] = s;
    m
}

/// `exp(i J t σ^z σ^z) = diag(e^{iJt}, e^{-iJt}, e^{-iJt}, e^{iJt})`.
pub fn exp_zz(coupling: f64, t: f64) -> Matrix4<C64> {
    let p = C64::from_polar(1.0, coupling * t);
    let q = p.conj();
    Matrix4::from_diagonal(&nalgebra::Vector4::new(p, q, q, p))
}

/// `exp(-i h t σ^x) = cos(ht) I - i sin(ht) σ^x`.
pub fn exp_x(field: f64, t: f64) -> Matrix2<C64> {
    let theta = field * t;
    let c = C64::new(theta.cos(), 0.0);
    let s = C64::new(0.0, -theta.sin());
    Matrix2::new(c, s, s, c)
}

/// `exp(-i H t)` for Hermitian `H`, via eigendecomposition
/// `H = V diag(λ) V†`.
pub fn dense_exp(h: &DMatrix<C64>, t: f64) -> Result<DMatrix<C64>> {
    let (values, vectors) = hermitian_eigen(h)?;
    let phases = DMatrix::from_diagonal(&values.map(|e| C64::from_polar(1.0, -e * t)));
    Ok(&vectors * phases * vectors.adjoint())
}

/// Eigenvalues and eigenvectors (columns) of a Hermitian matrix.
pub fn hermitian_eigen(h: &DMatrix<C64>) -> Result<(nalgebra::DVector<f64>, DMatrix<C64>)> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            actual: h.ncols(),
        });
    }
    let deviation = max_abs_diff(h, &h.adjoint());
    if deviation > HERMITIAN_TOL {
        return Err(Error::NotHermitian { deviation });
    }
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    Ok((eig.eigenvalues, eig.eigenvectors))
}

pub fn pauli_x() -> DMatrix<C64> {
    let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
    DMatrix::from_row_slice(2, 2, &[o, l, l, o])
}

pub fn pauli_y() -> DMatrix<C64> {
    let (o, i) = (C64::new(0.0, 0.0), C64::new(0.0, 1.0));
    DMatrix::from_row_slice(2, 2, &[o, -i, i, o])
}

pub fn pauli_z() -> DMatrix<C64> {
    let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
    DMatrix::from_row_slice(2, 2, &[l, o, o, -l])
}

pub(crate) fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
