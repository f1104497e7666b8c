//! Chain Hamiltonians, bond parity, node partitions and initial states.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{TermKind, TermSpec};
use crate::statevec::{Spin, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `H = -J Σ (σ^x σ^x + σ^y σ^y)`.
    Xy,
    /// `H = -J Σ σ^z σ^z + h Σ σ^x`.
    Tfi,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Xy => "xy",
            ModelKind::Tfi => "tfi",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xy" => Ok(ModelKind::Xy),
            "tfi" => Ok(ModelKind::Tfi),
            other => Err(Error::param(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    Even,
    Odd,
}

/// Nearest-neighbour bond `(left, left + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub left: usize,
    pub parity: Parity,
}

impl Bond {
    pub fn new(left: usize) -> Self {
        let parity = if left % 2 == 0 { Parity::Even } else { Parity::Odd };
        Bond { left, parity }
    }

    pub fn right(&self) -> usize {
        self.left + 1
    }

    pub fn sites(&self) -> (usize, usize) {
        (self.left, self.left + 1)
    }
}

/// Open chain of spin-1/2 sites.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainModel {
    kind: ModelKind,
    num_sites: usize,
    coupling: f64,
    field: f64,
    bonds: Vec<Bond>,
}

impl ChainModel {
    pub fn new(kind: ModelKind, num_sites: usize, coupling: f64, field: f64) -> Result<Self> {
        if num_sites < 2 {
            return Err(Error::param(format!(
                "chain needs at least 2 sites, got {num_sites}"
            )));
        }
        if !coupling.is_finite() || !field.is_finite() {
            return Err(Error::param("couplings must be finite"));
        }
        if kind == ModelKind::Xy && field != 0.0 {
            return Err(Error::param(format!(
                "XY model carries no transverse field, got h = {field}"
            )));
        }
        let bonds = (0..num_sites - 1).map(Bond::new).collect();
        Ok(ChainModel {
            kind,
            num_sites,
            coupling,
            field,
            bonds,
        })
    }

    pub fn xy(num_sites: usize) -> Result<Self> {
        Self::new(ModelKind::Xy, num_sites, 1.0, 0.0)
    }

    pub fn tfi(num_sites: usize, field: f64) -> Result<Self> {
        Self::new(ModelKind::Tfi, num_sites, 1.0, field)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn field(&self) -> f64 {
        self.field
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bonds_with_parity(&self, parity: Parity) -> impl Iterator<Item = &Bond> + '_ {
        self.bonds.iter().filter(move |b| b.parity == parity)
    }

    /// Two-site interaction term shared by every bond.
    pub fn bond_term(&self) -> TermSpec {
        match self.kind {
            ModelKind::Xy => TermSpec::new(TermKind::XxPlusYy, self.coupling),
            ModelKind::Tfi => TermSpec::new(TermKind::Zz, self.coupling),
        }
    }

    /// Single-site term, absent for the XY model.
    pub fn site_term(&self) -> Option<TermSpec> {
        match self.kind {
            ModelKind::Xy => None,
            ModelKind::Tfi => Some(TermSpec::new(TermKind::XField, self.field)),
        }
    }

    /// Domain wall `|↑…↑↓…↓⟩` for XY, all `|↓⟩` for TFI.
    pub fn initial_state(&self) -> Result<StateVector> {
        let spins = self.initial_spins()?;
        StateVector::basis_state(self.num_sites, &spins)
    }

    pub fn initial_spins(&self) -> Result<Vec<Spin>> {
        let n = self.num_sites;
        match self.kind {
            ModelKind::Xy => {
                if n % 2 != 0 {
                    return Err(Error::param(format!(
                        "domain wall needs an even chain length, got {n}"
                    )));
                }
                Ok((0..n)
                    .map(|i| if i < n / 2 { Spin::Up } else { Spin::Down })
                    .collect())
            }
            ModelKind::Tfi => Ok(vec![Spin::Down; n]),
        }
    }
}

/// Contiguous equal-size blocks of sites, one per compute node.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    num_nodes: usize,
    block: usize,
    node_of_site: Vec<usize>,
    cut_bonds: Vec<Bond>,
}

impl Partition {
    pub fn new(model: &ChainModel, num_nodes: usize) -> Result<Self> {
        let n = model.num_sites();
        if num_nodes == 0 {
            return Err(Error::param("node count must be at least 1"));
        }
        if n % num_nodes != 0 {
            return Err(Error::param(format!(
                "{n} sites cannot be split into {num_nodes} equal nodes"
            )));
        }
        let block = n / num_nodes;
        let node_of_site: Vec<usize> = (0..n).map(|i| i / block).collect();
        let cut_bonds = model
            .bonds()
            .iter()
            .filter(|b| node_of_site[b.left] != node_of_site[b.right()])
            .copied()
            .collect();
        Ok(Partition {
            num_nodes,
            block,
            node_of_site,
            cut_bonds,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_sites(&self) -> usize {
        self.node_of_site.len()
    }

    pub fn node_of_site(&self, site: usize) -> usize {
        self.node_of_site[site]
    }

    pub fn node_sites(&self, node: usize) -> Range<usize> {
        node * self.block..(node + 1) * self.block
    }

    /// Bonds whose endpoints sit on different nodes, left to right. Cut bond
    /// `c` joins nodes `c` and `c + 1`.
    pub fn cut_bonds(&self) -> &[Bond] {
        &self.cut_bonds
    }

    pub fn is_cut(&self, bond: &Bond) -> bool {
        self.node_of_site[bond.left] != self.node_of_site[bond.right()]
    }
}
