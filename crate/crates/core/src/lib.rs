//! Statevector simulation of Trotterized time evolution on 1-D spin-1/2
//! chains whose sites are split across linearly connected compute nodes.
//!
//! Three decompositions are supported:
//!
//! * **uniform**: the symmetric second-order product formula with one global
//!   step size,
//! * **sparse**: node-local evolution keeps the fine step `dt` while bonds that
//!   straddle two nodes (cut bonds) are evolved once every `n` steps with step
//!   `n * dt`,
//! * **stochastic sparse**: cut-bond step durations are drawn from a normal
//!   distribution and node-local evolution is stretched to keep every node's
//!   clock in sync with its interconnects.
//!
//! The crate is organised bottom-up: [`statevec`] holds amplitudes and gate
//! kernels, [`gates`] the closed-form term exponentials, [`model`] the chain and
//! its partition, [`trotter`] the schedule builders and executor,
//! [`observables`] fidelities and spin expectation values, [`oracle`] dense
//! exact evolution for small chains, and [`experiments`] the config-driven
//! runner used by the CLI.

pub mod error;
pub mod experiments;
pub mod gates;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod statevec;
pub mod trotter;

pub use error::{Error, Result};
pub use gates::{GateMatrix, TermKind, TermSpec};
pub use model::{Bond, ChainModel, ModelKind, Parity, Partition};
pub use statevec::{Spin, StateVector};
pub use trotter::{Layer, LayerKind, Schedule, Scope, StochasticParams};

/// Double-precision complex amplitude.
pub type C64 = num_complex::Complex64;
