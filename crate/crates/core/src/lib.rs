//! Numerical laboratory for Hamilton–Randers cyclic dynamics.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: phase-space points, drift fields, the Randers condition and the
//!   Hamilton–Randers function `F = α + β` with its fundamental tensor.
//! * [`dynamics`]: the cyclic flow driven by `H_t = (1-κ)^{1/2} Σ β^k(u) p_k`,
//!   fixed-step integrators, equilibrium snapshots and the time reparameterization.
//! * [`lipschitz`]: sampled Lipschitz constants, 1-Lipschitz normalization and the radial
//!   split of a Hamiltonian into a global 1-Lipschitz part plus a matter remainder.
//! * [`concentration`]: samplers on metric-measure spaces, Lévy medians, empirical tail
//!   profiles and the sphere/Gaussian concentration bounds.
//! * [`observables`]: center-of-mass coordinates, the mean guide, free-evolution
//!   bookkeeping and the weak-equivalence-principle experiment.
//! * [`gravity`]: the Newtonian force-difference Lipschitz ratio against Planck units.

pub mod concentration;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod gravity;
pub mod lipschitz;
pub mod observables;
pub mod output;
pub mod rng;
pub mod stats;

pub use concentration::{ConcentrationProfile, MMSpaceSampler, SamplerKind};
pub use dynamics::{CycleSchedule, FlowConfig, FlowState, Integrator, KappaProfile, Trajectory};
pub use error::{Error, Result};
pub use geometry::{
    ConstantField, DriftField, HamiltonRandersStructure, LinearField, PhasePoint, RandersField,
    TanhField, ZeroField,
};
pub use gravity::{GravityScaleCase, PhysicalConstants};
pub use lipschitz::{CompactBox, HamiltonianDecomposition, LipschitzEstimate, BoxMetric};
pub use observables::{Ensemble, ObservableTrajectory, Preparation, Tag};
