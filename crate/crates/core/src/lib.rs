//! Certainty-equivalence planning from generative-model samples, with exact
//! world and batch enumeration, trajectory-tree selection, sample-size bounds
//! and a lower-bound instance family.
//!
//! The numeric core is generic over [`Scalar`], so the same code runs on
//! `f32`, `f64` and exact `BigRational`s.

pub mod bounds;
pub mod cem;
pub mod dp;
pub mod error;
pub mod harness;
pub mod lower_bound;
pub mod mdp;
pub mod policy;
pub mod precise;
pub mod sampling;
pub mod scalar;
pub mod ttm;
pub mod verify;
pub mod worlds;

pub use error::{Error, Result};
pub use mdp::{Horizon, Kind, MdpSpec, Violation};
pub use policy::{Policy, ValueTable};
pub use sampling::Dataset;
pub use scalar::{CompensatedSum, Scalar};

pub type Mdp = MdpSpec<f64>;
pub type ExactMdp = MdpSpec<num_rational::BigRational>;
pub type Values = ValueTable<f64>;
pub type ExactValues = ValueTable<num_rational::BigRational>;
pub type EmpiricalMdp = cem::EmpiricalModel<f64>;
