//! Gradient-aware model-based policy search.
//!
//! The crate is organised around the batch loop: a fixed [`Dataset`] of
//! trajectories collected by a known behavior policy is re-weighted for the
//! current policy ([`weighting`]), a transition model is fitted with those
//! weights ([`models`]), the model is used to evaluate the policy ([`value`]),
//! and the resulting action values feed an importance-sampled policy gradient
//! ([`gradient`]) that drives an Adam ascent step ([`optim`]).
//!
//! Tabular problems additionally get exact oracles for every quantity the
//! sample-based path estimates: occupancy measures, action values, the true
//! policy gradient and the model-bias bound.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod envs;
pub mod error;
pub mod gradient;
pub mod mdp;
pub mod models;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod table;
pub mod value;
pub mod weighting;

mod linalg;

pub use error::{Error, Result};
pub use mdp::{Dataset, Environment, Step, StepOutcome, TabularMdp, Trajectory};
pub use policy::{Policy, PolicyRecord, QNorm, RbfGaussianPolicy, TabularPolicy, TabularSoftmaxPolicy};
pub use rng::SimRng;
pub use table::SaTable;
