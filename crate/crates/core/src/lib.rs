//! Desk-scale adversarial-robustness testbed for deep reinforcement learning.
//!
//! The crate trains small continuous-control victim policies with PPO,
//! attacks them with a family of gradient-based state perturbations plus the
//! STAR selective state-aware adversary, and verifies attack-success bounds
//! exactly on tabular MDPs.
//!
//! The numeric core ([`tensor`], [`autodiff`], [`theory`]) is generic over
//! the scalar type via [`scalar::Real`]; the concrete `f64` aliases below are
//! what the rest of the workspace uses.

pub mod attacks;
pub mod autodiff;
pub mod checkpoint;
pub mod envs;
pub mod metrics;
pub mod nets;
pub mod norm;
pub mod opt;
pub mod ppo;
pub mod rng;
pub mod scalar;
pub mod star;
pub mod tensor;
pub mod testkit;
pub mod theory;

/// Default-precision tensor. Theorem checks and finite-difference tests rely
/// on 64-bit precision throughout.
pub type Tensor = tensor::TensorBase<f64>;
/// Default-precision compute graph.
pub type Graph = autodiff::Graph<f64>;
/// Default-precision tabular MDP.
pub type TabularMdp = envs::tabular::TabularMdpBase<f64>;
/// Default-precision stochastic policy table.
pub type PolicyTable = theory::PolicyTableBase<f64>;

pub use rng::Rng;
