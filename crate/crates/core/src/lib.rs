//! Multi-agent deep actor-critic transmit power control for mobile cellular
//! downlinks.
//!
//! The library simulates a hexagonal multi-cell network with random-walk
//! devices, log-normal shadowing and Jakes-correlated Rayleigh fading, trains
//! a shared deterministic policy with centralized training and distributed
//! execution, and benchmarks it against WMMSE, fractional programming and
//! simple heuristics.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`.

pub mod agent_state;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod ddpg;
pub mod error;
pub mod geometry;
pub mod netsim;
pub mod nn;
pub mod orchestrator;
pub mod rng;
pub mod scalar;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp = nn::Mlp<f64>;
pub type Checkpoint = nn::Checkpoint<f64>;
pub type DdpgLearner = ddpg::DdpgLearner<f64>;
pub type Experience = ddpg::Experience<f64>;
pub type ReplayMemory = ddpg::ReplayMemory<f64>;
pub type LinkGains = netsim::LinkGains<f64>;
pub type SlotLog = netsim::SlotLog<f64>;
pub type NeighborSets = netsim::NeighborSets<f64>;
pub type StateBuilder = agent_state::StateBuilder<f64>;
pub type AllocatorResult = baselines::AllocatorResult<f64>;
pub type CellLayout = geometry::CellLayout<f64>;
pub type World = orchestrator::World<f64>;
pub type Rollout = orchestrator::Rollout<f64>;
pub type Trainer = orchestrator::Trainer<f64>;
pub type RunOutcome = orchestrator::RunOutcome<f64>;
