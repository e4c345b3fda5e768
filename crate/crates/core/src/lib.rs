//! Monte Carlo tree search over token sequences.
//!
//! Captions are built one token at a time. Each step runs a PUCT search whose
//! leaves are expanded along the most salient undescribed regions of a
//! synthetic world and valued by fusing the model's coarse estimate with a
//! small learned value network. Terminal states are scored by a composite
//! reward (quality + depth incentive − repetition penalty). A brute-force
//! oracle enumerates small worlds exactly for testing.
//!
//! All math is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`, which is what the command-line harness uses.

pub mod domain;
pub mod error;
pub mod model;
pub mod oracle;
pub mod planner;
pub mod reward;
pub mod scalar;
pub mod training;
pub mod tree;
pub mod value_net;
pub mod worlds;

pub use domain::{append_token, validate_world, RegionId, RegionSpec, SequenceState, TokenId, WorldViolation};
pub use error::{PlanError, Result};
pub use scalar::Scalar;

pub type World = domain::WorldInstance<f64>;
pub type Config = domain::PlannerConfig<f64>;
pub type Reward = domain::RewardBreakdown<f64>;
pub type Policy = model::PolicyVector<f64>;
pub type Edge = tree::EdgeStats<f64>;
pub type Tree = tree::SearchTree<f64>;
pub type Net = value_net::ValueNet<f64>;
pub type Hyper = value_net::TrainingHyper<f64>;
pub type Trace = planner::RunTrace<f64>;
pub type Oracle = oracle::OracleResult<f64>;

pub type World32 = domain::WorldInstance<f32>;
pub type Config32 = domain::PlannerConfig<f32>;
pub type Net32 = value_net::ValueNet<f32>;
