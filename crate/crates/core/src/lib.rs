//! Co-design of passive-wheel yaw angles and a skating control policy.
//!
//! The outer loop searches wheel installation angles with Gaussian-process
//! Bayesian optimization; each candidate is scored by training a PPO policy
//! on a reduced-order planar skating simulator and averaging its cost of
//! transport over the final training window.

pub mod design;
pub mod error;
pub mod rewards;
pub mod sim;
pub mod nn;
pub mod policy;
pub mod gae;
pub mod ppo;
pub mod train;
pub mod gp;
pub mod acquisition;
pub mod codesign;
pub mod scenario;
pub mod config;
pub mod report;
