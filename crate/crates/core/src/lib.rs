//! Multi-cell eMBB/URLLC coexistence simulator with a DRL-based
//! radio-resource-management suite and benchmark harness.
//!
//! The crate is organized around the control loop it simulates:
//!
//! - [`channel`]: pathloss, block fading, SINR and Shannon-rate abstraction.
//! - [`traffic`]: full-buffer eMBB demand and Poisson URLLC arrivals with
//!   per-packet deadlines.
//! - [`scheduler`]: the slot/RB/mini-slot resource grid and the eMBB
//!   puncturing service discipline.
//! - [`env`]: the decision-process wrapper that encodes observations,
//!   decodes actions, advances one slot and computes rewards.
//! - [`nn`], [`replay`], [`agents`]: from-scratch networks plus DQN, DDQN,
//!   DDPG, PGAC, TD3 and the Thompson-sampling-guided TD3 variant.
//! - [`thompson`]: Beta-posterior sampling machinery.
//! - [`federation`]: per-cell acting agents, centralized training on pooled
//!   experience, and parameter broadcast.
//! - [`harness`]: experiment runner, metrics persistence, CCDF computation,
//!   agent comparison and the self-test suite behind the CLI.

pub mod agents;
pub mod channel;
pub mod env;
pub mod error;
pub mod federation;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod scheduler;
pub mod thompson;
pub mod traffic;

pub use error::{Result, SimError};
