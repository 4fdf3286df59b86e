//! Two-stage training lab for embodied agents: prior-data curation, a
//! behavior-cloned micro policy, and turn-level PPO with dense rewards, run
//! against two small deterministic simulators.
//!
//! * [`env_high`] is MiniHouse, a symbolic household with ALFRED-style skills.
//! * [`env_low`] is MiniTable, a tabletop with 7-D gripper actions.
//! * [`response`] holds the think/act response grammar shared by both.

pub mod context;
pub mod env_high;
pub mod env_low;
pub mod harness;
pub mod policy;
pub mod priors;
pub mod response;
pub mod rl;
pub mod rewards;
pub mod types;
pub mod vocab;
