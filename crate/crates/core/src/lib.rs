//! Multi-optimality control as inference, max-ent PPO and adversarial
//! imitation with task-achievement rewards.

pub mod bc;
pub mod env;
pub mod error;
pub mod expert;
pub mod gail;
pub mod harness;
pub mod math;
pub mod oracle;
pub mod pgm;
pub mod rl;

pub use error::{Error, Result};
