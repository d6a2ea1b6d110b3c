//! Context-aware recommendation for users the system knows nothing about yet.
//!
//! Three policies share one context model:
//!
//! * [`cf`]: memory-based collaborative filtering over implicit 0/1 profiles,
//!   restricted to the target's social group so a brand-new user inherits the
//!   group's habits.
//! * [`rl`]: tabular Q-learning over discrete `(time, social, cognitive)` states.
//! * [`policy`]: greedy, ε-greedy and CF-QL, where the exploratory move of
//!   ε-greedy is a CF pick instead of a uniform draw.
//!
//! [`simulator`] replays scripted scenarios against a simulated user, and
//! [`harness`] runs the precision-per-interval experiment and compares
//! algorithms across seeds.

pub mod cf;
pub mod context;
pub mod error;
pub mod harness;
pub mod policy;
pub mod rl;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
