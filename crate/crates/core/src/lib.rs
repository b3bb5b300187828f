//! Best-of-both-worlds online learning in episodic loop-free MDPs.
//!
//! The crate simulates FTRL learners over occupancy measures that run
//! unchanged against stochastic and adversarial loss sequences, with known or
//! unknown transitions and full-information or bandit feedback, and measures
//! their regret exactly.

pub mod certify;
pub mod environment;
pub mod error;
pub mod estimation;
pub mod ftrl;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod oracle;
pub mod rng;
pub mod uob;

pub use error::{Error, Result};
