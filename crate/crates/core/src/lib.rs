//! Rate-compatible polar codes for families of binary-input memoryless
//! symmetric channels that need not be ordered by degradation, together with
//! a HARQ incremental-redundancy link simulator.

pub mod alignment;
pub mod channels;
pub mod construction;
pub mod error;
pub mod harq;
pub mod polar;
pub mod ratecompat;
pub mod seeding;

pub use error::{Error, Result};
