//! Early-warning dropout prediction for online course students.
//!
//! The pipeline turns raw per-student event logs into `<student, day>`
//! feature rows, labels the final observation of each dropout as positive,
//! adds weighted pseudo-positive rows from the days just before dropout,
//! re-balances by weighted over-sampling and fits gradient-boosted trees.

pub mod augmentation;
pub mod error;
pub mod evaluation;
pub mod event_store;
pub mod features;
pub mod labeling;
pub mod pipeline;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use event_store::{Cohort, Day, EventKind, FinalStatus, Observation, Schema, StudentRecord};
