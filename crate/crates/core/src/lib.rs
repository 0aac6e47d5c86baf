pub mod balance;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod kernels;
pub mod qp;
pub mod seeding;
pub mod simulation;
pub mod trajectories;

pub use error::{Error, Result};
