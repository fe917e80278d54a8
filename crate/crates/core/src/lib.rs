pub mod binio;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod planner;
pub mod seeding;
pub mod sparsenet;
pub mod terrain;
pub mod voxelize;
pub mod voxgrid;

pub use error::{Error, Result};
