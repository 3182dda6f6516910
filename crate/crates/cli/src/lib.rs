//! Batch driver for droplab: JSON run configs in, artifacts and a manifest
//! out.

pub mod config;
pub mod run;
