//! Category-level neural object priors.
//!
//! Offline, a per-category prior is produced by meta-learning the initial
//! parameters of a small hash-grid neural field over procedurally generated
//! reconstruction tasks, with the field architecture itself chosen by a
//! two-objective genetic search. Online, the mapper associates detections into
//! object tracks, estimates a canonical 9-DoF state against the prior density
//! grid and trains one field per object, steering ray samples with the prior.

pub mod archsearch;
pub mod bundle;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod field;
pub mod geometry;
pub mod kdtree;
pub mod meshmetrics;
pub mod metalearn;
pub mod objmap;
pub mod priorgrid;
pub mod render;
pub mod taskgen;
pub mod threads;
pub mod train;

pub use error::{Error, Result};
