//! Meta-learned initializations for hash-encoded radiance fields.
//!
//! A radiance field (hash-grid encoding plus two small MLPs) is fitted to
//! a scene by differentiable volume rendering. Reptile, first-order MAML or
//! second-order MAML learn a shared starting point across a category of
//! scenes, so that a new scene can be fitted from two to six posed views in
//! a fixed number of steps.

pub mod cli;
pub mod config;
pub mod encoding;
pub mod error;
pub mod field;
pub mod geometry;
pub mod meta;
pub mod metrics;
pub mod optim;
pub mod real;
pub mod render;
pub mod scenes;
pub mod seed;

pub use error::{Error, Result};
