//! Surrogate-assisted hybrid metaheuristic for expensive mixed-variable
//! coverage optimization of directional sensors over terrain.
//!
//! The crate is organised bottom-up:
//!
//! - [`terrain`]: elevation raster, line of sight, synthetic relief
//! - [`scenario`]: problem instances and the benchmark generator
//! - [`evaluator`]: the expensive coverage objective and evaluation budget
//! - [`genome`]: mixed-variable solutions, repair, distances, site permutations
//! - [`ga`]: correlation-aware genetic operators (global optimizer)
//! - [`ranker`]: pairwise ranking network used as the global surrogate
//! - [`local`]: weighted EDA with an RBF-network screen (local search)
//! - [`controller`]: the optimization loop and its ablation variants

pub mod error;
pub mod controller;
pub mod evaluator;
pub mod ga;
pub mod genome;
pub mod local;
pub mod ranker;
pub mod sampling;
pub mod scenario;
pub mod terrain;

pub use error::{Error, Result};
