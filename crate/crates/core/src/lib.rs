//! Neural collaborative filtering (GMF, MLP) with group recommendation by
//! weighted multi-hot aggregation at the user embedding.

pub mod aggregation;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod groups;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
