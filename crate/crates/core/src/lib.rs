//! Understanding long probability problems: corpus construction, concept
//! classification, a concept/problem/answer graph, and sentence-level
//! extraction of what a problem asks for.

pub mod corpus;
pub mod embed;
pub mod encoder;
pub mod checks;
pub mod concept;
pub mod error;
pub mod eval;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod stats;
pub mod synth;
pub mod unknown;

pub use error::{Error, Result};
