//! Flow-based dataflow runtime whose graph doubles as a structural causal model.

pub mod attribution;
pub mod claims;
pub mod experiment;
pub mod graph;
pub mod log;
pub mod runtime;
pub mod scm;
pub mod stats;
pub mod value;
