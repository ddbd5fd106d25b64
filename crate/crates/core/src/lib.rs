//! Evaluation framework for microservice scheduling policies under
//! cloud-edge network and call-graph dynamics.

pub mod cluster;
pub mod error;
pub mod graph;
pub mod harness;
pub mod net;
pub mod policy;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
