//! Zero-shot domain adaptation with task-guided multi-branch networks.
//!
//! The network routes each batch through one of two unshared domain
//! branches, a shared segment, and one of two task branches. Training uses
//! labelled source-domain data for the main task plus paired source/target
//! samples of an auxiliary task; the target-domain main task is never seen.

pub mod analysis;
pub mod config;
pub mod data;
pub mod evaluation;
pub mod experiment;
pub mod fsutil;
pub mod losses;
pub mod model;
pub mod nn;
pub mod rng;
pub mod route;
pub mod tensor;
pub mod training;

pub use route::{DomainRole, Route, TaskRole};
pub use tensor::Tensor;
