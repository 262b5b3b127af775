//! Two-agent kernel learning with a fusion center.
//!
//! Each agent learns a function in its own reproducing kernel Hilbert space
//! from a stream of scalar observations. A fusion center combines the two
//! estimates in the space of the summed kernel and sends each agent back the
//! part of the combined function that its space can represent.

pub mod linalg;

pub mod agent_estimator;
pub mod fusion_center;
pub mod learning_runtime;
pub mod operator_analysis;
pub mod rkhs_core;

pub mod harness;
