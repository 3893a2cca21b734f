//! Kinematic simulator and control stack for docking a straight
//! micro-surgical rod, carried by a redundant serial arm, into an eye trocar.

// `!(x > 0.0)` is how validation rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arm_model;
pub mod batch;
pub mod control;
pub mod error;
pub mod scenario;
pub mod scene;
pub mod sim;
pub mod trial;

pub use error::{Error, Result};
