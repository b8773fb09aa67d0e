//! Coarse-to-fine multi-scene absolute camera pose regression.
//!
//! One transformer model localizes a camera across many scenes: it first
//! picks the scene, then a pose cluster centroid within that scene, and
//! finally regresses a residual on top of the centroid.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod clustering;
pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod model;
pub mod pose;

pub use error::{Error, Result};
pub use pose::{Pose, PoseError, Quaternion};
