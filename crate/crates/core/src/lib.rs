//! Direct monocular visual odometry with an inertia prior.
//!
//! Depth, pose and explainability parameters of short frame snippets are fit
//! by Adam against a multi-scale photometric, structural and 3D alignment
//! objective, with a kinematic penalty on acceleration and jerk and a
//! speed-dependent hard border mask.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity)]

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod grid;
pub mod masking;
pub mod objective;
pub mod optimizer;
pub mod par;
pub mod pipeline;
pub mod synthesis;

pub use error::{Error, Result};
