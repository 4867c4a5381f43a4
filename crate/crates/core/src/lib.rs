//! Incremental 3-D scene graphs from posed RGB-D frames with detections.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` is meant to reject NaN too

pub mod blur;
pub mod bundle;
pub mod detection;
pub mod error;
pub mod frame;
pub mod graph;
pub mod keyframe;
pub mod local_graph;
pub mod netpbm;
pub mod pddl;
pub mod pipeline;
pub mod query;
pub mod synth;

pub use error::{Error, Result};
