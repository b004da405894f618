//! Appearance-based gaze estimation with a combined classification and
//! regression loss.
//!
//! Each gaze angle (yaw, pitch) is predicted by its own fully-connected head
//! on a shared CNN backbone. Heads emit logits over uniform angle bins; the
//! softmax distribution is trained with cross entropy against the bin label,
//! and its expectation over bin centers is trained with a squared error
//! against the continuous label.

pub mod binning;
pub mod error;
pub mod eval;
pub mod data;
pub mod exec;
pub mod geometry;
pub mod loss;
pub mod nn;
pub mod model;
pub mod oracle;
pub mod optim;
pub mod reference;
pub mod report;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};

/// A `(channels, height, width)` image with values in [0, 1].
pub type Image = ndarray::Array3<f64>;
