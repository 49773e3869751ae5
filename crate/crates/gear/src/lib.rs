//! Desk-scale fact verification: evidence retrieval and selection, a
//! graph-based evidence reasoning network with pluggable aggregation, and the
//! FEVER-family evaluation metrics, trainable end to end without any
//! pre-trained language model.

pub mod aggregator;
pub mod data;
pub mod encoder;
pub mod ernet;
pub mod error;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod tensorcore;
pub mod text;
pub mod train;

pub use error::{GearError, Result};
