//! Minimal dense matrix arithmetic with reverse-mode automatic
//! differentiation. Everything is 64-bit and single-threaded per graph;
//! built graphs and parameter snapshots are immutable and safe to share
//! read-only.

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{check_gradients, GradCheckEntry, GradCheckReport};
pub use graph::{Graph, Node, LOG_CLAMP};
pub use matrix::Matrix;
