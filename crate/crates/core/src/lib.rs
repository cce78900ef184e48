// NaN-rejecting parameter checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod delaunay;
pub mod error;
pub mod filter;
pub mod fit;
pub mod grid;
pub mod mesh;
pub mod metrics;
pub mod nurbs;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
