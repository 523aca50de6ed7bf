//! Free-boundary plasma equilibrium reconstruction from magnetic measurements.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too; index loops
// mirror the matrix formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boundary;
pub mod error;
pub mod fem;
pub mod formats;
pub mod geometry;
pub mod machine;
pub mod magnetostatics;
pub mod pipeline;
pub mod presets;
pub mod synth;
pub mod th_fit;
pub mod toroidal_harmonics;

pub use error::{Error, Result};
pub use geometry::{Contour, Point};
