//! Std runtime for `gst-core`: participant CSV io, a rayon worker pool and
//! the `gst` command-line interface.

pub mod cli;
pub mod io;
pub mod pool;

pub use gst_core::*;
pub use pool::Pool;
