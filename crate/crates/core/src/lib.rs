// dense numeric kernels read more clearly with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod cluster;
pub mod dea;
pub mod linprog;
pub mod panel;
pub mod pipeline;
pub mod pls;
pub mod stats;
pub mod synthetic;
mod util;
