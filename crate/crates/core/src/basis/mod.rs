//! Basis constructors for grids and graphs.

mod graph;
mod grid;

pub use graph::*;
pub use grid::*;
