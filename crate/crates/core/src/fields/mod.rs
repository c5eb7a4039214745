//! Grid and analytic representations of sets and functions.

mod grid;
mod io;
mod shape;
mod spline;

pub use grid::{differentiate, rasterize, slice, superlevel, GridBox, GridField, Interpolation, LineSamples, RasterMode, Tag};
pub use io::{read_field, write_field};
pub use shape::{BoundaryPiece, Shape};
pub use spline::CubicSpline;

#[cfg(test)]
mod tests;
