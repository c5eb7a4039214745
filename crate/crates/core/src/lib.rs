//! Nonlocal total variation, nonlocal curvature and rate functionals for even kernels,
//! together with their local limits and the geometric flows they drive.

// Negated comparisons reject NaN inputs on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod anisotropy;
pub mod curvature;
pub mod energy;
pub mod error;
pub mod fields;
pub mod flow;
pub mod kernel;
pub mod quadrature;
pub mod rate;
pub mod scalar;
pub mod vector;

pub use error::{Error, Result};
pub use scalar::{lit, Extended, Real};

/// Double-precision instances of the generic types.
pub mod f64 {
    pub type Kernel = crate::kernel::Kernel<f64>;
    pub type Anisotropy = crate::anisotropy::Anisotropy<f64>;
    pub type GridBox = crate::fields::GridBox<f64>;
    pub type GridField = crate::fields::GridField<f64>;
    pub type Shape = crate::fields::Shape<f64>;
    pub type FlowState = crate::flow::FlowState<f64>;
    pub type Trajectory = crate::flow::Trajectory<f64>;
}
