//! Numerical laboratory for a linear elasticity system coupled with a
//! matrix-valued Maxwell-type (curl-curl) problem on cube domains.
//!
//! The crate assembles and solves the coupled weak problem with trilinear
//! hexahedral elements, implements inner-variation maps with Piola-type field
//! transformations, and measures difference-quotient norms that witness
//! interior regularity of the discrete solutions.

pub mod cli;
pub mod config;
pub mod discretization;
pub mod inner_variation;
pub mod material;
pub mod regularity_probe;
pub mod report;
pub mod tensor_fields;
pub mod verify;

pub use tensor_fields::{CubeDomain, CurlConvention, FieldExpr, MatMN, Point3};
