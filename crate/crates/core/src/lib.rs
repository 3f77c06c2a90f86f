//! Graph-matrix machinery for sum-of-squares moment matrices.
//!
//! The crate is organized around a small set of combinatorial objects:
//! typed multi-hypergraphs with two distinguished index tuples ([`Shape`]),
//! their concrete instantiations ([`Ribbon`]), and the dense matrices they
//! evaluate to on a given input. On top of those sit vertex-separator
//! decompositions, planted-distribution coefficient functions, shape
//! coefficient matrices with their spectral conditions, and intersection
//! patterns with exact correction identities.

pub mod error;
pub mod fourier;
pub mod harness;
pub mod intersect;
pub mod machinery;
pub mod matrix;
pub mod pseudocal;
pub mod rng;
pub mod scalar;
pub mod separators;
pub mod shape;

pub use error::Error;
pub use fourier::{EvaluatedMatrix, HermiteTable, InputTensor, NormEstimate};
pub use intersect::{CollapsedShape, IntersectionPattern};
pub use machinery::{BoundParams, CoefficientMatrix, ConditionReport};
pub use matrix::Mat;
pub use pseudocal::{Problem, ProblemParams};
pub use scalar::{parse_rational, SqrtRat};
pub use separators::{Decomposition, FlowGraph, Separator, ShapeFamilies};
pub use shape::{
    Canon, Edge, EnumConfig, IndexShape, MatrixIndex, Piece, Ribbon, Shape, TypeTable, Weight,
};

pub type Result<T> = std::result::Result<T, Error>;
