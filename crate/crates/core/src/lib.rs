//! Matrix-free P2 stencil kernels on structured triangle grids, plus an
//! analytical ECM performance model for them.
//!
//! A macro triangle refined `level` times yields rows of vertices and three
//! families of edge midpoints (horizontal, vertical, diagonal), each stored as
//! a flat row-major triangular array. The crate provides:
//!
//! * index arithmetic and iteration domains for those arrays ([`grid`]),
//! * field containers and the 46-weight P2 operator ([`fields`]),
//! * the four stencil kernels and a generic interpreter ([`kernels`]),
//! * a CRS assembly/SpMV oracle and memory footprint model ([`sparse`]),
//! * cache-aware cycle predictions per work unit ([`ecm`]),
//! * a C source generator mirroring the kernels ([`codegen`]),
//! * verification, benchmark and report drivers ([`harness`]).

pub mod codegen;
pub mod ecm;
mod error;
pub mod fields;
pub mod grid;
pub mod harness;
pub mod kernels;
pub mod sparse;

pub use error::{Error, Result};
