//! Incremental 3D reconstruction from posed aerial image sequences.
//!
//! The pipeline groups keyframes into five-frame bundles
//! ([`sampler`]), estimates a depth map for each bundle's middle frame by
//! hierarchical plane-sweep matching and semi-global regularization
//! ([`matcher`], [`sgm`]), and fuses the depth maps into a global surfel
//! model ([`fusion`]). [`eval`] implements trajectory, depth and point-cloud
//! metrics; [`io`], [`synth`] and [`pipeline`] provide file formats, a
//! synthetic scene generator and end-to-end orchestration.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod io;
pub mod maps;
pub mod matcher;
pub mod pipeline;
pub mod sampler;
pub mod sgm;
pub mod synth;
