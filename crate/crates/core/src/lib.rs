//! Discrete swept skeletal representations of slab-like 3D objects.
//!
//! The crate fits a skeletal sheet, a spine and a grid of spokes to a closed
//! triangle mesh, packs the result into a local-pose tuple suitable for
//! population statistics, scores the fit and runs two-sample tests and
//! classification on cohorts of such tuples.

pub mod cms;
pub mod division;
pub mod error;
pub mod flatten;
pub mod gc2d;
pub mod geometry;
pub mod gof;
pub mod lp;
pub mod mesh;
pub mod pipeline;
pub mod polyfit;
pub mod spatial;
pub mod stats;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Vec2, Vec3};
pub use mesh::TriangleMesh;
