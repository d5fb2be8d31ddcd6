//! Scalar (anti-plane) Hencky plasticity on convex polygons.
//!
//! The crate minimizes the relaxed plasticity functional by Perzyna
//! continuation on P1 meshes, recovers stress and plastic strain, and
//! analyzes the plastic zone through its straight characteristics: fans,
//! constant zones, displacement constancy and the related rigidity checks.

pub mod analysis;
pub mod cli;
pub mod energy;
pub mod geom;
pub mod mesh;
pub mod oracles;
pub mod solver;

pub use geom::Vec2;
