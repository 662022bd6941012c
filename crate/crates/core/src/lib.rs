//! Numerical laboratory for semi-parabolic complex Hénon maps
//! `H(x, y) = (x² + c + ay, ax)` on the curve where `DH` has a fixed point
//! with eigenvalue a root of unity.

pub mod config;
pub mod error;
pub mod graph_transform;
pub mod henon_core;
pub mod json;
pub mod poly_dynamics;
pub mod normal_form;
pub mod petals_cones;
pub mod render;
pub mod series;
pub mod solenoid_model;
pub mod stable_manifold;
pub mod verify;

pub use error::{LabError, Result};
