//! Steady Stokes flow through one period of a planar profile cascade.

pub mod data;
pub mod element;
pub mod error;
pub mod export;
pub mod femspace;
pub mod geometry;
pub mod lifting;
pub mod linsolve;
pub mod manufactured;
pub mod mesh;
pub mod solver;
pub mod sparse;
pub mod tensorfield;
pub mod verify;

pub use error::{Error, Result};
