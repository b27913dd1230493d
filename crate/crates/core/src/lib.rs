//! Numerical solver for the deformed Abreu equation on Delzant polytopes.

pub mod basis;
pub mod jet;
pub mod operator;
pub mod poly;
pub mod siegel;
pub mod polytope;
pub mod solver;
pub mod spectral;
pub mod stability;
pub mod verify;
