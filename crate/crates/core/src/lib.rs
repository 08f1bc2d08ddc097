//! Sub-Finsler isoperimetric candidates in the first Heisenberg group.

pub mod bubble;
pub mod characteristic;
pub mod circle;
pub mod crystalline;
pub mod foliation;
pub mod geodesics;
pub mod heis;
pub mod norm;
pub mod ode;
pub mod quad;
pub mod vec2;
