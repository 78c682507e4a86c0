//! Symbolic-numeric toolkit for pseudospherical structure equations and their surfaces
//! `u_t - u_xxt = u^2 u_xxx - u^2 u_xx - 3 u u_x^2 - 2 u^2 u_x + 4 u u_x u_xx + u_x^3`
//! viewed as an equation describing pseudospherical surfaces.

pub mod chsolver;
pub mod evalbridge;
pub mod immersion;
pub mod jetring;
pub mod pseudopot;
pub mod pssforms;
pub mod report;
pub mod surface3d;
