//! Galerkin laboratory for the wave equation with measure-valued damping
//! `u_tt − Δu + M_μ u_t = 0` on Euclidean intervals and rectangles.
//!
//! * [`measure`] builds finite positive measures (points, curves, Cantor sets,
//!   products, flows, densities) and turns them into weighted atoms.
//! * [`fem`] meshes the domain and assembles P1 mass, stiffness and damping.
//! * [`spectral`] realizes the first-order generator, its spectrum, resolvent
//!   and the imaginary-mode/stabilization criteria.
//! * [`evolution`] steps the semigroup with the implicit midpoint rule and
//!   tracks the energy balance.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod evolution;
pub mod fem;
pub mod linalg;
pub mod measure;
pub mod spectral;

pub use faer::c64;
