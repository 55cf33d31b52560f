//! B-spline velocity-field level set topology optimization.
//!
//! The boundary normal velocity is a tensor-product B-spline whose
//! coefficients are the design variables. Density sensitivities of volume,
//! p-norm stress and KS-aggregated buckling load factors come from discrete
//! adjoint solves and are projected onto the coefficients through the
//! smoothed Dirac function of the level set.

pub mod fem;
pub mod bspline;
pub mod buckling;
pub mod levelset;
pub mod mma;
pub mod sensitivity;
pub mod driver;
