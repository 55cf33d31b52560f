//! Plane-stress finite element analysis on a structured Q4 grid with an
//! Ersatz material model.

mod assembly;
pub mod element;
pub mod mesh;
mod sparse;

use thiserror::Error;

pub use assembly::{
    assemble_stiffness, assemble_stress_stiffness, element_stresses, solve_equilibrium,
    stress_stiffness_u_derivative, DisplacementField, StressState,
};
pub use assembly::{factorize, solve_with};
pub use element::{unit_element_stiffness, ElementKernel};
pub use mesh::{force_vector_from, StructuredMesh};
pub use sparse::{StiffnessFactorization, SymmetricSparseMatrix};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("{what} on dof {dof} whose node touches no active element")]
    DetachedNode { dof: usize, what: &'static str },
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("singular or indefinite system: {0}")]
    SingularSystem(String),
    #[error("factorization setup failed: {0}")]
    Factorization(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// How element stresses see the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StressInterpolation {
    /// Stress uses the same interpolated modulus as the stiffness.
    Ersatz,
    /// Stress uses the solid modulus regardless of density.
    Solid,
    /// Stress modulus E (E_ersatz(ρ)/E)^½: gray material reports more
    /// stress than its Ersatz value, unloaded void next to solid less than
    /// the solid value.
    Relaxed,
    /// Stress modulus ρE: void carries no stress at all.
    Linear,
}

const RELAXED_EXPONENT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModel {
    pub e: f64,
    pub e_min: f64,
    pub nu: f64,
    pub stress_interpolation: StressInterpolation,
}

impl MaterialModel {
    pub fn new(e: f64, e_min: f64, nu: f64) -> Result<Self, FemError> {
        if !(e > 0.0 && e.is_finite()) {
            return Err(FemError::InvalidMaterial(format!("E must be positive, got {e}")));
        }
        if !(e_min > 0.0 && e_min < e) {
            return Err(FemError::InvalidMaterial(format!("E_min must lie in (0, E), got {e_min}")));
        }
        if !(0.0..0.5).contains(&nu) {
            return Err(FemError::InvalidMaterial(format!("Poisson ratio {nu} outside [0, 0.5)")));
        }
        Ok(Self { e, e_min, nu, stress_interpolation: StressInterpolation::Ersatz })
    }

    /// Unit-modulus material with E_min = 1e-6 E, ν = 0.3.
    pub fn standard() -> Self {
        Self::new(1.0, 1e-6, 0.3).expect("valid constants")
    }

    /// Ersatz modulus E_min + ρ (E − E_min).
    pub fn modulus(&self, rho: f64) -> f64 {
        self.e_min + rho * (self.e - self.e_min)
    }

    /// d modulus / dρ.
    pub fn modulus_slope(&self) -> f64 {
        self.e - self.e_min
    }

    pub fn stress_modulus(&self, rho: f64) -> f64 {
        match self.stress_interpolation {
            StressInterpolation::Ersatz => self.modulus(rho),
            StressInterpolation::Solid => self.e,
            StressInterpolation::Relaxed => self.e * (self.modulus(rho) / self.e).powf(RELAXED_EXPONENT),
            StressInterpolation::Linear => rho * self.e,
        }
    }

    /// d stress_modulus / dρ.
    pub fn stress_modulus_slope(&self, rho: f64) -> f64 {
        match self.stress_interpolation {
            StressInterpolation::Ersatz => self.modulus_slope(),
            StressInterpolation::Solid => 0.0,
            StressInterpolation::Relaxed => {
                RELAXED_EXPONENT * (self.modulus(rho) / self.e).powf(RELAXED_EXPONENT - 1.0) * self.modulus_slope()
            }
            StressInterpolation::Linear => self.e,
        }
    }
}

pub(crate) fn check_density(mesh: &StructuredMesh, density: &[f64]) -> Result<(), FemError> {
    if density.len() != mesh.n_active() {
        return Err(FemError::DimensionMismatch(format!(
            "density has {} entries, mesh has {} active elements",
            density.len(),
            mesh.n_active()
        )));
    }
    if let Some((i, v)) = density.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(FemError::InvalidDensity(format!("element {i} has density {v}")));
    }
    Ok(())
}

pub(crate) fn check_dof_vector(mesh: &StructuredMesh, v: &[f64], name: &str) -> Result<(), FemError> {
    if v.len() != mesh.n_dofs() {
        return Err(FemError::DimensionMismatch(format!(
            "{name} has {} entries, mesh has {} dofs",
            v.len(),
            mesh.n_dofs()
        )));
    }
    Ok(())
}
