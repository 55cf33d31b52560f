//! Bilinear quadrilateral (Q4) element matrices for a square element in plane stress.

use nalgebra::{SMatrix, SVector};

use super::FemError;

pub type Matrix8 = SMatrix<f64, 8, 8>;
pub type Matrix4 = SMatrix<f64, 4, 4>;
pub type Matrix3x8 = SMatrix<f64, 3, 8>;
pub type Matrix3 = SMatrix<f64, 3, 3>;
pub type Vector8 = SVector<f64, 8>;
pub type Vector3 = SVector<f64, 3>;

const NODE_XI: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// Derivatives of the four shape functions with respect to (ξ, η).
pub(crate) fn shape_derivatives(xi: f64, eta: f64) -> [(f64, f64); 4] {
    NODE_XI.map(|(a, b)| (0.25 * a * (1.0 + b * eta), 0.25 * b * (1.0 + a * xi)))
}

/// Strain-displacement matrix at (ξ, η) for a square element of edge `h`.
pub fn strain_displacement(xi: f64, eta: f64, h: f64) -> Matrix3x8 {
    let scale = 2.0 / h;
    let mut b = Matrix3x8::zeros();
    for (a, (dxi, deta)) in shape_derivatives(xi, eta).into_iter().enumerate() {
        let dx = dxi * scale;
        let dy = deta * scale;
        b[(0, 2 * a)] = dx;
        b[(1, 2 * a + 1)] = dy;
        b[(2, 2 * a)] = dy;
        b[(2, 2 * a + 1)] = dx;
    }
    b
}

/// Plane-stress constitutive matrix for unit modulus.
pub fn unit_constitutive(nu: f64) -> Matrix3 {
    let c = 1.0 / (1.0 - nu * nu);
    Matrix3::new(c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, c * (1.0 - nu) / 2.0)
}

fn check_nu(nu: f64) -> Result<(), FemError> {
    if (0.0..0.5).contains(&nu) {
        Ok(())
    } else {
        Err(FemError::InvalidMaterial(format!("Poisson ratio {nu} outside [0, 0.5)")))
    }
}

const GAUSS_2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Stiffness matrix of a unit-modulus, unit-thickness square Q4 element.
///
/// The result does not depend on the edge length.
pub fn unit_element_stiffness(nu: f64) -> Result<Matrix8, FemError> {
    check_nu(nu)?;
    let d = unit_constitutive(nu);
    let mut k = Matrix8::zeros();
    // Square of unit edge: detJ = 1/4, all Gauss weights 1.
    for &xi in &GAUSS_2 {
        for &eta in &GAUSS_2 {
            let b = strain_displacement(xi, eta, 1.0);
            k += b.transpose() * d * b * 0.25;
        }
    }
    Ok(k)
}

/// Shape-gradient products used by the geometric stiffness, integrated over
/// the element: `xx[a][b] = ∫ N_a,x N_b,x`, `yy` likewise and
/// `xy[a][b] = ∫ (N_a,x N_b,y + N_a,y N_b,x)`. Independent of the edge length.
#[derive(Debug, Clone)]
pub struct GradientProducts {
    pub xx: Matrix4,
    pub yy: Matrix4,
    pub xy: Matrix4,
}

impl GradientProducts {
    pub fn new() -> Self {
        let mut xx = Matrix4::zeros();
        let mut yy = Matrix4::zeros();
        let mut xy = Matrix4::zeros();
        for &xi in &GAUSS_2 {
            for &eta in &GAUSS_2 {
                // Unit edge: d/dx = 2 d/dξ, detJ = 1/4.
                let dn = shape_derivatives(xi, eta).map(|(a, b)| (2.0 * a, 2.0 * b));
                for a in 0..4 {
                    for b in 0..4 {
                        xx[(a, b)] += dn[a].0 * dn[b].0 * 0.25;
                        yy[(a, b)] += dn[a].1 * dn[b].1 * 0.25;
                        xy[(a, b)] += (dn[a].0 * dn[b].1 + dn[a].1 * dn[b].0) * 0.25;
                    }
                }
            }
        }
        Self { xx, yy, xy }
    }

    /// 8x8 geometric stiffness for a constant stress state `[σxx, σyy, τxy]`
    /// (per unit thickness).
    pub fn geometric_stiffness(&self, stress: &Vector3) -> Matrix8 {
        let s = self.xx * stress[0] + self.yy * stress[1] + self.xy * stress[2];
        let mut g = Matrix8::zeros();
        for a in 0..4 {
            for b in 0..4 {
                g[(2 * a, 2 * b)] = s[(a, b)];
                g[(2 * a + 1, 2 * b + 1)] = s[(a, b)];
            }
        }
        g
    }

    /// `[φᵀ Gxx φ, φᵀ Gyy φ, φᵀ Gxy φ]` for an element mode vector, i.e. the
    /// gradient of `φᵀ G(σ) φ` with respect to the stress components.
    pub fn mode_quadratic_forms(&self, phi: &Vector8) -> Vector3 {
        let mut out = Vector3::zeros();
        for a in 0..4 {
            for b in 0..4 {
                let dot = phi[2 * a] * phi[2 * b] + phi[2 * a + 1] * phi[2 * b + 1];
                out[0] += self.xx[(a, b)] * dot;
                out[1] += self.yy[(a, b)] * dot;
                out[2] += self.xy[(a, b)] * dot;
            }
        }
        out
    }
}

impl Default for GradientProducts {
    fn default() -> Self {
        Self::new()
    }
}

/// Everything the assembly loops need for one element size and Poisson ratio.
#[derive(Debug, Clone)]
pub struct ElementKernel {
    pub k0: Matrix8,
    /// Centroid strain-displacement matrix.
    pub b0: Matrix3x8,
    pub d0: Matrix3,
    /// `d0 * b0`: unit-modulus centroid stress per element displacement.
    pub db0: Matrix3x8,
    pub grads: GradientProducts,
}

impl ElementKernel {
    pub fn new(h: f64, nu: f64) -> Result<Self, FemError> {
        let k0 = unit_element_stiffness(nu)?;
        let b0 = strain_displacement(0.0, 0.0, h);
        let d0 = unit_constitutive(nu);
        Ok(Self { k0, b0, d0, db0: d0 * b0, grads: GradientProducts::new() })
    }
}

/// Von Mises matrix M such that σ_vm² = sᵀ M s for s = [σxx, σyy, τxy].
pub fn von_mises_matrix() -> Matrix3 {
    Matrix3::new(1.0, -0.5, 0.0, -0.5, 1.0, 0.0, 0.0, 0.0, 3.0)
}

pub fn von_mises(s: &Vector3) -> f64 {
    (s[0] * s[0] + s[1] * s[1] - s[0] * s[1] + 3.0 * s[2] * s[2]).max(0.0).sqrt()
}
