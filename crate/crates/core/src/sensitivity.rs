//! Density sensitivities of the volume, p-norm stress and KS-aggregated
//! buckling functionals by discrete adjoints, and their projection onto the
//! B-spline velocity coefficients.

use std::ops::Deref;

use thiserror::Error;

use crate::bspline::CentroidBasis;
use crate::buckling::BucklingModes;
use crate::fem::element::{von_mises_matrix, ElementKernel, Vector3, Vector8};
use crate::fem::{
    element_stresses, FemError, MaterialModel, StiffnessFactorization, StructuredMesh, SymmetricSparseMatrix,
};
use crate::levelset::{smoothed_dirac, LevelSetError, LevelSetGrid};

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mode {mode} is not K-normalized (φᵀKφ = {norm})")]
    NotNormalized { mode: usize, norm: f64 },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    LevelSet(#[from] LevelSetError),
}

/// dF/dρ, one entry per active element.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityVector(pub Vec<f64>);

impl Deref for SensitivityVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// dF/db over the coefficient grid, laid out like the surface coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientGradient(pub Vec<f64>);

impl Deref for CoefficientGradient {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn gather(v: &[f64], dofs: &[usize; 8]) -> Vector8 {
    Vector8::from_fn(|i, _| v[dofs[i]])
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), SensitivityError> {
    if got != want {
        return Err(SensitivityError::DimensionMismatch(format!("{what} has {got} entries, expected {want}")));
    }
    Ok(())
}

fn check_factor(factor: &StiffnessFactorization, mesh: &StructuredMesh) -> Result<(), SensitivityError> {
    if !factor.matches(mesh) {
        return Err(SensitivityError::DimensionMismatch("factorization belongs to a different mesh".into()));
    }
    Ok(())
}

/// Volume fraction over the active elements and its (constant) gradient.
pub fn volume_and_sensitivity(
    density: &[f64],
    mesh: &StructuredMesh,
) -> Result<(f64, SensitivityVector), SensitivityError> {
    let n = mesh.n_active();
    check_len("density", density.len(), n)?;
    let v = density.iter().sum::<f64>() / n as f64;
    Ok((v, SensitivityVector(vec![1.0 / n as f64; n])))
}

/// σ^PM = (Σ σ_i^p)^{1/p}, evaluated with a max shift so large p cannot
/// overflow.
pub fn pnorm_stress(von_mises: &[f64], p: f64) -> Result<f64, SensitivityError> {
    if !(p >= 1.0) {
        return Err(SensitivityError::InvalidArgument(format!("p-norm exponent {p} below 1")));
    }
    let max = von_mises.iter().fold(0.0f64, |m, v| m.max(*v));
    if max == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = von_mises.iter().map(|s| (s / max).powf(p)).sum();
    Ok(max * sum.powf(1.0 / p))
}

/// dσ^PM/dρ: explicit modulus term plus the adjoint term λᵀ (∂K/∂ρ) u with
/// K λ = −∂σ^PM/∂u.
pub fn pnorm_stress_sensitivity(
    mesh: &StructuredMesh,
    u: &[f64],
    density: &[f64],
    material: &MaterialModel,
    p: f64,
    factor: &StiffnessFactorization,
) -> Result<SensitivityVector, SensitivityError> {
    check_factor(factor, mesh)?;
    let stress = element_stresses(mesh, u, density, material)?;
    let pm = pnorm_stress(&stress.von_mises, p)?;
    let n = mesh.n_active();
    if pm == 0.0 {
        return Ok(SensitivityVector(vec![0.0; n]));
    }
    let kernel = ElementKernel::new(mesh.h(), material.nu)?;
    let m = von_mises_matrix();
    let t = mesh.thickness();

    let mut rhs = vec![0.0; mesh.n_dofs()];
    let mut explicit = Vec::with_capacity(n);
    for (a, &e) in mesh.active_elements().iter().enumerate() {
        let se = stress.von_mises[a];
        let es = material.stress_modulus(density[a]);
        // se vanishes with es, and so does this term.
        explicit.push(if es > 0.0 { pm * (se / pm).powf(p) * material.stress_modulus_slope(density[a]) / es } else { 0.0 });
        if se == 0.0 {
            continue;
        }
        let c = stress.components[a];
        let s = Vector3::new(c[0], c[1], c[2]);
        // ∂σ^PM/∂u_e = σ^PM^{1−p} σ_e^{p−2} E_σ (D₀B₀)ᵀ M s
        let scale = (se / pm).powf(p - 2.0) / pm * es;
        let g = kernel.db0.transpose() * (m * s) * scale;
        for (k, &d) in mesh.element_dofs(e).iter().enumerate() {
            rhs[d] -= g[k];
        }
    }
    let adjoint = factor.solve(&rhs);
    let slope = material.modulus_slope() * t;
    let out = mesh
        .active_elements()
        .iter()
        .enumerate()
        .map(|(a, &e)| {
            let dofs = mesh.element_dofs(e);
            let ue = gather(u, &dofs);
            let le = gather(&adjoint, &dofs);
            explicit[a] + slope * le.dot(&(kernel.k0 * ue))
        })
        .collect();
    Ok(SensitivityVector(out))
}

/// dλ_i/dρ for every returned mode.
///
/// With φᵀKφ = 1, differentiating (K + λG)φ = 0 gives
/// dλ/dρ_e = λ [φᵀ ∂K_e φ + λ φᵀ ∂G_e φ − λ zᵀ ∂K_e u], where K z = ∂(φᵀGφ)/∂u
/// carries the dependence of G on the equilibrium displacement `u`.
pub fn buckling_eigen_sensitivity(
    mesh: &StructuredMesh,
    u: &[f64],
    density: &[f64],
    material: &MaterialModel,
    k: &SymmetricSparseMatrix,
    modes: &BucklingModes,
    factor: &StiffnessFactorization,
) -> Result<Vec<SensitivityVector>, SensitivityError> {
    check_factor(factor, mesh)?;
    if !k.same_pattern(mesh) {
        return Err(SensitivityError::DimensionMismatch("stiffness matrix belongs to a different mesh".into()));
    }
    let kernel = ElementKernel::new(mesh.h(), material.nu)?;
    let t = mesh.thickness();
    let slope = material.modulus_slope() * t;
    let mut out = Vec::with_capacity(modes.len());
    for (i, (&lambda, phi)) in modes.lambdas.iter().zip(&modes.modes).enumerate() {
        check_len("mode", phi.len(), mesh.n_dofs())?;
        let norm = k.bilinear(phi, phi);
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(SensitivityError::NotNormalized { mode: i, norm });
        }
        let r = crate::fem::stress_stiffness_u_derivative(mesh, density, material, phi)?;
        let z = factor.solve(&r);
        let grad = mesh
            .active_elements()
            .iter()
            .enumerate()
            .map(|(a, &e)| {
                let dofs = mesh.element_dofs(e);
                let ue = gather(u, &dofs);
                let pe = gather(phi, &dofs);
                let ze = gather(&z, &dofs);
                let unit_stress: Vector3 = kernel.db0 * ue;
                let dk_phi = slope * pe.dot(&(kernel.k0 * pe));
                let dg_phi = t * material.stress_modulus_slope(density[a])
                    * unit_stress.dot(&kernel.grads.mode_quadratic_forms(&pe));
                let dk_u = slope * ze.dot(&(kernel.k0 * ue));
                lambda * (dk_phi + lambda * dg_phi - lambda * dk_u)
            })
            .collect();
        out.push(SensitivityVector(grad));
    }
    Ok(out)
}

/// dμ/dρ = −dλ/dρ / λ².
pub fn dmu_from_dlambda(lambda: f64, dlambda: &SensitivityVector) -> SensitivityVector {
    let f = -1.0 / (lambda * lambda);
    SensitivityVector(dlambda.iter().map(|d| f * d).collect())
}

fn check_ks(mu: &[f64], gamma: f64) -> Result<f64, SensitivityError> {
    if mu.is_empty() {
        return Err(SensitivityError::InvalidArgument("KS aggregation of an empty set".into()));
    }
    if !(gamma >= 1.0) {
        return Err(SensitivityError::InvalidArgument(format!("KS parameter {gamma} below 1")));
    }
    Ok(mu.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// KS = μ_max + (1/γ) ln Σ exp(γ(μ_i − μ_max)).
pub fn ks_aggregate(mu: &[f64], gamma: f64) -> Result<f64, SensitivityError> {
    let top = check_ks(mu, gamma)?;
    let sum: f64 = mu.iter().map(|m| (gamma * (m - top)).exp()).sum();
    Ok(top + sum.ln() / gamma)
}

/// Softmax weights w_i = ∂KS/∂μ_i.
pub fn ks_weights(mu: &[f64], gamma: f64) -> Result<Vec<f64>, SensitivityError> {
    let top = check_ks(mu, gamma)?;
    let w: Vec<f64> = mu.iter().map(|m| (gamma * (m - top)).exp()).collect();
    let sum: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / sum).collect())
}

/// dKS/dρ = Σ w_i dμ_i/dρ.
pub fn ks_sensitivity(
    mu: &[f64],
    dmu: &[SensitivityVector],
    gamma: f64,
) -> Result<SensitivityVector, SensitivityError> {
    check_len("mode sensitivity list", dmu.len(), mu.len())?;
    let w = ks_weights(mu, gamma)?;
    let n = dmu[0].len();
    let mut out = vec![0.0; n];
    for (wi, d) in w.iter().zip(dmu) {
        check_len("mode sensitivity", d.len(), n)?;
        out.iter_mut().zip(d.iter()).for_each(|(o, v)| *o += wi * v);
    }
    Ok(SensitivityVector(out))
}

/// dF/db_{k,l} = Σ_i dF/dρ_i δ(Φ_i) B_k(x_i) B_l(y_i), with Φ_i and (x_i, y_i)
/// taken at the element centroids.
pub fn project_to_coefficients(
    df_drho: &[f64],
    levelset: &LevelSetGrid,
    mesh: &StructuredMesh,
    basis: &CentroidBasis,
    delta: f64,
) -> Result<CoefficientGradient, SensitivityError> {
    check_len("density sensitivity", df_drho.len(), mesh.n_active())?;
    check_len("centroid basis", basis.n_points(), mesh.n_active())?;
    let phi = levelset.element_values(mesh)?;
    let weights: Vec<f64> = df_drho.iter().zip(&phi).map(|(d, p)| d * smoothed_dirac(*p, delta)).collect();
    Ok(CoefficientGradient(basis.project(&weights)))
}
