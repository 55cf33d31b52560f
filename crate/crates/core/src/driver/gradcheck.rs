//! Central finite-difference checks of the analytic sensitivities on small
//! fixtures. Used by `vfls check-gradients`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DriverError;
use crate::bspline::{BsplineSurface, CentroidBasis, KnotVector};
use crate::buckling::{solve_buckling_modes, EigenMethod, EigenOptions};
use crate::fem::{
    assemble_stiffness, assemble_stress_stiffness, element_stresses, factorize, solve_with, MaterialModel,
    StructuredMesh,
};
use crate::levelset::{advect_upwind, density_from_levelset, LevelSetGrid};
use crate::sensitivity::{
    buckling_eigen_sensitivity, ks_aggregate, ks_sensitivity, pnorm_stress, pnorm_stress_sensitivity,
    project_to_coefficients, volume_and_sensitivity, SensitivityVector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Number of components compared.
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= self.tolerance
    }
}

fn rel_error(analytic: f64, fd: f64) -> f64 {
    let scale = analytic.abs().max(fd.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - fd).abs() / scale
    }
}

fn central(x: &mut [f64], i: usize, step: f64, mut f: impl FnMut(&[f64]) -> Result<f64, DriverError>) -> Result<f64, DriverError> {
    let x0 = x[i];
    x[i] = x0 + step;
    let up = f(x)?;
    x[i] = x0 - step;
    let down = f(x)?;
    x[i] = x0;
    Ok((up - down) / (2.0 * step))
}

/// Square mesh clamped along the bottom edge and pushed down along the
/// whole top edge.
pub fn compressed_block(n: usize, magnitude: f64) -> Result<StructuredMesh, DriverError> {
    let fixed = (0..=n).flat_map(|i| [2 * i, 2 * i + 1]).collect();
    let top = n * (n + 1);
    let loads = (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            (2 * (top + i) + 1, -magnitude * w / n as f64)
        })
        .collect();
    Ok(StructuredMesh::new(n, n, 1.0, None, fixed, loads)?)
}

fn random_density(n: usize, lo: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..=1.0)).collect()
}

/// p-norm stress sensitivity on a 6×6 block with ρ ∈ [0.3, 1].
pub fn check_stress(material: &MaterialModel, p: f64, seed: u64) -> Result<CheckResult, DriverError> {
    let mesh = compressed_block(6, 1.0)?;
    let mut rho = random_density(mesh.n_active(), 0.3, seed);
    let f = mesh.force_vector();
    let response = |rho: &[f64]| -> Result<f64, DriverError> {
        let k = assemble_stiffness(&mesh, rho, material)?;
        let factor = factorize(&k, &mesh)?;
        let u = solve_with(&factor, &k, &f)?;
        Ok(pnorm_stress(&element_stresses(&mesh, &u, rho, material)?.von_mises, p)?)
    };
    let k = assemble_stiffness(&mesh, &rho, material)?;
    let factor = factorize(&k, &mesh)?;
    let u = solve_with(&factor, &k, &f)?;
    let analytic = pnorm_stress_sensitivity(&mesh, &u, &rho, material, p, &factor)?;
    let mut result = CheckResult { name: "p-norm stress", checked: 0, max_rel_error: 0.0, tolerance: 1e-4 };
    for e in 0..rho.len() {
        if analytic[e].abs() <= 1e-8 {
            continue;
        }
        let fd = central(&mut rho, e, 1e-6, response)?;
        result.checked += 1;
        result.max_rel_error = result.max_rel_error.max(rel_error(analytic[e], fd));
    }
    Ok(result)
}

/// Lowest buckling load factor sensitivity on an 8×8 compressed block,
/// dense eigensolver throughout.
pub fn check_buckling(material: &MaterialModel, seed: u64) -> Result<CheckResult, DriverError> {
    let mesh = compressed_block(8, 1e-3)?;
    let mut rho = random_density(mesh.n_active(), 0.6, seed);
    let f = mesh.force_vector();
    let options = EigenOptions { method: EigenMethod::Dense, ..EigenOptions::default() };
    let lambda1 = |rho: &[f64]| -> Result<f64, DriverError> {
        let k = assemble_stiffness(&mesh, rho, material)?;
        let factor = factorize(&k, &mesh)?;
        let u = solve_with(&factor, &k, &f)?;
        let g = assemble_stress_stiffness(&mesh, &u, rho, material)?;
        Ok(solve_buckling_modes(&k, &g, &factor, 1, &options, None)?.lambdas[0])
    };
    let k = assemble_stiffness(&mesh, &rho, material)?;
    let factor = factorize(&k, &mesh)?;
    let u = solve_with(&factor, &k, &f)?;
    let g = assemble_stress_stiffness(&mesh, &u, &rho, material)?;
    let modes = solve_buckling_modes(&k, &g, &factor, 2, &options, None)?;
    if modes.lambdas[1] < 1.05 * modes.lambdas[0] {
        return Err(DriverError::Config("buckling check fixture has a near-repeated lowest eigenvalue".into()));
    }
    let analytic = buckling_eigen_sensitivity(&mesh, &u.u, &rho, material, &k, &modes, &factor)?;
    let d1 = &analytic[0];
    let mut result = CheckResult { name: "buckling eigenvalue", checked: 0, max_rel_error: 0.0, tolerance: 1e-3 };
    let floor = 1e-6 * d1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for e in 0..rho.len() {
        if d1[e].abs() <= floor {
            continue;
        }
        let fd = central(&mut rho, e, 1e-5, lambda1)?;
        result.checked += 1;
        result.max_rel_error = result.max_rel_error.max(rel_error(d1[e], fd));
    }
    Ok(result)
}

/// KS gradient against finite differences in μ.
pub fn check_ks(gamma: f64, seed: u64) -> Result<CheckResult, DriverError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = 6;
    let mut mu: Vec<f64> = (0..q).map(|_| rng.random_range(0.05..0.3)).collect();
    // dμ_i/dρ_i = 1 turns the ρ gradient into ∂KS/∂μ.
    let dmu: Vec<SensitivityVector> =
        (0..q).map(|i| SensitivityVector((0..q).map(|j| if i == j { 1.0 } else { 0.0 }).collect())).collect();
    let analytic = ks_sensitivity(&mu, &dmu, gamma)?;
    let mut result = CheckResult { name: "KS aggregation", checked: 0, max_rel_error: 0.0, tolerance: 1e-6 };
    for i in 0..q {
        let fd = central(&mut mu, i, 1e-6, |m| Ok(ks_aggregate(m, gamma)?))?;
        result.checked += 1;
        result.max_rel_error = result.max_rel_error.max((analytic[i] - fd).abs());
    }
    Ok(result)
}

/// Volume gradient in the B-spline coefficients through one advection step
/// (dt = 1, no reinitialization, no velocity cap) on a 10×10 mesh with a
/// gently curved interface crossing the middle.
pub fn check_projection(heaviside_width: f64) -> Result<CheckResult, DriverError> {
    let n = 10;
    let mesh = StructuredMesh::new(n, n, 1.0, None, vec![0, 1], vec![])?;
    let levelset = LevelSetGrid::from_fn(&mesh, |x, y| 25.0 - ((x + 20.0).powi(2) + (y - 5.0).powi(2)).sqrt());
    let delta = heaviside_width * mesh.h();
    let kx = KnotVector::with_interval(10.0, 2, mesh.width())?;
    let ky = KnotVector::with_interval(10.0, 2, mesh.height())?;
    let surface = BsplineSurface::zeros(kx, ky);
    let basis = CentroidBasis::for_surface(&surface, &mesh.active_centroids())?;

    let volume = |b: &[f64]| -> Result<f64, DriverError> {
        let v = basis.evaluate(b);
        let moved = advect_upwind(&levelset, &mesh, &v, 1.0)?;
        Ok(volume_and_sensitivity(&density_from_levelset(&moved, &mesh, delta)?, &mesh)?.0)
    };
    let rho = density_from_levelset(&levelset, &mesh, delta)?;
    let (_, dv) = volume_and_sensitivity(&rho, &mesh)?;
    let analytic = project_to_coefficients(&dv, &levelset, &mesh, &basis, delta)?;
    let floor = 1e-3 * analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut b = surface.coeffs.clone();
    let mut result = CheckResult { name: "coefficient projection", checked: 0, max_rel_error: 0.0, tolerance: 0.05 };
    for k in 0..b.len() {
        if analytic[k].abs() <= floor {
            continue;
        }
        let fd = central(&mut b, k, 1e-4, volume)?;
        result.checked += 1;
        result.max_rel_error = result.max_rel_error.max(rel_error(analytic[k], fd));
    }
    Ok(result)
}

/// All suites with the material and aggregation parameters of `config`.
pub fn run_checks(config: &super::ProblemConfig) -> Result<Vec<CheckResult>, DriverError> {
    let material = MaterialModel::new(config.material.e, config.material.e_min, config.material.nu)?;
    Ok(vec![
        check_stress(
            &MaterialModel { stress_interpolation: config.material.stress_interpolation, ..material },
            config.constraint.stress.p,
            config.seed,
        )?,
        check_buckling(&material, config.seed)?,
        check_ks(config.constraint.buckling.gamma, config.seed)?,
        check_projection(config.levelset.heaviside_width)?,
    ])
}
