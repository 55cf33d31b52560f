use std::ops::Deref;

use super::element::{von_mises, ElementKernel, Vector3, Vector8};
use super::{
    check_density, check_dof_vector, FemError, MaterialModel, StiffnessFactorization,
    StructuredMesh, SymmetricSparseMatrix,
};

/// Nodal displacements over all mesh dofs; zero at constrained dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub u: Vec<f64>,
}

impl Deref for DisplacementField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.u
    }
}

/// Centroid stresses of the active elements, in active-index order.
#[derive(Debug, Clone)]
pub struct StressState {
    /// `[σxx, σyy, τxy]` per element.
    pub components: Vec<[f64; 3]>,
    pub von_mises: Vec<f64>,
}

pub(crate) fn gather(u: &[f64], dofs: &[usize; 8]) -> Vector8 {
    Vector8::from_fn(|i, _| u[dofs[i]])
}

/// K = Σ (E_min + ρ_e (E − E_min)) K₀ over the active elements.
pub fn assemble_stiffness(
    mesh: &StructuredMesh,
    density: &[f64],
    material: &MaterialModel,
) -> Result<SymmetricSparseMatrix, FemError> {
    check_density(mesh, density)?;
    let kernel = ElementKernel::new(mesh.h(), material.nu)?;
    let k0 = kernel.k0 * mesh.thickness();
    let mut k = SymmetricSparseMatrix::zeros(mesh);
    let pattern = k.pattern().clone();
    let values = k.values_mut();
    for (a, slots) in pattern.slots.iter().enumerate() {
        let e = material.modulus(density[a]);
        for (s, kv) in slots.iter().zip(k0.transpose().iter()) {
            // k0 is symmetric; the transpose only fixes the row-major walk.
            values[*s] += e * kv;
        }
    }
    Ok(k)
}

/// Solves K u = f for the mesh's reference load.
pub fn solve_equilibrium(
    k: &SymmetricSparseMatrix,
    mesh: &StructuredMesh,
) -> Result<(DisplacementField, StiffnessFactorization), FemError> {
    let f = mesh.force_vector();
    let factor = factorize(k, mesh)?;
    let u = solve_with(&factor, k, &f)?;
    Ok((u, factor))
}

pub fn factorize(k: &SymmetricSparseMatrix, mesh: &StructuredMesh) -> Result<StiffnessFactorization, FemError> {
    if !k.same_pattern(mesh) {
        return Err(FemError::DimensionMismatch("stiffness matrix was assembled on a different mesh".into()));
    }
    if mesh.fixed_dofs().is_empty() {
        return Err(FemError::SingularSystem("no constrained dofs; rigid-body modes are free".into()));
    }
    StiffnessFactorization::new(k)
}

fn residual(factor: &StiffnessFactorization, k: &SymmetricSparseMatrix, u: &[f64], f: &[f64]) -> (Vec<f64>, f64) {
    let ku = k.mul_vec(u);
    let mut r = vec![0.0; f.len()];
    let mut res2 = 0.0;
    for &d in factor.free_dofs() {
        r[d] = f[d] - ku[d];
        res2 += r[d] * r[d];
    }
    (r, res2.sqrt())
}

/// Solves with an existing factorization, refines once when the residual
/// is not at round-off level, and rejects a residual above 1e-6 of the load.
pub fn solve_with(
    factor: &StiffnessFactorization,
    k: &SymmetricSparseMatrix,
    f: &[f64],
) -> Result<DisplacementField, FemError> {
    let fnorm = factor.free_dofs().iter().map(|&d| f[d] * f[d]).sum::<f64>().sqrt();
    let mut u = factor.solve(f);
    let (r, mut res) = residual(factor, k, &u, f);
    if res > 1e-12 * fnorm {
        let du = factor.solve(&r);
        u.iter_mut().zip(&du).for_each(|(a, d)| *a += d);
        res = residual(factor, k, &u, f).1;
    }
    if fnorm > 0.0 && !(res.is_finite() && res <= 1e-6 * fnorm) {
        return Err(FemError::SingularSystem(format!("equilibrium residual {res:.3e} relative to load {fnorm:.3e}")));
    }
    Ok(DisplacementField { u })
}

/// Centroid stresses σ = E_σ(ρ) D₀ B₀ u_e and their von Mises values.
pub fn element_stresses(
    mesh: &StructuredMesh,
    u: &[f64],
    density: &[f64],
    material: &MaterialModel,
) -> Result<StressState, FemError> {
    check_density(mesh, density)?;
    check_dof_vector(mesh, u, "displacement")?;
    let kernel = ElementKernel::new(mesh.h(), material.nu)?;
    let mut components = Vec::with_capacity(mesh.n_active());
    let mut vm = Vec::with_capacity(mesh.n_active());
    for (a, &e) in mesh.active_elements().iter().enumerate() {
        let ue = gather(u, &mesh.element_dofs(e));
        let s: Vector3 = kernel.db0 * ue * material.stress_modulus(density[a]);
        vm.push(von_mises(&s));
        components.push([s[0], s[1], s[2]]);
    }
    Ok(StressState { components, von_mises: vm })
}

/// Geometric (stress) stiffness from the constant centroid stress of each element.
pub fn assemble_stress_stiffness(
    mesh: &StructuredMesh,
    u: &[f64],
    density: &[f64],
    material: &MaterialModel,
) -> Result<SymmetricSparseMatrix, FemError> {
    let stresses = element_stresses(mesh, u, density, material)?;
    let kernel = ElementKernel::new(mesh.h(), material.nu)?;
    let mut g = SymmetricSparseMatrix::zeros(mesh);
    let pattern = g.pattern().clone();
    let values = g.values_mut();
    let t = mesh.thickness();
    for (a, slots) in pattern.slots.iter().enumerate() {
        let s = stresses.components[a];
        let ge = kernel.grads.geometric_stiffness(&Vector3::new(s[0], s[1], s[2]));
        for (slot, gv) in slots.iter().zip(ge.transpose().iter()) {
            values[*slot] += t * gv;
        }
    }
    Ok(g)
}

/// r_k = ∂(φᵀ G(u) φ)/∂u_k. G is linear in u, so r does not depend on u.
pub fn stress_stiffness_u_derivative(
    mesh: &StructuredMesh,
    density: &[f64],
    material: &MaterialModel,
    phi: &[f64],
) -> Result<Vec<f64>, FemError> {
    check_density(mesh, density)?;
    check_dof_vector(mesh, phi, "mode")?;
    let kernel = ElementKernel::new(mesh.h(), material.nu)?;
    let mut r = vec![0.0; mesh.n_dofs()];
    let t = mesh.thickness();
    for (a, &e) in mesh.active_elements().iter().enumerate() {
        let dofs = mesh.element_dofs(e);
        let pe = gather(phi, &dofs);
        let forms = kernel.grads.mode_quadratic_forms(&pe);
        let re = kernel.db0.transpose() * forms * (t * material.stress_modulus(density[a]));
        for (k, &d) in dofs.iter().enumerate() {
            r[d] += re[k];
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cantilever(nx: usize, ny: usize) -> StructuredMesh {
        let mut fixed = Vec::new();
        for j in 0..=ny {
            let n = j * (nx + 1);
            fixed.extend([2 * n, 2 * n + 1]);
        }
        let tip = nx;
        StructuredMesh::new(nx, ny, 1.0, None, fixed, vec![(2 * tip + 1, -1.0)]).unwrap()
    }

    #[test]
    fn full_density_uses_solid_modulus() {
        let mesh = cantilever(3, 2);
        let mat = MaterialModel::new(2.5, 1e-3, 0.3).unwrap();
        let k1 = assemble_stiffness(&mesh, &vec![1.0; 6], &mat).unwrap();
        let k0 = assemble_stiffness(&mesh, &vec![0.0; 6], &mat).unwrap();
        let unit = MaterialModel { e: 1.0, e_min: 1e-9, ..mat };
        let kref = assemble_stiffness(&mesh, &vec![1.0; 6], &unit).unwrap();
        let scale = kref.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for ((a, b), c) in k1.values().iter().zip(k0.values()).zip(kref.values()) {
            assert!((a - 2.5 * c).abs() <= 1e-14 * scale);
            assert!((b - 1e-3 * c).abs() <= 1e-14 * scale);
        }
    }

    #[test]
    fn zero_load_gives_zero_displacement() {
        let mesh = cantilever(3, 2).with_loads(vec![]).unwrap();
        let k = assemble_stiffness(&mesh, &vec![0.7; 6], &MaterialModel::standard()).unwrap();
        let (u, _) = solve_equilibrium(&k, &mesh).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unconstrained_mesh_is_reported_singular() {
        let mesh = StructuredMesh::new(2, 2, 1.0, None, vec![], vec![(1, 1.0)]).unwrap();
        let k = assemble_stiffness(&mesh, &[1.0; 4], &MaterialModel::standard()).unwrap();
        assert!(matches!(solve_equilibrium(&k, &mesh), Err(FemError::SingularSystem(_))));
    }

    #[test]
    fn invalid_density_rejected() {
        let mesh = cantilever(2, 2);
        let mat = MaterialModel::standard();
        assert!(matches!(assemble_stiffness(&mesh, &[1.0; 3], &mat), Err(FemError::DimensionMismatch(_))));
        assert!(matches!(
            assemble_stiffness(&mesh, &[1.0, f64::NAN, 1.0, 1.0], &mat),
            Err(FemError::InvalidDensity(_))
        ));
    }

    #[test]
    fn stresses_scale_with_void_modulus() {
        let mesh = cantilever(2, 1);
        let mat = MaterialModel::standard();
        let k = assemble_stiffness(&mesh, &[1.0, 1.0], &mat).unwrap();
        let (u, _) = solve_equilibrium(&k, &mesh).unwrap();
        let solid = element_stresses(&mesh, &u, &[1.0, 1.0], &mat).unwrap();
        let void = element_stresses(&mesh, &u, &[1.0, 0.0], &mat).unwrap();
        assert_eq!(solid.von_mises[0], void.von_mises[0]);
        let ratio = void.von_mises[1] / solid.von_mises[1];
        assert!((ratio - mat.e_min / mat.e).abs() < 1e-15);
    }

    #[test]
    fn stress_stiffness_zero_and_linear() {
        let mesh = cantilever(3, 2);
        let mat = MaterialModel::standard();
        let rho = [0.2, 0.9, 1.0, 0.5, 0.4, 0.8];
        let zero = assemble_stress_stiffness(&mesh, &vec![0.0; mesh.n_dofs()], &rho, &mat).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let u: Vec<f64> = (0..mesh.n_dofs()).map(|i| ((i * 7) % 5) as f64 * 0.1 - 0.2).collect();
        let u2: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        let g = assemble_stress_stiffness(&mesh, &u, &rho, &mat).unwrap();
        let g2 = assemble_stress_stiffness(&mesh, &u2, &rho, &mat).unwrap();
        for (a, b) in g.values().iter().zip(g2.values()) {
            assert!((2.0 * a - b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
        for (r, c, v) in g.entries() {
            assert_eq!(v, g.get(c, r));
        }
    }

    #[test]
    fn stress_derivative_is_quadratic_in_mode() {
        let mesh = cantilever(3, 2);
        let mat = MaterialModel::standard();
        let rho = [0.2, 0.9, 1.0, 0.5, 0.4, 0.8];
        let phi: Vec<f64> = (0..mesh.n_dofs()).map(|i| ((i * 3) % 7) as f64 * 0.1 - 0.3).collect();
        let phi2: Vec<f64> = phi.iter().map(|v| 2.0 * v).collect();
        let r = stress_stiffness_u_derivative(&mesh, &rho, &mat, &phi).unwrap();
        let r2 = stress_stiffness_u_derivative(&mesh, &rho, &mat, &phi2).unwrap();
        for (a, b) in r.iter().zip(&r2) {
            assert!((4.0 * a - b).abs() <= 1e-13 * b.abs().max(1e-13));
        }
        let zero = stress_stiffness_u_derivative(&mesh, &rho, &mat, &vec![0.0; mesh.n_dofs()]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }
}
