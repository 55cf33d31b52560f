use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfls_core::bspline::{BsplineSurface, CentroidBasis, KnotVector};
use vfls_core::buckling::{solve_buckling_modes, EigenMethod, EigenOptions};
use vfls_core::driver::gradcheck::compressed_block;
use vfls_core::fem::{
    assemble_stiffness, assemble_stress_stiffness, element_stresses, factorize, solve_with, MaterialModel,
    StressInterpolation, StructuredMesh,
};
use vfls_core::levelset::{advect_upwind, density_from_levelset, smoothed_dirac, LevelSetGrid};
use vfls_core::sensitivity::{
    buckling_eigen_sensitivity, ks_aggregate, ks_sensitivity, ks_weights, pnorm_stress, pnorm_stress_sensitivity,
    project_to_coefficients, volume_and_sensitivity, SensitivityVector,
};

fn random_density(n: usize, lo: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..=1.0)).collect()
}

fn stress_response(mesh: &StructuredMesh, rho: &[f64], mat: &MaterialModel, p: f64) -> f64 {
    let k = assemble_stiffness(mesh, rho, mat).unwrap();
    let f = factorize(&k, mesh).unwrap();
    let u = solve_with(&f, &k, &mesh.force_vector()).unwrap();
    pnorm_stress(&element_stresses(mesh, &u, rho, mat).unwrap().von_mises, p).unwrap()
}

fn stress_gradient(mesh: &StructuredMesh, rho: &[f64], mat: &MaterialModel, p: f64) -> SensitivityVector {
    let k = assemble_stiffness(mesh, rho, mat).unwrap();
    let f = factorize(&k, mesh).unwrap();
    let u = solve_with(&f, &k, &mesh.force_vector()).unwrap();
    pnorm_stress_sensitivity(mesh, &u, rho, mat, p, &f).unwrap()
}

fn max_rel_fd_error(rho: &mut [f64], analytic: &[f64], floor: f64, step: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for e in 0..rho.len() {
        if analytic[e].abs() <= floor {
            continue;
        }
        let r0 = rho[e];
        rho[e] = r0 + step;
        let up = f(rho);
        rho[e] = r0 - step;
        let down = f(rho);
        rho[e] = r0;
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((fd - analytic[e]).abs() / fd.abs().max(analytic[e].abs()));
    }
    worst
}

#[test]
fn stress_adjoint_matches_finite_differences() {
    let mesh = compressed_block(6, 1.0).unwrap();
    for interp in [StressInterpolation::Ersatz, StressInterpolation::Relaxed, StressInterpolation::Linear] {
        let mat = MaterialModel { stress_interpolation: interp, ..MaterialModel::standard() };
        let mut rho = random_density(mesh.n_active(), 0.3, 21);
        let g = stress_gradient(&mesh, &rho, &mat, 8.0);
        let err = max_rel_fd_error(&mut rho, &g, 1e-8, 1e-6, |r| stress_response(&mesh, r, &mat, 8.0));
        assert!(err <= 1e-4, "{interp:?}: {err}");
    }
}

#[test]
fn linear_interpolation_handles_exact_void() {
    let mesh = compressed_block(6, 1.0).unwrap();
    let mat = MaterialModel { stress_interpolation: StressInterpolation::Linear, ..MaterialModel::standard() };
    let mut rho = random_density(mesh.n_active(), 0.3, 24);
    rho.iter_mut().step_by(5).for_each(|r| *r = 0.0);
    assert!(stress_gradient(&mesh, &rho, &mat, 8.0).iter().all(|v| v.is_finite()));
    let (_, d) = lambda_gradient(&mesh, &rho, &mat, &EigenOptions { method: EigenMethod::Dense, ..EigenOptions::default() });
    assert!(d.iter().all(|v| v.is_finite()));
}

#[test]
fn unloaded_structure_has_zero_stress_gradient() {
    let fixed = (0..=4).flat_map(|i| [2 * i, 2 * i + 1]).collect();
    let mesh = StructuredMesh::new(4, 4, 1.0, None, fixed, vec![]).unwrap();
    let g = stress_gradient(&mesh, &random_density(16, 0.3, 22), &MaterialModel::standard(), 8.0);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn stress_gradient_is_mirror_symmetric() {
    let n = 8;
    let mesh = compressed_block(n, 1.0).unwrap();
    let g = stress_gradient(&mesh, &vec![0.8; n * n], &MaterialModel::standard(), 8.0);
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for j in 0..n {
        for i in 0..n {
            let a = g[j * n + i];
            let b = g[j * n + (n - 1 - i)];
            assert!((a - b).abs() <= 1e-8 * scale, "({i},{j}): {a} vs {b}");
        }
    }
}

fn lowest_lambda(mesh: &StructuredMesh, rho: &[f64], mat: &MaterialModel, opts: &EigenOptions) -> f64 {
    let k = assemble_stiffness(mesh, rho, mat).unwrap();
    let f = factorize(&k, mesh).unwrap();
    let u = solve_with(&f, &k, &mesh.force_vector()).unwrap();
    let g = assemble_stress_stiffness(mesh, &u, rho, mat).unwrap();
    solve_buckling_modes(&k, &g, &f, 1, opts, None).unwrap().lambdas[0]
}

fn lambda_gradient(mesh: &StructuredMesh, rho: &[f64], mat: &MaterialModel, opts: &EigenOptions) -> (f64, Vec<f64>) {
    let k = assemble_stiffness(mesh, rho, mat).unwrap();
    let f = factorize(&k, mesh).unwrap();
    let u = solve_with(&f, &k, &mesh.force_vector()).unwrap();
    let g = assemble_stress_stiffness(mesh, &u, rho, mat).unwrap();
    let modes = solve_buckling_modes(&k, &g, &f, 2, opts, None).unwrap();
    assert!(modes.lambdas[1] > 1.05 * modes.lambdas[0], "fixture needs a simple lowest eigenvalue");
    let d = buckling_eigen_sensitivity(mesh, &u, rho, mat, &k, &modes, &f).unwrap();
    (modes.lambdas[0], d[0].0.clone())
}

#[test]
fn eigenvalue_sensitivity_matches_finite_differences() {
    let mesh = compressed_block(8, 1e-3).unwrap();
    let opts = EigenOptions { method: EigenMethod::Dense, ..EigenOptions::default() };
    // The prestress interpolation enters G only; K stays Ersatz.
    for interp in [StressInterpolation::Ersatz, StressInterpolation::Linear] {
        let mat = MaterialModel { stress_interpolation: interp, ..MaterialModel::standard() };
        let mut rho = random_density(mesh.n_active(), 0.6, 23);
        let (_, d) = lambda_gradient(&mesh, &rho, &mat, &opts);
        let floor = 1e-6 * d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = max_rel_fd_error(&mut rho, &d, floor, 1e-5, |r| lowest_lambda(&mesh, r, &mat, &opts));
        assert!(err <= 1e-3, "{interp:?}: {err}");
    }
}

#[test]
fn doubling_the_load_halves_eigenvalue_and_gradient() {
    let mat = MaterialModel::standard();
    let opts = EigenOptions { method: EigenMethod::Dense, ..EigenOptions::default() };
    let rho = random_density(36, 0.6, 24);
    let (l1, d1) = lambda_gradient(&compressed_block(6, 1e-3).unwrap(), &rho, &mat, &opts);
    let (l2, d2) = lambda_gradient(&compressed_block(6, 2e-3).unwrap(), &rho, &mat, &opts);
    assert!((l1 - 2.0 * l2).abs() <= 1e-9 * l1);
    let scale = d1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in d1.iter().zip(&d2) {
        assert!((a - 2.0 * b).abs() <= 1e-8 * scale);
    }
}

#[test]
fn eigenvalue_sensitivity_is_symmetric_for_a_symmetric_column() {
    let n = 6;
    let mesh = compressed_block(n, 1e-3).unwrap();
    let opts = EigenOptions { method: EigenMethod::Dense, ..EigenOptions::default() };
    let (_, d) = lambda_gradient(&mesh, &vec![1.0; n * n], &MaterialModel::standard(), &opts);
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for j in 0..n {
        for i in 0..n {
            assert!((d[j * n + i] - d[j * n + n - 1 - i]).abs() <= 1e-7 * scale);
        }
    }
}

#[test]
fn volume_of_bracket_counts_active_elements_only() {
    let mut mask = vec![true; 100 * 100];
    for j in 40..100 {
        for i in 40..100 {
            mask[j * 100 + i] = false;
        }
    }
    let fixed = (0..=40).flat_map(|i| {
        let n = 100 * 101 + i;
        [2 * n, 2 * n + 1]
    });
    let mesh = StructuredMesh::new(100, 100, 1.0, Some(mask), fixed.collect(), vec![]).unwrap();
    assert_eq!(mesh.n_active(), 6400);
    let (v, dv) = volume_and_sensitivity(&vec![1.0; 6400], &mesh).unwrap();
    assert_eq!(v, 1.0);
    assert!(dv.iter().all(|&d| d == 1.0 / 6400.0));
    assert_eq!(volume_and_sensitivity(&vec![0.0; 6400], &mesh).unwrap().0, 0.0);
}

#[test]
fn ks_matches_direct_formula() {
    let direct = 0.15 + (1.0 + (-2.5f64).exp() + (-5.0f64).exp()).ln() / 50.0;
    assert!((ks_aggregate(&[0.05, 0.15, 0.10], 50.0).unwrap() - direct).abs() < 1e-15);
}

#[test]
fn ks_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..20 {
        let q = rng.random_range(1..=6);
        let mu: Vec<f64> = (0..q).map(|_| rng.random_range(0.01..0.5)).collect();
        let w = ks_weights(&mu, 50.0).unwrap();
        for i in 0..q {
            let h = 1e-6;
            let mut up = mu.clone();
            up[i] += h;
            let mut down = mu.clone();
            down[i] -= h;
            let fd = (ks_aggregate(&up, 50.0).unwrap() - ks_aggregate(&down, 50.0).unwrap()) / (2.0 * h);
            assert!((fd - w[i]).abs() < 1e-8, "{fd} vs {}", w[i]);
        }
        // ks_sensitivity with identity dμ/dρ returns the weights themselves.
        let eye: Vec<SensitivityVector> =
            (0..q).map(|i| SensitivityVector((0..q).map(|j| if i == j { 1.0 } else { 0.0 }).collect())).collect();
        let s = ks_sensitivity(&mu, &eye, 50.0).unwrap();
        for i in 0..q {
            assert!((s[i] - w[i]).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pnorm_lies_between_max_and_scaled_max(
        v in prop::collection::vec(0.0f64..10.0, 1..200),
        p in 1.0f64..20.0,
    ) {
        let pm = pnorm_stress(&v, p).unwrap();
        let max = v.iter().cloned().fold(0.0f64, f64::max);
        prop_assert!(max <= pm);
        prop_assert!(pm <= (v.len() as f64).powf(1.0 / p) * max);
    }

    #[test]
    fn ks_lies_between_max_and_shifted_max(
        mu in prop::collection::vec(0.0f64..5.0, 1..12),
        gamma in 1.0f64..200.0,
    ) {
        let ks = ks_aggregate(&mu, gamma).unwrap();
        let max = mu.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(max <= ks);
        prop_assert!(ks <= max + (mu.len() as f64).ln() / gamma);
    }

    #[test]
    fn ks_weights_are_a_convex_combination(mu in prop::collection::vec(0.0f64..5.0, 1..12), gamma in 1.0f64..200.0) {
        let w = ks_weights(&mu, gamma).unwrap();
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

struct ProjectionFixture {
    mesh: StructuredMesh,
    levelset: LevelSetGrid,
    basis: CentroidBasis,
    surface: BsplineSurface,
}

fn projection_fixture(interval: f64, p: usize, q: usize) -> ProjectionFixture {
    let mesh = StructuredMesh::new(10, 10, 1.0, None, vec![0, 1], vec![]).unwrap();
    let levelset = LevelSetGrid::from_fn(&mesh, |x, y| 25.0 - ((x + 20.0).powi(2) + (y - 5.0).powi(2)).sqrt());
    let kx = KnotVector::with_interval(interval, p, mesh.width()).unwrap();
    let ky = KnotVector::with_interval(interval, q, mesh.height()).unwrap();
    let surface = BsplineSurface::zeros(kx, ky);
    let basis = CentroidBasis::for_surface(&surface, &mesh.active_centroids()).unwrap();
    ProjectionFixture { mesh, levelset, basis, surface }
}

#[test]
fn projection_matches_full_chain_finite_differences() {
    let fx = projection_fixture(10.0, 2, 2);
    let delta = 2.0;
    let volume = |b: &[f64]| {
        let moved = advect_upwind(&fx.levelset, &fx.mesh, &fx.basis.evaluate(b), 1.0).unwrap();
        volume_and_sensitivity(&density_from_levelset(&moved, &fx.mesh, delta).unwrap(), &fx.mesh).unwrap().0
    };
    let dv = vec![1.0 / 100.0; 100];
    let analytic = project_to_coefficients(&dv, &fx.levelset, &fx.mesh, &fx.basis, delta).unwrap();
    let floor = 1e-3 * analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut b = fx.surface.coeffs.clone();
    let mut checked = 0;
    for k in 0..b.len() {
        if analytic[k].abs() <= floor {
            continue;
        }
        b[k] = 1e-4;
        let up = volume(&b);
        b[k] = -1e-4;
        let down = volume(&b);
        b[k] = 0.0;
        let fd = (up - down) / 2e-4;
        assert!((fd - analytic[k]).abs() <= 0.05 * fd.abs().max(analytic[k].abs()), "coeff {k}: {fd} vs {}", analytic[k]);
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn projection_reduces_to_weighted_dirac_sum_for_one_constant_basis() {
    let fx = projection_fixture(10.0, 0, 0);
    assert_eq!(fx.basis.n_coeffs(), 1);
    let df = random_density(100, -1.0, 26);
    let g = project_to_coefficients(&df, &fx.levelset, &fx.mesh, &fx.basis, 2.0).unwrap();
    let phi = fx.levelset.element_values(&fx.mesh).unwrap();
    let direct: f64 = df.iter().zip(&phi).map(|(d, p)| d * smoothed_dirac(*p, 2.0)).sum();
    assert!((g[0] - direct).abs() < 1e-12 * direct.abs().max(1.0));
}

#[test]
fn projection_without_interface_band_is_zero() {
    let fx = projection_fixture(2.0, 3, 2);
    let far = LevelSetGrid::from_fn(&fx.mesh, |x, _| x - 50.0);
    let g = project_to_coefficients(&random_density(100, -1.0, 27), &far, &fx.mesh, &fx.basis, 2.0).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn projection_is_linear_and_local() {
    let fx = projection_fixture(2.0, 3, 2);
    let a = random_density(100, -1.0, 28);
    let b = random_density(100, -1.0, 29);
    let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
    let ga = project_to_coefficients(&a, &fx.levelset, &fx.mesh, &fx.basis, 2.0).unwrap();
    let gb = project_to_coefficients(&b, &fx.levelset, &fx.mesh, &fx.basis, 2.0).unwrap();
    let gc = project_to_coefficients(&combo, &fx.levelset, &fx.mesh, &fx.basis, 2.0).unwrap();
    for k in 0..gc.len() {
        assert!((gc[k] - (2.0 * ga[k] - 3.0 * gb[k])).abs() < 1e-12);
    }
    for e in 0..100 {
        let mut bumped = a.clone();
        bumped[e] += 1.0;
        let g = project_to_coefficients(&bumped, &fx.levelset, &fx.mesh, &fx.basis, 2.0).unwrap();
        let changed = g.iter().zip(ga.iter()).filter(|(x, y)| x != y).count();
        assert!(changed <= (3 + 1) * (2 + 1), "element {e} moved {changed} coefficients");
    }
}
