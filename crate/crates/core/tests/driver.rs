use std::fs;

use vfls_core::driver::config::square_config;
use vfls_core::driver::output::{read_matrix_csv, read_pgm, write_history, HISTORY_HEADER};
use vfls_core::driver::{build_problem, preset, run_optimization, write_outputs, ProblemConfig, RunHistory, RunStatus};
use vfls_core::fem::StructuredMesh;
use vfls_core::levelset::{density_from_levelset, LevelSetGrid};
use vfls_core::sensitivity::volume_and_sensitivity;

#[test]
fn square_stress_bundle() {
    let config = preset("square-stress").unwrap();
    assert_eq!(config.constraint.stress.bound, 1.3);
    assert!(config.constraint.stress.enabled && !config.constraint.buckling.enabled);
    let p = build_problem(&config).unwrap();
    assert_eq!((p.mesh.nx(), p.mesh.ny(), p.mesh.n_active()), (300, 300, 90000));
    assert_eq!((p.surface.n_x(), p.surface.n_y()), (103, 102));
    assert!(p.surface.coeffs.iter().all(|&b| b == 0.0));
    assert!(p.initial_levelset.phi.iter().any(|&v| v < 0.0));
}

#[test]
fn lbracket_combined_bundle() {
    let config = preset("lbracket-combined").unwrap();
    assert_eq!(config.constraint.stress.bound, 0.65);
    assert_eq!(config.constraint.buckling.bound, 2.5);
    assert_eq!(config.bspline.knot_interval, 2.0);
    let p = build_problem(&config).unwrap();
    assert_eq!(p.mesh.n_active(), 6400);
    assert_eq!((p.surface.n_x(), p.surface.n_y()), (53, 52));
    assert!(p.surface.coeffs.iter().all(|&b| b == 0.0));
}

#[test]
fn invalid_modulus_is_reported_by_name() {
    let err = ProblemConfig::parse("material.E = -2.0\n").unwrap_err();
    assert!(err.to_string().contains("material.E"), "{err}");
}

#[test]
fn small_square_loses_volume_steadily() {
    let mut config = square_config(20, true, false);
    config.opt.max_iter = 30;
    let problem = build_problem(&config).unwrap();
    let out = run_optimization(&problem, &config, |_| {}).unwrap();
    let v: Vec<f64> = out.history.records.iter().map(|r| r.volume).collect();
    assert_eq!(v.len(), 30);
    assert!((0.5..0.8).contains(&v[0]), "{}", v[0]);
    assert!(v[..=10].windows(2).all(|w| w[1] < w[0]), "{v:?}");
    let iters: Vec<usize> = out.history.records.iter().map(|r| r.iter).collect();
    assert_eq!(iters, (0..30).collect::<Vec<_>>());
}

#[test]
fn zero_iteration_cap_returns_the_initial_design() {
    let mut config = square_config(20, true, false);
    config.opt.max_iter = 0;
    let problem = build_problem(&config).unwrap();
    let out = run_optimization(&problem, &config, |_| panic!("no records expected")).unwrap();
    assert_eq!(out.status, RunStatus::IterationCap);
    assert!(out.history.records.is_empty());
    assert_eq!(out.levelset, problem.initial_levelset);
    let rho = density_from_levelset(&problem.initial_levelset, &problem.mesh, 2.0).unwrap();
    assert_eq!(out.density, rho);
}

#[test]
fn logged_volume_matches_the_returned_density() {
    let mut config = square_config(20, true, true);
    config.opt.max_iter = 8;
    let problem = build_problem(&config).unwrap();
    let out = run_optimization(&problem, &config, |_| {}).unwrap();
    let (v, _) = volume_and_sensitivity(&out.density, &problem.mesh).unwrap();
    assert_eq!(out.history.records.last().unwrap().volume, v);
}

#[test]
fn converged_runs_are_feasible() {
    // Near-zero design bounds leave only reinitialization moving the shape.
    let mut config = square_config(20, true, false);
    config.design.lower = -1e-9;
    config.design.upper = 1e-9;
    config.opt.max_iter = 50;
    let problem = build_problem(&config).unwrap();
    let out = run_optimization(&problem, &config, |_| {}).unwrap();
    assert_eq!(out.status, RunStatus::Converged);
    assert!(out.history.records.len() > config.opt.window);
    let tail = &out.history.records[out.history.records.len() - config.opt.window..];
    assert!(tail.iter().all(|r| r.rel_change.unwrap() < config.opt.tolerance));
    let last = out.history.records.last().unwrap();
    assert!(last.sigma_pm.unwrap() <= config.constraint.stress.bound * (1.0 + 1e-3));
}

#[test]
fn repeated_runs_write_identical_histories() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = square_config(20, true, true);
    config.opt.max_iter = 12;
    let mut files = Vec::new();
    for k in 0..2 {
        let problem = build_problem(&config).unwrap();
        let out = run_optimization(&problem, &config, |_| {}).unwrap();
        let path = dir.path().join(format!("history{k}.csv"));
        write_history(&out.history, &path).unwrap();
        files.push(fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

fn two_by_two() -> (StructuredMesh, LevelSetGrid) {
    let mesh = StructuredMesh::new(2, 2, 1.0, None, vec![0, 1], vec![]).unwrap();
    let ls = LevelSetGrid::from_fn(&mesh, |x, y| x - y);
    (mesh, ls)
}

#[test]
fn pgm_maps_solid_to_black() {
    let dir = tempfile::tempdir().unwrap();
    let (mesh, ls) = two_by_two();
    // Element order is bottom row first; the image is top row first.
    let rho = [0.0, 1.0, 1.0, 0.0];
    let paths = write_outputs(&RunHistory::default(), &rho, &ls, &mesh, None, dir.path(), false).unwrap();
    let (w, h, px) = read_pgm(&paths.density_pgm).unwrap();
    assert_eq!((w, h), (2, 2));
    assert_eq!(px, vec![0, 255, 255, 0]);
    assert!(fs::read(&paths.density_pgm).unwrap().starts_with(b"P5\n2 2\n255\n"));
}

#[test]
fn empty_history_has_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    write_history(&RunHistory::default(), &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "iter,volume,sigma_pm,ks_mu,lambda1,max_vn,rel_change\n");
    assert_eq!(HISTORY_HEADER.join(","), "iter,volume,sigma_pm,ks_mu,lambda1,max_vn,rel_change");
}

#[test]
fn density_csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (mesh, ls) = two_by_two();
    let rho = [1.0 / 3.0, 0.1 + 0.2, 1e-300, 0.999_999_999_999_999_9];
    let vm = [0.5, 2.0 / 7.0, 1e10, 0.0];
    let paths = write_outputs(&RunHistory::default(), &rho, &ls, &mesh, Some(&vm), dir.path(), true).unwrap();
    let grid = read_matrix_csv(&paths.density_csv).unwrap();
    assert_eq!(grid, vec![vec![rho[2], rho[3]], vec![rho[0], rho[1]]]);
    let vm_grid = read_matrix_csv(paths.von_mises.as_ref().unwrap()).unwrap();
    assert_eq!(vm_grid, vec![vec![vm[2], vm[3]], vec![vm[0], vm[1]]]);
    let vtk = fs::read_to_string(paths.vtk.as_ref().unwrap()).unwrap();
    assert!(vtk.contains("CELL_DATA 4") && vtk.contains("POINT_DATA 9"));
}

#[test]
fn held_load_pad_stays_solid() {
    let mut config = square_config(20, true, false);
    config.load.solid_layers = 1;
    config.opt.max_iter = 12;
    let problem = build_problem(&config).unwrap();
    assert!(!problem.solid_nodes.is_empty());
    let out = run_optimization(&problem, &config, |_| {}).unwrap();
    let delta = config.levelset.heaviside_width * config.mesh.h;
    assert!(problem.solid_nodes.iter().all(|&n| out.levelset.phi[n] >= delta));
    let mesh = &problem.mesh;
    for (a, &e) in mesh.active_elements().iter().enumerate() {
        if mesh.element_nodes(e).iter().all(|n| problem.solid_nodes.contains(n)) {
            assert_eq!(out.density[a], 1.0);
        }
    }
}
