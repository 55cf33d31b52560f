//! Problem assembly from a configuration: mesh, supports, load cases, knot
//! vectors and the initial level set.

use super::config::ProblemConfig;
use super::DriverError;
use crate::bspline::{BsplineSurface, CentroidBasis, KnotVector};
use crate::fem::{force_vector_from, MaterialModel, StructuredMesh};
use crate::levelset::{initialize_with_holes, initialize_with_interior_holes, LevelSetGrid};

#[derive(Debug, Clone)]
pub struct Problem {
    pub mesh: StructuredMesh,
    pub material: MaterialModel,
    /// Full-length force vectors of the stress and buckling load cases.
    pub stress_load: Vec<f64>,
    pub buckling_load: Vec<f64>,
    pub surface: BsplineSurface,
    pub basis: CentroidBasis,
    pub initial_levelset: LevelSetGrid,
    /// Level set nodes kept inside the material around the loads.
    pub solid_nodes: Vec<usize>,
}

/// Fraction of each side removed from the upper-right corner of an L-bracket.
pub const BRACKET_CUTOUT: f64 = 0.6;

fn cutout_size(n: usize) -> usize {
    (BRACKET_CUTOUT * n as f64).round() as usize
}

/// Active-element mask with the upper-right block removed.
pub fn bracket_mask(nx: usize, ny: usize) -> Vec<bool> {
    let (cx, cy) = (cutout_size(nx), cutout_size(ny));
    (0..nx * ny).map(|e| !(e % nx >= nx - cx && e / nx >= ny - cy)).collect()
}

/// Downward total force `magnitude` over `count` adjacent nodes of row `j`
/// centred on the row. When the centring is off by half a node the load
/// goes on `count + 1` nodes with half weights at the ends, which keeps
/// the load symmetric and its total unchanged.
pub fn centered_top_load(nx: usize, j: usize, magnitude: f64, count: usize) -> Vec<(usize, f64)> {
    let row = nx + 1;
    let node = |i: usize| j * row + i;
    if (row - count) % 2 == 0 {
        let i0 = (row - count) / 2;
        (i0..i0 + count).map(|i| (2 * node(i) + 1, -magnitude / count as f64)).collect()
    } else {
        let i0 = (row - count - 1) / 2;
        let w = magnitude / count as f64;
        (i0..=i0 + count)
            .map(|i| {
                let f = if i == i0 || i == i0 + count { 0.5 * w } else { w };
                (2 * node(i) + 1, -f)
            })
            .collect()
    }
}

fn square_supports(nx: usize) -> Vec<usize> {
    (0..=nx).flat_map(|i| [2 * i, 2 * i + 1]).collect()
}

fn bracket_supports(nx: usize, ny: usize) -> Vec<usize> {
    let arm = nx - cutout_size(nx);
    (0..=arm).flat_map(|i| {
        let n = ny * (nx + 1) + i;
        [2 * n, 2 * n + 1]
    })
    .collect()
}

/// Downward load spread evenly over `count` nodes on the upper face of the
/// horizontal arm, ending at its free corner.
fn bracket_corner_load(nx: usize, ny: usize, magnitude: f64, count: usize) -> Vec<(usize, f64)> {
    let j = ny - cutout_size(ny);
    (nx + 1 - count..=nx).map(|i| (2 * (j * (nx + 1) + i) + 1, -magnitude / count as f64)).collect()
}

/// Nodes of the active elements within `layers` element rings of any
/// loaded node.
pub fn nodes_near_loads(mesh: &StructuredMesh, load_dofs: &[usize], layers: usize) -> Vec<usize> {
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let mut keep = vec![false; mesh.n_nodes()];
    for &dof in load_dofs {
        let node = dof / 2;
        let (i, j) = (node % (nx + 1), node / (nx + 1));
        for ej in j.saturating_sub(layers)..(j + layers).min(ny) {
            for ei in i.saturating_sub(layers)..(i + layers).min(nx) {
                let e = ej * nx + ei;
                if mesh.is_active(e) {
                    mesh.element_nodes(e).iter().for_each(|&n| keep[n] = true);
                }
            }
        }
    }
    (0..keep.len()).filter(|&n| keep[n]).collect()
}

pub fn build_problem(config: &ProblemConfig) -> Result<Problem, DriverError> {
    config.validate()?;
    let (nx, ny, h) = (config.mesh.nx, config.mesh.ny, config.mesh.h);
    let (mask, fixed, stress_loads, buckling_loads) = if config.mesh.bracket_cutout {
        (
            Some(bracket_mask(nx, ny)),
            bracket_supports(nx, ny),
            bracket_corner_load(nx, ny, config.load.stress.magnitude, config.load.stress.nodes),
            bracket_corner_load(nx, ny, config.load.buckling.magnitude, config.load.buckling.nodes),
        )
    } else {
        (
            None,
            square_supports(nx),
            centered_top_load(nx, ny, config.load.stress.magnitude, config.load.stress.nodes),
            centered_top_load(nx, ny, config.load.buckling.magnitude, config.load.buckling.nodes),
        )
    };
    let mesh = StructuredMesh::new(nx, ny, h, mask, fixed, stress_loads.clone())?;
    let n_dofs = mesh.n_dofs();
    let material = MaterialModel::new(config.material.e, config.material.e_min, config.material.nu)?;
    let knots_x = KnotVector::with_interval(config.bspline.knot_interval, config.bspline.degree_x, mesh.width())?;
    let knots_y = KnotVector::with_interval(config.bspline.knot_interval, config.bspline.degree_y, mesh.height())?;
    let surface = BsplineSurface::zeros(knots_x, knots_y);
    let basis = CentroidBasis::for_surface(&surface, &mesh.active_centroids())?;
    let load_dofs: Vec<usize> = stress_loads.iter().chain(&buckling_loads).map(|l| l.0).collect();
    let solid_nodes = nodes_near_loads(&mesh, &load_dofs, config.load.solid_layers);
    let mut initial_levelset = if config.holes.edges_are_boundary {
        initialize_with_holes(&mesh, &config.holes.pattern())?
    } else {
        initialize_with_interior_holes(&mesh, &config.holes.pattern())?
    };
    initial_levelset.hold_at_least(&solid_nodes, config.levelset.heaviside_width * h);
    Ok(Problem {
        stress_load: force_vector_from(n_dofs, &stress_loads),
        buckling_load: force_vector_from(n_dofs, &buckling_loads),
        mesh,
        material,
        surface,
        basis,
        initial_levelset,
        solid_nodes,
    })
}
