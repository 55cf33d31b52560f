//! Nodal level set function: initialization, density mapping, upwind
//! advection and signed-distance reinitialization.
//!
//! Φ > 0 inside material, Φ < 0 in void or outside the active domain. Φ lives
//! on the (nx + 1) x (ny + 1) mesh nodes; element values are centroid values
//! of the bilinear interpolant (the mean of the four corners). Stencils use
//! copy-out ghost values at the grid edges.

use std::ops::Deref;

use thiserror::Error;

use crate::fem::StructuredMesh;

#[derive(Debug, Error, PartialEq)]
pub enum LevelSetError {
    #[error("holes cover the entire domain")]
    HolesCoverDomain,
    #[error("CFL condition violated: max |V| dt = {value:.4e} exceeds {limit:.4e}")]
    Cfl { value: f64, limit: f64 },
    #[error("level set has no zero crossing")]
    NoInterface,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetGrid {
    nx: usize,
    ny: usize,
    h: f64,
    pub phi: Vec<f64>,
}

/// Per-element volume fractions of the active elements.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub rho: Vec<f64>,
}

impl Deref for DensityField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.rho
    }
}

/// Regular grid of circular holes over the bounding box of the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolePattern {
    pub rows: usize,
    pub cols: usize,
    pub radius: f64,
}

impl HolePattern {
    pub fn none() -> Self {
        Self { rows: 0, cols: 0, radius: 0.0 }
    }

    /// Hole centres `((c + ½) W / cols, (r + ½) H / rows)`.
    pub fn centers(&self, width: f64, height: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(((c as f64 + 0.5) * width / self.cols as f64, (r as f64 + 0.5) * height / self.rows as f64));
            }
        }
        out
    }
}

impl LevelSetGrid {
    pub fn new(nx: usize, ny: usize, h: f64, phi: Vec<f64>) -> Result<Self, LevelSetError> {
        if phi.len() != (nx + 1) * (ny + 1) {
            return Err(LevelSetError::DimensionMismatch(format!(
                "{} nodal values for a {}x{} element grid",
                phi.len(),
                nx,
                ny
            )));
        }
        if !(h > 0.0) {
            return Err(LevelSetError::InvalidArgument(format!("grid spacing {h}")));
        }
        Ok(Self { nx, ny, h, phi })
    }

    /// Samples `f(x, y)` at the mesh nodes.
    pub fn from_fn(mesh: &StructuredMesh, f: impl Fn(f64, f64) -> f64) -> Self {
        let phi = (0..mesh.n_nodes())
            .map(|n| {
                let (x, y) = mesh.node_coords(n);
                f(x, y)
            })
            .collect();
        Self { nx: mesh.nx(), ny: mesh.ny(), h: mesh.h(), phi }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.phi[j * (self.nx + 1) + i]
    }

    fn check_mesh(&self, mesh: &StructuredMesh) -> Result<(), LevelSetError> {
        if mesh.nx() != self.nx || mesh.ny() != self.ny {
            return Err(LevelSetError::DimensionMismatch(format!(
                "level set grid {}x{} vs mesh {}x{}",
                self.nx,
                self.ny,
                mesh.nx(),
                mesh.ny()
            )));
        }
        Ok(())
    }

    /// Centroid values Φ_i of the active elements.
    pub fn element_values(&self, mesh: &StructuredMesh) -> Result<Vec<f64>, LevelSetError> {
        self.check_mesh(mesh)?;
        Ok(mesh
            .active_elements()
            .iter()
            .map(|&e| 0.25 * mesh.element_nodes(e).iter().map(|&n| self.phi[n]).sum::<f64>())
            .collect())
    }

    /// Raises Φ to at least `value` at the given nodes.
    pub fn hold_at_least(&mut self, nodes: &[usize], value: f64) {
        for &n in nodes {
            self.phi[n] = self.phi[n].max(value);
        }
    }

    /// |∇Φ| by central differences (one-sided at the grid edges).
    pub fn gradient_norms(&self) -> Vec<f64> {
        let (nx, ny, h) = (self.nx, self.ny, self.h);
        let mut out = Vec::with_capacity(self.phi.len());
        for j in 0..=ny {
            for i in 0..=nx {
                let gx = match (i, nx) {
                    (_, 0) => 0.0,
                    (0, _) => (self.at(1, j) - self.at(0, j)) / h,
                    (i, n) if i == n => (self.at(n, j) - self.at(n - 1, j)) / h,
                    _ => (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * h),
                };
                let gy = match (j, ny) {
                    (_, 0) => 0.0,
                    (0, _) => (self.at(i, 1) - self.at(i, 0)) / h,
                    (j, n) if j == n => (self.at(i, n) - self.at(i, n - 1)) / h,
                    _ => (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * h),
                };
                out.push((gx * gx + gy * gy).sqrt());
            }
        }
        out
    }

    /// Sub-cell zero crossings along grid lines: `(edge key, position)` where
    /// the key identifies the grid edge and the position is the linear
    /// interpolation of the crossing along it.
    pub fn zero_crossings(&self) -> Vec<((usize, usize, bool), f64)> {
        let mut out = Vec::new();
        let h = self.h;
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                let a = self.at(i, j);
                if i < self.nx {
                    let b = self.at(i + 1, j);
                    if (a > 0.0) != (b > 0.0) {
                        out.push(((i, j, true), (i as f64 + a / (a - b)) * h));
                    }
                }
                if j < self.ny {
                    let b = self.at(i, j + 1);
                    if (a > 0.0) != (b > 0.0) {
                        out.push(((i, j, false), (j as f64 + a / (a - b)) * h));
                    }
                }
            }
        }
        out
    }

    pub fn has_interface(&self) -> bool {
        let pos = self.phi.iter().any(|&v| v > 0.0);
        let neg = self.phi.iter().any(|&v| v < 0.0);
        let zero = self.phi.iter().any(|&v| v == 0.0);
        (pos && neg) || zero
    }
}

/// Signed distance to the union of circular holes and the active-domain
/// boundary: Φ = min(d_boundary, min_k(|x − c_k| − r)). Holes whose centre
/// falls outside the active region are dropped.
pub fn initialize_with_holes(mesh: &StructuredMesh, holes: &HolePattern) -> Result<LevelSetGrid, LevelSetError> {
    let (nx, ny, h) = (mesh.nx(), mesh.ny(), mesh.h());
    // Boundary segments of the active region: element edges facing an inactive
    // element or the outside of the grid.
    let mut segments: Vec<((f64, f64), (f64, f64))> = Vec::new();
    let active = |i: isize, j: isize| -> bool {
        i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && mesh.is_active(j as usize * nx + i as usize)
    };
    for &e in mesh.active_elements() {
        let (i, j) = mesh.element_ij(e);
        let (x0, y0) = (i as f64 * h, j as f64 * h);
        let (x1, y1) = (x0 + h, y0 + h);
        let (ii, jj) = (i as isize, j as isize);
        if !active(ii, jj - 1) {
            segments.push(((x0, y0), (x1, y0)));
        }
        if !active(ii, jj + 1) {
            segments.push(((x0, y1), (x1, y1)));
        }
        if !active(ii - 1, jj) {
            segments.push(((x0, y0), (x0, y1)));
        }
        if !active(ii + 1, jj) {
            segments.push(((x1, y0), (x1, y1)));
        }
    }

    let centers = hole_centers_in_domain(mesh, holes);

    let mut phi = Vec::with_capacity(mesh.n_nodes());
    for n in 0..mesh.n_nodes() {
        let (x, y) = mesh.node_coords(n);
        let dist = segments.iter().fold(f64::INFINITY, |m, &(a, b)| m.min(point_segment_distance((x, y), a, b)));
        let mut value = if mesh.node_is_connected(n) { dist } else { -dist };
        for &(cx, cy) in &centers {
            value = value.min(((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - holes.radius);
        }
        phi.push(value);
    }
    if !phi.iter().any(|&v| v > 0.0) {
        return Err(LevelSetError::HolesCoverDomain);
    }
    Ok(LevelSetGrid { nx, ny, h, phi })
}

/// Signed distance to the holes alone, Φ = min_k(|x − c_k| − r). The
/// domain edges, supports included, start inside the material and only
/// become boundary where a hole reaches them.
pub fn initialize_with_interior_holes(
    mesh: &StructuredMesh,
    holes: &HolePattern,
) -> Result<LevelSetGrid, LevelSetError> {
    let (nx, ny, h) = (mesh.nx(), mesh.ny(), mesh.h());
    let centers: Vec<(f64, f64)> = hole_centers_in_domain(mesh, holes);
    if centers.is_empty() {
        return Err(LevelSetError::NoInterface);
    }
    let phi: Vec<f64> = (0..mesh.n_nodes())
        .map(|n| {
            let (x, y) = mesh.node_coords(n);
            centers.iter().fold(f64::INFINITY, |m, &(cx, cy)| m.min(((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - holes.radius))
        })
        .collect();
    if !phi.iter().any(|&v| v > 0.0) {
        return Err(LevelSetError::HolesCoverDomain);
    }
    Ok(LevelSetGrid { nx, ny, h, phi })
}

fn hole_centers_in_domain(mesh: &StructuredMesh, holes: &HolePattern) -> Vec<(f64, f64)> {
    let (nx, ny, h) = (mesh.nx(), mesh.ny(), mesh.h());
    holes
        .centers(mesh.width(), mesh.height())
        .into_iter()
        .filter(|&(cx, cy)| {
            let i = ((cx / h).floor() as usize).min(nx - 1);
            let j = ((cy / h).floor() as usize).min(ny - 1);
            mesh.is_active(j * nx + i)
        })
        .collect()
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// C¹ smoothed Heaviside over the band |φ| < Δ.
pub fn smoothed_heaviside(phi: f64, delta: f64) -> f64 {
    if phi <= -delta {
        0.0
    } else if phi >= delta {
        1.0
    } else {
        let s = phi / delta;
        0.5 + 0.75 * s - 0.25 * s * s * s
    }
}

/// Derivative of [`smoothed_heaviside`].
pub fn smoothed_dirac(phi: f64, delta: f64) -> f64 {
    if phi.abs() >= delta {
        0.0
    } else {
        0.75 / delta * (1.0 - (phi / delta).powi(2))
    }
}

/// ρ_i = H(Φ_i) over the active elements.
pub fn density_from_levelset(
    levelset: &LevelSetGrid,
    mesh: &StructuredMesh,
    delta: f64,
) -> Result<DensityField, LevelSetError> {
    let rho = levelset.element_values(mesh)?.into_iter().map(|p| smoothed_heaviside(p, delta)).collect();
    Ok(DensityField { rho })
}

/// Nodal velocity: mean of the adjacent active-element values (zero for
/// nodes touching no active element).
pub fn nodal_velocity(mesh: &StructuredMesh, element_velocity: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; mesh.n_nodes()];
    let mut count = vec![0u8; mesh.n_nodes()];
    for (a, &e) in mesh.active_elements().iter().enumerate() {
        for n in mesh.element_nodes(e) {
            sum[n] += element_velocity[a];
            count[n] += 1;
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
}

/// Godunov approximation of |∇Φ| at node (i, j). `outward` selects the
/// branch for a front moving towards increasing Φ (expansion of the
/// negative region, i.e. F > 0 in Φ_t + F|∇Φ| = 0).
#[inline]
fn godunov_gradient(g: &LevelSetGrid, i: usize, j: usize, outward: bool) -> f64 {
    let h = g.h;
    let c = g.at(i, j);
    let xm = if i > 0 { g.at(i - 1, j) } else { c };
    let xp = if i < g.nx { g.at(i + 1, j) } else { c };
    let ym = if j > 0 { g.at(i, j - 1) } else { c };
    let yp = if j < g.ny { g.at(i, j + 1) } else { c };
    let (ax, bx) = ((c - xm) / h, (xp - c) / h);
    let (ay, by) = ((c - ym) / h, (yp - c) / h);
    let term = |a: f64, b: f64| {
        if outward {
            a.max(0.0).powi(2).max(b.min(0.0).powi(2))
        } else {
            a.min(0.0).powi(2).max(b.max(0.0).powi(2))
        }
    };
    (term(ax, bx) + term(ay, by)).sqrt()
}

/// One explicit Godunov upwind step of Φ_t = Vⁿ |∇Φ| with the element-wise
/// constant velocity `element_velocity` (one value per active element).
pub fn advect_upwind(
    levelset: &LevelSetGrid,
    mesh: &StructuredMesh,
    element_velocity: &[f64],
    dt: f64,
) -> Result<LevelSetGrid, LevelSetError> {
    levelset.check_mesh(mesh)?;
    if element_velocity.len() != mesh.n_active() {
        return Err(LevelSetError::DimensionMismatch(format!(
            "{} velocities for {} active elements",
            element_velocity.len(),
            mesh.n_active()
        )));
    }
    if !(dt > 0.0) {
        return Err(LevelSetError::InvalidArgument(format!("time step {dt}")));
    }
    let vmax = element_velocity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let limit = 0.5 * levelset.h;
    if !(vmax * dt <= limit) {
        return Err(LevelSetError::Cfl { value: vmax * dt, limit });
    }
    let vnode = nodal_velocity(mesh, element_velocity);
    let mut out = levelset.clone();
    for j in 0..=levelset.ny {
        for i in 0..=levelset.nx {
            let n = j * (levelset.nx + 1) + i;
            let v = vnode[n];
            if v == 0.0 {
                continue;
            }
            // Φ_t + F|∇Φ| = 0 with F = −V.
            let grad = godunov_gradient(levelset, i, j, v < 0.0);
            out.phi[n] = levelset.phi[n] + dt * v * grad;
        }
    }
    Ok(out)
}

/// Distance to the zero contour estimated from Φ₀ at nodes whose 4-neighbour
/// stencil crosses the interface, `None` elsewhere.
fn subcell_distances(g: &LevelSetGrid) -> Vec<Option<f64>> {
    let h = g.h;
    let mut out = vec![None; g.phi.len()];
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let c = g.at(i, j);
            let xm = if i > 0 { g.at(i - 1, j) } else { c };
            let xp = if i < g.nx { g.at(i + 1, j) } else { c };
            let ym = if j > 0 { g.at(i, j - 1) } else { c };
            let yp = if j < g.ny { g.at(i, j + 1) } else { c };
            let nb = [xm, xp, ym, yp];
            // Isolated nodes are sub-grid islands; leaving them to the
            // upwind update lets them decay instead of pinning them at Φ ≈ 0.
            if c == 0.0 || nb.iter().all(|&v| v * c > 0.0) || nb.iter().all(|&v| v * c < 0.0) {
                continue;
            }
            let dx = (0.5 * (xp - xm).abs()).max((xp - c).abs()).max((c - xm).abs());
            let dy = (0.5 * (yp - ym).abs()).max((yp - c).abs()).max((c - ym).abs());
            let grad = (dx * dx + dy * dy).sqrt() / h;
            if grad > 1e-12 {
                out[j * (g.nx + 1) + i] = Some(c / grad);
            }
        }
    }
    out
}

/// `n_sweeps` pseudo-time steps of Φ_τ = −S(Φ₀)(|∇Φ| − 1) with
/// S = Φ₀ / sqrt(Φ₀² + h²) and step 0.5 h. Nodes next to the interface
/// relax towards their sub-cell distance from Φ₀ instead, which keeps the
/// zero contour in place.
pub fn reinitialize(levelset: &LevelSetGrid, n_sweeps: usize) -> Result<LevelSetGrid, LevelSetError> {
    if !levelset.has_interface() {
        return Err(LevelSetError::NoInterface);
    }
    let h = levelset.h;
    let dtau = 0.5 * h;
    let sign: Vec<f64> = levelset.phi.iter().map(|&p| p / (p * p + h * h).sqrt()).collect();
    let anchor = subcell_distances(levelset);
    let mut current = levelset.clone();
    let mut next = levelset.clone();
    for _ in 0..n_sweeps {
        for j in 0..=current.ny {
            for i in 0..=current.nx {
                let n = j * (current.nx + 1) + i;
                let s = sign[n];
                let phi = current.phi[n];
                next.phi[n] = if s == 0.0 {
                    phi
                } else if let Some(d) = anchor[n] {
                    phi - dtau / h * (s.signum() * phi.abs() - d)
                } else {
                    phi - dtau * s * (godunov_gradient(&current, i, j, s > 0.0) - 1.0)
                };
            }
        }
        std::mem::swap(&mut current, &mut next);
    }
    Ok(current)
}
