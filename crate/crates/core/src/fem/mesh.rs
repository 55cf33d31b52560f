//! Structured Q4 grid with an active-element mask.
//!
//! Nodes are numbered row-major starting at the bottom-left corner,
//! `node(i, j) = j * (nx + 1) + i`, and every node carries two degrees of
//! freedom (`2 * node` for x, `2 * node + 1` for y). Elements are numbered
//! the same way, `element(i, j) = j * nx + i`. Inactive elements take no
//! part in any assembly; nodes touching no active element are treated as
//! constrained.

use std::sync::{Arc, OnceLock};

use faer::sparse::linalg::solvers::SymbolicLlt;
use faer::sparse::SymbolicSparseColMatRef;
use faer::Side;

use super::FemError;

/// Local node order of an element: bottom-left, bottom-right, top-right, top-left.
pub const LOCAL_NODE_OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

#[derive(Debug, Clone)]
pub struct StructuredMesh {
    nx: usize,
    ny: usize,
    h: f64,
    thickness: f64,
    active: Vec<bool>,
    active_elements: Vec<usize>,
    element_to_active: Vec<Option<usize>>,
    fixed_dofs: Vec<usize>,
    loads: Vec<(usize, f64)>,
    pattern: Arc<SparsityPattern>,
}

/// Column-compressed pattern of the full (unconstrained) stiffness matrix,
/// with the scatter slots of every active element and the lower-triangular
/// pattern of the reduced free-dof system.
#[derive(Debug)]
pub(crate) struct SparsityPattern {
    pub n_dofs: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    /// `slots[a][8 * r + c]` is the value index of local entry (r, c) of active element `a`.
    pub slots: Vec<[usize; 64]>,
    pub reduced: ReducedPattern,
}

#[derive(Debug)]
pub(crate) struct ReducedPattern {
    /// Full dof index -> reduced index, `None` for fixed or unconnected dofs.
    pub dof_to_free: Vec<Option<usize>>,
    pub free_dofs: Vec<usize>,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    /// Source index into the full value array for each reduced lower entry.
    pub source: Vec<usize>,
    symbolic: OnceLock<Result<SymbolicLlt<usize>, String>>,
}

impl ReducedPattern {
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn symbolic_ref(&self) -> SymbolicSparseColMatRef<'_, usize> {
        let n = self.n_free();
        SymbolicSparseColMatRef::new_checked(n, n, &self.col_ptr, None, &self.row_idx)
    }

    pub fn symbolic_llt(&self) -> Result<SymbolicLlt<usize>, FemError> {
        self.symbolic
            .get_or_init(|| {
                SymbolicLlt::try_new(self.symbolic_ref(), Side::Lower).map_err(|e| format!("{e:?}"))
            })
            .clone()
            .map_err(FemError::Factorization)
    }
}

impl StructuredMesh {
    /// Builds the mesh and its sparsity pattern.
    ///
    /// `active_mask` is indexed by element number; `None` means every element is active.
    pub fn new(
        nx: usize,
        ny: usize,
        h: f64,
        active_mask: Option<Vec<bool>>,
        fixed_dofs: Vec<usize>,
        loads: Vec<(usize, f64)>,
    ) -> Result<Self, FemError> {
        if nx == 0 || ny == 0 {
            return Err(FemError::InvalidMesh(format!("element counts must be positive, got {nx}x{ny}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(FemError::InvalidMesh(format!("element size must be positive, got {h}")));
        }
        let active = match active_mask {
            Some(mask) => {
                if mask.len() != nx * ny {
                    return Err(FemError::InvalidMesh(format!(
                        "active mask has {} entries, expected {}",
                        mask.len(),
                        nx * ny
                    )));
                }
                mask
            }
            None => vec![true; nx * ny],
        };
        let active_elements: Vec<usize> = (0..nx * ny).filter(|&e| active[e]).collect();
        if active_elements.is_empty() {
            return Err(FemError::InvalidMesh("active element set is empty".into()));
        }
        let mut element_to_active = vec![None; nx * ny];
        for (a, &e) in active_elements.iter().enumerate() {
            element_to_active[e] = Some(a);
        }

        let n_nodes = (nx + 1) * (ny + 1);
        let n_dofs = 2 * n_nodes;
        let mut connected = vec![false; n_nodes];
        for &e in &active_elements {
            for n in element_nodes_of(nx, e) {
                connected[n] = true;
            }
        }

        let mut fixed_dofs = fixed_dofs;
        fixed_dofs.sort_unstable();
        fixed_dofs.dedup();
        for &d in &fixed_dofs {
            if d >= n_dofs {
                return Err(FemError::InvalidMesh(format!("fixed dof {d} out of range")));
            }
            if !connected[d / 2] {
                return Err(FemError::DetachedNode { dof: d, what: "constraint" });
            }
        }
        for &(d, f) in &loads {
            if d >= n_dofs {
                return Err(FemError::InvalidMesh(format!("load dof {d} out of range")));
            }
            if !f.is_finite() {
                return Err(FemError::InvalidMesh(format!("load on dof {d} is not finite")));
            }
            if !connected[d / 2] {
                return Err(FemError::DetachedNode { dof: d, what: "load" });
            }
        }

        let pattern = Arc::new(SparsityPattern::build(nx, &active_elements, &connected, &fixed_dofs));
        Ok(Self {
            nx,
            ny,
            h,
            thickness: 1.0,
            active,
            active_elements,
            element_to_active,
            fixed_dofs,
            loads,
            pattern,
        })
    }

    /// Same geometry and pattern with a different reference load.
    pub fn with_loads(&self, loads: Vec<(usize, f64)>) -> Result<Self, FemError> {
        let n_dofs = self.n_dofs();
        for &(d, f) in &loads {
            if d >= n_dofs || !f.is_finite() {
                return Err(FemError::InvalidMesh(format!("invalid load on dof {d}")));
            }
            if self.pattern.reduced.dof_to_free[d].is_none() && !self.fixed_dofs.contains(&d) {
                return Err(FemError::DetachedNode { dof: d, what: "load" });
            }
        }
        let mut out = self.clone();
        out.loads = loads;
        Ok(out)
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

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.h
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.h
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_active(&self) -> usize {
        self.active_elements.len()
    }

    pub fn is_active(&self, element: usize) -> bool {
        self.active[element]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    /// Element numbers of the active elements, in active-index order.
    pub fn active_elements(&self) -> &[usize] {
        &self.active_elements
    }

    pub fn active_index(&self, element: usize) -> Option<usize> {
        self.element_to_active[element]
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed_dofs
    }

    pub fn loads(&self) -> &[(usize, f64)] {
        &self.loads
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let i = node % (self.nx + 1);
        let j = node / (self.nx + 1);
        (i as f64 * self.h, j as f64 * self.h)
    }

    pub fn element_ij(&self, element: usize) -> (usize, usize) {
        (element % self.nx, element / self.nx)
    }

    pub fn element_nodes(&self, element: usize) -> [usize; 4] {
        element_nodes_of(self.nx, element)
    }

    pub fn element_dofs(&self, element: usize) -> [usize; 8] {
        let n = self.element_nodes(element);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn element_centroid(&self, element: usize) -> (f64, f64) {
        let (i, j) = self.element_ij(element);
        ((i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h)
    }

    /// Centroids of the active elements, in active-index order.
    pub fn active_centroids(&self) -> Vec<(f64, f64)> {
        self.active_elements.iter().map(|&e| self.element_centroid(e)).collect()
    }

    /// Whether the node touches at least one active element.
    pub fn node_is_connected(&self, node: usize) -> bool {
        let i = node % (self.nx + 1);
        let j = node / (self.nx + 1);
        for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            if i >= di && j >= dj && i - di < self.nx && j - dj < self.ny {
                let e = (j - dj) * self.nx + (i - di);
                if self.active[e] {
                    return true;
                }
            }
        }
        false
    }

    /// Full-length reference force vector assembled from `loads`.
    pub fn force_vector(&self) -> Vec<f64> {
        force_vector_from(self.n_dofs(), &self.loads)
    }

    /// Number of unknowns after removing fixed and unconnected dofs.
    pub fn n_free_dofs(&self) -> usize {
        self.pattern.reduced.n_free()
    }

    /// Free (solved-for) dof indices in ascending order.
    pub fn free_dofs(&self) -> &[usize] {
        &self.pattern.reduced.free_dofs
    }

    pub fn is_free_dof(&self, dof: usize) -> bool {
        self.pattern.reduced.dof_to_free[dof].is_some()
    }

    pub(crate) fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }
}

pub fn force_vector_from(n_dofs: usize, loads: &[(usize, f64)]) -> Vec<f64> {
    let mut f = vec![0.0; n_dofs];
    for &(d, v) in loads {
        f[d] += v;
    }
    f
}

fn element_nodes_of(nx: usize, element: usize) -> [usize; 4] {
    let i = element % nx;
    let j = element / nx;
    let row = nx + 1;
    LOCAL_NODE_OFFSETS.map(|(di, dj)| (j + dj) * row + i + di)
}

impl SparsityPattern {
    fn build(nx: usize, active_elements: &[usize], connected: &[bool], fixed_dofs: &[usize]) -> Self {
        let n_dofs = 2 * connected.len();
        let element_dofs = |e: usize| {
            let n = element_nodes_of(nx, e);
            let mut d = [0usize; 8];
            for a in 0..4 {
                d[2 * a] = 2 * n[a];
                d[2 * a + 1] = 2 * n[a] + 1;
            }
            d
        };

        let mut columns: Vec<Vec<usize>> = vec![Vec::new(); n_dofs];
        for &e in active_elements {
            let dofs = element_dofs(e);
            for &c in &dofs {
                columns[c].extend_from_slice(&dofs);
            }
        }
        let mut col_ptr = Vec::with_capacity(n_dofs + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &mut columns {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        drop(columns);

        let find = |r: usize, c: usize| -> usize {
            let lo = col_ptr[c];
            let hi = col_ptr[c + 1];
            lo + row_idx[lo..hi].binary_search(&r).expect("entry in pattern")
        };
        let slots = active_elements
            .iter()
            .map(|&e| {
                let dofs = element_dofs(e);
                let mut s = [0usize; 64];
                for c in 0..8 {
                    for r in 0..8 {
                        s[8 * r + c] = find(dofs[r], dofs[c]);
                    }
                }
                s
            })
            .collect();

        let mut is_fixed = vec![false; n_dofs];
        for &d in fixed_dofs {
            is_fixed[d] = true;
        }
        let mut dof_to_free = vec![None; n_dofs];
        let mut free_dofs = Vec::new();
        for d in 0..n_dofs {
            if connected[d / 2] && !is_fixed[d] {
                dof_to_free[d] = Some(free_dofs.len());
                free_dofs.push(d);
            }
        }
        let mut r_col_ptr = Vec::with_capacity(free_dofs.len() + 1);
        let mut r_row_idx = Vec::new();
        let mut source = Vec::new();
        r_col_ptr.push(0);
        for &c in &free_dofs {
            let rc = dof_to_free[c].unwrap();
            for k in col_ptr[c]..col_ptr[c + 1] {
                if let Some(rr) = dof_to_free[row_idx[k]] {
                    if rr >= rc {
                        r_row_idx.push(rr);
                        source.push(k);
                    }
                }
            }
            r_col_ptr.push(r_row_idx.len());
        }

        Self {
            n_dofs,
            col_ptr,
            row_idx,
            slots,
            reduced: ReducedPattern {
                dof_to_free,
                free_dofs,
                col_ptr: r_col_ptr,
                row_idx: r_row_idx,
                source,
                symbolic: OnceLock::new(),
            },
        }
    }
}
