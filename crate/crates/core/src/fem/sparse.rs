//! Symmetric sparse matrices on a mesh pattern and their Cholesky factorization.

use std::sync::Arc;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::SparseColMatRef;
use faer::{Conj, MatMut, Side};

use super::mesh::{SparsityPattern, StructuredMesh};
use super::FemError;

/// Symmetric matrix over all mesh dofs, stored with both triangles in
/// compressed-column form on the mesh's fixed sparsity pattern.
#[derive(Debug, Clone)]
pub struct SymmetricSparseMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SymmetricSparseMatrix {
    pub fn zeros(mesh: &StructuredMesh) -> Self {
        let pattern = mesh.pattern().clone();
        let values = vec![0.0; pattern.row_idx.len()];
        Self { pattern, values }
    }

    pub fn dim(&self) -> usize {
        self.pattern.n_dofs
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn same_pattern(&self, mesh: &StructuredMesh) -> bool {
        Arc::ptr_eq(&self.pattern, mesh.pattern())
    }

    /// Entry (row, col); zero outside the pattern.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let p = &self.pattern;
        let lo = p.col_ptr[col];
        let hi = p.col_ptr[col + 1];
        match p.row_idx[lo..hi].binary_search(&row) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Iterates stored entries as (row, col, value).
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let p = &self.pattern;
        (0..p.n_dofs).flat_map(move |c| {
            (p.col_ptr[c]..p.col_ptr[c + 1]).map(move |k| (p.row_idx[k], c, self.values[k]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let p = &self.pattern;
        let mut y = vec![0.0; x.len()];
        for c in 0..p.n_dofs {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                y[p.row_idx[k]] += self.values[k] * xc;
            }
        }
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = &self.pattern;
        let mut acc = 0.0;
        for c in 0..p.n_dofs {
            if y[c] == 0.0 {
                continue;
            }
            let mut col = 0.0;
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                col += self.values[k] * x[p.row_idx[k]];
            }
            acc += col * y[c];
        }
        acc
    }

    /// Product restricted to the free dofs of the mesh: input and output
    /// are reduced vectors.
    pub fn mul_vec_reduced(&self, x: &[f64]) -> Vec<f64> {
        let r = &self.pattern.reduced;
        let mut full = vec![0.0; self.dim()];
        for (i, &d) in r.free_dofs.iter().enumerate() {
            full[d] = x[i];
        }
        let y = self.mul_vec(&full);
        r.free_dofs.iter().map(|&d| y[d]).collect()
    }

    /// Dense copy of the free-dof block (small problems only).
    pub fn reduced_dense(&self) -> nalgebra::DMatrix<f64> {
        let r = &self.pattern.reduced;
        let n = r.n_free();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        let p = &self.pattern;
        for (rc, &c) in r.free_dofs.iter().enumerate() {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                if let Some(rr) = r.dof_to_free[p.row_idx[k]] {
                    m[(rr, rc)] = self.values[k];
                }
            }
        }
        m
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Sparse Cholesky factorization of the free-dof block of a stiffness matrix.
#[derive(Debug)]
pub struct StiffnessFactorization {
    llt: Llt<usize, f64>,
    pattern: Arc<SparsityPattern>,
}

impl StiffnessFactorization {
    pub fn new(k: &SymmetricSparseMatrix) -> Result<Self, FemError> {
        let pattern = k.pattern().clone();
        let reduced = &pattern.reduced;
        if reduced.n_free() == 0 {
            return Err(FemError::SingularSystem("no free degrees of freedom".into()));
        }
        let values: Vec<f64> = reduced.source.iter().map(|&s| k.values()[s]).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FemError::SingularSystem("non-finite stiffness entry".into()));
        }
        let symbolic = reduced.symbolic_llt()?;
        let mat = SparseColMatRef::new(reduced.symbolic_ref(), &values);
        let llt = Llt::try_new_with_symbolic(symbolic, mat, Side::Lower)
            .map_err(|e| FemError::SingularSystem(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(Self { llt, pattern })
    }

    pub fn n_free(&self) -> usize {
        self.pattern.reduced.n_free()
    }

    pub fn n_dofs(&self) -> usize {
        self.pattern.n_dofs
    }

    pub fn matches(&self, mesh: &StructuredMesh) -> bool {
        Arc::ptr_eq(&self.pattern, mesh.pattern())
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.pattern.reduced.free_dofs
    }

    /// Solves in the reduced (free-dof) space, overwriting `rhs`.
    pub fn solve_reduced_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        assert_eq!(n, self.n_free());
        let mat = MatMut::from_column_major_slice_mut(rhs, n, 1);
        self.llt.solve_in_place_with_conj(Conj::No, mat);
    }

    /// Solves `K x = rhs` for a full-length right-hand side. Entries of `rhs`
    /// at constrained dofs are ignored and the solution is zero there.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let r = &self.pattern.reduced;
        let mut reduced: Vec<f64> = r.free_dofs.iter().map(|&d| rhs[d]).collect();
        self.solve_reduced_in_place(&mut reduced);
        self.expand(&reduced)
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.pattern.reduced.free_dofs.iter().map(|&d| full[d]).collect()
    }

    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.pattern.n_dofs];
        for (i, &d) in self.pattern.reduced.free_dofs.iter().enumerate() {
            out[d] = reduced[i];
        }
        out
    }
}
