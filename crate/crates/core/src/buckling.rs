//! Linearized buckling: (K + λG)φ = 0 for the smallest positive load factors.
//!
//! The pencil is solved as −Gφ = μKφ with μ = 1/λ, so the wanted modes are
//! the largest positive μ. The iterative path runs Lanczos on K⁻¹(−G), which
//! is self-adjoint in the K inner product, reusing the equilibrium
//! factorization. Small problems go through a dense reduction instead.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fem::{FemError, StiffnessFactorization, SymmetricSparseMatrix};

#[derive(Debug, Error)]
pub enum BucklingError {
    #[error("insufficient buckling modes: {found} positive eigenvalues, {requested} requested")]
    InsufficientModes { found: usize, requested: usize },
    #[error("eigensolver did not converge in {steps} steps")]
    NotConverged { steps: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Fem(#[from] FemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    /// Dense below [`DENSE_LIMIT`] free dofs, Lanczos above.
    Auto,
    Lanczos,
    Dense,
}

pub const DENSE_LIMIT: usize = 200;

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub method: EigenMethod,
    pub max_steps: usize,
    /// Relative change of the wanted Ritz values between checks.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { method: EigenMethod::Auto, max_steps: 500, tolerance: 1e-8, seed: 0x5eed }
    }
}

/// Buckling load factors (ascending) and K-orthonormal modes over all dofs.
#[derive(Debug, Clone)]
pub struct BucklingModes {
    pub lambdas: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
}

impl BucklingModes {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// μ_i = 1/λ_i.
    pub fn mus(&self) -> Vec<f64> {
        self.lambdas.iter().map(|l| 1.0 / l).collect()
    }
}

/// The `q` smallest positive buckling load factors of (K, G). `start`, a
/// full-length dof vector, seeds the Lanczos run (e.g. the previous modes);
/// otherwise a seeded random vector is used.
pub fn solve_buckling_modes(
    k: &SymmetricSparseMatrix,
    g: &SymmetricSparseMatrix,
    factor: &StiffnessFactorization,
    q: usize,
    options: &EigenOptions,
    start: Option<&[f64]>,
) -> Result<BucklingModes, BucklingError> {
    if q == 0 {
        return Err(BucklingError::InvalidRequest("at least one mode must be requested".into()));
    }
    if k.dim() != g.dim() || k.dim() != factor.n_dofs() {
        return Err(BucklingError::InvalidRequest("K, G and the factorization have different sizes".into()));
    }
    let n = factor.n_free();
    if q > n {
        return Err(BucklingError::InsufficientModes { found: 0, requested: q });
    }
    let dense = match options.method {
        EigenMethod::Dense => true,
        EigenMethod::Lanczos => false,
        EigenMethod::Auto => n <= DENSE_LIMIT,
    };
    let (mus, reduced_modes) = if dense {
        dense_pencil(k, g, q)?
    } else {
        lanczos(k, g, factor, q, options, start)?
    };
    let mut lambdas = Vec::with_capacity(q);
    let mut modes = Vec::with_capacity(q);
    for (mu, mut phi) in mus.into_iter().zip(reduced_modes) {
        let knorm = dot(&phi, &k.mul_vec_reduced(&phi)).sqrt();
        phi.iter_mut().for_each(|v| *v /= knorm);
        let (imax, _) = phi
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
        if phi[imax] < 0.0 {
            phi.iter_mut().for_each(|v| *v = -*v);
        }
        lambdas.push(1.0 / mu);
        modes.push(factor.expand(&phi));
    }
    Ok(BucklingModes { lambdas, modes })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Largest `q` positive μ of −Gφ = μKφ with reduced-space vectors, by the
/// Cholesky reduction C = L⁻¹(−G)L⁻ᵀ.
fn dense_pencil(
    k: &SymmetricSparseMatrix,
    g: &SymmetricSparseMatrix,
    q: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), BucklingError> {
    let kd = k.reduced_dense();
    let gd = g.reduced_dense();
    let chol = nalgebra::Cholesky::new(kd)
        .ok_or_else(|| FemError::SingularSystem("stiffness matrix is not positive definite".into()))?;
    let l = chol.l();
    let x = l.solve_lower_triangular(&(-gd)).expect("nonsingular Cholesky factor");
    let mut c = l.solve_lower_triangular(&x.transpose()).expect("nonsingular Cholesky factor");
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > 0.0).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    if order.len() < q || !positive_enough(eig.eigenvalues[order[q - 1]], &eig.eigenvalues) {
        let found = order.iter().filter(|&&i| positive_enough(eig.eigenvalues[i], &eig.eigenvalues)).count();
        return Err(BucklingError::InsufficientModes { found: found.min(q - 1), requested: q });
    }
    let lt = l.transpose();
    let mut mus = Vec::with_capacity(q);
    let mut modes = Vec::with_capacity(q);
    for &i in order.iter().take(q) {
        let y: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        let phi = lt.solve_upper_triangular(&y).expect("nonsingular Cholesky factor");
        mus.push(eig.eigenvalues[i]);
        modes.push(phi.as_slice().to_vec());
    }
    Ok((mus, modes))
}

/// Rejects μ that are roundoff relative to the spectrum (G ≈ 0).
fn positive_enough(mu: f64, spectrum: &DVector<f64>) -> bool {
    let scale = spectrum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    mu > 0.0 && mu > 1e-12 * scale && mu.is_finite() && mu > f64::MIN_POSITIVE * 1e10
}

/// K-inner-product Lanczos on A = K⁻¹(−G) with full reorthogonalization.
fn lanczos(
    k: &SymmetricSparseMatrix,
    g: &SymmetricSparseMatrix,
    factor: &StiffnessFactorization,
    q: usize,
    options: &EigenOptions,
    start: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), BucklingError> {
    let n = factor.n_free();
    let max_steps = options.max_steps.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut v0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    if let Some(s) = start {
        let s = factor.restrict(s);
        let ss = dot(&s, &s).sqrt();
        if ss > 0.0 && ss.is_finite() {
            let vv = dot(&v0, &v0).sqrt();
            // Keep a small random component so modes orthogonal to the
            // start vector are still reachable.
            v0.iter_mut().zip(&s).for_each(|(v, si)| *v = si / ss + 1e-3 * *v / vv);
        }
    }

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kbasis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();

    let kv = k.mul_vec_reduced(&v0);
    let norm = dot(&v0, &kv).sqrt();
    if !(norm > 0.0) {
        return Err(FemError::SingularSystem("stiffness matrix is not positive definite".into()).into());
    }
    basis.push(v0.iter().map(|v| v / norm).collect());
    kbasis.push(kv.iter().map(|v| v / norm).collect());

    let mut previous: Option<Vec<f64>> = None;
    let mut spectrum_scale = 0.0f64;
    let check_every = 5;
    for j in 0..max_steps {
        let mut w = g.mul_vec_reduced(&basis[j]);
        w.iter_mut().for_each(|v| *v = -*v);
        factor.solve_reduced_in_place(&mut w);
        let a = dot(&w, &kbasis[j]);
        axpy(-a, &basis[j], &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        for _ in 0..2 {
            for (v, kv) in basis.iter().zip(&kbasis) {
                let c = dot(&w, kv);
                axpy(-c, v, &mut w);
            }
        }
        alpha.push(a);
        spectrum_scale = spectrum_scale.max(a.abs());
        let kw = k.mul_vec_reduced(&w);
        let b = dot(&w, &kw).max(0.0).sqrt();
        let m = j + 1;
        let exhausted = b <= 1e-13 * spectrum_scale.max(f64::MIN_POSITIVE) || m == max_steps;

        if m >= q && (m % check_every == 0 || exhausted) {
            let (theta, s) = tridiagonal_eigen(&alpha, &beta);
            let wanted: Vec<usize> = wanted_ritz(&theta, q, spectrum_scale);
            if wanted.len() == q {
                let values: Vec<f64> = wanted.iter().map(|&i| theta[i]).collect();
                let stable = previous.as_ref().is_some_and(|p| {
                    p.iter().zip(&values).all(|(a, b)| (a - b).abs() <= options.tolerance * b.abs())
                });
                let residual_ok = wanted.iter().all(|&i| (b * s[(m - 1, i)]).abs() <= 1e-9 * theta[i].abs());
                if (stable || exhausted) && residual_ok {
                    let modes = wanted
                        .iter()
                        .map(|&i| {
                            let mut phi = vec![0.0; n];
                            for (r, v) in basis.iter().enumerate() {
                                axpy(s[(r, i)], v, &mut phi);
                            }
                            phi
                        })
                        .collect();
                    return Ok((values, modes));
                }
                if exhausted {
                    return Err(BucklingError::NotConverged { steps: m });
                }
                previous = Some(values);
            } else if exhausted {
                if m == max_steps && m < n {
                    return Err(BucklingError::NotConverged { steps: m });
                }
                return Err(BucklingError::InsufficientModes { found: wanted.len(), requested: q });
            }
        }
        if exhausted {
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|v| v / b).collect());
        kbasis.push(kw.iter().map(|v| v / b).collect());
    }
    Err(BucklingError::NotConverged { steps: max_steps })
}

/// Indices of the `q` largest positive Ritz values, descending.
fn wanted_ritz(theta: &[f64], q: usize, scale: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..theta.len()).filter(|&i| theta[i] > 1e-12 * scale && theta[i] > 0.0).collect();
    idx.sort_by(|&a, &b| theta[b].total_cmp(&theta[a]));
    idx.truncate(q);
    idx
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    (eig.eigenvalues.as_slice().to_vec(), eig.eigenvectors)
}
