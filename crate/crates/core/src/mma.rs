//! Method of Moving Asymptotes for
//!
//! ```text
//! min  f0(x) + a0 z + Σ (c_i y_i + ½ d_i y_i²)
//! s.t. f_i(x) − a_i z − y_i ≤ 0,   x_min ≤ x ≤ x_max,   y, z ≥ 0
//! ```
//!
//! The artificial variables y keep every subproblem feasible. Each
//! subproblem is solved by a primal-dual interior point method.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmaError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmaParams {
    /// Maximum step as a fraction of each variable's range.
    pub move_limit: f64,
    pub asyinit: f64,
    pub asyincr: f64,
    pub asydecr: f64,
    /// Closest an asymptote may get to x, as a fraction of the range.
    pub asymin: f64,
    pub albefa: f64,
    pub raa0: f64,
    pub a0: f64,
    pub a: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for MmaParams {
    fn default() -> Self {
        Self {
            move_limit: 0.2,
            asyinit: 0.5,
            asyincr: 1.2,
            asydecr: 0.7,
            asymin: 1e-3,
            albefa: 0.1,
            raa0: 1e-5,
            a0: 1.0,
            a: 0.0,
            c: 1000.0,
            d: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MmaState {
    pub x: Vec<f64>,
    pub x_prev1: Vec<f64>,
    pub x_prev2: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub iteration: usize,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub params: MmaParams,
}

/// Convex separable approximation built around the current point.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub p0: Vec<f64>,
    pub q0: Vec<f64>,
    /// m x n.
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub b: Vec<f64>,
    /// Constant parts so that the approximations match f0 and f_i at x.
    pub r0: f64,
    pub a0: f64,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: f64,
    pub lambda: Vec<f64>,
}

impl MmaState {
    pub fn new(x0: Vec<f64>, x_min: Vec<f64>, x_max: Vec<f64>, params: MmaParams) -> Result<Self, MmaError> {
        let n = x0.len();
        if x_min.len() != n || x_max.len() != n {
            return Err(MmaError::DimensionMismatch(format!(
                "{} variables, {} lower and {} upper bounds",
                n,
                x_min.len(),
                x_max.len()
            )));
        }
        for i in 0..n {
            if !(x_min[i] < x_max[i]) || !(x_min[i]..=x_max[i]).contains(&x0[i]) {
                return Err(MmaError::InvalidBounds(format!(
                    "variable {i}: {} not within [{}, {}]",
                    x0[i], x_min[i], x_max[i]
                )));
            }
        }
        let range: Vec<f64> = x_min.iter().zip(&x_max).map(|(l, u)| u - l).collect();
        let low = x0.iter().zip(&range).map(|(x, r)| x - params.asyinit * r).collect();
        let upp = x0.iter().zip(&range).map(|(x, r)| x + params.asyinit * r).collect();
        Ok(Self { x_prev1: x0.clone(), x_prev2: x0.clone(), x: x0, low, upp, iteration: 0, x_min, x_max, params })
    }

    /// Replaces the box bounds, e.g. to keep a trust box centred on the
    /// current point. The current point must lie inside the new box.
    pub fn set_bounds(&mut self, x_min: Vec<f64>, x_max: Vec<f64>) -> Result<(), MmaError> {
        let n = self.x.len();
        if x_min.len() != n || x_max.len() != n {
            return Err(MmaError::DimensionMismatch(format!(
                "{} variables, {} lower and {} upper bounds",
                n,
                x_min.len(),
                x_max.len()
            )));
        }
        for i in 0..n {
            if !(x_min[i] < x_max[i]) || !(x_min[i]..=x_max[i]).contains(&self.x[i]) {
                return Err(MmaError::InvalidBounds(format!(
                    "variable {i}: {} not within [{}, {}]",
                    self.x[i], x_min[i], x_max[i]
                )));
            }
        }
        self.x_min = x_min;
        self.x_max = x_max;
        Ok(())
    }

    /// Asymptotes for the next iteration: fixed offsets on the first two
    /// steps, then expanded on monotone and contracted on oscillating
    /// variables.
    fn next_asymptotes(&self) -> (Vec<f64>, Vec<f64>) {
        let pr = &self.params;
        let n = self.x.len();
        let mut low = vec![0.0; n];
        let mut upp = vec![0.0; n];
        for j in 0..n {
            let x = self.x[j];
            let range = self.x_max[j] - self.x_min[j];
            if self.iteration < 2 {
                low[j] = x - pr.asyinit * range;
                upp[j] = x + pr.asyinit * range;
            } else {
                let zzz = (x - self.x_prev1[j]) * (self.x_prev1[j] - self.x_prev2[j]);
                let factor = if zzz > 0.0 {
                    pr.asyincr
                } else if zzz < 0.0 {
                    pr.asydecr
                } else {
                    1.0
                };
                low[j] = (x - factor * (self.x_prev1[j] - self.low[j])).clamp(x - 10.0 * range, x - pr.asymin * range);
                upp[j] = (x + factor * (self.upp[j] - self.x_prev1[j])).clamp(x + pr.asymin * range, x + 10.0 * range);
            }
        }
        (low, upp)
    }

    /// Builds the subproblem at the current point without changing the state.
    pub fn subproblem(
        &self,
        f0: f64,
        df0_dx: &[f64],
        g: &[f64],
        dg_dx: &[Vec<f64>],
    ) -> Result<Subproblem, MmaError> {
        let n = self.x.len();
        let m = g.len();
        if df0_dx.len() != n {
            return Err(MmaError::DimensionMismatch(format!("objective gradient has {} entries", df0_dx.len())));
        }
        if dg_dx.len() != m || dg_dx.iter().any(|r| r.len() != n) {
            return Err(MmaError::DimensionMismatch("constraint gradient shape".into()));
        }
        if !f0.is_finite() || df0_dx.iter().any(|v| !v.is_finite()) {
            return Err(MmaError::NonFinite("objective"));
        }
        if g.iter().chain(dg_dx.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(MmaError::NonFinite("constraints"));
        }
        let pr = &self.params;
        let (low, upp) = self.next_asymptotes();
        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut p = DMatrix::zeros(m, n);
        let mut q = DMatrix::zeros(m, n);
        let mut r0 = f0;
        let mut r = g.to_vec();
        for j in 0..n {
            let x = self.x[j];
            let range = self.x_max[j] - self.x_min[j];
            alpha[j] = self.x_min[j].max(low[j] + pr.albefa * (x - low[j])).max(x - pr.move_limit * range);
            beta[j] = self.x_max[j].min(upp[j] - pr.albefa * (upp[j] - x)).min(x + pr.move_limit * range);
            let ux = upp[j] - x;
            let xl = x - low[j];
            let (ux2, xl2) = (ux * ux, xl * xl);
            let floor = pr.raa0 / range.max(1e-5);
            let (pos, neg) = (df0_dx[j].max(0.0), (-df0_dx[j]).max(0.0));
            let pq = 0.001 * (pos + neg) + floor;
            p0[j] = (pos + pq) * ux2;
            q0[j] = (neg + pq) * xl2;
            r0 -= p0[j] / ux + q0[j] / xl;
            for i in 0..m {
                let d = dg_dx[i][j];
                let (pos, neg) = (d.max(0.0), (-d).max(0.0));
                let pq = 0.001 * (pos + neg) + floor;
                p[(i, j)] = (pos + pq) * ux2;
                q[(i, j)] = (neg + pq) * xl2;
                r[i] -= p[(i, j)] / ux + q[(i, j)] / xl;
            }
        }
        Ok(Subproblem {
            low,
            upp,
            alpha,
            beta,
            p0,
            q0,
            p,
            q,
            b: r.iter().map(|v| -v).collect(),
            r0,
            a0: pr.a0,
            a: vec![pr.a; m],
            c: vec![pr.c; m],
            d: vec![pr.d; m],
        })
    }

    /// One MMA step. Returns the new design, which is also stored in the state.
    pub fn update(&mut self, f0: f64, df0_dx: &[f64], g: &[f64], dg_dx: &[Vec<f64>]) -> Result<&[f64], MmaError> {
        let sub = self.subproblem(f0, df0_dx, g, dg_dx)?;
        let sol = sub.solve();
        self.x_prev2 = std::mem::take(&mut self.x_prev1);
        self.x_prev1 = std::mem::replace(&mut self.x, sol.x);
        self.low = sub.low;
        self.upp = sub.upp;
        self.iteration += 1;
        Ok(&self.x)
    }
}

/// Convenience wrapper around [`MmaState::update`].
pub fn mma_update(
    state: &mut MmaState,
    f0: f64,
    df0_dx: &[f64],
    g: &[f64],
    dg_dx: &[Vec<f64>],
) -> Result<Vec<f64>, MmaError> {
    state.update(f0, df0_dx, g, dg_dx).map(<[f64]>::to_vec)
}

/// Interior-point iterate: primal x, y, z, multipliers λ and the slacks of
/// the bound and sign constraints.
#[derive(Debug, Clone)]
struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: f64,
    lam: DVector<f64>,
    xsi: DVector<f64>,
    eta: DVector<f64>,
    mu: DVector<f64>,
    zet: f64,
    s: DVector<f64>,
}

impl Subproblem {
    pub fn n(&self) -> usize {
        self.p0.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// Approximation of the objective at `x`.
    pub fn approx_objective(&self, x: &[f64]) -> f64 {
        self.r0
            + x.iter()
                .enumerate()
                .map(|(j, &xj)| self.p0[j] / (self.upp[j] - xj) + self.q0[j] / (x[j] - self.low[j]))
                .sum::<f64>()
    }

    /// Approximations of the constraint functions at `x`.
    pub fn approx_constraints(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m())
            .map(|i| {
                let s: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(j, &xj)| self.p[(i, j)] / (self.upp[j] - xj) + self.q[(i, j)] / (xj - self.low[j]))
                    .sum();
                s - self.b[i]
            })
            .collect()
    }

    fn residual(&self, it: &Iterate, epsi: f64) -> Vec<f64> {
        let (m, n) = (self.m(), self.n());
        let mut res = Vec::with_capacity(3 * n + 4 * m + 2);
        let lam = &it.lam;
        let mut gvec = vec![0.0; m];
        let mut rez = self.a0 - it.zet;
        for i in 0..m {
            rez -= self.a[i] * lam[i];
        }
        for j in 0..n {
            let ux = self.upp[j] - it.x[j];
            let xl = it.x[j] - self.low[j];
            let mut plam = self.p0[j];
            let mut qlam = self.q0[j];
            for i in 0..m {
                plam += self.p[(i, j)] * lam[i];
                qlam += self.q[(i, j)] * lam[i];
                gvec[i] += self.p[(i, j)] / ux + self.q[(i, j)] / xl;
            }
            res.push(plam / (ux * ux) - qlam / (xl * xl) - it.xsi[j] + it.eta[j]);
        }
        for i in 0..m {
            res.push(self.c[i] + self.d[i] * it.y[i] - it.mu[i] - lam[i]);
        }
        res.push(rez);
        for i in 0..m {
            res.push(gvec[i] - self.a[i] * it.z - it.y[i] + it.s[i] - self.b[i]);
        }
        for j in 0..n {
            res.push(it.xsi[j] * (it.x[j] - self.alpha[j]) - epsi);
            res.push(it.eta[j] * (self.beta[j] - it.x[j]) - epsi);
        }
        for i in 0..m {
            res.push(it.mu[i] * it.y[i] - epsi);
            res.push(lam[i] * it.s[i] - epsi);
        }
        res.push(it.zet * it.z - epsi);
        res
    }

    /// Primal-dual Newton iteration with decreasing barrier parameter.
    pub fn solve(&self) -> SubproblemSolution {
        let (m, n) = (self.m(), self.n());
        let alpha = DVector::from_column_slice(&self.alpha);
        let beta = DVector::from_column_slice(&self.beta);
        let x = (&alpha + &beta) * 0.5;
        let mut it = Iterate {
            xsi: x.zip_map(&alpha, |x, a| (1.0 / (x - a)).max(1.0)),
            eta: x.zip_map(&beta, |x, b| (1.0 / (b - x)).max(1.0)),
            x,
            y: DVector::from_element(m, 1.0),
            z: 1.0,
            lam: DVector::from_element(m, 1.0),
            mu: DVector::from_iterator(m, self.c.iter().map(|c| (0.5 * c).max(1.0))),
            zet: 1.0,
            s: DVector::from_element(m, 1.0),
        };
        let a = DVector::from_column_slice(&self.a);
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let maxabs = |r: &[f64]| r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

        let mut epsi = 1.0;
        while epsi > 1e-9 {
            let res = self.residual(&it, epsi);
            let mut resnorm = norm(&res);
            let mut resmax = maxabs(&res);
            let mut inner = 0;
            while resmax > 0.9 * epsi && inner < 200 {
                inner += 1;
                let mut gg = DMatrix::zeros(m, n);
                let mut gvec = DVector::<f64>::zeros(m);
                let mut delx = DVector::zeros(n);
                let mut diagx = DVector::zeros(n);
                for j in 0..n {
                    let xj = it.x[j];
                    let ux = self.upp[j] - xj;
                    let xl = xj - self.low[j];
                    let (ux2, xl2) = (ux * ux, xl * xl);
                    let mut plam = self.p0[j];
                    let mut qlam = self.q0[j];
                    for i in 0..m {
                        plam += self.p[(i, j)] * it.lam[i];
                        qlam += self.q[(i, j)] * it.lam[i];
                        gvec[i] += self.p[(i, j)] / ux + self.q[(i, j)] / xl;
                        gg[(i, j)] = self.p[(i, j)] / ux2 - self.q[(i, j)] / xl2;
                    }
                    let dx_a = xj - self.alpha[j];
                    let b_dx = self.beta[j] - xj;
                    delx[j] = plam / ux2 - qlam / xl2 - epsi / dx_a + epsi / b_dx;
                    diagx[j] = 2.0 * (plam / (ux2 * ux) + qlam / (xl2 * xl)) + it.xsi[j] / dx_a + it.eta[j] / b_dx;
                }
                let dely = DVector::from_fn(m, |i, _| self.c[i] + self.d[i] * it.y[i] - it.lam[i] - epsi / it.y[i]);
                let delz = self.a0 - a.dot(&it.lam) - epsi / it.z;
                let dellam =
                    DVector::from_fn(m, |i, _| gvec[i] - self.a[i] * it.z - it.y[i] - self.b[i] + epsi / it.lam[i]);
                let diagy = DVector::from_fn(m, |i, _| self.d[i] + it.mu[i] / it.y[i]);
                let diaglamyi = DVector::from_fn(m, |i, _| it.s[i] / it.lam[i] + 1.0 / diagy[i]);

                let (dx, dlam, dz);
                if m < n {
                    let blam = &dellam + dely.component_div(&diagy) - &gg * delx.component_div(&diagx);
                    let mut aa = DMatrix::zeros(m + 1, m + 1);
                    let gdx = DMatrix::from_fn(m, n, |i, j| gg[(i, j)] / diagx[j]);
                    let alam = &gdx * gg.transpose();
                    for i in 0..m {
                        for k in 0..m {
                            aa[(i, k)] = alam[(i, k)];
                        }
                        aa[(i, i)] += diaglamyi[i];
                        aa[(i, m)] = a[i];
                        aa[(m, i)] = a[i];
                    }
                    aa[(m, m)] = -it.zet / it.z;
                    let mut bb = DVector::zeros(m + 1);
                    bb.rows_mut(0, m).copy_from(&blam);
                    bb[m] = delz;
                    let sol = aa.lu().solve(&bb).unwrap_or_else(|| DVector::zeros(m + 1));
                    dlam = sol.rows(0, m).into_owned();
                    dz = sol[m];
                    dx = -(delx.component_div(&diagx)) - (gg.transpose() * &dlam).component_div(&diagx);
                } else {
                    let dellamyi = &dellam + dely.component_div(&diagy);
                    let mut axx = DMatrix::from_diagonal(&diagx);
                    let ginv = DMatrix::from_fn(m, n, |i, j| gg[(i, j)] / diaglamyi[i]);
                    axx += gg.transpose() * &ginv;
                    let a_over = a.component_div(&diaglamyi);
                    let azz = it.zet / it.z + a.dot(&a_over);
                    let axz = -(gg.transpose() * &a_over);
                    let bx = &delx + gg.transpose() * dellamyi.component_div(&diaglamyi);
                    let bz = delz - a_over.dot(&dellamyi);
                    let mut aa = DMatrix::zeros(n + 1, n + 1);
                    aa.view_mut((0, 0), (n, n)).copy_from(&axx);
                    for j in 0..n {
                        aa[(j, n)] = axz[j];
                        aa[(n, j)] = axz[j];
                    }
                    aa[(n, n)] = azz;
                    let mut bb = DVector::zeros(n + 1);
                    bb.rows_mut(0, n).copy_from(&(-bx));
                    bb[n] = -bz;
                    let sol = aa.lu().solve(&bb).unwrap_or_else(|| DVector::zeros(n + 1));
                    dx = sol.rows(0, n).into_owned();
                    dz = sol[n];
                    dlam = (&gg * &dx).component_div(&diaglamyi) - &a_over * dz + dellamyi.component_div(&diaglamyi);
                }
                let dy = -dely.component_div(&diagy) + dlam.component_div(&diagy);
                let xa = it.x.zip_map(&alpha, |x, a| x - a);
                let bx = beta.zip_map(&it.x, |b, x| b - x);
                let dxsi = DVector::from_fn(n, |j, _| -it.xsi[j] + epsi / xa[j] - it.xsi[j] * dx[j] / xa[j]);
                let deta = DVector::from_fn(n, |j, _| -it.eta[j] + epsi / bx[j] + it.eta[j] * dx[j] / bx[j]);
                let dmu = DVector::from_fn(m, |i, _| -it.mu[i] + epsi / it.y[i] - it.mu[i] * dy[i] / it.y[i]);
                let dzet = -it.zet + epsi / it.z - it.zet * dz / it.z;
                let ds = DVector::from_fn(m, |i, _| -it.s[i] + epsi / it.lam[i] - it.s[i] * dlam[i] / it.lam[i]);

                // Fraction-to-the-boundary step length.
                let mut stm = 1.0f64;
                let mut ratio = |v: f64, dv: f64| stm = stm.max(-1.01 * dv / v);
                for i in 0..m {
                    ratio(it.y[i], dy[i]);
                    ratio(it.lam[i], dlam[i]);
                    ratio(it.mu[i], dmu[i]);
                    ratio(it.s[i], ds[i]);
                }
                ratio(it.z, dz);
                ratio(it.zet, dzet);
                for j in 0..n {
                    ratio(it.xsi[j], dxsi[j]);
                    ratio(it.eta[j], deta[j]);
                    ratio(xa[j], dx[j]);
                    ratio(bx[j], -dx[j]);
                }
                let mut step = 1.0 / stm;

                let old = it.clone();
                let mut newnorm = 2.0 * resnorm;
                let mut tries = 0;
                let mut res = Vec::new();
                while newnorm > resnorm && tries < 50 {
                    tries += 1;
                    it.x = &old.x + &dx * step;
                    it.y = &old.y + &dy * step;
                    it.z = old.z + step * dz;
                    it.lam = &old.lam + &dlam * step;
                    it.xsi = &old.xsi + &dxsi * step;
                    it.eta = &old.eta + &deta * step;
                    it.mu = &old.mu + &dmu * step;
                    it.zet = old.zet + step * dzet;
                    it.s = &old.s + &ds * step;
                    res = self.residual(&it, epsi);
                    newnorm = norm(&res);
                    step *= 0.5;
                }
                resnorm = newnorm;
                resmax = maxabs(&res);
            }
            epsi *= 0.1;
        }
        // Interior-point iterates can sit a rounding error outside the box.
        let x = it.x.iter().enumerate().map(|(j, &v)| v.clamp(self.alpha[j], self.beta[j])).collect();
        SubproblemSolution { x, y: it.y.as_slice().to_vec(), z: it.z, lambda: it.lam.as_slice().to_vec() }
    }
}
