//! Tensor-product B-spline description of the velocity field.
//!
//! The coefficients `b[k, l]` of a surface of degrees (p, q) are the design
//! variables. Evaluated at the element centroids (the velocity knots) they
//! give one velocity per element; the element velocity is constant over the
//! element.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BsplineError {
    #[error("{n_basis} basis functions cannot carry degree {degree}")]
    TooFewBasis { n_basis: usize, degree: usize },
    #[error("axis length must be positive, got {0}")]
    BadLength(f64),
    #[error("basis index {index} out of range (0..{n_basis})")]
    IndexOutOfRange { index: usize, n_basis: usize },
    #[error("point ({x}, {y}) lies outside the surface domain")]
    OutsideDomain { x: f64, y: f64 },
    #[error("coefficient grid has {got} entries, expected {expected}")]
    CoefficientCount { got: usize, expected: usize },
}

/// Clamped knot vector: `degree + 1` repeated knots at each end.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Clamped uniform knots on `[0, axis_length]` for `n_basis` functions.
    pub fn open_uniform(n_basis: usize, degree: usize, axis_length: f64) -> Result<Self, BsplineError> {
        if n_basis < degree + 1 {
            return Err(BsplineError::TooFewBasis { n_basis, degree });
        }
        if !(axis_length > 0.0 && axis_length.is_finite()) {
            return Err(BsplineError::BadLength(axis_length));
        }
        let spans = n_basis - degree;
        let mut knots = Vec::with_capacity(n_basis + degree + 1);
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        for s in 1..spans {
            knots.push(axis_length * s as f64 / spans as f64);
        }
        knots.extend(std::iter::repeat_n(axis_length, degree + 1));
        Ok(Self { degree, knots })
    }

    /// Knot vector whose interior spacing is the closest uniform division of
    /// `axis_length` into spans of length `interval`.
    pub fn with_interval(interval: f64, degree: usize, axis_length: f64) -> Result<Self, BsplineError> {
        if !(interval > 0.0) {
            return Err(BsplineError::BadLength(interval));
        }
        let spans = ((axis_length / interval).round() as usize).max(1);
        Self::open_uniform(spans + degree, degree, axis_length)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Span index `s` with `knots[s] <= x < knots[s + 1]`; the last
    /// non-empty span is used at the right end point.
    pub fn find_span(&self, x: f64) -> usize {
        let n = self.n_basis();
        if x >= self.knots[n] {
            return n - 1;
        }
        if x <= self.knots[self.degree] {
            return self.degree;
        }
        // First knot strictly greater than x, minus one.
        let upper = self.knots[self.degree..=n].partition_point(|&k| k <= x) + self.degree;
        upper - 1
    }

    /// Values of the `degree + 1` basis functions that can be non-zero at
    /// `x`, and the index of the first one.
    pub fn nonzero_basis(&self, x: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let span = self.find_span(x);
        let mut values = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        values[0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        (span - p, values)
    }

    /// Value of basis function `index` at `x`; zero outside `[start, end]`.
    pub fn basis_value(&self, index: usize, x: f64) -> Result<f64, BsplineError> {
        let n = self.n_basis();
        if index >= n {
            return Err(BsplineError::IndexOutOfRange { index, n_basis: n });
        }
        if x < self.start() || x > self.end() {
            return Ok(0.0);
        }
        let (first, values) = self.nonzero_basis(x);
        Ok(if index >= first && index <= first + self.degree { values[index - first] } else { 0.0 })
    }

    /// Knot averages at which coefficients reproduce sampled linear functions.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.n_basis())
            .map(|i| {
                if p == 0 {
                    0.5 * (self.knots[i] + self.knots[i + 1])
                } else {
                    self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }
}

/// Tensor-product B-spline surface. Coefficient `b[k, l]` (k along x, l
/// along y) is stored at `l * n_x + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsplineSurface {
    pub knots_x: KnotVector,
    pub knots_y: KnotVector,
    pub coeffs: Vec<f64>,
}

impl BsplineSurface {
    pub fn zeros(knots_x: KnotVector, knots_y: KnotVector) -> Self {
        let n = knots_x.n_basis() * knots_y.n_basis();
        Self { knots_x, knots_y, coeffs: vec![0.0; n] }
    }

    pub fn with_coeffs(knots_x: KnotVector, knots_y: KnotVector, coeffs: Vec<f64>) -> Result<Self, BsplineError> {
        let expected = knots_x.n_basis() * knots_y.n_basis();
        if coeffs.len() != expected {
            return Err(BsplineError::CoefficientCount { got: coeffs.len(), expected });
        }
        Ok(Self { knots_x, knots_y, coeffs })
    }

    pub fn degree_x(&self) -> usize {
        self.knots_x.degree()
    }

    pub fn degree_y(&self) -> usize {
        self.knots_y.degree()
    }

    pub fn n_x(&self) -> usize {
        self.knots_x.n_basis()
    }

    pub fn n_y(&self) -> usize {
        self.knots_y.n_basis()
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_x() * self.n_y()
    }

    pub fn index(&self, k: usize, l: usize) -> usize {
        l * self.n_x() + k
    }

    pub fn evaluate(&self, x: f64, y: f64) -> Result<f64, BsplineError> {
        let basis = CentroidBasis::new(&self.knots_x, &self.knots_y, &[(x, y)])?;
        Ok(basis.evaluate(&self.coeffs)[0])
    }
}

/// Non-zero tensor basis values at a fixed set of points (the element
/// centroids). Evaluation and its transpose (the coefficient projection)
/// both go through this table.
#[derive(Debug, Clone)]
pub struct CentroidBasis {
    n_x: usize,
    n_y: usize,
    px: usize,
    py: usize,
    first_x: Vec<usize>,
    first_y: Vec<usize>,
    bx: Vec<f64>,
    by: Vec<f64>,
}

impl CentroidBasis {
    pub fn new(knots_x: &KnotVector, knots_y: &KnotVector, points: &[(f64, f64)]) -> Result<Self, BsplineError> {
        let px = knots_x.degree();
        let py = knots_y.degree();
        let mut first_x = Vec::with_capacity(points.len());
        let mut first_y = Vec::with_capacity(points.len());
        let mut bx = Vec::with_capacity(points.len() * (px + 1));
        let mut by = Vec::with_capacity(points.len() * (py + 1));
        for &(x, y) in points {
            let inside = |kv: &KnotVector, v: f64| v >= kv.start() && v <= kv.end();
            if !(inside(knots_x, x) && inside(knots_y, y)) {
                return Err(BsplineError::OutsideDomain { x, y });
            }
            let (fx, vx) = knots_x.nonzero_basis(x);
            let (fy, vy) = knots_y.nonzero_basis(y);
            first_x.push(fx);
            first_y.push(fy);
            bx.extend(vx);
            by.extend(vy);
        }
        Ok(Self { n_x: knots_x.n_basis(), n_y: knots_y.n_basis(), px, py, first_x, first_y, bx, by })
    }

    pub fn for_surface(surface: &BsplineSurface, points: &[(f64, f64)]) -> Result<Self, BsplineError> {
        Self::new(&surface.knots_x, &surface.knots_y, points)
    }

    pub fn n_points(&self) -> usize {
        self.first_x.len()
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_x * self.n_y
    }

    /// Visits the (coefficient index, tensor basis value) pairs of point `i`.
    pub fn for_each_support(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        let bx = &self.bx[i * (self.px + 1)..(i + 1) * (self.px + 1)];
        let by = &self.by[i * (self.py + 1)..(i + 1) * (self.py + 1)];
        for (b, &wy) in by.iter().enumerate() {
            let l = self.first_y[i] + b;
            for (a, &wx) in bx.iter().enumerate() {
                f(l * self.n_x + self.first_x[i] + a, wx * wy);
            }
        }
    }

    /// V_i = Σ_k Σ_l B_k(x_i) B_l(y_i) b[k, l].
    pub fn evaluate(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n_coeffs());
        (0..self.n_points())
            .map(|i| {
                let mut v = 0.0;
                self.for_each_support(i, |c, w| v += w * coeffs[c]);
                v
            })
            .collect()
    }

    /// Transpose of `evaluate`: out[k, l] = Σ_i w_i B_k(x_i) B_l(y_i).
    pub fn project(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.n_points());
        let mut out = vec![0.0; self.n_coeffs()];
        for (i, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                self.for_each_support(i, |c, b| out[c] += w * b);
            }
        }
        out
    }
}

/// Knot velocities V_j at the given centroids.
pub fn knot_velocities(surface: &BsplineSurface, centroids: &[(f64, f64)]) -> Result<Vec<f64>, BsplineError> {
    Ok(CentroidBasis::for_surface(surface, centroids)?.evaluate(&surface.coeffs))
}

/// Element-wise constant normal velocity, one value per active element.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub vn: Vec<f64>,
    /// Uniform factor applied to the knot values to respect the cap.
    pub scale: f64,
    /// max |V| before scaling.
    pub raw_max: f64,
}

/// Each element takes its own centroid knot value; the field is then scaled
/// uniformly by `min(1, v_max / max |V|)`.
pub fn velocity_field_from_knots(knot_values: &[f64], v_max: f64) -> VelocityField {
    let raw_max = knot_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if raw_max > v_max { v_max / raw_max } else { 1.0 };
    let vn = if scale == 1.0 { knot_values.to_vec() } else { knot_values.iter().map(|v| v * scale).collect() };
    VelocityField { vn, scale, raw_max }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bezier_span() {
        let kv = KnotVector::open_uniform(4, 3, 1.0).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn uniform_linear_knots() {
        let kv = KnotVector::open_uniform(5, 1, 1.0).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0]);
    }

    #[test]
    fn one_percent_interval_gives_103_cubic_functions() {
        let kv = KnotVector::with_interval(3.0, 3, 300.0).unwrap();
        assert_eq!(kv.n_basis(), 103);
    }

    #[test]
    fn too_few_basis_functions() {
        assert_eq!(
            KnotVector::open_uniform(3, 3, 1.0).unwrap_err(),
            BsplineError::TooFewBasis { n_basis: 3, degree: 3 }
        );
    }

    #[test]
    fn degree_zero_is_span_indicator() {
        let kv = KnotVector::open_uniform(4, 0, 4.0).unwrap();
        for i in 0..4 {
            assert_eq!(kv.basis_value(i, i as f64 + 0.5).unwrap(), 1.0);
            assert_eq!(kv.basis_value(i, i as f64).unwrap(), 1.0);
            if i > 0 {
                assert_eq!(kv.basis_value(i, i as f64 - 0.01).unwrap(), 0.0);
            }
        }
        assert_eq!(kv.basis_value(3, 4.0).unwrap(), 1.0);
    }

    #[test]
    fn last_function_is_one_at_right_end() {
        let kv = KnotVector::open_uniform(6, 2, 3.0).unwrap();
        assert_eq!(kv.basis_value(5, 3.0).unwrap(), 1.0);
        assert_eq!(kv.basis_value(0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn index_out_of_range() {
        let kv = KnotVector::open_uniform(6, 2, 3.0).unwrap();
        assert!(matches!(kv.basis_value(6, 1.0), Err(BsplineError::IndexOutOfRange { .. })));
    }

    #[test]
    fn velocity_cap_rescales_uniformly() {
        let v = velocity_field_from_knots(&[0.4, -0.2, 0.1], 0.1);
        assert_eq!(v.scale, 0.25);
        assert_eq!(v.vn, vec![0.1, -0.05, 0.025]);
        let inside = velocity_field_from_knots(&[0.05, -0.1], 0.1);
        assert_eq!(inside.vn, vec![0.05, -0.1]);
        assert_eq!(inside.scale, 1.0);
    }

    #[test]
    fn centroid_outside_domain_rejected() {
        let kx = KnotVector::open_uniform(5, 3, 10.0).unwrap();
        let ky = KnotVector::open_uniform(4, 2, 10.0).unwrap();
        let s = BsplineSurface::zeros(kx, ky);
        assert!(matches!(knot_velocities(&s, &[(10.5, 1.0)]), Err(BsplineError::OutsideDomain { .. })));
    }
}
