use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfls_core::bspline::{knot_velocities, velocity_field_from_knots, BsplineSurface, CentroidBasis, KnotVector};
use vfls_core::fem::StructuredMesh;

/// Plain Cox–de Boor recursion with the 0/0 = 0 convention; the last
/// function is closed at the right end.
fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        let last = *knots.last().unwrap();
        let closes_right = x == last && knots[i + 1] == last && knots[i] < last;
        return if (knots[i] <= x && x < knots[i + 1]) || closes_right { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
    }
    v
}

#[test]
fn basis_matches_recursive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for (n, p, len) in [(10, 3, 1.0), (7, 2, 4.5), (12, 1, 3.0), (5, 0, 2.0), (4, 3, 1.0)] {
        let kv = KnotVector::open_uniform(n, p, len).unwrap();
        let mut xs: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..=len)).collect();
        xs.extend([0.0, len, 0.5 * len]);
        xs.extend(kv.knots().iter().copied());
        for &x in &xs {
            for i in 0..n {
                let a = kv.basis_value(i, x).unwrap();
                let b = cox_de_boor(kv.knots(), i, p, x);
                assert!((a - b).abs() < 1e-12, "n {n} p {p} i {i} x {x}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn cubic_interior_basis_at_span_midpoint() {
    let kv = KnotVector::open_uniform(10, 3, 7.0).unwrap();
    // Interior uniform cubic: at the midpoint of its second span the value is 23/48.
    let i = 4;
    let x = 0.5 * (kv.knots()[i + 1] + kv.knots()[i + 2]);
    assert!((kv.basis_value(i, x).unwrap() - 23.0 / 48.0).abs() < 1e-12);
    assert!((kv.basis_value(i, x).unwrap() - cox_de_boor(kv.knots(), i, 3, x)).abs() < 1e-12);
}

#[test]
fn knot_vector_length_and_end_multiplicity() {
    for (n, p) in [(4, 3), (103, 3), (52, 2), (9, 0)] {
        let kv = KnotVector::open_uniform(n, p, 10.0).unwrap();
        assert_eq!(kv.knots().len(), n + p + 1);
        assert_eq!(kv.knots().iter().filter(|&&k| k == 0.0).count(), p + 1);
        assert_eq!(kv.knots().iter().filter(|&&k| k == 10.0).count(), p + 1);
        assert!(kv.knots().windows(2).all(|w| w[0] <= w[1]));
    }
}

fn grid_mesh(n: usize) -> StructuredMesh {
    StructuredMesh::new(n, n, 1.0, None, vec![0, 1], vec![]).unwrap()
}

fn surface(interval: f64, p: usize, q: usize, len: f64) -> BsplineSurface {
    BsplineSurface::zeros(
        KnotVector::with_interval(interval, p, len).unwrap(),
        KnotVector::with_interval(interval, q, len).unwrap(),
    )
}

#[test]
fn constant_coefficients_give_constant_velocity() {
    let mesh = grid_mesh(20);
    let centroids = mesh.active_centroids();
    let mut s = surface(3.0, 3, 2, 20.0);
    assert!(knot_velocities(&s, &centroids).unwrap().iter().all(|&v| v == 0.0));
    s.coeffs.iter_mut().for_each(|c| *c = 1.0);
    assert!(knot_velocities(&s, &centroids).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn greville_sampling_reproduces_bilinear_functions() {
    let mesh = grid_mesh(24);
    let centroids = mesh.active_centroids();
    let f = |x: f64, y: f64| 0.3 - 0.02 * x + 0.05 * y + 0.001 * x * y;
    for (p, q) in [(1, 1), (3, 2), (2, 3)] {
        let mut s = surface(4.0, p, q, 24.0);
        let gx = s.knots_x.greville();
        let gy = s.knots_y.greville();
        for (l, &y) in gy.iter().enumerate() {
            for (k, &x) in gx.iter().enumerate() {
                let idx = s.index(k, l);
                s.coeffs[idx] = f(x, y);
            }
        }
        let v = knot_velocities(&s, &centroids).unwrap();
        for (vi, &(x, y)) in v.iter().zip(&centroids) {
            assert!((vi - f(x, y)).abs() < 1e-10, "({p},{q}) at ({x},{y})");
        }
    }
}

#[test]
fn knot_velocities_are_linear_in_coefficients() {
    let mesh = grid_mesh(12);
    let centroids = mesh.active_centroids();
    let s = surface(3.0, 3, 2, 12.0);
    let basis = CentroidBasis::for_surface(&s, &centroids).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let b1: Vec<f64> = (0..s.n_coeffs()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b2: Vec<f64> = (0..s.n_coeffs()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let combo: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| 0.7 * a - 1.3 * b).collect();
    let (v1, v2, vc) = (basis.evaluate(&b1), basis.evaluate(&b2), basis.evaluate(&combo));
    for i in 0..vc.len() {
        assert!((vc[i] - (0.7 * v1[i] - 1.3 * v2[i])).abs() < 1e-13);
    }
    // project is the transpose of evaluate.
    let w: Vec<f64> = (0..centroids.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lhs: f64 = w.iter().zip(&v1).map(|(a, b)| a * b).sum();
    let rhs: f64 = basis.project(&w).iter().zip(&b1).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
}

#[test]
fn surface_point_evaluation_matches_tensor_product_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut s = surface(2.5, 3, 2, 10.0);
    s.coeffs.iter_mut().for_each(|c| *c = rng.random_range(-1.0..1.0));
    for _ in 0..50 {
        let (x, y) = (rng.random_range(0.0..=10.0), rng.random_range(0.0..=10.0));
        let mut expected = 0.0;
        for l in 0..s.n_y() {
            for k in 0..s.n_x() {
                expected += cox_de_boor(s.knots_x.knots(), k, 3, x)
                    * cox_de_boor(s.knots_y.knots(), l, 2, y)
                    * s.coeffs[s.index(k, l)];
            }
        }
        assert!((s.evaluate(x, y).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn rescaling_to_the_cap() {
    let within = [0.05, -0.1, 0.0, 0.099];
    let f = velocity_field_from_knots(&within, 0.1);
    assert_eq!(f.scale, 1.0);
    assert_eq!(f.vn, within.to_vec());
    let f = velocity_field_from_knots(&[0.4, -0.2, 0.1], 0.1);
    assert!((f.scale - 0.25).abs() < 1e-15);
    assert_eq!(f.vn, vec![0.1, -0.05, 0.025]);
}

#[test]
fn each_element_takes_only_its_own_knot_value() {
    let knots: Vec<f64> = (0..20).map(|i| 0.003 * i as f64 - 0.02).collect();
    let base = velocity_field_from_knots(&knots, 0.1);
    for e in 0..knots.len() {
        let mut bumped = knots.clone();
        bumped[e] += 0.01;
        let out = velocity_field_from_knots(&bumped, 0.1);
        let changed: Vec<usize> = (0..knots.len()).filter(|&i| out.vn[i] != base.vn[i]).collect();
        assert_eq!(changed, vec![e]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partition_of_unity_and_local_support(
        n_extra in 0usize..15,
        p in 0usize..4,
        len in 0.5f64..400.0,
        t in 0.0f64..=1.0,
    ) {
        let kv = KnotVector::open_uniform(p + 1 + n_extra, p, len).unwrap();
        let x = t * len;
        let values: Vec<f64> = (0..kv.n_basis()).map(|i| kv.basis_value(i, x).unwrap()).collect();
        prop_assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let k = kv.knots();
        for (i, &v) in values.iter().enumerate() {
            prop_assert!(v >= 0.0);
            if x < k[i] || x > k[i + p + 1] {
                prop_assert_eq!(v, 0.0);
            }
        }
        prop_assert!(values.iter().filter(|&&v| v != 0.0).count() <= p + 1);
    }

    #[test]
    fn rescaling_keeps_the_largest_element(knots in prop::collection::vec(-1.0f64..1.0, 1..50), v_max in 0.01f64..0.5) {
        let f = velocity_field_from_knots(&knots, v_max);
        let argmax = |v: &[f64]| v.iter().enumerate().fold((0, -1.0), |m, (i, x)| if x.abs() > m.1 { (i, x.abs()) } else { m }).0;
        prop_assert_eq!(argmax(&knots), argmax(&f.vn));
        prop_assert!(f.vn.iter().all(|v| v.abs() <= v_max * (1.0 + 1e-15)));
    }
}
