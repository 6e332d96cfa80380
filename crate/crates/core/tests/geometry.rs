use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saconet::geometry::{
    add_noise, normalize_to_unit_cube, random_shape, sample_surface, PointCloud, RigidTransform, ShapeGenConfig,
    ShapeSpec, Vec3,
};

#[derive(Debug, Clone, Copy)]
enum Prim {
    Sphere(f64),
    Box([f64; 3]),
    Torus(f64, f64),
}

/// Rodrigues rotation of `v` about unit `k` by `angle`.
fn rodrigues(v: Vec3, k: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    let cross = [k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2], k[0] * v[1] - k[1] * v[0]];
    [
        v[0] * c + cross[0] * s + k[0] * kv * (1.0 - c),
        v[1] * c + cross[1] * s + k[1] * kv * (1.0 - c),
        v[2] * c + cross[2] * s + k[2] * kv * (1.0 - c),
    ]
}

/// Inside test written from the primitive definitions, in the primitive's frame.
fn brute_inside(prim: Prim, axis: Vec3, angle: f64, t: Vec3, p: Vec3) -> bool {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let k = [axis[0] / n, axis[1] / n, axis[2] / n];
    let l = rodrigues([p[0] - t[0], p[1] - t[1], p[2] - t[2]], k, -angle);
    match prim {
        Prim::Sphere(r) => l[0] * l[0] + l[1] * l[1] + l[2] * l[2] < r * r,
        Prim::Box(h) => (0..3).all(|a| l[a].abs() < h[a]),
        Prim::Torus(big, small) => {
            let ring = (l[0] * l[0] + l[1] * l[1]).sqrt() - big;
            ring * ring + l[2] * l[2] < small * small
        }
    }
}

fn build(prim: Prim, axis: Vec3, angle: f64, t: Vec3) -> ShapeSpec {
    let base = match prim {
        Prim::Sphere(r) => ShapeSpec::sphere([0.0; 3], r),
        Prim::Box(h) => ShapeSpec::cuboid([0.0; 3], h),
        Prim::Torus(a, b) => ShapeSpec::torus([0.0; 3], a, b),
    };
    base.with_transform(RigidTransform::from_axis_angle(axis, angle, t))
}

fn prim_strategy() -> impl Strategy<Value = Prim> {
    prop_oneof![
        (0.05f64..0.4).prop_map(Prim::Sphere),
        prop::array::uniform3(0.05f64..0.4).prop_map(Prim::Box),
        (0.1f64..0.35, 0.1f64..0.9).prop_map(|(a, f)| Prim::Torus(a, a * f)),
    ]
}

fn axis_strategy() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.0f64..1.0).prop_filter("non-zero axis", |a| a.iter().map(|v| v * v).sum::<f64>() > 1e-3)
}

fn random_points(seed: u64, n: usize) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.gen_range(-0.1..1.1), rng.gen_range(-0.1..1.1), rng.gen_range(-0.1..1.1)])
        .collect()
}

#[test]
fn sign_exact_on_1e5_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let prims = [Prim::Sphere(0.3), Prim::Box([0.3, 0.1, 0.2]), Prim::Torus(0.3, 0.1)];
    let points = random_points(1, 100_000);
    for (i, prim) in prims.into_iter().enumerate() {
        let axis = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)];
        let angle = rng.gen_range(0.0..6.0);
        let t = [0.5, 0.45, 0.55];
        let spec = build(prim, axis, angle, t);
        let mismatches = points
            .iter()
            .filter(|p| spec.occupancy(**p) != brute_inside(prim, axis, angle, t, **p))
            .count();
        assert_eq!(mismatches, 0, "primitive {i}");
    }
}

#[test]
fn spec_anchor_values() {
    let s = ShapeSpec::sphere([0.0; 3], 0.3);
    assert!((s.sdf([0.0; 3]) + 0.3).abs() < 1e-15);
    assert!(s.occupancy([0.0; 3]));
    assert!(s.sdf([0.3, 0.0, 0.0]).abs() < 1e-15);
}

#[test]
fn generated_shapes_sample_inside_cube_and_normalize() {
    let cfg = ShapeGenConfig::default();
    for seed in 0..10 {
        let spec = random_shape(seed, &cfg).unwrap();
        let pc = sample_surface(&spec, 500, seed).unwrap();
        assert!(pc.points.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        let noisy = add_noise(&pc, 0.05, seed).unwrap();
        let (cube, tf) = normalize_to_unit_cube(&noisy, 0.05).unwrap();
        assert!(cube.points.iter().flatten().all(|v| (0.05..=0.95).contains(v)));
        for (a, b) in noisy.points.iter().zip(&cube.points) {
            let back = tf.to_world(*b);
            assert!((0..3).all(|k| (back[k] - a[k]).abs() <= 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupancy_matches_brute_force(prim in prim_strategy(), axis in axis_strategy(), angle in 0.0f64..6.3,
                                     t in prop::array::uniform3(0.2f64..0.8), seed in any::<u64>()) {
        let spec = build(prim, axis, angle, t);
        for p in random_points(seed, 2000) {
            prop_assert_eq!(spec.occupancy(p), brute_inside(prim, axis, angle, t, p));
        }
    }

    #[test]
    fn csg_occupancy_is_boolean_logic(a in prim_strategy(), b in prim_strategy(), ax in axis_strategy(),
                                      ta in prop::array::uniform3(0.3f64..0.7), tb in prop::array::uniform3(0.3f64..0.7),
                                      seed in any::<u64>()) {
        let sa = build(a, ax, 0.7, ta);
        let sb = build(b, [0.0, 0.0, 1.0], 0.0, tb);
        let u = ShapeSpec::union(vec![sa.clone(), sb.clone()]);
        let i = ShapeSpec::intersection(vec![sa.clone(), sb.clone()]);
        let d = ShapeSpec::difference(vec![sa.clone(), sb.clone()]);
        for p in random_points(seed, 500) {
            let (oa, ob) = (sa.occupancy(p), sb.occupancy(p));
            prop_assert_eq!(u.occupancy(p), oa || ob);
            prop_assert_eq!(i.occupancy(p), oa && ob);
            // a point exactly on B's surface is outside B but not inside A - B
            if sb.sdf(p) != 0.0 {
                prop_assert_eq!(d.occupancy(p), oa && !ob);
            }
        }
    }

    #[test]
    fn surface_samples_within_tolerance(seed in 0u64..10_000) {
        let spec = random_shape(seed, &ShapeGenConfig::default()).unwrap();
        let pc = sample_surface(&spec, 200, seed).unwrap();
        let scale = spec.bounding_box().longest_side();
        prop_assert_eq!(pc.len(), 200);
        let normals = pc.normals.as_ref().unwrap();
        for (p, n) in pc.points.iter().zip(normals) {
            prop_assert!(spec.sdf(*p).abs() <= 1e-6 * scale);
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            prop_assert!((len - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn normalize_round_trip(pts in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 2..40),
                            pad in 0.0f64..0.3) {
        let pc = PointCloud::from_points(pts.clone()).unwrap();
        prop_assume!(pc.bounds().longest_side() > 1e-3);
        let (out, tf) = normalize_to_unit_cube(&pc, pad).unwrap();
        let bb = out.bounds();
        prop_assert!((bb.longest_side() - (1.0 - 2.0 * pad)).abs() < 1e-9);
        for (p, q) in pts.iter().zip(&out.points) {
            prop_assert!(q.iter().all(|v| *v >= pad && *v <= 1.0 - pad));
            let w = tf.to_world(tf.to_cube(*p));
            prop_assert!((0..3).all(|k| (w[k] - p[k]).abs() <= 1e-12 * (1.0 + p[k].abs())));
        }
    }
}
