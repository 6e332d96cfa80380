use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saconet::autodiff::{Graph, Tensor};
use saconet::geometry::{PointCloud, Vec3};
use saconet::network::{Binding, ConvOccNet, FeatureVolume, InitMode, Lattice, NetConfig};

fn tiny() -> NetConfig {
    NetConfig::with_sizes(8, 4, 1)
}

fn cloud(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)])
        .collect()
}

fn pc(points: Vec<Vec3>) -> PointCloud {
    PointCloud::from_points(points).unwrap()
}

#[test]
fn output_shapes_follow_config() {
    let cfg = NetConfig::with_sizes(16, 6, 2);
    let model = ConvOccNet::new(cfg, InitMode::Random { seed: 1 }).unwrap();
    for n in [1, 7, 300] {
        let vol = model.encode(&pc(cloud(n as u64, n, 0.0, 1.0))).unwrap();
        assert_eq!(vol.features.shape(), &[6, 16, 16, 16]);
        let q = cloud(9, 37, 0.0, 1.0);
        assert_eq!(model.query_logits(&vol, &q).unwrap().len(), 37);
    }
    assert!(model.encode(&pc(vec![])).is_err());
    let again = ConvOccNet::new(cfg, InitMode::Random { seed: 99 }).unwrap();
    assert_eq!(model.num_parameters(), again.num_parameters());
}

#[test]
fn same_seed_is_bit_identical() {
    let a = ConvOccNet::new(tiny(), InitMode::Random { seed: 5 }).unwrap();
    let b = ConvOccNet::new(tiny(), InitMode::Random { seed: 5 }).unwrap();
    let c = ConvOccNet::new(tiny(), InitMode::Random { seed: 6 }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut names = a.param_names().to_vec();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), a.param_names().len());
}

#[test]
fn encode_is_permutation_and_duplication_invariant() {
    let model = ConvOccNet::new(NetConfig::with_sizes(8, 4, 2), InitMode::Random { seed: 2 }).unwrap();
    let pts = cloud(3, 400, 0.05, 0.95);
    let base = model.encode(&pc(pts.clone())).unwrap();
    let mut shuffled = pts.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in (1..shuffled.len()).rev() {
        shuffled.swap(i, rng.gen_range(0..=i));
    }
    assert_eq!(base, model.encode(&pc(shuffled)).unwrap());
    let doubled: Vec<Vec3> = pts.iter().chain(&pts).copied().collect();
    assert_eq!(base, model.encode(&pc(doubled)).unwrap());
}

#[test]
fn cell_center_query_reads_only_that_cell() {
    let cfg = tiny();
    let model = ConvOccNet::new(cfg, InitMode::Random { seed: 8 }).unwrap();
    let lattice = Lattice::full(8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f64> = (0..4 * 512).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vol = FeatureVolume::new(Tensor::new(vec![4, 8, 8, 8], data.clone()).unwrap(), lattice).unwrap();
    let idx = [3, 5, 1];
    let q = lattice.cell_center(idx);
    let full = model.query_logits(&vol, &[q]).unwrap();
    let flat = (3 * 8 + 5) * 8 + 1;
    let only: Vec<f64> = data
        .iter()
        .enumerate()
        .map(|(i, v)| if i % 512 == flat { *v } else { 0.0 })
        .collect();
    let vol2 = FeatureVolume::new(Tensor::new(vec![4, 8, 8, 8], only).unwrap(), lattice).unwrap();
    assert_eq!(full, model.query_logits(&vol2, &[q]).unwrap());
}

#[test]
fn queries_preserve_order_and_stay_in_open_unit_interval() {
    let model = ConvOccNet::new(tiny(), InitMode::Random { seed: 3 }).unwrap();
    let vol = model.encode(&pc(cloud(1, 200, 0.1, 0.9))).unwrap();
    let q = cloud(2, 1000, -0.2, 1.2);
    let all = model.query_logits(&vol, &q).unwrap();
    assert!(all.iter().all(|v| v.is_finite()));
    for (i, qi) in q.iter().enumerate().step_by(97) {
        assert_eq!(model.query_logits(&vol, &[*qi]).unwrap()[0], all[i]);
    }
    let occ = model.query_occupancy(&vol, &q).unwrap();
    assert!(occ.iter().all(|o| *o > 0.0 && *o < 1.0));
}

#[test]
fn geometric_init_is_a_sphere_with_zero_features() {
    let cfg = NetConfig::default();
    let model = ConvOccNet::new(cfg, InitMode::Geometric { radius: 0.3 }).unwrap();
    let vol = FeatureVolume::new(Tensor::zeros(vec![32, 32, 32, 32]), Lattice::full(32)).unwrap();
    let q = cloud(11, 10_000, 0.0, 1.0);
    let logits = model.query_logits(&vol, &q).unwrap();
    let agree = q
        .iter()
        .zip(&logits)
        .filter(|(p, g)| {
            let d = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) + (p[2] - 0.5).powi(2)).sqrt() - 0.3;
            d.signum() == g.signum()
        })
        .count();
    assert!(agree as f64 >= 0.95 * q.len() as f64, "agreement {agree}");
}

/// Mean query logit as a function of the parameters, for finite differences.
fn mean_logit(model: &ConvOccNet, points: &[Vec3], queries: &[Vec3]) -> f64 {
    let vol = model.encode(&pc(points.to_vec())).unwrap();
    let l = model.query_logits(&vol, queries).unwrap();
    l.iter().sum::<f64>() / l.len() as f64
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let cfg = NetConfig::with_sizes(8, 4, 1);
    let mut model = ConvOccNet::new(cfg, InitMode::Random { seed: 21 }).unwrap();
    // zero biases leave exact zeros in front of relus (kinks); move off them
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let names = model.param_names().to_vec();
    for name in names.iter().filter(|n| n.ends_with(".bias")) {
        for v in model.param_mut(name).unwrap().data_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
    let points = cloud(5, 60, 0.1, 0.9);
    let queries = cloud(6, 25, 0.05, 0.95);
    let lattice = Lattice::full(8);

    let mut g = Graph::new();
    let bound = model.bind(&mut g, |_| Binding::Trainable);
    let vol = model.encode_graph(&mut g, &bound, &points, &lattice).unwrap();
    let logits = model.decode_graph(&mut g, &bound, vol, &lattice, &queries).unwrap();
    let total = g.sum(logits).unwrap();
    let loss = g.scale(total, 1.0 / queries.len() as f64).unwrap();
    g.backward(loss).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (pi, name) in model.param_names().iter().enumerate() {
        let analytic = g.grad(bound.var(pi).unwrap()).unwrap().to_vec();
        let n = analytic.len();
        let picks: Vec<usize> = (0..4.min(n)).map(|_| rng.gen_range(0..n)).collect();
        for &k in &picks {
            let mut plus = model.clone();
            plus.param_mut(name).unwrap().data_mut()[k] += h;
            let mut minus = model.clone();
            minus.param_mut(name).unwrap().data_mut()[k] -= h;
            let fd = (mean_logit(&plus, &points, &queries) - mean_logit(&minus, &points, &queries)) / (2.0 * h);
            let a = analytic[k];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(err);
            assert!(err <= 1e-4, "{name}[{k}]: analytic {a} fd {fd}");
        }
    }
    println!("worst relative gradient error {worst:.2e}");
}

/// Feature volume for `points` over the full lattice.
fn volume(model: &ConvOccNet, points: &[Vec3]) -> FeatureVolume {
    model.encode_window(points, Lattice::full(model.config().grid_res)).unwrap()
}

#[test]
fn whole_cell_translation_shifts_the_volume() {
    for depth in [1, 2] {
        let cfg = NetConfig::with_sizes(64, 4, depth);
        let model = ConvOccNet::new(cfg, InitMode::Random { seed: 13 }).unwrap();
        let r = cfg.receptive_radius();
        // pooling makes the net equivariant only to shifts by whole pooling blocks
        let m = cfg.size_multiple();
        let k = [m, 2 * m, 0];
        let pts = cloud(7, 3000, 0.3, 0.55);
        let moved: Vec<Vec3> = pts
            .iter()
            .map(|p| [p[0] + k[0] as f64 / 64.0, p[1] + k[1] as f64 / 64.0, p[2] + k[2] as f64 / 64.0])
            .collect();
        let a = volume(&model, &pts);
        let b = volume(&model, &moved);
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for i in r..64 - r - k[0] {
            for j in r..64 - r - k[1] {
                for l in r..64 - r - k[2] {
                    let fa = a.at([i, j, l]);
                    let fb = b.at([i + k[0], j + k[1], l + k[2]]);
                    for (x, y) in fa.iter().zip(&fb) {
                        worst = worst.max((x - y).abs());
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
        assert!(worst <= 1e-9, "depth {depth}: deviation {worst}");
    }
}

#[test]
fn receptive_radius_bounds_the_impulse_response() {
    for depth in [1, 2, 3] {
        let cfg = NetConfig::with_sizes(64, 2, depth);
        let model = ConvOccNet::new(cfg, InitMode::Random { seed: 4 }).unwrap();
        let lattice = Lattice::full(64);
        let mut reach = 0usize;
        for c in [[31usize, 31, 31], [32, 32, 32], [33, 30, 31]] {
            let center = lattice.cell_center(c);
            let p = [center[0] + 0.3 / 64.0, center[1] - 0.2 / 64.0, center[2] + 0.1 / 64.0];
            let with = volume(&model, &[p]);
            let mut g = Graph::new();
            let bound = model.bind(&mut g, |_| Binding::Constant);
            let v = model.encode_graph(&mut g, &bound, &[], &lattice).unwrap();
            let without = g.value(v).clone();
            let n = 64 * 64 * 64;
            for (idx, (x, y)) in with.features.data().iter().zip(without.data()).enumerate() {
                if x != y {
                    let cell = idx % n;
                    let pos = [cell / 4096, cell / 64 % 64, cell % 64];
                    let d = (0..3).map(|a| pos[a].abs_diff(c[a])).max().unwrap();
                    reach = reach.max(d);
                }
            }
        }
        println!("depth {depth}: observed reach {reach}, bound {}", cfg.receptive_radius());
        assert!(reach <= cfg.receptive_radius());
        assert!(reach + (1 << depth) > cfg.receptive_radius());
    }
}
