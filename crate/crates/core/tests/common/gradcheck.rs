//! Central finite-difference checks of every differentiable operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saconet::autodiff::{Graph, Reduction, Resample, Tensor, Var};

const H: f64 = 1e-5;
pub const INSTANCES: usize = 100;

type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Var + 'a;

/// Random weights turn any output into a scalar: `sum_i r_i out_i`.
fn contract(g: &mut Graph, out: Var, weights: &[f64]) -> Var {
    let n = g.value(out).numel();
    let flat = g.reshape(out, &[1, n]).unwrap();
    let w = g.constant(Tensor::new(vec![1, n], weights.to_vec()).unwrap());
    let s = g.linear(flat, w, None).unwrap();
    g.reshape(s, &[1]).unwrap()
}

fn eval(inputs: &[Tensor], build: &Build, weights: &[f64]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars);
    if weights.is_empty() {
        return g.value(out).item();
    }
    let s = contract(&mut g, out, weights);
    g.value(s).item()
}

/// Largest relative error between the tape gradient and central differences,
/// over every input element (or a random subset of 24 per input).
fn check(rng: &mut ChaCha8Rng, inputs: &[Tensor], build: &Build, scalar_output: bool) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let weights: Vec<f64> = if scalar_output {
        Vec::new()
    } else {
        (0..g.value(out).numel()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let loss = if scalar_output {
        out
    } else {
        contract(&mut g, out, &weights)
    };
    g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap().to_vec();
        let n = analytic.len();
        let picks: Vec<usize> = if n <= 24 {
            (0..n).collect()
        } else {
            (0..24).map(|_| rng.gen_range(0..n)).collect()
        };
        for k in picks {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= H;
            let fd = (eval(&plus, build, &weights) - eval(&minus, build, &weights)) / (2.0 * H);
            let a = analytic[k];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            worst = worst.max(err);
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so kinks of relu/abs stay out of reach of `H`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Seeded worst relative error of `name` over all instances.
pub fn worst_error(name: &str) -> f64 {
    let (_, _, instance) = CASES.iter().find(|c| c.0 == name).expect("known case");
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    (0..INSTANCES).map(|_| instance(&mut rng)).fold(0.0, f64::max)
}

/// `(name, tolerance, instance)` for every operation.
pub const CASES: &[(&str, f64, fn(&mut ChaCha8Rng) -> f64)] = &[
    ("relu", 1e-4, relu),
    ("abs", 1e-4, abs),
    ("sigmoid", 1e-6, sigmoid),
    ("linear", 1e-6, linear),
    ("conv3d", 1e-4, conv3d),
    ("avg_down2", 1e-4, avg_down2),
    ("nearest_up2", 1e-4, nearest_up2),
    ("scatter_mean", 1e-4, scatter_mean),
    ("gather_cells", 1e-4, gather_cells),
    ("grid_pool", 1e-4, grid_pool),
    ("trilinear", 1e-6, trilinear),
    ("bce", 1e-6, bce),
    ("add_scale_sum", 1e-4, add_scale_sum),
    ("concat", 1e-4, concat),
];

fn relu(rng: &mut ChaCha8Rng) -> f64 {
    let x = away_from_zero(rng, &[3, 5]);
    check(rng, &[x], &|g, v| g.relu(v[0]).unwrap(), false)
}

fn abs(rng: &mut ChaCha8Rng) -> f64 {
    let x = away_from_zero(rng, &[4, 3]);
    check(rng, &[x], &|g, v| g.abs(v[0]).unwrap(), false)
}

fn sigmoid(rng: &mut ChaCha8Rng) -> f64 {
    let x = rand_tensor(rng, &[7], -6.0, 6.0);
    check(rng, &[x], &|g, v| g.sigmoid(v[0]).unwrap(), false)
}

fn linear(rng: &mut ChaCha8Rng) -> f64 {
    let (b, i, o) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..5));
    let x = rand_tensor(rng, &[b, i], -1.0, 1.0);
    let w = rand_tensor(rng, &[o, i], -1.0, 1.0);
    let bias = rand_tensor(rng, &[o], -1.0, 1.0);
    check(
        rng,
        &[x, w, bias],
        &|g, v| g.linear(v[0], v[1], Some(v[2])).unwrap(),
        false,
    )
}

fn conv3d(rng: &mut ChaCha8Rng) -> f64 {
    let (cin, cout) = (rng.gen_range(1..3), rng.gen_range(1..3));
    let dims = [rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(2..4)];
    let x = rand_tensor(rng, &[1, cin, dims[0], dims[1], dims[2]], -1.0, 1.0);
    let k = rand_tensor(rng, &[cout, cin, 3, 3, 3], -1.0, 1.0);
    let b = rand_tensor(rng, &[cout], -1.0, 1.0);
    check(rng, &[x, k, b], &|g, v| g.conv3d(v[0], v[1], v[2]).unwrap(), false)
}

fn avg_down2(rng: &mut ChaCha8Rng) -> f64 {
    let x = rand_tensor(rng, &[1, 2, 4, 2, 4], -1.0, 1.0);
    check(
        rng,
        &[x],
        &|g, v| g.resample3d(v[0], Resample::AvgDown2).unwrap(),
        false,
    )
}

fn nearest_up2(rng: &mut ChaCha8Rng) -> f64 {
    let x = rand_tensor(rng, &[1, 2, 2, 1, 3], -1.0, 1.0);
    check(
        rng,
        &[x],
        &|g, v| g.resample3d(v[0], Resample::NearestUp2).unwrap(),
        false,
    )
}

fn scatter_mean(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..12);
    let cells: Vec<usize> = (0..n).map(|_| rng.gen_range(0..8)).collect();
    let f = rand_tensor(rng, &[n, 3], -1.0, 1.0);
    let c2 = cells.clone();
    check(
        rng,
        &[f],
        &move |g, v| g.scatter_mean(v[0], &c2, [2, 2, 2]).unwrap(),
        false,
    )
}

fn gather_cells(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..12);
    let cells: Vec<usize> = (0..n).map(|_| rng.gen_range(0..8)).collect();
    let grid = rand_tensor(rng, &[3, 2, 2, 2], -1.0, 1.0);
    check(rng, &[grid], &move |g, v| g.gather_cells(v[0], &cells).unwrap(), false)
}

/// The encoder's pool-then-concatenate pattern.
fn grid_pool(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(2..15);
    let cells: Vec<usize> = (0..n).map(|_| rng.gen_range(0..8)).collect();
    let f = rand_tensor(rng, &[n, 2], -1.0, 1.0);
    let w = rand_tensor(rng, &[3, 4], -1.0, 1.0);
    check(
        rng,
        &[f, w],
        &move |g, v| {
            let pooled = g.scatter_mean(v[0], &cells, [2, 2, 2]).unwrap();
            let back = g.gather_cells(pooled, &cells).unwrap();
            let cat = g.concat(&[v[0], back], 1).unwrap();
            g.linear(cat, v[1], None).unwrap()
        },
        false,
    )
}

fn trilinear(rng: &mut ChaCha8Rng) -> f64 {
    let dims = [rng.gen_range(2..5), rng.gen_range(2..5), rng.gen_range(1..5)];
    let vol = rand_tensor(rng, &[2, dims[0], dims[1], dims[2]], -1.0, 1.0);
    let q: Vec<[f64; 3]> = (0..6)
        .map(|_| {
            [
                rng.gen_range(-0.5..dims[0] as f64 - 0.5),
                rng.gen_range(-0.5..dims[1] as f64 - 0.5),
                rng.gen_range(-0.5..dims[2] as f64 - 0.5),
            ]
        })
        .collect();
    check(rng, &[vol], &move |g, v| g.trilinear_query(v[0], &q).unwrap(), false)
}

fn bce(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..10);
    let p = rand_tensor(rng, &[n], 0.05, 0.95);
    let y: Vec<f64> = (0..n)
        .map(|_| [0.0, 0.5, 1.0, rng.gen_range(0.0..1.0)][rng.gen_range(0..4)])
        .collect();
    let red = if rng.gen_bool(0.5) {
        Reduction::Mean
    } else {
        Reduction::Sum
    };
    check(rng, &[p], &move |g, v| g.bce(v[0], &y, red).unwrap(), true)
}

fn add_scale_sum(rng: &mut ChaCha8Rng) -> f64 {
    let a = rand_tensor(rng, &[2, 3], -1.0, 1.0);
    let b = rand_tensor(rng, &[2, 3], -1.0, 1.0);
    let f: f64 = rng.gen_range(-3.0..3.0);
    check(
        rng,
        &[a, b],
        &move |g, v| {
            let s = g.add(v[0], v[1]).unwrap();
            let s = g.scale(s, f).unwrap();
            let t = g.sum(s).unwrap();
            let r = g.reshape(s, &[3, 2]).unwrap();
            let r = g.reshape(r, &[6]).unwrap();
            let t6 = g.concat(&[t, t, t, t, t, t], 0).unwrap();
            g.add(r, t6).unwrap()
        },
        false,
    )
}

fn concat(rng: &mut ChaCha8Rng) -> f64 {
    let a = rand_tensor(rng, &[2, 1, 3], -1.0, 1.0);
    let b = rand_tensor(rng, &[2, 2, 3], -1.0, 1.0);
    check(rng, &[a, b], &|g, v| g.concat(&[v[0], v[1], v[0]], 1).unwrap(), false)
}
