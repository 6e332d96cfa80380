use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{PretrainConfig, TraceRow};
use super::{derive_seed, diverged, step_params, Trained};
use crate::autodiff::{Graph, Reduction};
use crate::error::{Error, Result};
use crate::geometry::{normalize_to_unit_cube, sample_surface, PointCloud, ShapeSpec, Vec3, DEFAULT_PADDING};
use crate::network::{Binding, ConvOccNet, Lattice};

/// Surface samples drawn once per shape; every training cloud resamples
/// from this pool and adds fresh noise.
const POOL_FACTOR: usize = 2;

/// One supervised training example in normalized coordinates.
pub struct Example {
    pub input: Vec<Vec3>,
    pub queries: Vec<Vec3>,
    pub occupancy: Vec<f64>,
}

/// Draws a noisy, normalized cloud of `spec` and uniform queries labelled by
/// the shape's exact occupancy.
pub fn make_example(spec: &ShapeSpec, pool: &[Vec3], cfg: &PretrainConfig, rng: &mut ChaCha8Rng) -> Result<Example> {
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let points: Vec<Vec3> = (0..cfg.surface_points_per_shape)
        .map(|_| {
            let p = pool[rng.gen_range(0..pool.len())];
            p.map(|v| v + noise.sample(rng))
        })
        .collect();
    let (cloud, tf) = normalize_to_unit_cube(&PointCloud::from_points(points)?, DEFAULT_PADDING)?;
    let queries: Vec<Vec3> = (0..cfg.queries_per_shape).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let occupancy = queries
        .iter()
        .map(|q| if spec.occupancy(tf.to_world(*q)) { 1.0 } else { 0.0 })
        .collect();
    Ok(Example {
        input: cloud.points,
        queries,
        occupancy,
    })
}

/// Mean BCE of the predicted occupancy on one example, with gradients when
/// `grads` is given (accumulated, scaled by `weight`).
pub fn example_loss(model: &ConvOccNet, ex: &Example, grads: Option<(&mut [Vec<f64>], f64)>) -> Result<f64> {
    let mut g = Graph::new();
    let train = grads.is_some();
    let bound = model.bind(&mut g, |_| if train { Binding::Trainable } else { Binding::Constant });
    let lattice = Lattice::full(model.config().grid_res);
    let vol = model.encode_graph(&mut g, &bound, &ex.input, &lattice)?;
    let logits = model.decode_graph(&mut g, &bound, vol, &lattice, &ex.queries)?;
    let occ = g.sigmoid(logits)?;
    let loss = g.bce(occ, &ex.occupancy, Reduction::Mean)?;
    let value = g.value(loss).item();
    if let Some((acc, weight)) = grads {
        if !value.is_finite() {
            return Ok(value);
        }
        g.backward(loss)?;
        for (i, a) in acc.iter_mut().enumerate() {
            let gi = g.grad(bound.var(i).expect("all bound")).expect("trainable");
            for (x, y) in a.iter_mut().zip(gi) {
                *x += weight * y;
            }
        }
    }
    Ok(value)
}

/// Supervised pretraining with binary cross-entropy on analytic shapes.
pub fn pretrain(model: ConvOccNet, shapes: &[ShapeSpec], cfg: &PretrainConfig) -> Result<Trained> {
    pretrain_with(model, shapes, cfg, |_, _| Ok(()))
}

/// As [`pretrain`], calling `observe(iteration, model)` after every step.
pub fn pretrain_with(
    mut model: ConvOccNet,
    shapes: &[ShapeSpec],
    cfg: &PretrainConfig,
    mut observe: impl FnMut(usize, &ConvOccNet) -> Result<()>,
) -> Result<Trained> {
    cfg.validate()?;
    if shapes.is_empty() {
        return Err(Error::contract("pretraining needs at least one shape"));
    }
    let pools = shape_pools(shapes, cfg.surface_points_per_shape * POOL_FACTOR, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = crate::autodiff::Adam::default();
    let all: Vec<usize> = (0..model.params().len()).collect();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let weight = 1.0 / cfg.batch_size as f64;
    for it in 0..cfg.iterations {
        let mut grads: Vec<Vec<f64>> = model.params().iter().map(|t| vec![0.0; t.numel()]).collect();
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            let s = rng.gen_range(0..shapes.len());
            let ex = make_example(&shapes[s], &pools[s], cfg, &mut rng)?;
            total += example_loss(&model, &ex, Some((&mut grads, weight))).map_err(|e| diverged(e, it, cfg.lr))?;
        }
        let loss = total * weight;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it, lr: cfg.lr });
        }
        step_params(&mut model, &mut adam, &all, &grads, cfg.lr)?;
        trace.push(TraceRow {
            iteration: it,
            loss,
            lr: cfg.lr,
        });
        if it % 100 == 0 || it + 1 == cfg.iterations {
            log::info!("pretrain iteration {it}: bce {loss:.5}");
        }
        observe(it, &model)?;
    }
    Ok(Trained { model, trace })
}

/// Surface sample pools, one per shape, each from its own seed stream.
pub fn shape_pools(shapes: &[ShapeSpec], n: usize, seed: u64) -> Result<Vec<Vec<Vec3>>> {
    shapes
        .iter()
        .enumerate()
        .map(|(i, s)| Ok(sample_surface(s, n, derive_seed(seed, i as u64))?.points))
        .collect()
}
