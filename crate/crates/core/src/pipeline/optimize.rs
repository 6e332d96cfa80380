use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{OptMode, SAOptConfig, TraceRow};
use super::loss::{uce_graph, uce_loss};
use super::{diverged, step_params, Trained};
use crate::autodiff::{Adam, Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::{uniform_points, Aabb, PointCloud, Vec3};
use crate::network::{is_decoder_param, Binding, ConvOccNet, Lattice};

/// Slack allowed outside the unit cube for a "normalized" cloud.
const CUBE_SLACK: f64 = 1e-9;

/// Sign-agnostic test-time optimization of `model` on a cloud already in
/// unit-cube coordinates.
pub fn sa_optimize(model: ConvOccNet, pc: &PointCloud, cfg: &SAOptConfig) -> Result<Trained> {
    sa_optimize_with(model, pc, cfg, |_, _| Ok(()))
}

/// As [`sa_optimize`], calling `observe(iterations_done, model)` after every
/// step.
pub fn sa_optimize_with(
    model: ConvOccNet,
    pc: &PointCloud,
    cfg: &SAOptConfig,
    observe: impl FnMut(usize, &ConvOccNet) -> Result<()>,
) -> Result<Trained> {
    check_normalized(pc)?;
    let lattice = Lattice::full(model.config().grid_res);
    sa_optimize_window(model, &pc.points, &lattice, cfg, observe)
}

/// Test-time optimization over the sub-lattice `lattice`: the volume is built
/// from the points inside it and non-surface queries are uniform in its box.
pub fn sa_optimize_window(
    mut model: ConvOccNet,
    points: &[Vec3],
    lattice: &Lattice,
    cfg: &SAOptConfig,
    mut observe: impl FnMut(usize, &ConvOccNet) -> Result<()>,
) -> Result<Trained> {
    cfg.validate()?;
    let inside: Vec<Vec3> = points.iter().copied().filter(|p| lattice.local_cell(*p).is_some()).collect();
    if inside.is_empty() {
        return Err(Error::contract("test-time optimization needs points inside the lattice"));
    }
    let trainable: Vec<bool> = model
        .param_names()
        .iter()
        .map(|n| cfg.mode == OptMode::Full || !is_decoder_param(n))
        .collect();
    let selected: Vec<usize> = (0..trainable.len()).filter(|&i| trainable[i]).collect();
    let bbox = lattice.bbox();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::default();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let lr = cfg.learning_rate(it);
        let (surface, off) = draw_queries(&inside, &bbox, cfg.batch, cfg.n_surface, cfg.n_nonsurface, &mut rng);

        let mut g = Graph::new();
        let mut flags = trainable.iter();
        let bound = model.bind(&mut g, |_| {
            if *flags.next().expect("one flag per parameter") {
                Binding::Trainable
            } else {
                Binding::Constant
            }
        });
        // the encoder is optimized too, so the volume is rebuilt every step
        let forward = |g: &mut Graph| -> Result<Var> {
            let vol = model.encode_graph(g, &bound, &inside, lattice)?;
            let s = if surface.is_empty() {
                None
            } else {
                Some(model.decode_graph(g, &bound, vol, lattice, &surface)?)
            };
            let k = if off.is_empty() {
                None
            } else {
                Some(model.decode_graph(g, &bound, vol, lattice, &off)?)
            };
            uce_graph(g, s, k, cfg.reduction())
        };
        let loss = forward(&mut g).map_err(|e| diverged(e, it, lr))?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it, lr });
        }
        g.backward(loss)?;
        let grads: Vec<Vec<f64>> = selected
            .iter()
            .map(|&i| g.grad(bound.var(i).expect("bound")).expect("trainable").to_vec())
            .collect();
        drop(g);
        step_params(&mut model, &mut adam, &selected, &grads, lr)?;
        trace.push(TraceRow {
            iteration: it,
            loss: value,
            lr,
        });
        if it % 100 == 0 || it + 1 == cfg.iterations {
            log::info!("sign-agnostic iteration {it}: uce {value:.5} lr {lr:.2e}");
        }
        observe(it + 1, &model)?;
    }
    Ok(Trained { model, trace })
}

fn check_normalized(pc: &PointCloud) -> Result<()> {
    if pc.is_empty() {
        return Err(Error::contract("test-time optimization needs a non-empty point cloud"));
    }
    let outside = pc
        .points
        .iter()
        .flatten()
        .any(|v| *v < -CUBE_SLACK || *v > 1.0 + CUBE_SLACK);
    if outside {
        return Err(Error::contract("point cloud must be normalized to the unit cube"));
    }
    Ok(())
}

/// Surface queries drawn from `points` (without replacement within a set
/// when there are enough) and uniform queries in `bbox`.
pub fn draw_queries(
    points: &[Vec3],
    bbox: &Aabb,
    sets: usize,
    n_surface: usize,
    n_nonsurface: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut surface = Vec::with_capacity(sets * n_surface);
    let mut off = Vec::with_capacity(sets * n_nonsurface);
    for _ in 0..sets {
        if points.len() >= n_surface {
            surface.extend(index::sample(rng, points.len(), n_surface).iter().map(|i| points[i]));
        } else {
            surface.extend((0..n_surface).map(|_| points[rng.gen_range(0..points.len())]));
        }
        off.extend(uniform_points(rng, bbox, n_nonsurface));
    }
    (surface, off)
}

/// Mean UCE of `model` on a fixed query draw (seeded), without gradients.
pub fn evaluate_uce(model: &ConvOccNet, pc: &PointCloud, n_surface: usize, n_nonsurface: usize, seed: u64) -> Result<f64> {
    check_normalized(pc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (surface, off) = draw_queries(&pc.points, &Aabb::unit(), 1, n_surface, n_nonsurface, &mut rng);
    let vol = model.encode(pc)?;
    let s = if surface.is_empty() { Vec::new() } else { model.query_logits(&vol, &surface)? };
    let k = if off.is_empty() { Vec::new() } else { model.query_logits(&vol, &off)? };
    uce_loss(&s, &k)
}
