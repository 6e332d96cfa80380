//! Pretraining with binary cross-entropy and sign-agnostic test-time
//! optimization with unsigned cross-entropy, plus the end-to-end
//! reconstruction driver.

mod config;
mod loss;
mod optimize;
mod pretrain;

pub use config::{OptMode, PretrainConfig, SAOptConfig, TraceRow};
pub use loss::{unsigned_occupancy, uce_graph, uce_loss, OFF_SURFACE_TARGET, SURFACE_TARGET};
pub use optimize::{draw_queries, evaluate_uce, sa_optimize, sa_optimize_window, sa_optimize_with};
pub use pretrain::{example_loss, make_example, pretrain, pretrain_with, shape_pools, Example};

use crate::autodiff::{Adam, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{normalize_to_unit_cube, Aabb, DomainTransform, PointCloud, DEFAULT_PADDING};
use crate::meshing::{mise, MiseConfig, MiseOutput, TriMesh};
use crate::network::{ConvOccNet, FeatureVolume};

/// A model after training, with its per-iteration loss trace.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ConvOccNet,
    pub trace: Vec<TraceRow>,
}

/// Independent seed for stream `stream` of a run seeded with `base`
/// (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reports a non-finite forward pass as a diverged loss at `iteration`.
pub(crate) fn diverged(e: Error, iteration: usize, lr: f64) -> Error {
    match e {
        Error::NonFinite(_) => Error::NonFiniteLoss { iteration, lr },
        e => e,
    }
}

/// One Adam step on the parameters at `indices`, with `grads` in the same order.
pub(crate) fn step_params(model: &mut ConvOccNet, adam: &mut Adam, indices: &[usize], grads: &[Vec<f64>], lr: f64) -> Result<()> {
    let mut params: Vec<&mut Tensor> = model
        .params_mut()
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| indices.contains(i))
        .map(|(_, t)| t)
        .collect();
    let g: Vec<&[f64]> = grads.iter().map(|v| v.as_slice()).collect();
    adam.step(&mut params, &g, lr)
}

/// Occupancy level set of `vol` over the unit cube.
pub fn extract(model: &ConvOccNet, vol: &FeatureVolume, cfg: &MiseConfig) -> Result<MiseOutput> {
    mise(|p| model.query_occupancy(vol, p), cfg, &Aabb::unit())
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Mesh in the input cloud's coordinates.
    pub mesh: TriMesh,
    /// Model after optional test-time optimization.
    pub model: ConvOccNet,
    pub trace: Vec<TraceRow>,
    pub transform: DomainTransform,
    pub evaluations: usize,
}

/// Normalizes `pc`, optionally adapts `model` to it, and extracts the surface.
pub fn reconstruct(model: ConvOccNet, pc: &PointCloud, sa: Option<&SAOptConfig>, mise_cfg: &MiseConfig) -> Result<Reconstruction> {
    let (cloud, transform) = normalize_to_unit_cube(pc, DEFAULT_PADDING)?;
    let Trained { model, trace } = match sa {
        Some(cfg) => sa_optimize(model, &cloud, cfg)?,
        None => Trained { model, trace: Vec::new() },
    };
    let vol = model.encode(&cloud)?;
    let out = extract(&model, &vol, mise_cfg)?;
    let mesh = out.mesh.map_vertices(|q| transform.to_world(q));
    Ok(Reconstruction {
        mesh,
        model,
        trace,
        transform,
        evaluations: out.evaluations,
    })
}
