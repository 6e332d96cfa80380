//! Sliding-window reconstruction over a global voxel grid.
//!
//! The unit cube is split into `res^3` voxels, which double as the feature
//! cells of the network. Cores tile the grid; each window runs the network on
//! its core dilated by a margin (rounded outward to whole pooling blocks),
//! evaluates occupancy at its core voxel centers, and writes them into one
//! global grid that is meshed in a single marching-cubes pass.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{normalize_to_unit_cube, DomainTransform, PointCloud, Vec3, DEFAULT_PADDING};
use crate::meshing::{marching_cubes, ScalarGrid, TriMesh};
use crate::network::{ConvOccNet, Lattice};
use crate::pipeline::{derive_seed, sa_optimize_window, SAOptConfig};

/// Half-open voxel box `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxelBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl VoxelBox {
    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.max[a] - self.min[a])
    }

    pub fn contains(&self, v: [usize; 3]) -> bool {
        (0..3).all(|a| v[a] >= self.min[a] && v[a] < self.max[a])
    }

    /// `self` grown by `by` voxels on every side, clipped to `[0, res)`.
    pub fn dilated(&self, by: usize, res: usize) -> Self {
        Self {
            min: self.min.map(|v| v.saturating_sub(by)),
            max: self.max.map(|v| (v + by).min(res)),
        }
    }

    /// Smallest box of whole `m`-blocks containing `self`, clipped to `[0, res)`.
    pub fn aligned(&self, m: usize, res: usize) -> Self {
        Self {
            min: self.min.map(|v| v / m * m),
            max: self.max.map(|v| v.div_ceil(m) * m).map(|v| v.min(res)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub core: VoxelBox,
    pub input: VoxelBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    /// Voxels per axis of the global grid over the unit cube.
    pub res: usize,
    pub core_size: usize,
    pub margin: usize,
    pub windows: Vec<Window>,
}

impl WindowPlan {
    pub fn voxel_size(&self) -> f64 {
        1.0 / self.res as f64
    }

    /// One line per window: `core [..) input [..)`.
    pub fn to_text(&self) -> String {
        let mut s = format!("# res {} core {} margin {}\n", self.res, self.core_size, self.margin);
        for (i, w) in self.windows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i} core {:?}..{:?} input {:?}..{:?}",
                w.core.min, w.core.max, w.input.min, w.input.max
            );
        }
        s
    }
}

/// Margin covering half the receptive field of `model`'s hourglass, rounded up.
pub fn default_margin(model: &ConvOccNet) -> usize {
    let field = 2 * model.config().receptive_radius() + 1;
    field.div_ceil(2)
}

/// Row-major tiling of the `res^3` grid into cores of `core_size` (the last
/// tile per axis may be shorter); inputs are cores dilated by `margin`.
pub fn plan_windows(res: usize, core_size: usize, margin: usize) -> Result<WindowPlan> {
    if res == 0 || core_size == 0 {
        return Err(Error::contract("global resolution and core size must be at least 1"));
    }
    let core_size = core_size.min(res);
    let starts: Vec<usize> = (0..res).step_by(core_size).collect();
    let mut windows = Vec::new();
    for &i in &starts {
        for &j in &starts {
            for &k in &starts {
                let min = [i, j, k];
                let core = VoxelBox {
                    min,
                    max: min.map(|v| (v + core_size).min(res)),
                };
                windows.push(Window {
                    core,
                    input: core.dilated(margin, res),
                });
            }
        }
    }
    Ok(WindowPlan {
        res,
        core_size,
        margin,
        windows,
    })
}

#[derive(Debug, Clone)]
pub struct SceneOutput {
    /// Mesh in the input cloud's coordinates.
    pub mesh: TriMesh,
    /// Occupancy at voxel centers, `res^3` values.
    pub grid: ScalarGrid,
    pub transform: DomainTransform,
    /// Indices of windows without input points (filled with 0).
    pub empty_windows: Vec<usize>,
}

/// Occupancy at the voxel centers of every window core, written into one
/// global grid. `points` are in unit-cube coordinates. With `sa`, each window
/// adapts its own copy of `model` first, seeded by its index.
pub fn scene_grid(model: &ConvOccNet, points: &[Vec3], plan: &WindowPlan, sa: Option<&SAOptConfig>) -> Result<(ScalarGrid, Vec<usize>)> {
    let res = plan.res;
    let m = model.config().size_multiple();
    if res % m != 0 {
        return Err(Error::contract(format!("global resolution {res} must be a multiple of {m}")));
    }
    let mut grid = ScalarGrid::filled([res; 3], f64::NAN);
    let mut empty = Vec::new();
    for (wi, w) in plan.windows.iter().enumerate() {
        let span = w.input.aligned(m, res);
        let lattice = Lattice::window(res, span.min, span.dims())?;
        let inside: Vec<Vec3> = points.iter().copied().filter(|p| lattice.local_cell(*p).is_some()).collect();
        let core_voxels = all_voxels(w.core);
        if inside.is_empty() {
            log::info!("window {wi} has no input points; its core is empty space");
            empty.push(wi);
            for v in core_voxels {
                let i = grid.index(v);
                grid.values[i] = 0.0;
            }
            continue;
        }
        let local;
        let net = match sa {
            Some(cfg) => {
                let cfg = SAOptConfig {
                    seed: derive_seed(cfg.seed, wi as u64),
                    ..*cfg
                };
                local = sa_optimize_window(model.clone(), &inside, &lattice, &cfg, |_, _| Ok(()))?.model;
                &local
            }
            None => model,
        };
        let vol = net.encode_window(&inside, lattice)?;
        let centers: Vec<Vec3> = core_voxels.iter().map(|v| lattice.cell_center(*v)).collect();
        let occ = net.query_occupancy(&vol, &centers)?;
        for (v, o) in core_voxels.iter().zip(occ) {
            let i = grid.index(*v);
            grid.values[i] = o;
        }
    }
    if grid.values.iter().any(|v| v.is_nan()) {
        return Err(Error::contract("window cores do not cover the global grid"));
    }
    Ok((grid, empty))
}

/// Sliding-window reconstruction of a cloud in world coordinates.
pub fn reconstruct_scene(model: &ConvOccNet, pc: &PointCloud, plan: &WindowPlan, sa: Option<&SAOptConfig>) -> Result<SceneOutput> {
    let (cloud, transform) = normalize_to_unit_cube(pc, DEFAULT_PADDING)?;
    let (grid, empty_windows) = scene_grid(model, &cloud.points, plan, sa)?;
    let h = plan.voxel_size();
    let mesh = marching_cubes(&grid, 0.5, h, [0.5 * h; 3])?.map_vertices(|q| transform.to_world(q));
    Ok(SceneOutput {
        mesh,
        grid,
        transform,
        empty_windows,
    })
}

/// Feed-forward occupancy at every voxel center from one pass over the
/// whole `res^3` lattice.
pub fn full_volume_grid(model: &ConvOccNet, points: &[Vec3], res: usize) -> Result<ScalarGrid> {
    let lattice = Lattice::full(res);
    let vol = model.encode_window(points, lattice)?;
    let voxels = all_voxels(VoxelBox { min: [0; 3], max: [res; 3] });
    let centers: Vec<Vec3> = voxels.iter().map(|v| lattice.cell_center(*v)).collect();
    ScalarGrid::new([res; 3], model.query_occupancy(&vol, &centers)?)
}

fn all_voxels(b: VoxelBox) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(b.dims().iter().product());
    for i in b.min[0]..b.max[0] {
        for j in b.min[1]..b.max[1] {
            for k in b.min[2]..b.max[2] {
                out.push([i, j, k]);
            }
        }
    }
    out
}
