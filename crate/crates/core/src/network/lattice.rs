use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

/// A box of cells of the global cell-centered grid over the unit cube.
///
/// The global grid has `res` cells per axis of size `1/res`; cell `i` covers
/// `[i/res, (i+1)/res)` and its feature sits at the center `(i + 0.5)/res`.
/// A lattice is the sub-box `offset .. offset + dims` of that grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub res: usize,
    pub offset: [usize; 3],
    pub dims: [usize; 3],
}

impl Lattice {
    pub fn full(res: usize) -> Self {
        Self {
            res,
            offset: [0; 3],
            dims: [res; 3],
        }
    }

    pub fn window(res: usize, offset: [usize; 3], dims: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if dims[a] == 0 || offset[a] + dims[a] > res {
                return Err(Error::contract(format!(
                    "window offset {offset:?} dims {dims:?} does not fit a grid of {res}"
                )));
            }
        }
        Ok(Self { res, offset, dims })
    }

    pub fn cell_size(&self) -> f64 {
        1.0 / self.res as f64
    }

    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    /// Global cell containing `p`; points outside the unit cube are clamped
    /// to the nearest border cell.
    pub fn global_cell(&self, p: Vec3) -> [usize; 3] {
        let top = (self.res - 1) as f64;
        p.map(|v| (v * self.res as f64).floor().clamp(0.0, top) as usize)
    }

    /// Flat index (x-major) of the lattice cell holding `p`, if inside the window.
    pub fn local_cell(&self, p: Vec3) -> Option<usize> {
        let g = self.global_cell(p);
        let mut flat = 0;
        for a in 0..3 {
            let i = g[a].checked_sub(self.offset[a])?;
            if i >= self.dims[a] {
                return None;
            }
            flat = flat * self.dims[a] + i;
        }
        Some(flat)
    }

    /// Position of `p` relative to the center of its global cell, in cell units
    /// (each component in `[-0.5, 0.5]` for points inside the cube).
    pub fn cell_local(&self, p: Vec3) -> Vec3 {
        let g = self.global_cell(p);
        let r = self.res as f64;
        [
            p[0] * r - g[0] as f64 - 0.5,
            p[1] * r - g[1] as f64 - 0.5,
            p[2] * r - g[2] as f64 - 0.5,
        ]
    }

    /// Continuous lattice coordinates of `q`: cell centers map to integers.
    pub fn lattice_coords(&self, q: Vec3) -> [f64; 3] {
        let r = self.res as f64;
        [
            q[0] * r - 0.5 - self.offset[0] as f64,
            q[1] * r - 0.5 - self.offset[1] as f64,
            q[2] * r - 0.5 - self.offset[2] as f64,
        ]
    }

    /// Center of the global cell `idx`.
    pub fn cell_center(&self, idx: [usize; 3]) -> Vec3 {
        idx.map(|i| (i as f64 + 0.5) / self.res as f64)
    }

    /// Region of the unit cube covered by the window's cells.
    pub fn bbox(&self) -> Aabb {
        let r = self.res as f64;
        Aabb::new(
            self.offset.map(|o| o as f64 / r),
            [0, 1, 2].map(|a| (self.offset[a] + self.dims[a]) as f64 / r),
        )
    }
}

/// Convolutional features `[C, X, Y, Z]` over a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub features: Tensor,
    pub lattice: Lattice,
}

impl FeatureVolume {
    pub fn new(features: Tensor, lattice: Lattice) -> Result<Self> {
        let s = features.shape();
        if s.len() != 4 || s[1..] != lattice.dims {
            return Err(Error::dims("FeatureVolume", s, &lattice.dims));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("FeatureVolume"));
        }
        Ok(Self { features, lattice })
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn bbox(&self) -> Aabb {
        self.lattice.bbox()
    }

    /// Feature vector of the lattice cell at local index `(i, j, k)`.
    pub fn at(&self, idx: [usize; 3]) -> Vec<f64> {
        let d = self.lattice.dims;
        let flat = (idx[0] * d[1] + idx[1]) * d[2] + idx[2];
        let n = self.lattice.num_cells();
        (0..self.channels()).map(|c| self.features.data()[c * n + flat]).collect()
    }
}
