//! Level-set extraction: marching cubes and multiresolution refinement.
//!
//! Fields are occupancies, so the surface is the 0.5 level set and the inside
//! is where the value is at least `iso`. Faces wind so their normals point
//! toward decreasing occupancy.

mod marching;
mod mise;
mod tables;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{vec3, Aabb, Vec3};

pub use marching::marching_cubes;
pub use mise::{mise, MiseConfig, MiseOutput};

/// Triangle mesh with indexed faces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mesh vertices"));
        }
        for f in &faces {
            if let Some(&i) = f.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::Index {
                    op: "TriMesh face",
                    index: i,
                    limit: vertices.len(),
                });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::contract(format!("degenerate face {f:?}")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        self.faces[face].map(|i| self.vertices[i])
    }

    /// Unnormalized face normal (twice the area times the unit normal).
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.corners(face);
        vec3::cross(vec3::sub(b, a), vec3::sub(c, a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * vec3::norm(self.face_cross(face))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume; positive for closed meshes with outward normals.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                vec3::dot(a, vec3::cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter().copied())
    }

    /// Undirected edges with their face counts.
    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Edges not shared by exactly two faces; zero for a watertight mesh.
    pub fn boundary_edges(&self) -> usize {
        self.edge_counts().values().filter(|&&c| c != 2).count()
    }

    /// Directed edges used by more than one face; zero when orientation is
    /// consistent.
    pub fn misoriented_edges(&self) -> usize {
        let mut seen = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *seen.entry((f[k], f[(k + 1) % 3])).or_insert(0usize) += 1;
            }
        }
        seen.values().filter(|&&c| c > 1).count()
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i] = true;
            }
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        v - self.edge_counts().len() as i64 + self.faces.len() as i64
    }

    /// Applies `f` to every vertex.
    pub fn map_vertices(mut self, f: impl Fn(Vec3) -> Vec3) -> Self {
        for v in &mut self.vertices {
            *v = f(*v);
        }
        self
    }
}

/// Scalar samples on a regular lattice of `dims` points, x-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(Error::dims("ScalarGrid", &[values.len()], &dims));
        }
        Ok(Self { dims, values })
    }

    pub fn filled(dims: [usize; 3], value: f64) -> Self {
        Self {
            dims,
            values: vec![value; dims.iter().product()],
        }
    }

    /// Samples `f` at `origin + idx * spacing` for every lattice point.
    pub fn from_fn(dims: [usize; 3], origin: Vec3, spacing: f64, f: impl Fn(Vec3) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims.iter().product());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    values.push(f(lattice_point(origin, spacing, [i, j, k])));
                }
            }
        }
        Self { dims, values }
    }

    #[inline]
    pub fn index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.values[self.index(idx)]
    }
}

#[inline]
pub(crate) fn lattice_point(origin: Vec3, spacing: f64, idx: [usize; 3]) -> Vec3 {
    [
        origin[0] + idx[0] as f64 * spacing,
        origin[1] + idx[1] as f64 * spacing,
        origin[2] + idx[2] as f64 * spacing,
    ]
}
