use std::collections::HashMap;

use super::tables::TRI_TABLE;
use super::{lattice_point, ScalarGrid, TriMesh};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Cube corner offsets in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Cube edges as corner pairs in table order.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set of `grid`, whose lattice point `idx` sits at
/// `origin + idx * cell_size`.
///
/// Vertices on shared lattice edges are emitted once. Cells touching a value
/// equal to `iso` treat it as inside.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64, cell_size: f64, origin: Vec3) -> Result<TriMesh> {
    if grid.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("marching cubes grid"));
    }
    if !(iso.is_finite() && cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::contract(format!("bad iso {iso} or cell size {cell_size}")));
    }
    let d = grid.dims;
    let mut mesh = TriMesh::default();
    if d.iter().any(|&n| n < 2) {
        return Ok(mesh);
    }
    // lattice edge key: (lower endpoint flat index) * 3 + axis
    let mut edge_vertex: HashMap<usize, usize> = HashMap::new();
    for i in 0..d[0] - 1 {
        for j in 0..d[1] - 1 {
            for k in 0..d[2] - 1 {
                let base = [i, j, k];
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = grid.get([i + off[0], j + off[1], k + off[2]]);
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let mut ids = [0usize; 3];
                    for (slot, &e) in tri.iter().enumerate() {
                        let [a, b] = EDGES[e as usize];
                        let pa = add(base, CORNERS[a]);
                        let pb = add(base, CORNERS[b]);
                        let (lo, hi, vlo, vhi) = if pa <= pb {
                            (pa, pb, vals[a], vals[b])
                        } else {
                            (pb, pa, vals[b], vals[a])
                        };
                        let axis = (0..3).find(|&ax| lo[ax] != hi[ax]).expect("edge spans one axis");
                        let key = grid.index(lo) * 3 + axis;
                        ids[slot] = *edge_vertex.entry(key).or_insert_with(|| {
                            let t = (iso - vlo) / (vhi - vlo);
                            let mut p = lattice_point(origin, cell_size, lo);
                            p[axis] += t * cell_size;
                            mesh.vertices.push(p);
                            mesh.vertices.len() - 1
                        });
                    }
                    // table winding already faces the low-valued (outer) side
                    mesh.faces.push(ids);
                }
            }
        }
    }
    Ok(mesh)
}

#[inline]
fn add(a: [usize; 3], b: [usize; 3]) -> [usize; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
