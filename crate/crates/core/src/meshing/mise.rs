use serde::{Deserialize, Serialize};

use super::{lattice_point, marching_cubes, ScalarGrid, TriMesh};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiseConfig {
    pub initial_res: usize,
    pub final_res: usize,
    pub iso: f64,
}

impl Default for MiseConfig {
    fn default() -> Self {
        Self {
            initial_res: 32,
            final_res: 128,
            iso: 0.5,
        }
    }
}

impl MiseConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_res >= 1
            && self.final_res >= self.initial_res
            && self.final_res % self.initial_res == 0
            && (self.final_res / self.initial_res).is_power_of_two();
        if !ok {
            return Err(Error::Config(format!(
                "final_res {} must be initial_res {} times a power of two",
                self.final_res, self.initial_res
            )));
        }
        if !self.iso.is_finite() {
            return Err(Error::Config("iso must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MiseOutput {
    pub mesh: TriMesh,
    /// Number of points passed to the query.
    pub evaluations: usize,
    /// Final-resolution grid handed to marching cubes.
    pub grid: ScalarGrid,
}

/// Coarse-to-fine extraction of the `cfg.iso` level set of `query` over the
/// cube `domain`.
///
/// Cells whose corners straddle the iso value, plus their face neighbors, are
/// split in two along every axis; only lattice points inside them are
/// queried. Other fine points take the value of their coarse ancestor.
/// Surface components thinner than one initial cell can be missed.
pub fn mise(mut query: impl FnMut(&[Vec3]) -> Result<Vec<f64>>, cfg: &MiseConfig, domain: &Aabb) -> Result<MiseOutput> {
    cfg.validate()?;
    let e = domain.extent();
    let side = e[0];
    if !(side > 0.0) || e.iter().any(|s| (s - side).abs() > 1e-9 * side) {
        return Err(Error::contract(format!("MISE domain must be a cube, got extent {e:?}")));
    }
    let mut evaluations = 0;
    let mut eval = |points: &[Vec3]| -> Result<Vec<f64>> {
        let v = query(points)?;
        if v.len() != points.len() {
            return Err(Error::dims("MISE query", &[v.len()], &[points.len()]));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("MISE query values"));
        }
        evaluations += points.len();
        Ok(v)
    };

    let mut res = cfg.initial_res;
    let dims = [res + 1; 3];
    let points: Vec<Vec3> = all_indices(dims)
        .map(|idx| lattice_point(domain.min, side / res as f64, idx))
        .collect();
    let mut grid = ScalarGrid::new(dims, eval(&points)?)?;
    let mut exact = vec![true; grid.values.len()];

    while res < cfg.final_res {
        let active = active_cells(&grid, res, cfg.iso);
        let fine_res = 2 * res;
        let fd = [fine_res + 1; 3];
        let mut need = vec![false; fd.iter().product()];
        for (c, _) in active.iter().enumerate().filter(|(_, a)| **a) {
            let ci = [c / (res * res), c / res % res, c % res];
            for di in 0..3 {
                for dj in 0..3 {
                    for dk in 0..3 {
                        let f = [2 * ci[0] + di, 2 * ci[1] + dj, 2 * ci[2] + dk];
                        need[(f[0] * fd[1] + f[1]) * fd[2] + f[2]] = true;
                    }
                }
            }
        }
        let mut values = Vec::with_capacity(need.len());
        let mut fine_exact = vec![false; need.len()];
        let mut pending = Vec::new();
        let spacing = side / fine_res as f64;
        for (flat, f) in all_indices(fd).enumerate() {
            let parent = grid.index([f[0] / 2, f[1] / 2, f[2] / 2]);
            let even = f.iter().all(|v| v % 2 == 0);
            values.push(grid.values[parent]);
            if even && exact[parent] {
                fine_exact[flat] = true;
            } else if need[flat] {
                pending.push(flat);
            }
        }
        let coords: Vec<Vec3> = pending
            .iter()
            .map(|&flat| lattice_point(domain.min, spacing, [flat / (fd[1] * fd[2]), flat / fd[2] % fd[1], flat % fd[2]]))
            .collect();
        if !coords.is_empty() {
            for (&flat, v) in pending.iter().zip(eval(&coords)?) {
                values[flat] = v;
                fine_exact[flat] = true;
            }
        }
        grid = ScalarGrid::new(fd, values)?;
        exact = fine_exact;
        res = fine_res;
    }
    let mesh = marching_cubes(&grid, cfg.iso, side / res as f64, domain.min)?;
    Ok(MiseOutput {
        mesh,
        evaluations,
        grid,
    })
}

fn all_indices(d: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
    (0..d[0]).flat_map(move |i| (0..d[1]).flat_map(move |j| (0..d[2]).map(move |k| [i, j, k])))
}

/// Cells straddling `iso`, dilated by their face neighbors.
fn active_cells(grid: &ScalarGrid, res: usize, iso: f64) -> Vec<bool> {
    let mut straddle = vec![false; res * res * res];
    for i in 0..res {
        for j in 0..res {
            for k in 0..res {
                let (mut lo, mut hi) = (false, false);
                for c in 0..8 {
                    let v = grid.get([i + (c & 1), j + (c >> 1 & 1), k + (c >> 2)]);
                    if v < iso {
                        lo = true;
                    } else {
                        hi = true;
                    }
                }
                straddle[(i * res + j) * res + k] = lo && hi;
            }
        }
    }
    let mut active = straddle.clone();
    for (c, _) in straddle.iter().enumerate().filter(|(_, s)| **s) {
        let ci = [c / (res * res), c / res % res, c % res];
        for a in 0..3 {
            for step in [-1i64, 1] {
                let n = ci[a] as i64 + step;
                if n < 0 || n >= res as i64 {
                    continue;
                }
                let mut nb = ci;
                nb[a] = n as usize;
                active[(nb[0] * res + nb[1]) * res + nb[2]] = true;
            }
        }
    }
    active
}
