//! Surface metrics between a reconstruction and ground truth: Chamfer
//! distance, normal consistency and F-score.
//!
//! Chamfer distance is the mean of the two directed mean Euclidean
//! nearest-neighbor distances; normal consistency uses the absolute cosine,
//! so global orientation does not matter.

mod kdtree;

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, vec3, PointCloud, ShapeSpec, Vec3};
use crate::meshing::TriMesh;

pub use kdtree::KdTree;

/// Default F-score threshold in unit-cube coordinates.
pub const DEFAULT_TAU: f64 = 0.01;

/// Points sampled on a surface with unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSurface {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl SampledSurface {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::dims("SampledSurface", &[points.len()], &[normals.len()]));
        }
        if normals.iter().any(|n| (vec3::norm(*n) - 1.0).abs() > 1e-9) {
            return Err(Error::contract("surface normals must be unit length"));
        }
        Ok(Self { points, normals })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `f` to the points and `g` to the normals.
    pub fn map(&self, f: impl Fn(Vec3) -> Vec3, g: impl Fn(Vec3) -> Vec3) -> Self {
        Self {
            points: self.points.iter().map(|p| f(*p)).collect(),
            normals: self.normals.iter().map(|n| vec3::normalize(g(*n))).collect(),
        }
    }
}

/// `n` points drawn area-uniformly from `mesh`, with face normals.
pub fn sample_mesh(mesh: &TriMesh, n: usize, seed: u64) -> Result<SampledSurface> {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let pick = WeightedIndex::new(&areas)
        .map_err(|_| Error::contract("cannot sample a mesh without a face of positive area"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let f = rng.sample(&pick);
        let [a, b, c] = mesh.corners(f);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        let (u, v) = (1.0 - s, s * (1.0 - r2));
        let w = 1.0 - u - v;
        points.push([0, 1, 2].map(|k| u * a[k] + v * b[k] + w * c[k]));
        normals.push(vec3::normalize(mesh.face_cross(f)));
    }
    SampledSurface::new(points, normals)
}

/// `n` points on an analytic shape with its gradient normals.
pub fn sample_shape(spec: &ShapeSpec, n: usize, seed: u64) -> Result<SampledSurface> {
    let PointCloud { points, normals } = sample_surface(spec, n, seed)?;
    let normals = normals.ok_or_else(|| Error::contract("shape sampling returned no normals"))?;
    SampledSurface::new(points, normals)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub cd: f64,
    pub nc: f64,
    pub fs_tau: f64,
    pub fs_2tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tau: f64,
    #[serde(flatten)]
    pub raw: Scores,
    /// The same scores times 100, the scale results tables usually list.
    pub paper_scale: Scores,
}

impl MetricsReport {
    pub fn new(tau: f64, raw: Scores) -> Self {
        let paper_scale = Scores {
            cd: raw.cd * 100.0,
            nc: raw.nc * 100.0,
            fs_tau: raw.fs_tau * 100.0,
            fs_2tau: raw.fs_2tau * 100.0,
        };
        Self { tau, raw, paper_scale }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Distance to and normal agreement with the nearest target point, for every
/// source point.
struct Directed {
    dist: Vec<f64>,
    cos: Vec<f64>,
}

fn directed(src: &SampledSurface, dst: &SampledSurface, tree: &KdTree) -> Directed {
    let mut dist = Vec::with_capacity(src.len());
    let mut cos = Vec::with_capacity(src.len());
    for (p, n) in src.points.iter().zip(&src.normals) {
        let (j, d2) = tree.nearest(*p).expect("non-empty target");
        dist.push(d2.sqrt());
        cos.push(vec3::dot(*n, dst.normals[j]).abs().min(1.0));
    }
    Directed { dist, cos }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fscore(a: &[f64], b: &[f64], t: f64) -> f64 {
    let p = a.iter().filter(|d| **d <= t).count() as f64 / a.len() as f64;
    let r = b.iter().filter(|d| **d <= t).count() as f64 / b.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn compute_metrics(pred: &SampledSurface, gt: &SampledSurface, tau: f64) -> Result<MetricsReport> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::contract(format!("tau must be positive, got {tau}")));
    }
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::contract("metrics need non-empty point sets"));
    }
    let to_gt = directed(pred, gt, &KdTree::new(&gt.points));
    let to_pred = directed(gt, pred, &KdTree::new(&pred.points));
    let raw = Scores {
        cd: 0.5 * (mean(&to_gt.dist) + mean(&to_pred.dist)),
        nc: 0.5 * (mean(&to_gt.cos) + mean(&to_pred.cos)),
        fs_tau: fscore(&to_gt.dist, &to_pred.dist, tau),
        fs_2tau: fscore(&to_gt.dist, &to_pred.dist, 2.0 * tau),
    };
    Ok(MetricsReport::new(tau, raw))
}

/// Chamfer distance only (cheaper to read than a full report).
pub fn chamfer(pred: &SampledSurface, gt: &SampledSurface) -> Result<f64> {
    Ok(compute_metrics(pred, gt, DEFAULT_TAU)?.raw.cd)
}
