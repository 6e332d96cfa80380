//! Analytic CSG shapes and point-cloud utilities.
//!
//! Shapes provide exact occupancy ground truth (1 inside, 0 outside) and
//! signed distances; point clouds are sampled from them, perturbed with
//! Gaussian noise, and normalized into the padded unit cube the network
//! operates in.

mod normalize;
mod random;
mod sampling;
mod shape;
pub mod vec3;

pub use normalize::{normalize_to_unit_cube, DomainTransform, DEFAULT_PADDING};
pub use random::{random_shape, ShapeGenConfig};
pub use sampling::{add_noise, sample_surface, sample_uniform, PointCloud};
pub(crate) use sampling::uniform_points;
pub use shape::{RigidTransform, ShapeNode, ShapeSpec};
pub use vec3::Vec3;

/// Axis-aligned box `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new([0.0; 3], [1.0; 3])
    }

    pub fn around(center: Vec3, half: Vec3) -> Self {
        Self::new(vec3::sub(center, half), vec3::add(center, half))
    }

    pub fn from_points(points: impl IntoIterator<Item = Vec3>) -> Self {
        let mut bb = Self::new([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for p in points {
            for a in 0..3 {
                bb.min[a] = bb.min[a].min(p[a]);
                bb.max[a] = bb.max[a].max(p[a]);
            }
        }
        bb
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = out.min[a].min(o.min[a]);
            out.max[a] = out.max[a].max(o.max[a]);
        }
        out
    }

    /// Intersection; an empty overlap collapses to a point-sized box.
    pub fn intersect(&self, o: &Aabb) -> Aabb {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = out.min[a].max(o.min[a]);
            out.max[a] = out.max[a].min(o.max[a]).max(out.min[a]);
        }
        out
    }

    pub fn extent(&self) -> Vec3 {
        vec3::sub(self.max, self.min)
    }

    pub fn center(&self) -> Vec3 {
        vec3::scale(vec3::add(self.min, self.max), 0.5)
    }

    pub fn longest_side(&self) -> f64 {
        let e = self.extent();
        e[0].max(e[1]).max(e[2])
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb::new(vec3::sub(self.min, [pad; 3]), vec3::add(self.max, [pad; 3]))
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [[0.0; 3]; 8];
        for (i, c) in out.iter_mut().enumerate() {
            for a in 0..3 {
                c[a] = if (i >> a) & 1 == 1 { self.max[a] } else { self.min[a] };
            }
        }
        out
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|a| !(self.max[a] > self.min[a]) || !self.min[a].is_finite() || !self.max[a].is_finite())
    }
}
