use super::vec3::{self, Vec3};
use super::PointCloud;
use crate::error::{Error, Result};

pub const DEFAULT_PADDING: f64 = 0.05;

/// Uniform scale plus translation between world coordinates and the padded
/// unit cube: `cube = scale * (world - center) + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainTransform {
    pub scale: f64,
    pub center: Vec3,
}

impl DomainTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            center: [0.5; 3],
        }
    }

    pub fn to_cube(&self, p: Vec3) -> Vec3 {
        let d = vec3::sub(p, self.center);
        [
            self.scale * d[0] + 0.5,
            self.scale * d[1] + 0.5,
            self.scale * d[2] + 0.5,
        ]
    }

    pub fn to_world(&self, q: Vec3) -> Vec3 {
        [
            (q[0] - 0.5) / self.scale + self.center[0],
            (q[1] - 0.5) / self.scale + self.center[1],
            (q[2] - 0.5) / self.scale + self.center[2],
        ]
    }
}

/// Fits the tight bounding box of `pc`, centered, into `[padding, 1 - padding]^3`
/// preserving aspect ratio; the longest axis spans exactly `1 - 2 padding`.
pub fn normalize_to_unit_cube(pc: &PointCloud, padding: f64) -> Result<(PointCloud, DomainTransform)> {
    if !(0.0..0.5).contains(&padding) {
        return Err(Error::contract(format!("padding must lie in [0, 0.5), got {padding}")));
    }
    if pc.is_empty() {
        return Err(Error::contract("cannot normalize an empty point cloud"));
    }
    let bb = pc.bounds();
    let longest = bb.longest_side();
    if !(longest > 0.0) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let transform = DomainTransform {
        scale: (1.0 - 2.0 * padding) / longest,
        center: bb.center(),
    };
    let lo = padding;
    let hi = 1.0 - padding;
    let points = pc
        .points
        .iter()
        .map(|&p| {
            let q = transform.to_cube(p);
            // rounding can leave the extreme points a few ulps outside
            [q[0].clamp(lo, hi), q[1].clamp(lo, hi), q[2].clamp(lo, hi)]
        })
        .collect();
    Ok((PointCloud::new(points, pc.normals.clone())?, transform))
}
