use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::vec3::{self, Vec3};
use super::{RigidTransform, ShapeSpec};
use crate::error::{Error, Result};

/// Bounds for [`random_shape`]. Lengths are in unit-cube units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeGenConfig {
    pub min_primitives: usize,
    pub max_primitives: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Chance that the last primitive is subtracted instead of added.
    pub difference_probability: f64,
    pub padding: f64,
    /// Smallest accepted fraction of the unit cube that the solid occupies.
    pub min_volume_fraction: f64,
    pub max_retries: usize,
}

impl Default for ShapeGenConfig {
    fn default() -> Self {
        Self {
            min_primitives: 1,
            max_primitives: 4,
            min_radius: 0.1,
            max_radius: 0.35,
            difference_probability: 0.25,
            padding: 0.05,
            min_volume_fraction: 0.01,
            max_retries: 200,
        }
    }
}

impl ShapeGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("shape generator: {m}")));
        if self.min_primitives == 0 || self.min_primitives > self.max_primitives {
            return bad("need 1 <= min_primitives <= max_primitives");
        }
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius && self.max_radius < 0.5) {
            return bad("need 0 < min_radius <= max_radius < 0.5");
        }
        if !(0.0..=1.0).contains(&self.difference_probability) {
            return bad("difference_probability must lie in [0, 1]");
        }
        if !(0.0..0.5).contains(&self.padding) {
            return bad("padding must lie in [0, 0.5)");
        }
        if !(0.0..1.0).contains(&self.min_volume_fraction) || self.max_retries == 0 {
            return bad("need min_volume_fraction in [0, 1) and max_retries >= 1");
        }
        Ok(())
    }
}

/// Deterministic random CSG solid that fits inside `[padding, 1 - padding]^3`.
pub fn random_shape(seed: u64, config: &ShapeGenConfig) -> Result<ShapeSpec> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..config.max_retries {
        let spec = fit_inside(draw(&mut rng, config), config.padding);
        if spec.validate().is_ok() && volume_fraction(&spec) >= config.min_volume_fraction.max(1e-4) {
            return Ok(spec);
        }
    }
    Err(Error::Degenerate(format!(
        "no valid shape after {} attempts for seed {seed}",
        config.max_retries
    )))
}

fn draw(rng: &mut ChaCha8Rng, cfg: &ShapeGenConfig) -> ShapeSpec {
    let count = rng.gen_range(cfg.min_primitives..=cfg.max_primitives);
    let mut prims: Vec<ShapeSpec> = (0..count).map(|_| primitive(rng, cfg)).collect();
    if count >= 2 && rng.gen_bool(cfg.difference_probability) {
        let cutter = prims.pop().expect("count >= 2");
        let body = if prims.len() == 1 {
            prims.pop().expect("one left")
        } else {
            ShapeSpec::union(prims)
        };
        ShapeSpec::difference(vec![body, cutter])
    } else if count == 1 {
        prims.pop().expect("count == 1")
    } else {
        ShapeSpec::union(prims)
    }
}

fn primitive(rng: &mut ChaCha8Rng, cfg: &ShapeGenConfig) -> ShapeSpec {
    let mut radius = || rng.gen_range(cfg.min_radius..=cfg.max_radius);
    let r0 = radius();
    let r1 = radius();
    let r2 = radius();
    let position: Vec3 = [
        rng.gen_range(0.3..0.7),
        rng.gen_range(0.3..0.7),
        rng.gen_range(0.3..0.7),
    ];
    let kind = rng.gen_range(0..3);
    let axis = random_direction(rng);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let pose = RigidTransform::from_axis_angle(axis, angle, position);
    match kind {
        0 => ShapeSpec::sphere(position, r0),
        1 => ShapeSpec::cuboid([0.0; 3], [r0, r1, r2]).with_transform(pose),
        _ => {
            let minor = r0 * rng.gen_range(0.25..0.5);
            ShapeSpec::torus([0.0; 3], r0, minor).with_transform(pose)
        }
    }
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v: Vec3 = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        if vec3::norm(v) > 1e-6 {
            return vec3::normalize(v);
        }
    }
}

/// Shrinks (never grows) and recenters so the conservative bounding box lies
/// in the padded cube; the surface is inside its bounding box, hence inside too.
fn fit_inside(spec: ShapeSpec, padding: f64) -> ShapeSpec {
    let bb = spec.bounding_box();
    let s = ((1.0 - 2.0 * padding) / bb.longest_side()).min(1.0);
    let scaled = spec.scaled(s);
    let c = scaled.bounding_box().center();
    scaled.translated(vec3::sub([0.5; 3], c))
}

fn volume_fraction(spec: &ShapeSpec) -> f64 {
    const N: usize = 20;
    let mut inside = 0usize;
    for i in 0..N {
        for j in 0..N {
            for k in 0..N {
                let p = [
                    (i as f64 + 0.5) / N as f64,
                    (j as f64 + 0.5) / N as f64,
                    (k as f64 + 0.5) / N as f64,
                ];
                inside += spec.occupancy(p) as usize;
            }
        }
    }
    inside as f64 / (N * N * N) as f64
}
