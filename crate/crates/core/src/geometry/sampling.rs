use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::vec3::{self, Vec3};
use super::{Aabb, ShapeSpec};
use crate::error::{Error, Result};

/// Points with optional unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point cloud coordinates"));
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::dims("point cloud normals", &[points.len(), 3], &[n.len(), 3]));
            }
            if n.iter().any(|v| (vec3::norm(*v) - 1.0).abs() > 1e-9) {
                return Err(Error::contract("point cloud normals must be unit length"));
            }
        }
        Ok(Self { points, normals })
    }

    pub fn from_points(points: Vec<Vec3>) -> Result<Self> {
        Self::new(points, None)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.points.iter().copied())
    }
}

const PROJECTION_STEPS: usize = 20;
const GRADIENT_STEP: f64 = 1e-6;

/// Draws `n` points on the zero level set of `spec` together with their
/// normals: uniform candidates in a thin band around the surface are pulled
/// onto it by Newton steps along the numerical SDF gradient.
pub fn sample_surface(spec: &ShapeSpec, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::contract("sample_surface needs n >= 1"));
    }
    spec.validate()?;
    let bb = spec.bounding_box();
    let scale = bb.longest_side();
    if !(scale > 0.0) {
        return Err(Error::Degenerate("shape has an empty bounding box".into()));
    }
    let domain = bb.padded(0.05 * scale);
    let band = 0.02 * scale;
    let tol = 1e-6 * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let (mut projected, mut failed) = (0usize, 0usize);
    let max_candidates = 5_000 * n + 1_000_000;
    let mut candidates = 0usize;
    while points.len() < n {
        candidates += 1;
        if candidates > max_candidates {
            return Err(Error::Degenerate(format!(
                "found only {} of {n} surface points; the surface is empty or too thin",
                points.len()
            )));
        }
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = rng.gen_range(domain.min[a]..domain.max[a]);
        }
        if spec.sdf(p).abs() > band {
            continue;
        }
        projected += 1;
        match project(spec, p, tol, 1.1 * scale) {
            Some((q, normal)) => {
                points.push(q);
                normals.push(normal);
            }
            None => failed += 1,
        }
    }
    if failed * 100 > projected {
        return Err(Error::Degenerate(format!(
            "surface projection failed for {failed} of {projected} candidates"
        )));
    }
    PointCloud::new(points, Some(normals))
}

fn project(spec: &ShapeSpec, start: Vec3, tol: f64, reach: f64) -> Option<(Vec3, Vec3)> {
    let mut p = start;
    let mut d = spec.sdf(p);
    let d0 = d;
    let mut seen = Vec::with_capacity(PROJECTION_STEPS);
    for _ in 0..PROJECTION_STEPS {
        let g = spec.sdf_gradient(p, GRADIENT_STEP);
        let g2 = vec3::dot(g, g);
        if g2 < 1e-12 {
            break;
        }
        seen.push(vec3::normalize(g));
        let next = vec3::sub(p, vec3::scale(g, d / g2));
        let dn = spec.sdf(next);
        if dn.abs() <= tol {
            return finish(spec, next);
        }
        if dn.signum() != d.signum() {
            // Newton jumped across a crease of the CSG distance; the segment
            // brackets a zero, so bisect it.
            return bisect(spec, p, d, next, tol).and_then(|q| finish(spec, q));
        }
        p = next;
        d = dn;
    }
    // Near concave creases Newton zigzags between two surfaces and converges
    // only linearly. From the last iterate, march along the directions it
    // visited (their mean, then the 26 lattice directions) until the sign flips,
    // then bisect.
    let mean = seen.iter().fold([0.0; 3], |acc, g| vec3::add(acc, *g));
    let mut dirs: Vec<Vec3> = seen.into_iter().rev().collect();
    if vec3::norm(mean) > 1e-9 {
        dirs.insert(0, vec3::normalize(mean));
    }
    for i in (0..27).filter(|&i| i != 13) {
        let v = [(i % 3) as f64 - 1.0, (i / 3 % 3) as f64 - 1.0, (i / 9) as f64 - 1.0];
        dirs.push(vec3::normalize(v));
    }
    for origin in [(p, d), (start, d0)] {
        for dir in &dirs {
            if let Some(q) = march(spec, origin, *dir, tol, reach) {
                return finish(spec, q);
            }
        }
    }
    None
}

fn march(spec: &ShapeSpec, (o, d): (Vec3, f64), dir: Vec3, tol: f64, reach: f64) -> Option<Vec3> {
    let step = vec3::scale(dir, -d.signum());
    let mut t = d.abs().max(tol);
    while t <= reach {
        let q = vec3::add(o, vec3::scale(step, t));
        if spec.sdf(q).signum() != d.signum() {
            return bisect(spec, o, d, q, tol);
        }
        t *= 1.5;
    }
    None
}

fn bisect(spec: &ShapeSpec, mut a: Vec3, da: f64, mut b: Vec3, tol: f64) -> Option<Vec3> {
    for _ in 0..100 {
        let m = vec3::scale(vec3::add(a, b), 0.5);
        let dm = spec.sdf(m);
        if dm.abs() <= tol {
            return Some(m);
        }
        if dm.signum() == da.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    None
}

fn finish(spec: &ShapeSpec, p: Vec3) -> Option<(Vec3, Vec3)> {
    let normal = vec3::normalize(spec.sdf_gradient(p, GRADIENT_STEP));
    ((vec3::norm(normal) - 1.0).abs() <= 1e-9).then_some((p, normal))
}

/// `n` i.i.d. uniform points in `bbox`.
pub fn sample_uniform(bbox: &Aabb, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if bbox.is_degenerate() {
        return Err(Error::Degenerate("sample_uniform on a degenerate box".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(uniform_points(&mut rng, bbox, n))
}

pub(crate) fn uniform_points<R: Rng>(rng: &mut R, bbox: &Aabb, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            let mut p = [0.0; 3];
            for a in 0..3 {
                p[a] = rng.gen_range(bbox.min[a]..bbox.max[a]);
            }
            p
        })
        .collect()
}

/// Perturbs every coordinate with independent `N(0, sigma^2)` noise. The
/// output has no normals: noisy points are no longer on the surface.
pub fn add_noise(pc: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::contract(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = pc
        .points
        .iter()
        .map(|p| {
            let mut q = *p;
            for v in q.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sigma * z;
            }
            q
        })
        .collect();
    PointCloud::new(points, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_surface_samples_are_exact() {
        let c = [0.5, 0.5, 0.5];
        let s = ShapeSpec::sphere(c, 0.3);
        let pc = sample_surface(&s, 1000, 7).unwrap();
        assert_eq!(pc.len(), 1000);
        let normals = pc.normals.as_ref().unwrap();
        for (p, n) in pc.points.iter().zip(normals) {
            assert!(s.sdf(*p).abs() <= 1e-6);
            let analytic = vec3::normalize(vec3::sub(*p, c));
            let angle = vec3::dot(analytic, *n).clamp(-1.0, 1.0).acos();
            assert!(angle < 1e-4, "normal angle {angle}");
            assert!((vec3::norm(*n) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn csg_surface_samples_lie_on_surface() {
        let s = ShapeSpec::difference(vec![
            ShapeSpec::cuboid([0.5; 3], [0.3, 0.2, 0.25]),
            ShapeSpec::sphere([0.7, 0.5, 0.5], 0.15),
        ]);
        let pc = sample_surface(&s, 500, 3).unwrap();
        let scale = s.bounding_box().longest_side();
        assert!(pc.points.iter().all(|p| s.sdf(*p).abs() <= 1e-6 * scale));
    }

    #[test]
    fn uniform_samples_stay_in_box_and_are_seeded() {
        let bb = Aabb::new([-1.0, 0.0, 2.0], [1.0, 0.5, 3.0]);
        let a = sample_uniform(&bb, 10_000, 11).unwrap();
        assert!(a.iter().all(|p| bb.contains(*p)));
        assert_eq!(a, sample_uniform(&bb, 10_000, 11).unwrap());
        assert_ne!(a, sample_uniform(&bb, 10_000, 12).unwrap());
        // mean within 4 standard errors of the center on each axis
        let n = a.len() as f64;
        for ax in 0..3 {
            let len = bb.max[ax] - bb.min[ax];
            let mean = a.iter().map(|p| p[ax]).sum::<f64>() / n;
            let se = len / 12f64.sqrt() / n.sqrt();
            assert!((mean - bb.center()[ax]).abs() <= 4.0 * se);
        }
        assert!(sample_uniform(&Aabb::new([0.0; 3], [1.0, 0.0, 1.0]), 3, 0).is_err());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let pc = sample_surface(&ShapeSpec::sphere([0.5; 3], 0.3), 100, 1).unwrap();
        let same = add_noise(&pc, 0.0, 4).unwrap();
        assert_eq!(same.points, pc.points);
        assert!(same.normals.is_none());

        let base = PointCloud::from_points(vec![[0.0; 3]; 30_000]).unwrap();
        let noisy = add_noise(&base, 0.05, 9).unwrap();
        assert_eq!(noisy, add_noise(&base, 0.05, 9).unwrap());
        for ax in 0..3 {
            let vals: Vec<f64> = noisy.points.iter().map(|p| p[ax]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            let std = var.sqrt();
            assert!((0.0475..=0.0525).contains(&std), "axis {ax} std {std}");
        }
        assert!(add_noise(&base, -1.0, 0).is_err());
    }

    #[test]
    fn normals_must_be_unit() {
        assert!(PointCloud::new(vec![[0.0; 3]], Some(vec![[0.0, 0.0, 2.0]])).is_err());
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]], None).is_err());
    }
}
