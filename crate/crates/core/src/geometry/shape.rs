use serde::{Deserialize, Serialize};

use super::vec3::{self, Vec3};
use super::Aabb;
use crate::error::{Error, Result};

/// Rotation followed by translation, mapping local coordinates to world
/// coordinates: `world = rotation * local + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let [x, y, z] = vec3::normalize(axis);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let rotation = [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ];
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }

    pub fn apply_inverse(&self, p: Vec3) -> Vec3 {
        let d = vec3::sub(p, self.translation);
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::contract("transform rotation is not orthonormal"));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if det <= 0.0 || self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("transform must be a proper rigid motion"));
        }
        Ok(())
    }
}

/// Analytic constructive-solid-geometry shape: an exact signed-distance and
/// occupancy oracle. Negative distance (occupancy 1) means inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeDoc", into = "ShapeDoc")]
pub struct ShapeSpec {
    pub node: ShapeNode,
    pub transform: Option<RigidTransform>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeNode {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    /// Ring around the local z axis.
    Torus {
        center: Vec3,
        major_radius: f64,
        minor_radius: f64,
    },
    Union(Vec<ShapeSpec>),
    Intersection(Vec<ShapeSpec>),
    /// First child minus all remaining children.
    Difference(Vec<ShapeSpec>),
}

impl ShapeSpec {
    fn leaf(node: ShapeNode) -> Self {
        Self {
            node,
            transform: None,
        }
    }

    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Self::leaf(ShapeNode::Sphere { center, radius })
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3) -> Self {
        Self::leaf(ShapeNode::Box {
            center,
            half_extents,
        })
    }

    pub fn torus(center: Vec3, major_radius: f64, minor_radius: f64) -> Self {
        Self::leaf(ShapeNode::Torus {
            center,
            major_radius,
            minor_radius,
        })
    }

    pub fn union(children: Vec<ShapeSpec>) -> Self {
        Self::leaf(ShapeNode::Union(children))
    }

    pub fn intersection(children: Vec<ShapeSpec>) -> Self {
        Self::leaf(ShapeNode::Intersection(children))
    }

    pub fn difference(children: Vec<ShapeSpec>) -> Self {
        Self::leaf(ShapeNode::Difference(children))
    }

    pub fn with_transform(mut self, transform: RigidTransform) -> Self {
        self.transform = Some(transform);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = &self.transform {
            t.validate()?;
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.node {
            ShapeNode::Sphere { center, radius } => {
                if !(finite(center) && *radius > 0.0 && radius.is_finite()) {
                    return Err(Error::contract("sphere radius must be positive"));
                }
            }
            ShapeNode::Box {
                center,
                half_extents,
            } => {
                if !(finite(center) && finite(half_extents) && half_extents.iter().all(|h| *h > 0.0)) {
                    return Err(Error::contract("box half extents must be positive"));
                }
            }
            ShapeNode::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                if !(finite(center) && *minor_radius > 0.0 && minor_radius < major_radius && major_radius.is_finite()) {
                    return Err(Error::contract("torus needs 0 < minor_radius < major_radius"));
                }
            }
            ShapeNode::Union(c) | ShapeNode::Intersection(c) | ShapeNode::Difference(c) => {
                if c.is_empty() {
                    return Err(Error::contract("boolean node without children"));
                }
                c.iter().try_for_each(ShapeSpec::validate)?;
            }
        }
        Ok(())
    }

    /// Signed distance: exact for primitives, a sign-exact bound for boolean nodes.
    pub fn sdf(&self, p: Vec3) -> f64 {
        let p = match &self.transform {
            Some(t) => t.apply_inverse(p),
            None => p,
        };
        match &self.node {
            ShapeNode::Sphere { center, radius } => vec3::norm(vec3::sub(p, *center)) - radius,
            ShapeNode::Box {
                center,
                half_extents,
            } => {
                let d = vec3::sub(p, *center);
                let q = [
                    d[0].abs() - half_extents[0],
                    d[1].abs() - half_extents[1],
                    d[2].abs() - half_extents[2],
                ];
                let outside = vec3::norm([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            ShapeNode::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                let d = vec3::sub(p, *center);
                let ring = d[0].hypot(d[1]) - major_radius;
                ring.hypot(d[2]) - minor_radius
            }
            ShapeNode::Union(c) => c.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min),
            ShapeNode::Intersection(c) => c.iter().map(|s| s.sdf(p)).fold(f64::NEG_INFINITY, f64::max),
            ShapeNode::Difference(c) => {
                let rest = c[1..].iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min);
                c[0].sdf(p).max(-rest)
            }
        }
    }

    /// 1 inside, 0 outside.
    pub fn occupancy(&self, p: Vec3) -> bool {
        self.sdf(p) < 0.0
    }

    /// Central-difference gradient of [`Self::sdf`].
    pub fn sdf_gradient(&self, p: Vec3, h: f64) -> Vec3 {
        let mut g = [0.0; 3];
        for (a, ga) in g.iter_mut().enumerate() {
            let mut hi = p;
            let mut lo = p;
            hi[a] += h;
            lo[a] -= h;
            *ga = (self.sdf(hi) - self.sdf(lo)) / (2.0 * h);
        }
        g
    }

    /// Conservative axis-aligned bounds of the solid.
    pub fn bounding_box(&self) -> Aabb {
        let local = match &self.node {
            ShapeNode::Sphere { center, radius } => Aabb::around(*center, [*radius; 3]),
            ShapeNode::Box {
                center,
                half_extents,
            } => Aabb::around(*center, *half_extents),
            ShapeNode::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                let r = major_radius + minor_radius;
                Aabb::around(*center, [r, r, *minor_radius])
            }
            ShapeNode::Union(c) => c
                .iter()
                .map(ShapeSpec::bounding_box)
                .reduce(|a, b| a.union(&b))
                .expect("validated non-empty"),
            ShapeNode::Intersection(c) => c
                .iter()
                .map(ShapeSpec::bounding_box)
                .reduce(|a, b| a.intersect(&b))
                .expect("validated non-empty"),
            ShapeNode::Difference(c) => c[0].bounding_box(),
        };
        match &self.transform {
            Some(t) => Aabb::from_points(local.corners().iter().map(|&c| t.apply(c))),
            None => local,
        }
    }

    /// The same solid scaled uniformly about the origin.
    pub fn scaled(&self, s: f64) -> Self {
        let sc = |v: Vec3| vec3::scale(v, s);
        let node = match &self.node {
            ShapeNode::Sphere { center, radius } => ShapeNode::Sphere {
                center: sc(*center),
                radius: radius * s,
            },
            ShapeNode::Box {
                center,
                half_extents,
            } => ShapeNode::Box {
                center: sc(*center),
                half_extents: sc(*half_extents),
            },
            ShapeNode::Torus {
                center,
                major_radius,
                minor_radius,
            } => ShapeNode::Torus {
                center: sc(*center),
                major_radius: major_radius * s,
                minor_radius: minor_radius * s,
            },
            ShapeNode::Union(c) => ShapeNode::Union(c.iter().map(|x| x.scaled(s)).collect()),
            ShapeNode::Intersection(c) => ShapeNode::Intersection(c.iter().map(|x| x.scaled(s)).collect()),
            ShapeNode::Difference(c) => ShapeNode::Difference(c.iter().map(|x| x.scaled(s)).collect()),
        };
        let transform = self.transform.map(|t| RigidTransform {
            translation: sc(t.translation),
            ..t
        });
        Self { node, transform }
    }

    /// The same solid moved by `offset`.
    pub fn translated(&self, offset: Vec3) -> Self {
        let mut out = self.clone();
        let t = out.transform.get_or_insert_with(RigidTransform::identity);
        t.translation = vec3::add(t.translation, offset);
        out
    }

    pub fn primitive_count(&self) -> usize {
        match &self.node {
            ShapeNode::Union(c) | ShapeNode::Intersection(c) | ShapeNode::Difference(c) => {
                c.iter().map(ShapeSpec::primitive_count).sum()
            }
            _ => 1,
        }
    }

    pub fn depth(&self) -> usize {
        match &self.node {
            ShapeNode::Union(c) | ShapeNode::Intersection(c) | ShapeNode::Difference(c) => {
                1 + c.iter().map(ShapeSpec::depth).max().unwrap_or(0)
            }
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// On-disk form: `{type, params, children, transform}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeDoc {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    params: ShapeParams,
    #[serde(default)]
    children: Vec<ShapeDoc>,
    #[serde(default)]
    transform: Option<RigidTransform>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    half_extents: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    major_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    minor_radius: Option<f64>,
}

impl From<ShapeSpec> for ShapeDoc {
    fn from(s: ShapeSpec) -> Self {
        let mut params = ShapeParams::default();
        let mut children = Vec::new();
        let kind = match s.node {
            ShapeNode::Sphere { center, radius } => {
                params.center = Some(center);
                params.radius = Some(radius);
                "sphere"
            }
            ShapeNode::Box {
                center,
                half_extents,
            } => {
                params.center = Some(center);
                params.half_extents = Some(half_extents);
                "box"
            }
            ShapeNode::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                params.center = Some(center);
                params.major_radius = Some(major_radius);
                params.minor_radius = Some(minor_radius);
                "torus"
            }
            ShapeNode::Union(c) => {
                children = c;
                "union"
            }
            ShapeNode::Intersection(c) => {
                children = c;
                "intersection"
            }
            ShapeNode::Difference(c) => {
                children = c;
                "difference"
            }
        };
        ShapeDoc {
            kind: kind.to_string(),
            params,
            children: children.into_iter().map(ShapeDoc::from).collect(),
            transform: s.transform,
        }
    }
}

impl TryFrom<ShapeDoc> for ShapeSpec {
    type Error = Error;

    fn try_from(doc: ShapeDoc) -> Result<Self> {
        let p = &doc.params;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::contract(format!("{} requires params.{name}", doc.kind)))
        };
        let center = p.center.unwrap_or([0.0; 3]);
        let primitive = matches!(doc.kind.as_str(), "sphere" | "box" | "torus");
        if primitive && !doc.children.is_empty() {
            return Err(Error::contract(format!("{} cannot have children", doc.kind)));
        }
        let children = || -> Result<Vec<ShapeSpec>> { doc.children.iter().cloned().map(ShapeSpec::try_from).collect() };
        let node = match doc.kind.as_str() {
            "sphere" => ShapeNode::Sphere {
                center,
                radius: need(p.radius, "radius")?,
            },
            "box" => ShapeNode::Box {
                center,
                half_extents: p
                    .half_extents
                    .ok_or_else(|| Error::contract("box requires params.half_extents"))?,
            },
            "torus" => ShapeNode::Torus {
                center,
                major_radius: need(p.major_radius, "major_radius")?,
                minor_radius: need(p.minor_radius, "minor_radius")?,
            },
            "union" => ShapeNode::Union(children()?),
            "intersection" => ShapeNode::Intersection(children()?),
            "difference" => ShapeNode::Difference(children()?),
            other => return Err(Error::contract(format!("unknown shape type `{other}`"))),
        };
        let spec = ShapeSpec {
            node,
            transform: doc.transform,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_anchor_values() {
        let s = ShapeSpec::sphere([0.0; 3], 0.3);
        assert!((s.sdf([0.0; 3]) + 0.3).abs() < 1e-15);
        assert!(s.occupancy([0.0; 3]));
        assert_eq!(s.sdf([0.3, 0.0, 0.0]), 0.0);
        assert!(!s.occupancy([0.3, 0.0, 0.0]));
    }

    #[test]
    fn union_is_min_of_children() {
        let a = ShapeSpec::sphere([0.2, 0.5, 0.5], 0.15);
        let b = ShapeSpec::cuboid([0.7, 0.5, 0.5], [0.1, 0.2, 0.1]);
        let u = ShapeSpec::union(vec![a.clone(), b.clone()]);
        for q in [[0.0, 0.0, 0.0], [0.2, 0.5, 0.55], [0.75, 0.4, 0.5], [0.45, 0.5, 0.5]] {
            assert_eq!(u.sdf(q), a.sdf(q).min(b.sdf(q)));
        }
    }

    #[test]
    fn box_and_torus_distances() {
        let b = ShapeSpec::cuboid([0.0; 3], [1.0, 2.0, 3.0]);
        assert!((b.sdf([2.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((b.sdf([2.0, 3.0, 0.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert!((b.sdf([0.0; 3]) + 1.0).abs() < 1e-15);
        let t = ShapeSpec::torus([0.0; 3], 1.0, 0.25);
        assert!((t.sdf([1.0, 0.0, 0.0]) + 0.25).abs() < 1e-15);
        assert!((t.sdf([0.0; 3]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn transform_moves_the_solid() {
        let t = RigidTransform::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2, [1.0, 0.0, 0.0]);
        let b = ShapeSpec::cuboid([0.0; 3], [0.5, 0.1, 0.1]).with_transform(t);
        // the long axis now points along y around x = 1
        assert!(b.occupancy([1.0, 0.4, 0.0]));
        assert!(!b.occupancy([1.4, 0.0, 0.0]));
        let p = [0.3, -0.2, 0.9];
        let back = t.apply_inverse(t.apply(p));
        assert!(vec3::norm(vec3::sub(back, p)) < 1e-15);
    }

    #[test]
    fn scaling_and_translation_preserve_shape() {
        let s = ShapeSpec::difference(vec![
            ShapeSpec::cuboid([0.1, 0.0, 0.0], [0.3, 0.3, 0.3]),
            ShapeSpec::sphere([0.2, 0.1, 0.0], 0.2).with_transform(RigidTransform::translation([0.05, 0.0, 0.0])),
        ]);
        let scaled = s.scaled(2.0).translated([1.0, 1.0, 1.0]);
        for q in [[0.0, 0.0, 0.0], [0.3, 0.1, 0.1], [-0.15, 0.2, -0.1]] {
            let q2 = vec3::add(vec3::scale(q, 2.0), [1.0, 1.0, 1.0]);
            assert!((scaled.sdf(q2) - 2.0 * s.sdf(q)).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let s = ShapeSpec::union(vec![
            ShapeSpec::sphere([0.5; 3], 0.2),
            ShapeSpec::torus([0.5, 0.5, 0.4], 0.2, 0.05)
                .with_transform(RigidTransform::from_axis_angle([1.0, 1.0, 0.0], 0.7, [0.0, 0.1, 0.0])),
        ]);
        let text = s.to_json().unwrap();
        assert!(text.contains("\"type\": \"union\""));
        assert_eq!(ShapeSpec::from_json(&text).unwrap(), s);

        let bad = r#"{"type":"torus","params":{"center":[0,0,0],"major_radius":0.1,"minor_radius":0.2}}"#;
        assert!(ShapeSpec::from_json(bad).is_err());
        let bad = r#"{"type":"blob","params":{}}"#;
        assert!(ShapeSpec::from_json(bad).is_err());
        let bad = r#"{"type":"sphere","params":{"radius":-1}}"#;
        assert!(ShapeSpec::from_json(bad).is_err());
    }

    #[test]
    fn bounding_box_contains_interior_samples() {
        let s = ShapeSpec::torus([0.1, 0.2, 0.3], 0.3, 0.1)
            .with_transform(RigidTransform::from_axis_angle([0.3, 1.0, 0.2], 1.1, [0.5, 0.5, 0.5]));
        let bb = s.bounding_box();
        let n = 40;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let q = [
                        -0.5 + 2.0 * i as f64 / n as f64,
                        -0.5 + 2.0 * j as f64 / n as f64,
                        -0.5 + 2.0 * k as f64 / n as f64,
                    ];
                    if s.occupancy(q) {
                        assert!(bb.contains(q));
                    }
                }
            }
        }
    }
}
