use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{FieldSample, RadianceField, Rgb};
use crate::geometry::{ray_aabb_intersect, Aabb, Ray};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Point3<f64>, radius: f64 },
    Cuboid { aabb: Aabb },
    /// `min <= p[axis] <= max`, unbounded along the other two axes.
    Slab { axis: usize, min: f64, max: f64 },
}

impl Shape {
    fn contains(&self, p: &Point3<f64>) -> bool {
        match self {
            Shape::Sphere { center, radius } => (p - center).norm_squared() <= radius * radius,
            Shape::Cuboid { aabb } => aabb.contains(p),
            Shape::Slab { axis, min, max } => p[*axis] >= *min && p[*axis] <= *max,
        }
    }

    /// Parameter range where the (unbounded) line of `ray` is inside the
    /// shape. Ray bounds are ignored.
    pub fn ray_interval(&self, ray: &Ray) -> Option<(f64, f64)> {
        match self {
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - center;
                let b = ray.dir.dot(&oc);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some((-b - s, -b + s))
            }
            Shape::Cuboid { aabb } => {
                let line = ray.with_bounds(f64::NEG_INFINITY, f64::INFINITY);
                ray_aabb_intersect(&line, aabb).map(|iv| (iv.t_enter, iv.t_exit))
            }
            Shape::Slab { axis, min, max } => {
                let (o, d) = (ray.origin[*axis], ray.dir[*axis]);
                if d == 0.0 {
                    return (o >= *min && o <= *max).then_some((f64::NEG_INFINITY, f64::INFINITY));
                }
                let (a, b) = ((min - o) / d, (max - o) / d);
                Some((a.min(b), a.max(b)))
            }
        }
    }

    fn normal(&self, p: &Point3<f64>) -> Vector3<f64> {
        match self {
            Shape::Sphere { center, .. } => (p - center).try_normalize(1e-12).unwrap_or_else(Vector3::z),
            Shape::Cuboid { aabb } => {
                let mut best = (f64::INFINITY, Vector3::z());
                for i in 0..3 {
                    for (d, sign) in [(p[i] - aabb.min[i], -1.0), (aabb.max[i] - p[i], 1.0)] {
                        if d.abs() < best.0 {
                            let mut n = Vector3::zeros();
                            n[i] = sign;
                            best = (d.abs(), n);
                        }
                    }
                }
                best.1
            }
            Shape::Slab { axis, .. } => {
                let mut n = Vector3::zeros();
                n[*axis] = 1.0;
                n
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Solid,
    /// 3D checkerboard with `frequency` cells per scene unit.
    Checker { frequency: f64, alt: Rgb },
    /// Sinusoidal blend between base and `alt` along `axis`.
    Stripes { frequency: f64, axis: usize, alt: Rgb },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub density: f64,
    pub color: Rgb,
    #[serde(default = "solid")]
    pub texture: Texture,
}

fn solid() -> Texture {
    Texture::Solid
}

impl Primitive {
    pub fn new(shape: Shape, density: f64, color: Rgb) -> Self {
        Self { shape, density, color, texture: Texture::Solid }
    }

    pub fn with_texture(mut self, texture: Texture) -> Self {
        self.texture = texture;
        self
    }

    fn albedo(&self, p: &Point3<f64>) -> Rgb {
        match &self.texture {
            Texture::Solid => self.color,
            Texture::Checker { frequency, alt } => {
                let parity: i64 = (0..3).map(|i| (p[i] * frequency).floor() as i64).sum();
                if parity.rem_euclid(2) == 0 {
                    self.color
                } else {
                    *alt
                }
            }
            Texture::Stripes { frequency, axis, alt } => {
                let t = 0.5 + 0.5 * (std::f64::consts::TAU * frequency * p[*axis]).sin();
                self.color * (1.0 - t) + alt * t
            }
        }
    }
}

/// Union of textured primitives. Where primitives overlap the densest one
/// wins; ties go to the earlier primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticField {
    pub id: String,
    pub primitives: Vec<Primitive>,
    /// Lambertian-style tint strength `k`: color scales by `1 - k + k|d.n|`.
    #[serde(default)]
    pub view_tint: Option<f64>,
}

impl AnalyticField {
    pub fn new(id: impl Into<String>, primitives: Vec<Primitive>) -> Self {
        Self { id: id.into(), primitives, view_tint: None }
    }

    /// Constant medium, everywhere or inside `region`.
    pub fn homogeneous(id: impl Into<String>, sigma: f64, rgb: Rgb, region: Option<Aabb>) -> Self {
        let shape = match region {
            Some(aabb) => Shape::Cuboid { aabb },
            None => Shape::Slab { axis: 2, min: f64::NEG_INFINITY, max: f64::INFINITY },
        };
        Self::new(id, vec![Primitive::new(shape, sigma, rgb)])
    }

    /// Sorted parameters in `(t0, t1)` where some primitive boundary is
    /// crossed, bracketed by `t0` and `t1`. Density is constant between
    /// consecutive entries.
    pub fn breakpoints(&self, ray: &Ray, t0: f64, t1: f64) -> Vec<f64> {
        let mut ts = vec![t0, t1];
        for p in &self.primitives {
            if let Some((a, b)) = p.shape.ray_interval(ray) {
                ts.extend([a, b].into_iter().filter(|t| *t > t0 && *t < t1));
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Checks the construction invariants (non-negative densities, colors in
    /// the unit cube, positive texture frequencies).
    pub fn check(&self) -> Result<(), String> {
        let in_unit = |c: &Rgb| c.iter().all(|v| (0.0..=1.0).contains(v));
        for (i, p) in self.primitives.iter().enumerate() {
            if !(p.density >= 0.0 && p.density.is_finite()) {
                return Err(format!("primitive {i}: density must be finite and >= 0"));
            }
            if !in_unit(&p.color) {
                return Err(format!("primitive {i}: color outside [0,1]"));
            }
            match &p.texture {
                Texture::Solid => {}
                Texture::Checker { frequency, alt } | Texture::Stripes { frequency, alt, .. } => {
                    if !(*frequency > 0.0) {
                        return Err(format!("primitive {i}: texture frequency must be > 0"));
                    }
                    if !in_unit(alt) {
                        return Err(format!("primitive {i}: texture color outside [0,1]"));
                    }
                }
            }
        }
        Ok(())
    }
}

impl RadianceField for AnalyticField {
    fn query(&self, p: &Point3<f64>, dir: &Vector3<f64>) -> FieldSample {
        let mut best: Option<&Primitive> = None;
        for prim in &self.primitives {
            if prim.shape.contains(p) && best.is_none_or(|b| prim.density > b.density) {
                best = Some(prim);
            }
        }
        let Some(prim) = best else { return FieldSample::EMPTY };
        let mut rgb = prim.albedo(p);
        if let Some(k) = self.view_tint {
            let n = prim.shape.normal(p);
            rgb *= 1.0 - k + k * dir.dot(&n).abs();
        }
        FieldSample { sigma: prim.density, rgb: rgb.map(|c| c.clamp(0.0, 1.0)) }
    }

    fn domain(&self) -> Option<Aabb> {
        None
    }

    fn field_id(&self) -> &str {
        &self.id
    }
}
