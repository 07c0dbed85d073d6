//! Rays, axis-aligned boxes and camera ray generation.
//!
//! All boxes are closed: a point lying exactly on a face is inside. Poses
//! follow the COLMAP convention (world to camera), so the camera center is
//! `-Rᵀt` and camera-frame directions are rotated to world with `Rᵀ`.

use nalgebra::{Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sfm::{CameraIntrinsics, ViewRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    /// Builds a box from two corners, sorting each axis.
    pub fn new(a: Point3<f64>, b: Point3<f64>) -> Self {
        Self {
            min: Point3::new(a.x.min(b.x), a.y.min(b.y), a.z.min(b.z)),
            max: Point3::new(a.x.max(b.x), a.y.max(b.y), a.z.max(b.z)),
        }
    }

    pub fn from_center_half_extent(center: Point3<f64>, half: Vector3<f64>) -> Self {
        Self::new(center - half, center + half)
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] <= self.max[i])
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn max_extent(&self) -> f64 {
        self.extent().max()
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    /// Grows the box by `margin` on every side.
    pub fn expanded(&self, margin: f64) -> Self {
        let m = Vector3::repeat(margin);
        Self::new(self.min - m, self.max + m)
    }
}

pub fn aabb_center(aabb: &Aabb) -> Point3<f64> {
    aabb.center()
}

pub fn aabb_diagonal(aabb: &Aabb) -> f64 {
    aabb.diagonal()
}

pub fn point_in_aabb(p: &Point3<f64>, aabb: &Aabb) -> bool {
    aabb.contains(p)
}

/// Closed parameter range along a ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub t_enter: f64,
    pub t_exit: f64,
}

impl Interval {
    pub fn new(t_enter: f64, t_exit: f64) -> Self {
        debug_assert!(t_enter <= t_exit, "interval [{t_enter}, {t_exit}]");
        Self { t_enter, t_exit }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_enter && t <= self.t_exit
    }

    pub fn length(&self) -> f64 {
        self.t_exit - self.t_enter
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.t_enter.max(other.t_enter);
        let hi = self.t_exit.min(other.t_exit);
        (lo <= hi).then(|| Interval::new(lo, hi))
    }
}

/// `r(t) = origin + t * dir` restricted to `[t_near, t_far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub dir: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// Normalizes `dir`.
    pub fn new(origin: Point3<f64>, dir: Vector3<f64>, t_near: f64, t_far: f64) -> Self {
        debug_assert!(t_near >= 0.0 && t_near < t_far, "ray bounds [{t_near}, {t_far}]");
        Self {
            origin,
            dir: dir.normalize(),
            t_near,
            t_far,
        }
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }

    pub fn with_bounds(&self, t_near: f64, t_far: f64) -> Self {
        Self {
            t_near,
            t_far,
            ..*self
        }
    }

    pub fn bounds(&self) -> Interval {
        Interval::new(self.t_near, self.t_far)
    }
}

/// Slab test. Returns the hit interval clipped to the ray's own bounds.
///
/// Zero direction components are treated as parallel slabs: the ray either
/// lies inside the slab for all `t` or misses the box.
pub fn ray_aabb_intersect(ray: &Ray, aabb: &Aabb) -> Option<Interval> {
    let mut t0 = ray.t_near;
    let mut t1 = ray.t_far;
    for i in 0..3 {
        let o = ray.origin[i];
        let d = ray.dir[i];
        if d == 0.0 {
            if o < aabb.min[i] || o > aabb.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let mut ta = (aabb.min[i] - o) * inv;
        let mut tb = (aabb.max[i] - o) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some(Interval::new(t0, t1))
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`, with image y pointing away from `up`.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Option<Self> {
        let forward = (target - eye).try_normalize(1e-12)?;
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // forward is parallel to up; any perpendicular works
            let alt = if forward.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        // rows of R are the camera axes expressed in world coordinates
        let r = nalgebra::Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_matrix(&r);
        let translation = -(rotation * eye.coords);
        Some(Self { rotation, translation })
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.inverse() * self.translation))
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn camera_dir_to_world(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * d
    }
}

/// Ray through the center of pixel `(u, v)`, where integer coordinates index
/// pixels and the pixel center sits at `+0.5`.
pub fn camera_ray(view: &ViewRecord, intrinsics: &CameraIntrinsics, u: f64, v: f64) -> Result<Ray, GeometryError> {
    let (w, h) = (intrinsics.width as f64, intrinsics.height as f64);
    if !(u >= 0.0 && u < w && v >= 0.0 && v < h) {
        return Err(GeometryError::PixelOutOfBounds {
            u,
            v,
            width: intrinsics.width,
            height: intrinsics.height,
        });
    }
    Ok(pixel_ray(&view.pose, intrinsics, u, v))
}

/// Unchecked variant of [`camera_ray`] for callers iterating valid pixels.
pub fn pixel_ray(pose: &Pose, intrinsics: &CameraIntrinsics, u: f64, v: f64) -> Ray {
    let d_cam = Vector3::new(
        (u + 0.5 - intrinsics.cx) / intrinsics.fx,
        (v + 0.5 - intrinsics.cy) / intrinsics.fy,
        1.0,
    );
    Ray::new(pose.center(), pose.camera_dir_to_world(&d_cam), 0.0, f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfm::CameraModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cube() -> Aabb {
        Aabb::new(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0))
    }

    fn intrinsics(w: u32, h: u32, f: f64) -> CameraIntrinsics {
        CameraIntrinsics {
            camera_id: 1,
            model: CameraModel::Pinhole,
            width: w,
            height: h,
            fx: f,
            fy: f,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
        }
    }

    fn view(pose: Pose) -> ViewRecord {
        ViewRecord {
            view_id: 1,
            name: "v".into(),
            camera_id: 1,
            pose,
            observations: vec![],
        }
    }

    #[test]
    fn axis_aligned_hit() {
        let ray = Ray::new(Point3::new(-2.0, 0.0, 0.0), Vector3::x(), 0.0, 10.0);
        assert_eq!(ray_aabb_intersect(&ray, &unit_cube()), Some(Interval::new(1.0, 3.0)));
        let clipped = ray.with_bounds(0.0, 2.0);
        assert_eq!(ray_aabb_intersect(&clipped, &unit_cube()), Some(Interval::new(1.0, 2.0)));
    }

    #[test]
    fn origin_inside_starts_at_near() {
        let ray = Ray::new(Point3::new(0.2, 0.1, 0.0), Vector3::new(1.0, 1.0, 0.0), 0.0, 10.0);
        let hit = ray_aabb_intersect(&ray, &unit_cube()).unwrap();
        assert_eq!(hit.t_enter, 0.0);
    }

    #[test]
    fn parallel_ray_outside_slab_misses() {
        let ray = Ray::new(Point3::new(-2.0, 1.5, 0.0), Vector3::x(), 0.0, 10.0);
        assert!(ray_aabb_intersect(&ray, &unit_cube()).is_none());
        // grazing the face counts as a hit on a closed box
        let ray = Ray::new(Point3::new(-2.0, 1.0, 0.0), Vector3::x(), 0.0, 10.0);
        assert_eq!(ray_aabb_intersect(&ray, &unit_cube()), Some(Interval::new(1.0, 3.0)));
    }

    #[test]
    fn box_helpers() {
        let b = Aabb::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        assert_eq!(aabb_center(&b), Point3::new(0.5, 0.5, 0.5));
        assert!((aabb_diagonal(&b) - 3f64.sqrt()).abs() < 1e-15);
        assert!(point_in_aabb(&Point3::new(1.0, 0.3, 0.5), &b));
        assert!(!point_in_aabb(&Point3::new(1.0 + 1e-12, 0.3, 0.5), &b));
        let p = Point3::new(0.3, 0.3, 0.3);
        let degenerate = Aabb::new(p, p);
        assert!(point_in_aabb(&p, &degenerate));
        assert!(!point_in_aabb(&Point3::new(0.3, 0.3, 0.30001), &degenerate));
    }

    #[test]
    fn random_rays_match_dense_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let steps = 10_000;
        for _ in 0..10_000 {
            let a = Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let b = a + Vector3::new(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
            let aabb = Aabb::new(a, b);
            let origin = Point3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if dir.norm() < 1e-3 {
                continue;
            }
            let ray = Ray::new(origin, dir, 0.0, 10.0);
            let h = 10.0 / steps as f64;
            let inside: Vec<f64> = (0..=steps)
                .map(|k| k as f64 * h)
                .filter(|&t| aabb.contains(&ray.at(t)))
                .collect();
            match ray_aabb_intersect(&ray, &aabb) {
                Some(iv) => {
                    if inside.is_empty() {
                        // hit shorter than the probe spacing
                        assert!(iv.length() < 2.0 * h, "{iv:?}");
                    } else {
                        assert!((inside[0] - iv.t_enter).abs() < 1e-3);
                        assert!((inside[inside.len() - 1] - iv.t_exit).abs() < 1e-3);
                    }
                }
                None => assert!(inside.is_empty()),
            }
        }
    }

    #[test]
    fn identity_pose_principal_point_looks_down_z() {
        let k = intrinsics(64, 48, 50.0);
        let ray = camera_ray(&view(Pose::identity()), &k, 31.5, 23.5).unwrap();
        assert!((ray.dir - Vector3::z()).norm() < 1e-15);
        assert_eq!(ray.origin, Point3::origin());
    }

    #[test]
    fn rotated_pose_hand_computed() {
        // 90 degrees about y (world->camera): camera z axis is world -x.
        let rotation = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2);
        let pose = Pose {
            rotation,
            translation: Vector3::new(0.0, 0.0, 5.0),
        };
        // center = -R^T t = -(R^T (0,0,5)); R^T maps camera z to world (-1,0,0)
        assert!((pose.center() - Point3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
        let k = intrinsics(100, 100, 100.0);
        // pixel (59.5, 49.5): camera dir (0.1, 0, 1) -> world (-1, 0, 0.1) up to normalization
        let ray = camera_ray(&view(pose), &k, 59.5, 49.5).unwrap();
        let expected = Vector3::new(-1.0, 0.0, 0.1).normalize();
        assert!((ray.dir - expected).norm() < 1e-9, "{:?}", ray.dir);
    }

    #[test]
    fn out_of_bounds_pixel() {
        let k = intrinsics(10, 10, 10.0);
        assert!(matches!(
            camera_ray(&view(Pose::identity()), &k, 10.0, 0.0),
            Err(GeometryError::PixelOutOfBounds { .. })
        ));
        assert!(camera_ray(&view(Pose::identity()), &k, -0.1, 0.0).is_err());
    }

    #[test]
    fn look_at_points_forward() {
        let eye = Point3::new(3.0, 1.0, 2.0);
        let target = Point3::new(0.0, 0.0, 0.5);
        let pose = Pose::look_at(eye, target, Vector3::z()).unwrap();
        assert!((pose.center() - eye).norm() < 1e-12);
        let t_cam = pose.world_to_camera(&target);
        assert!(t_cam.x.abs() < 1e-12 && t_cam.y.abs() < 1e-12 && t_cam.z > 0.0);
        // world up maps to negative image y
        let above = pose.world_to_camera(&(target + Vector3::z() * 0.1));
        assert!(above.y < 0.0);
        assert!(Pose::look_at(eye, eye, Vector3::z()).is_none());
        assert!(Pose::look_at(Point3::new(0.0, 0.0, 5.0), Point3::origin(), Vector3::z()).is_some());
    }

    proptest::proptest! {
        #[test]
        fn hit_endpoints_lie_on_boundary(
            ox in -5.0..5.0f64, oy in -5.0..5.0f64, oz in -5.0..5.0f64,
            dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64,
            hx in 0.1..2.0f64, hy in 0.1..2.0f64, hz in 0.1..2.0f64,
        ) {
            let dir = Vector3::new(dx, dy, dz);
            proptest::prop_assume!(dir.norm() > 1e-3);
            let aabb = Aabb::from_center_half_extent(Point3::new(0.3, -0.2, 0.1), Vector3::new(hx, hy, hz));
            let origin = Point3::new(ox, oy, oz);
            proptest::prop_assume!(!aabb.contains(&origin));
            let ray = Ray::new(origin, dir, 0.0, 100.0);
            if let Some(iv) = ray_aabb_intersect(&ray, &aabb) {
                let tol = 1e-9 * aabb.diagonal();
                for t in [iv.t_enter, iv.t_exit] {
                    let p = ray.at(t);
                    let grown = aabb.expanded(tol);
                    proptest::prop_assert!(grown.contains(&p));
                    let on_face = (0..3).any(|i| (p[i] - aabb.min[i]).abs() <= tol || (p[i] - aabb.max[i]).abs() <= tol);
                    proptest::prop_assert!(on_face);
                }
            }
        }

        #[test]
        fn invariant_under_translation_and_axis_permutation(
            ox in -5.0..5.0f64, oy in -5.0..5.0f64, oz in -5.0..5.0f64,
            dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64,
            tx in -3.0..3.0f64, ty in -3.0..3.0f64, tz in -3.0..3.0f64,
        ) {
            let dir = Vector3::new(dx, dy, dz);
            proptest::prop_assume!(dir.norm() > 1e-3);
            let aabb = Aabb::new(Point3::new(-1.0, -0.5, -0.25), Point3::new(1.0, 0.5, 0.75));
            let ray = Ray::new(Point3::new(ox, oy, oz), dir, 0.0, 100.0);
            let base = ray_aabb_intersect(&ray, &aabb);

            let shift = Vector3::new(tx, ty, tz);
            let moved = Ray { origin: ray.origin + shift, ..ray };
            let moved_box = Aabb::new(aabb.min + shift, aabb.max + shift);
            let shifted = ray_aabb_intersect(&moved, &moved_box);

            let perm = |v: &Vector3<f64>| Vector3::new(v.z, v.x, v.y);
            let permuted_ray = Ray { origin: Point3::from(perm(&ray.origin.coords)), dir: perm(&ray.dir), ..ray };
            let permuted_box = Aabb::new(Point3::from(perm(&aabb.min.coords)), Point3::from(perm(&aabb.max.coords)));
            let permuted = ray_aabb_intersect(&permuted_ray, &permuted_box);

            for other in [shifted, permuted] {
                match (base, other) {
                    (Some(a), Some(b)) => {
                        proptest::prop_assert!((a.t_enter - b.t_enter).abs() < 1e-9);
                        proptest::prop_assert!((a.t_exit - b.t_exit).abs() < 1e-9);
                    }
                    (None, None) => {}
                    // translation rounding can flip a tangential graze
                    (Some(a), None) | (None, Some(a)) => proptest::prop_assert!(a.length() < 1e-9),
                }
            }
        }
    }
}
