use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::{FieldError, FieldSample, RadianceField};
use crate::geometry::Aabb;
use crate::sfm::{CameraIntrinsics, ViewRecord};

pub const DEFAULT_N_MAX_CAP: u32 = 4096;

/// Grid geometry shared by stored grids and fitting parameters. `resolution`
/// counts cells, so each axis has `resolution + 1` vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLayout {
    pub domain: Aabb,
    pub resolution: [u32; 3],
}

impl GridLayout {
    pub fn new(domain: Aabb, resolution: [u32; 3]) -> Result<Self, FieldError> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(FieldError::ResolutionTooSmall(resolution));
        }
        let ext = domain.extent();
        if !domain.is_valid() || ext.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(FieldError::DegenerateDomain);
        }
        Ok(Self { domain, resolution })
    }

    pub fn vertex_dims(&self) -> [usize; 3] {
        self.resolution.map(|n| n as usize + 1)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_dims().iter().product()
    }

    /// Linear index, x fastest.
    pub fn vertex_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let [nx, ny, _] = self.vertex_dims();
        ix + nx * (iy + ny * iz)
    }

    pub fn vertex_position(&self, ix: usize, iy: usize, iz: usize) -> Point3<f64> {
        let ext = self.domain.extent();
        let idx = [ix, iy, iz];
        let mut p = self.domain.min;
        for a in 0..3 {
            let n = self.resolution[a] as usize;
            // hit the max face exactly rather than through rounding
            p[a] = if idx[a] == n { self.domain.max[a] } else { self.domain.min[a] + ext[a] * idx[a] as f64 / n as f64 };
        }
        p
    }

    /// Base vertex index of the cell holding `p` and the fractional position
    /// inside it, or `None` outside the domain. Coordinates within 1e-9 of a
    /// vertex plane snap to it so vertex queries reproduce stored values
    /// exactly.
    pub fn cell(&self, p: &Point3<f64>) -> Option<(usize, [f64; 3])> {
        if !self.domain.contains(p) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.resolution[a] as usize;
            let g = (p[a] - self.domain.min[a]) / (self.domain.max[a] - self.domain.min[a]) * n as f64;
            // g >= 0 inside the domain, so truncation is floor
            let mut i = g as usize;
            let mut f = g - i as f64;
            if f > 1.0 - 1e-9 {
                i += 1;
                f = 0.0;
            } else if f < 1e-9 {
                f = 0.0;
            }
            if i >= n {
                i = n - 1;
                f = 1.0;
            }
            base[a] = i;
            frac[a] = f;
        }
        Some((self.vertex_index(base[0], base[1], base[2]), frac))
    }

    /// Offsets from a cell's base vertex to its 8 corners, in the order
    /// used by [`GridLayout::corners`].
    pub fn corner_offsets(&self) -> [usize; 8] {
        let [nx, ny, _] = self.vertex_dims();
        let s = nx * ny;
        [0, 1, nx, nx + 1, s, s + 1, s + nx, s + nx + 1]
    }

    /// The 8 surrounding vertices and their trilinear weights (corner `c`
    /// is offset by bit 0 in x, bit 1 in y, bit 2 in z).
    pub fn corners(&self, p: &Point3<f64>) -> Option<[(usize, f64); 8]> {
        let (i0, f) = self.cell(p)?;
        let offs = self.corner_offsets();
        let wx = [1.0 - f[0], f[0]];
        let wy = [1.0 - f[1], f[1]];
        let wz = [1.0 - f[2], f[2]];
        let mut out = [(0usize, 0.0f64); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = (i0 + offs[c], wx[c & 1] * wy[(c >> 1) & 1] * wz[(c >> 2) & 1]);
        }
        Some(out)
    }
}

/// Trilinear voxel grid. Values are stored as f32, which is what the file
/// format carries.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub id: String,
    layout: GridLayout,
    density: Vec<f32>,
    rgb: Vec<[f32; 3]>,
}

impl GridField {
    pub fn from_parts(id: impl Into<String>, layout: GridLayout, density: Vec<f32>, rgb: Vec<[f32; 3]>) -> Result<Self, FieldError> {
        let n = layout.vertex_count();
        if density.len() != n || rgb.len() != n {
            return Err(FieldError::CorruptHeader(format!(
                "expected {n} vertices, got {} densities and {} colors",
                density.len(),
                rgb.len()
            )));
        }
        let bad_sigma = density.iter().any(|s| !(*s >= 0.0) || !s.is_finite());
        let bad_rgb = rgb.iter().flatten().any(|c| !(0.0..=1.0).contains(c));
        if bad_sigma || bad_rgb {
            return Err(FieldError::CorruptHeader("vertex values out of range".into()));
        }
        Ok(Self { id: id.into(), layout, density, rgb })
    }

    pub fn constant(id: impl Into<String>, layout: GridLayout, sigma: f32, rgb: [f32; 3]) -> Result<Self, FieldError> {
        let n = layout.vertex_count();
        Self::from_parts(id, layout, vec![sigma; n], vec![rgb; n])
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn resolution(&self) -> [u32; 3] {
        self.layout.resolution
    }

    pub fn densities(&self) -> &[f32] {
        &self.density
    }

    pub fn colors(&self) -> &[[f32; 3]] {
        &self.rgb
    }

    pub fn vertex(&self, ix: usize, iy: usize, iz: usize) -> FieldSample {
        let i = self.layout.vertex_index(ix, iy, iz);
        let c = self.rgb[i];
        FieldSample { sigma: self.density[i] as f64, rgb: Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) }
    }
}

impl RadianceField for GridField {
    fn query(&self, p: &Point3<f64>, _dir: &Vector3<f64>) -> FieldSample {
        let Some((i0, f)) = self.layout.cell(p) else { return FieldSample::EMPTY };
        let offs = self.layout.corner_offsets();
        let wx = [1.0 - f[0], f[0]];
        let wy = [1.0 - f[1], f[1]];
        let wz = [1.0 - f[2], f[2]];
        let (mut sigma, mut r, mut g, mut b) = (0.0, 0.0, 0.0, 0.0);
        for (c, off) in offs.iter().enumerate() {
            let w = wx[c & 1] * wy[(c >> 1) & 1] * wz[(c >> 2) & 1];
            let j = i0 + off;
            sigma += w * self.density[j] as f64;
            let col = self.rgb[j];
            r += w * col[0] as f64;
            g += w * col[1] as f64;
            b += w * col[2] as f64;
        }
        FieldSample { sigma: sigma.max(0.0), rgb: Vector3::new(r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)) }
    }

    fn domain(&self) -> Option<Aabb> {
        Some(self.layout.domain)
    }

    fn field_id(&self) -> &str {
        &self.id
    }
}

/// Samples `oracle` at every vertex, querying along +z.
///
/// Empty vertices next to occupied ones take the mean color of those
/// neighbours, so interpolated color does not fade towards black across the
/// cell where density falls off.
pub fn bake_grid(id: impl Into<String>, oracle: &dyn RadianceField, aabb: Aabb, resolution: [u32; 3]) -> Result<GridField, FieldError> {
    let layout = GridLayout::new(aabb, resolution)?;
    let [nx, ny, nz] = layout.vertex_dims();
    let dir = Vector3::z();
    let slices: Vec<Vec<FieldSample>> = (0..nz)
        .into_par_iter()
        .map(|iz| {
            let mut out = Vec::with_capacity(nx * ny);
            for iy in 0..ny {
                for ix in 0..nx {
                    out.push(oracle.query(&layout.vertex_position(ix, iy, iz), &dir));
                }
            }
            out
        })
        .collect();
    let samples = slices.into_iter().flatten();
    let (density, rgb): (Vec<f32>, Vec<[f32; 3]>) = samples
        .map(|s| {
            let c = s.rgb.map(|v| v.clamp(0.0, 1.0));
            (s.sigma.max(0.0) as f32, [c.x as f32, c.y as f32, c.z as f32])
        })
        .unzip();
    let rgb = dilate_colors(&layout, &density, rgb);
    GridField::from_parts(id, layout, density, rgb)
}

fn dilate_colors(layout: &GridLayout, density: &[f32], rgb: Vec<[f32; 3]>) -> Vec<[f32; 3]> {
    let [nx, ny, nz] = layout.vertex_dims();
    let mut out = rgb.clone();
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let i = layout.vertex_index(ix, iy, iz);
                if density[i] > 0.0 {
                    continue;
                }
                let mut sum = [0.0f64; 3];
                let mut n = 0u32;
                for z in iz.saturating_sub(1)..(iz + 2).min(nz) {
                    for y in iy.saturating_sub(1)..(iy + 2).min(ny) {
                        for x in ix.saturating_sub(1)..(ix + 2).min(nx) {
                            let j = layout.vertex_index(x, y, z);
                            if density[j] > 0.0 {
                                (0..3).for_each(|c| sum[c] += rgb[j][c] as f64);
                                n += 1;
                            }
                        }
                    }
                }
                if n > 0 {
                    out[i] = sum.map(|v| (v / n as f64) as f32);
                }
            }
        }
    }
    out
}

/// Finest useful grid resolution for `aabb`: one pixel of the closest camera
/// (centers inside the box excluded) maps to one voxel.
pub fn estimate_n_max(aabb: &Aabb, views: &[(&ViewRecord, &CameraIntrinsics)], cap: u32) -> Result<u32, FieldError> {
    let center = aabb.center();
    let closest = views
        .iter()
        .filter(|(v, _)| !aabb.contains(&v.center()))
        .map(|(v, k)| ((v.center() - center).norm(), *k))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or(FieldError::NoUsableView)?;
    let (dist, k) = closest;
    // extent / (dist / f), rearranged; the slack keeps exact ratios from
    // rounding up to the next integer
    let n = aabb.max_extent() * k.fx.min(k.fy) / dist;
    let n = (n * (1.0 - 1e-12)).ceil();
    let cap = cap.max(2);
    Ok(if n.is_finite() { n.clamp(2.0, cap as f64) as u32 } else { cap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::AnalyticField;
    use crate::geometry::Pose;
    use crate::sfm::CameraModel;
    use proptest::prelude::*;

    fn unit_box() -> Aabb {
        Aabb::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0))
    }

    fn ramp_grid() -> GridField {
        let layout = GridLayout::new(unit_box(), [3, 4, 5]).unwrap();
        let [nx, ny, nz] = layout.vertex_dims();
        let mut density = Vec::new();
        let mut rgb = Vec::new();
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    density.push((ix * 7 + iy * 3 + iz * 11) as f32 * 0.25);
                    rgb.push([ix as f32 / 3.0, iy as f32 / 4.0, ((ix + iz) % 2) as f32]);
                }
            }
        }
        GridField::from_parts("ramp", layout, density, rgb).unwrap()
    }

    #[test]
    fn constant_bake_is_exact() {
        let gray = Vector3::repeat(0.5);
        let oracle = AnalyticField::homogeneous("h", 2.0, gray, None);
        for res in [[2, 2, 2], [3, 5, 7], [16, 16, 16]] {
            let g = bake_grid("g", &oracle, unit_box(), res).unwrap();
            assert!(g.densities().iter().all(|&s| s == 2.0));
            assert!(g.colors().iter().all(|&c| c == [0.5; 3]));
        }
    }

    #[test]
    fn too_small_resolution() {
        let oracle = AnalyticField::homogeneous("h", 2.0, Vector3::zeros(), None);
        assert!(matches!(bake_grid("g", &oracle, unit_box(), [1, 4, 4]), Err(FieldError::ResolutionTooSmall(_))));
    }

    #[test]
    fn vertex_queries_are_exact() {
        let g = ramp_grid();
        let [nx, ny, nz] = g.layout().vertex_dims();
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let p = g.layout().vertex_position(ix, iy, iz);
                    assert_eq!(g.query(&p, &Vector3::z()), g.vertex(ix, iy, iz), "vertex {ix},{iy},{iz}");
                }
            }
        }
    }

    #[test]
    fn interpolates_linear_function_exactly() {
        // density is affine in the vertex index, so trilinear interpolation reproduces it
        let g = ramp_grid();
        let p = Point3::new(0.4, 0.3, 0.77);
        let expect = 0.25 * (7.0 * 3.0 * p.x + 3.0 * 4.0 * p.y + 11.0 * 5.0 * p.z);
        assert!((g.query(&p, &Vector3::z()).sigma - expect).abs() < 1e-9);
    }

    #[test]
    fn outside_domain_is_empty() {
        let g = ramp_grid();
        assert_eq!(g.query(&Point3::new(1.1, 0.5, 0.5), &Vector3::z()), FieldSample::EMPTY);
        assert_eq!(g.query(&Point3::new(0.5, -1e-6, 0.5), &Vector3::z()).sigma, 0.0);
    }

    fn cam(f: f64) -> CameraIntrinsics {
        CameraIntrinsics { camera_id: 1, model: CameraModel::Pinhole, width: 100, height: 100, fx: f, fy: f, cx: 50.0, cy: 50.0 }
    }

    fn view_at(eye: Point3<f64>) -> ViewRecord {
        ViewRecord {
            view_id: 1,
            name: "v".into(),
            camera_id: 1,
            pose: Pose::look_at(eye, Point3::origin(), Vector3::z()).unwrap(),
            observations: vec![],
        }
    }

    #[test]
    fn n_max_arithmetic() {
        let b = Aabb::from_center_half_extent(Point3::origin(), Vector3::repeat(0.5));
        let v = view_at(Point3::new(0.0, -2.0, 0.0));
        let far = view_at(Point3::new(0.0, -5.0, 0.0));
        let k = cam(100.0);
        assert_eq!(estimate_n_max(&b, &[(&far, &k), (&v, &k)], 4096).unwrap(), 50);
        let k2 = cam(200.0);
        assert_eq!(estimate_n_max(&b, &[(&v, &k2)], 4096).unwrap(), 100);
        let huge = cam(2e8);
        assert_eq!(estimate_n_max(&b, &[(&v, &huge)], 4096).unwrap(), 4096);
        let tiny = cam(1e-3);
        assert_eq!(estimate_n_max(&b, &[(&v, &tiny)], 4096).unwrap(), 2);
    }

    #[test]
    fn n_max_needs_outside_view() {
        let b = Aabb::from_center_half_extent(Point3::origin(), Vector3::repeat(0.5));
        let inside = view_at(Point3::new(0.0, -0.2, 0.0));
        assert!(matches!(estimate_n_max(&b, &[(&inside, &cam(100.0))], 4096), Err(FieldError::NoUsableView)));
    }

    proptest! {
        #[test]
        fn query_is_continuous(x in 0.01f64..0.99, y in 0.01f64..0.99, z in 0.01f64..0.99, axis in 0usize..3) {
            let g = ramp_grid();
            // largest vertex difference per cell bounds the local slope
            let slope = 0.25 * 11.0 * 5.0 * 3.0;
            let p = Point3::new(x, y, z);
            for eps in [1e-3, 1e-5, 1e-7] {
                let mut q = p;
                q[axis] += eps;
                let a = g.query(&p, &Vector3::z());
                let b = g.query(&q, &Vector3::z());
                prop_assert!((a.sigma - b.sigma).abs() <= slope * eps * 1.0001 + 1e-9);
                prop_assert!((a.rgb - b.rgb).amax() <= 5.0 * eps + 1e-9);
            }
        }
    }
}
