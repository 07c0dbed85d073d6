//! Built-in synthetic scenes: an analytic oracle field, a matching sparse
//! reconstruction rig and ROI boxes.

use nalgebra::{Point3, Vector3};

use crate::fields::{AnalyticField, Primitive, Shape, Texture};
use crate::geometry::Aabb;
use crate::grouping::RoiSpec;
use crate::rendering::SamplerConfig;
use crate::sfm::{orbit, synth_reconstruction, CameraIntrinsics, CameraModel, CameraRig, PointCluster, Reconstruction, SfmError, SynthScene};

pub const FIXTURE_NAMES: [&str; 4] = ["checker-table", "two-spheres", "occluder", "checkered-sphere"];

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub oracle: AnalyticField,
    /// Region the scene field covers; also the sampler clip box.
    pub scene_aabb: Aabb,
    pub rois: Vec<RoiSpec>,
    pub points: SynthScene,
    pub rig: CameraRig,
}

impl Fixture {
    pub fn reconstruction(&self, seed: u64) -> Result<Reconstruction, SfmError> {
        synth_reconstruction(&self.points, &self.rig, seed)
    }

    /// 64 + 64 samples clipped to the scene box.
    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig { seed, clip: Some(self.scene_aabb), ..Default::default() }
    }
}

pub fn fixture(name: &str) -> Option<Fixture> {
    match name {
        "checker-table" => Some(checker_table()),
        "two-spheres" => Some(two_spheres()),
        "occluder" => Some(occluder()),
        "checkered-sphere" => Some(checkered_sphere()),
        _ => None,
    }
}

fn rgb(r: f64, g: f64, b: f64) -> Vector3<f64> {
    Vector3::new(r, g, b)
}

fn cuboid(min: [f64; 3], max: [f64; 3]) -> Shape {
    Shape::Cuboid { aabb: Aabb::new(Point3::from(min), Point3::from(max)) }
}

fn intrinsics(size: u32, focal: f64) -> CameraIntrinsics {
    CameraIntrinsics {
        camera_id: 1,
        model: CameraModel::Pinhole,
        width: size,
        height: size,
        fx: focal,
        fy: focal,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
    }
}

fn cluster(min: [f64; 3], max: [f64; 3], count: usize, color: [u8; 3]) -> PointCluster {
    PointCluster { region: Aabb::new(Point3::from(min), Point3::from(max)), count, color }
}

/// Table top just below `z = 0` so no checker boundary lies in its surface.
fn table_plane() -> Primitive {
    Primitive::new(cuboid([-1.8, -1.8, -0.2], [1.8, 1.8, -0.01]), 30.0, rgb(0.75, 0.7, 0.6))
        .with_texture(Texture::Checker { frequency: 2.0, alt: rgb(0.35, 0.3, 0.25) })
}

/// Finely checkered box on a coarsely checkered table, plus a striped ball
/// outside the ROI. 24-camera orbit and 12 close-ups of the box.
fn checker_table() -> Fixture {
    let oracle = AnalyticField::new(
        "checker-table",
        vec![
            Primitive::new(cuboid([-0.24, -0.24, 0.01], [0.24, 0.24, 0.49]), 80.0, rgb(0.9, 0.85, 0.2))
                .with_texture(Texture::Checker { frequency: 16.0, alt: rgb(0.1, 0.2, 0.7) }),
            Primitive::new(Shape::Sphere { center: Point3::new(1.0, 0.8, 0.3), radius: 0.3 }, 60.0, rgb(0.8, 0.2, 0.2))
                .with_texture(Texture::Stripes { frequency: 3.0, axis: 2, alt: rgb(0.9, 0.9, 0.9) }),
            table_plane(),
        ],
    );
    let target = Point3::new(0.0, 0.0, 0.25);
    let mut placements = orbit(Point3::origin(), 3.5, 1.8, 24, 0.0, Point3::new(0.0, 0.0, 0.2));
    placements.extend(orbit(target, 1.4, 0.7, 12, 0.13, target));
    Fixture {
        name: "checker-table".into(),
        oracle,
        scene_aabb: Aabb::new(Point3::new(-2.0, -2.0, -0.5), Point3::new(2.0, 2.0, 1.5)),
        rois: vec![RoiSpec {
            test_fraction: 0.25,
            ..RoiSpec::new("box", Aabb::new(Point3::new(-0.4, -0.4, -0.1), Point3::new(0.4, 0.4, 0.6)))
        }],
        points: SynthScene {
            clusters: vec![
                cluster([-0.25, -0.25, 0.0], [0.25, 0.25, 0.5], 400, [230, 220, 50]),
                cluster([0.75, 0.55, 0.05], [1.25, 1.05, 0.55], 150, [200, 50, 50]),
                cluster([-1.8, -1.8, -0.01], [1.8, 1.8, 0.0], 800, [190, 180, 150]),
            ],
            dropout: 0.1,
            unmatched_per_view: 5,
        },
        rig: CameraRig { intrinsics: intrinsics(200, 220.0), placements, up: Vector3::z() },
    }
}

/// Two large spheres and two small ones on a table, one ROI each.
fn two_spheres() -> Fixture {
    let balls = [
        ("sphere-a", Point3::new(-0.6, 0.0, 0.4), 0.4, rgb(0.2, 0.6, 0.9), 12.0),
        ("sphere-b", Point3::new(0.6, 0.0, 0.4), 0.4, rgb(0.9, 0.4, 0.1), 12.0),
        ("pebble-c", Point3::new(0.0, 0.7, 0.15), 0.15, rgb(0.3, 0.8, 0.3), 24.0),
        ("pebble-d", Point3::new(0.0, -0.7, 0.15), 0.15, rgb(0.8, 0.2, 0.7), 24.0),
    ];
    let mut prims = Vec::new();
    let mut rois = Vec::new();
    let mut clusters = Vec::new();
    for (name, c, r, color, freq) in balls {
        prims.push(
            Primitive::new(Shape::Sphere { center: c, radius: r }, 60.0, color)
                .with_texture(Texture::Checker { frequency: freq, alt: rgb(0.95, 0.95, 0.9) }),
        );
        let half = Vector3::repeat(r + 0.05);
        let aabb = Aabb::from_center_half_extent(c, half);
        rois.push(RoiSpec::new(name, aabb));
        let inner = Vector3::repeat(r * 0.7);
        clusters.push(cluster((c - inner).into(), (c + inner).into(), 200, [150, 150, 150]));
    }
    prims.push(table_plane());
    clusters.push(cluster([-1.8, -1.8, -0.01], [1.8, 1.8, 0.0], 600, [190, 180, 150]));
    Fixture {
        name: "two-spheres".into(),
        oracle: AnalyticField::new("two-spheres", prims),
        scene_aabb: Aabb::new(Point3::new(-2.0, -2.0, -0.5), Point3::new(2.0, 2.0, 1.5)),
        rois,
        points: SynthScene { clusters, dropout: 0.1, unmatched_per_view: 0 },
        rig: CameraRig {
            intrinsics: intrinsics(200, 220.0),
            placements: orbit(Point3::origin(), 3.2, 1.6, 24, 0.0, Point3::new(0.0, 0.0, 0.3)),
            up: Vector3::z(),
        },
    }
}

/// A ball inside a roomy ROI box with a pillar standing between part of the
/// orbit and the box.
fn occluder() -> Fixture {
    let oracle = AnalyticField::new(
        "occluder",
        vec![
            Primitive::new(Shape::Sphere { center: Point3::new(0.0, 0.0, 0.35), radius: 0.3 }, 60.0, rgb(0.9, 0.8, 0.3))
                .with_texture(Texture::Checker { frequency: 10.0, alt: rgb(0.2, 0.3, 0.8) }),
            Primitive::new(cuboid([-0.15, -1.2, 0.0], [0.15, -0.9, 1.0]), 60.0, rgb(0.4, 0.4, 0.45)),
            table_plane(),
        ],
    );
    Fixture {
        name: "occluder".into(),
        oracle,
        scene_aabb: Aabb::new(Point3::new(-2.0, -2.0, -0.5), Point3::new(2.0, 2.0, 1.5)),
        rois: vec![RoiSpec::new("ball", Aabb::new(Point3::new(-0.5, -0.5, 0.0), Point3::new(0.5, 0.5, 0.8)))],
        points: SynthScene {
            clusters: vec![
                cluster([-0.2, -0.2, 0.15], [0.2, 0.2, 0.55], 300, [230, 200, 80]),
                cluster([-0.15, -1.2, 0.0], [0.15, -0.9, 1.0], 150, [100, 100, 110]),
                cluster([-1.8, -1.8, -0.01], [1.8, 1.8, 0.0], 600, [190, 180, 150]),
            ],
            dropout: 0.1,
            unmatched_per_view: 0,
        },
        rig: CameraRig {
            intrinsics: intrinsics(64, 70.0),
            placements: orbit(Point3::origin(), 3.0, 0.8, 16, -std::f64::consts::FRAC_PI_2 + 0.1, Point3::new(0.0, 0.0, 0.35)),
            up: Vector3::z(),
        },
    }
}

/// Single checkered ball with a soft surface, used for resolution sweeps
/// and renderer accuracy checks.
fn checkered_sphere() -> Fixture {
    let oracle = AnalyticField::new(
        "checkered-sphere",
        vec![Primitive::new(Shape::Sphere { center: Point3::origin(), radius: 0.7 }, 20.0, rgb(0.9, 0.9, 0.9))
            .with_texture(Texture::Checker { frequency: 6.0, alt: rgb(0.1, 0.3, 0.6) })],
    );
    let aabb = Aabb::from_center_half_extent(Point3::origin(), Vector3::repeat(1.0));
    Fixture {
        name: "checkered-sphere".into(),
        oracle,
        scene_aabb: aabb,
        rois: vec![RoiSpec::new("ball", Aabb::from_center_half_extent(Point3::origin(), Vector3::repeat(0.75)))],
        points: SynthScene {
            clusters: vec![cluster([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5], 300, [200, 200, 200])],
            dropout: 0.0,
            unmatched_per_view: 0,
        },
        rig: CameraRig {
            intrinsics: intrinsics(64, 80.0),
            placements: orbit(Point3::origin(), 3.0, 1.0, 12, 0.0, Point3::origin()),
            up: Vector3::z(),
        },
    }
}
