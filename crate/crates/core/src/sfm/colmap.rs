//! COLMAP text layout (`cameras.txt`, `images.txt`, `points3D.txt`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};

use super::{
    CameraIntrinsics, CameraModel, Observation, Reconstruction, SfmError, SparsePoint, TrackEntry, ViewRecord,
    QUATERNION_TOLERANCE,
};
use crate::geometry::Pose;

const CAMERAS: &str = "cameras.txt";
const IMAGES: &str = "images.txt";
const POINTS: &str = "points3D.txt";

fn read(dir: &Path, name: &str) -> Result<String, SfmError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(SfmError::MissingFile(path));
    }
    fs::read_to_string(&path).map_err(|source| SfmError::Io { path, source })
}

struct Cursor<'a> {
    file: &'static str,
    line: usize,
    tokens: std::str::SplitWhitespace<'a>,
}

impl<'a> Cursor<'a> {
    fn new(file: &'static str, line: usize, text: &'a str) -> Self {
        Self { file, line, tokens: text.split_whitespace() }
    }

    fn err(&self, reason: impl Into<String>) -> SfmError {
        SfmError::MalformedLine { file: self.file.into(), line: self.line, reason: reason.into() }
    }

    fn next<T: FromStr>(&mut self, what: &str) -> Result<T, SfmError> {
        let tok = self.tokens.next().ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse().map_err(|_| self.err(format!("bad {what} `{tok}`")))
    }

    fn next_f64(&mut self, what: &str) -> Result<f64, SfmError> {
        let v: f64 = self.next(what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(format!("non-finite {what}")))
        }
    }

    fn rest(&mut self) -> Vec<&'a str> {
        self.tokens.by_ref().collect()
    }

    fn finish(&mut self) -> Result<(), SfmError> {
        match self.tokens.next() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("trailing token `{t}`"))),
        }
    }
}

/// Non-comment lines with their 1-based line numbers. Blank lines are kept
/// because an image with no observations has an empty second line.
fn data_lines(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l))
        .collect()
}

fn parse_cameras(text: &str, recon: &mut Reconstruction) -> Result<(), SfmError> {
    for (line, l) in data_lines(text) {
        if l.trim().is_empty() {
            continue;
        }
        let mut c = Cursor::new(CAMERAS, line, l);
        let camera_id: u32 = c.next("camera id")?;
        let model: String = c.next("model")?;
        let width: u32 = c.next("width")?;
        let height: u32 = c.next("height")?;
        let (model, fx, fy, cx, cy) = match model.as_str() {
            "PINHOLE" => (CameraModel::Pinhole, c.next_f64("fx")?, c.next_f64("fy")?, c.next_f64("cx")?, c.next_f64("cy")?),
            "SIMPLE_PINHOLE" => {
                let f = c.next_f64("f")?;
                (CameraModel::SimplePinhole, f, f, c.next_f64("cx")?, c.next_f64("cy")?)
            }
            _ => return Err(SfmError::UnsupportedCameraModel { file: CAMERAS.into(), line, model }),
        };
        c.finish()?;
        let cam = CameraIntrinsics { camera_id, model, width, height, fx, fy, cx, cy };
        cam.check().map_err(|r| c.err(r))?;
        if recon.intrinsics.insert(camera_id, cam).is_some() {
            return Err(c.err(format!("duplicate camera id {camera_id}")));
        }
    }
    Ok(())
}

fn parse_images(text: &str, recon: &mut Reconstruction) -> Result<(), SfmError> {
    let lines = data_lines(text);
    let mut i = 0;
    while i < lines.len() {
        let (line, l) = lines[i];
        i += 1;
        if l.trim().is_empty() {
            continue;
        }
        let mut c = Cursor::new(IMAGES, line, l);
        let view_id: u32 = c.next("image id")?;
        let q = Quaternion::new(c.next_f64("qw")?, c.next_f64("qx")?, c.next_f64("qy")?, c.next_f64("qz")?);
        let t = Vector3::new(c.next_f64("tx")?, c.next_f64("ty")?, c.next_f64("tz")?);
        let camera_id: u32 = c.next("camera id")?;
        let name: String = c.next("name")?;
        c.finish()?;
        let norm = q.norm();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(c.err(format!("quaternion norm {norm} is not unit")));
        }
        let rotation = if (norm - 1.0).abs() <= QUATERNION_TOLERANCE {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        if !recon.intrinsics.contains_key(&camera_id) {
            return Err(c.err(format!("unknown camera id {camera_id}")));
        }

        let mut observations = Vec::new();
        if i < lines.len() {
            let (obs_line, ol) = lines[i];
            i += 1;
            let mut oc = Cursor::new(IMAGES, obs_line, ol);
            let toks = oc.rest();
            if toks.len() % 3 != 0 {
                return Err(oc.err("observation tokens are not (x, y, point3d_id) triples"));
            }
            for triple in toks.chunks(3) {
                let u: f64 = triple[0].parse().map_err(|_| oc.err(format!("bad x `{}`", triple[0])))?;
                let v: f64 = triple[1].parse().map_err(|_| oc.err(format!("bad y `{}`", triple[1])))?;
                let pid: i64 = triple[2].parse().map_err(|_| oc.err(format!("bad point id `{}`", triple[2])))?;
                if pid < -1 {
                    return Err(oc.err(format!("bad point id {pid}")));
                }
                observations.push(Observation { u, v, point_id: (pid >= 0).then_some(pid as u64) });
            }
        }
        let view = ViewRecord { view_id, name, camera_id, pose: Pose { rotation, translation: t }, observations };
        if recon.views.insert(view_id, view).is_some() {
            return Err(c.err(format!("duplicate image id {view_id}")));
        }
    }
    Ok(())
}

fn parse_points(text: &str, recon: &mut Reconstruction) -> Result<(), SfmError> {
    for (line, l) in data_lines(text) {
        if l.trim().is_empty() {
            continue;
        }
        let mut c = Cursor::new(POINTS, line, l);
        let point_id: u64 = c.next("point id")?;
        let position = Point3::new(c.next_f64("x")?, c.next_f64("y")?, c.next_f64("z")?);
        let color = [c.next("r")?, c.next("g")?, c.next("b")?];
        let reproj_error = c.next_f64("error")?;
        let toks = c.rest();
        if toks.len() % 2 != 0 {
            return Err(c.err("track tokens are not (image_id, point2d_idx) pairs"));
        }
        let mut track = Vec::with_capacity(toks.len() / 2);
        for pair in toks.chunks(2) {
            let view_id: u32 = pair[0].parse().map_err(|_| c.err(format!("bad image id `{}`", pair[0])))?;
            let obs_index: u32 = pair[1].parse().map_err(|_| c.err(format!("bad point2d index `{}`", pair[1])))?;
            track.push(TrackEntry { view_id, obs_index });
        }
        let point = SparsePoint { point_id, position, color, reproj_error, track };
        if recon.points.insert(point_id, point).is_some() {
            return Err(c.err(format!("duplicate point id {point_id}")));
        }
    }
    Ok(())
}

/// Parses a COLMAP text model directory and validates every invariant.
pub fn parse_colmap_text(dir: impl AsRef<Path>) -> Result<Reconstruction, SfmError> {
    let dir = dir.as_ref();
    let cameras = read(dir, CAMERAS)?;
    let images = read(dir, IMAGES)?;
    let points = read(dir, POINTS)?;
    let mut recon = Reconstruction::default();
    parse_cameras(&cameras, &mut recon)?;
    parse_images(&images, &mut recon)?;
    parse_points(&points, &mut recon)?;
    recon.validate()?;
    Ok(recon)
}

/// Writes the three text files into `dir`. Floats use shortest round-trip
/// formatting, so parsing the output reproduces `recon` exactly.
pub fn write_colmap_text(recon: &Reconstruction, dir: impl AsRef<Path>) -> Result<(), SfmError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SfmError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;

    let mut out = String::from("# CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n");
    for cam in recon.intrinsics.values() {
        let _ = write!(out, "{} {} {} {} ", cam.camera_id, cam.model.colmap_name(), cam.width, cam.height);
        let _ = match cam.model {
            CameraModel::Pinhole => writeln!(out, "{} {} {} {}", cam.fx, cam.fy, cam.cx, cam.cy),
            CameraModel::SimplePinhole => writeln!(out, "{} {} {}", cam.fx, cam.cx, cam.cy),
        };
    }
    let path = dir.join(CAMERAS);
    fs::write(&path, out).map_err(io(&path))?;

    let mut out = String::from("# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n# POINTS2D[] as (X Y POINT3D_ID)\n");
    for view in recon.views.values() {
        let q = view.pose.rotation.quaternion();
        let t = view.pose.translation;
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {}",
            view.view_id, q.w, q.i, q.j, q.k, t.x, t.y, t.z, view.camera_id, view.name
        );
        let obs: Vec<String> = view
            .observations
            .iter()
            .map(|o| format!("{} {} {}", o.u, o.v, o.point_id.map_or(-1, |p| p as i64)))
            .collect();
        let _ = writeln!(out, "{}", obs.join(" "));
    }
    let path = dir.join(IMAGES);
    fs::write(&path, out).map_err(io(&path))?;

    let mut out = String::from("# POINT3D_ID X Y Z R G B ERROR TRACK[] as (IMAGE_ID POINT2D_IDX)\n");
    for p in recon.points.values() {
        let _ = write!(
            out,
            "{} {} {} {} {} {} {} {}",
            p.point_id, p.position.x, p.position.y, p.position.z, p.color[0], p.color[1], p.color[2], p.reproj_error
        );
        for t in &p.track {
            let _ = write!(out, " {} {}", t.view_id, t.obs_index);
        }
        out.push('\n');
    }
    let path = dir.join(POINTS);
    fs::write(&path, out).map_err(io(&path))?;
    Ok(())
}
