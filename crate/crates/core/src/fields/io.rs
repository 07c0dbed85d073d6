//! Binary grid files: magic, little-endian header (domain 6xf64, resolution
//! 3xu32), densities (f32, x fastest), rgb (3xf32 per vertex), CRC32 of all
//! preceding bytes.

use std::path::Path;

use nalgebra::Point3;

use super::{FieldError, GridField, GridLayout};
use crate::geometry::Aabb;

pub const GRID_MAGIC: &[u8; 8] = b"ROIGRID1";
const HEADER_LEN: usize = 8 + 6 * 8 + 3 * 4;

pub fn grid_to_bytes(grid: &GridField) -> Vec<u8> {
    let layout = grid.layout();
    let n = layout.vertex_count();
    let mut out = Vec::with_capacity(HEADER_LEN + n * 16 + 4);
    out.extend_from_slice(GRID_MAGIC);
    for v in layout.domain.min.iter().chain(layout.domain.max.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for r in layout.resolution {
        out.extend_from_slice(&r.to_le_bytes());
    }
    for s in grid.densities() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for c in grid.colors().iter().flatten() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn f64_at(b: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

pub fn grid_from_bytes(id: impl Into<String>, bytes: &[u8]) -> Result<GridField, FieldError> {
    if bytes.len() < HEADER_LEN {
        return Err(FieldError::CorruptHeader(format!("file is {} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if &bytes[..8] != GRID_MAGIC {
        return Err(FieldError::CorruptHeader("bad magic".into()));
    }
    let d: Vec<f64> = (0..6).map(|i| f64_at(bytes, 8 + 8 * i)).collect();
    let resolution = [0, 1, 2].map(|i| u32_at(bytes, 56 + 4 * i));
    let domain = Aabb { min: Point3::new(d[0], d[1], d[2]), max: Point3::new(d[3], d[4], d[5]) };
    let layout = GridLayout::new(domain, resolution).map_err(|e| FieldError::CorruptHeader(e.to_string()))?;
    let n = resolution.iter().map(|&r| r as u64 + 1).product::<u64>();
    let expected = (HEADER_LEN as u64).checked_add(n.checked_mul(16).unwrap_or(u64::MAX)).and_then(|v| v.checked_add(4));
    if expected != Some(bytes.len() as u64) {
        return Err(FieldError::CorruptHeader(format!(
            "resolution {resolution:?} needs {} bytes, file has {}",
            expected.map_or("too many".to_string(), |e| e.to_string()),
            bytes.len()
        )));
    }
    let body_end = bytes.len() - 4;
    let stored = u32_at(bytes, body_end);
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FieldError::ChecksumMismatch { stored, computed });
    }
    let n = n as usize;
    let density = (0..n).map(|i| f32_at(bytes, HEADER_LEN + 4 * i)).collect();
    let rgb_off = HEADER_LEN + 4 * n;
    let rgb = (0..n)
        .map(|i| [0, 1, 2].map(|c| f32_at(bytes, rgb_off + 12 * i + 4 * c)))
        .collect();
    GridField::from_parts(id, layout, density, rgb)
}

pub fn save_grid(grid: &GridField, path: &Path) -> Result<(), FieldError> {
    std::fs::write(path, grid_to_bytes(grid))?;
    Ok(())
}

/// Loads a grid; its id is the file stem.
pub fn load_grid(path: &Path) -> Result<GridField, FieldError> {
    let bytes = std::fs::read(path)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    grid_from_bytes(id, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{bake_grid, AnalyticField, Primitive, Shape, Texture};
    use nalgebra::Vector3;

    fn checker_grid(res: u32) -> GridField {
        let prim = Primitive::new(Shape::Sphere { center: Point3::new(0.5, 0.5, 0.5), radius: 0.4 }, 30.0, Vector3::new(0.9, 0.2, 0.1))
            .with_texture(Texture::Checker { frequency: 8.0, alt: Vector3::new(0.1, 0.3, 0.9) });
        let oracle = AnalyticField::new("o", vec![prim]);
        bake_grid("g", &oracle, Aabb::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0)), [res; 3]).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let g = checker_grid(32);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.roigrid");
        save_grid(&g, &path).unwrap();
        let back = load_grid(&path).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn truncated_is_corrupt_header() {
        let bytes = grid_to_bytes(&checker_grid(4));
        for cut in [0, 7, 40, HEADER_LEN + 10, bytes.len() - 1] {
            assert!(matches!(grid_from_bytes("g", &bytes[..cut]), Err(FieldError::CorruptHeader(_))), "cut {cut}");
        }
    }

    #[test]
    fn flipped_payload_bit_is_checksum_mismatch() {
        let mut bytes = grid_to_bytes(&checker_grid(4));
        bytes[HEADER_LEN + 5] ^= 0x10;
        assert!(matches!(grid_from_bytes("g", &bytes), Err(FieldError::ChecksumMismatch { .. })));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = grid_to_bytes(&checker_grid(4));
        bytes[0] = b'X';
        assert!(matches!(grid_from_bytes("g", &bytes), Err(FieldError::CorruptHeader(_))));
    }
}
