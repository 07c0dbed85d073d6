use std::io::Write;
use std::path::Path;

use super::RenderError;

/// Linear RGB image with per-pixel depth (NaN where the ray escaped) and
/// accumulated opacity. Row-major, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f32; 3]>,
    pub depth: Vec<f32>,
    pub opacity: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, rgb: vec![[0.0; 3]; n], depth: vec![f32::NAN; n], opacity: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.rgb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rgb.is_empty()
    }

    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    pub fn pixel(&self, u: u32, v: u32) -> [f32; 3] {
        self.rgb[self.index(u, v)]
    }

    /// Bitwise comparison that treats NaN depths as equal to each other.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.width == other.width
            && self.height == other.height
            && bits(self.rgb.as_flattened()) == bits(other.rgb.as_flattened())
            && bits(&self.depth) == bits(&other.depth)
            && bits(&self.opacity) == bits(&other.opacity)
    }

    /// Little-endian color PFM, bottom row first as the format requires.
    pub fn to_pfm(&self) -> Vec<u8> {
        let mut out = format!("PF\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for v in (0..self.height).rev() {
            for u in 0..self.width {
                for c in self.pixel(u, v) {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn write_pfm(&self, path: &Path) -> Result<(), RenderError> {
        std::fs::write(path, self.to_pfm())?;
        Ok(())
    }

    /// 8-bit sRGB-ish values with gamma 2.2.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.rgb
            .iter()
            .flatten()
            .map(|&c| (c.clamp(0.0, 1.0).powf(1.0 / 2.2) * 255.0).round() as u8)
            .collect()
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_rgb8());
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), RenderError> {
        std::fs::write(path, self.to_ppm())?;
        Ok(())
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| RenderError::Format(e.to_string()))?;
            w.write_image_data(&self.to_rgb8()).map_err(|e| RenderError::Format(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn write_png(&self, path: &Path) -> Result<(), RenderError> {
        let bytes = self.to_png()?;
        std::fs::File::create(path)?.write_all(&bytes)?;
        Ok(())
    }

    /// Writes by extension: `.pfm`, `.ppm` or `.png`.
    pub fn write_auto(&self, path: &Path) -> Result<(), RenderError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("pfm") => self.write_pfm(path),
            Some("ppm") => self.write_ppm(path),
            Some("png") => self.write_png(path),
            other => Err(RenderError::Format(format!("unknown image extension {other:?}"))),
        }
    }
}

/// Reads a color PFM written by [`ImageBuffer::to_pfm`]. Depth and opacity
/// are not stored and come back as NaN and 0.
pub fn read_pfm(bytes: &[u8]) -> Result<ImageBuffer, RenderError> {
    let bad = |m: &str| RenderError::Format(m.to_string());
    let mut lines = 0;
    let mut pos = 0;
    while lines < 3 {
        let nl = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
        pos += nl + 1;
        lines += 1;
    }
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| bad("header not utf-8"))?;
    let mut it = header.split_whitespace();
    if it.next() != Some("PF") {
        return Err(bad("not a color PFM"));
    }
    let w: u32 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("width"))?;
    let h: u32 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("height"))?;
    let scale: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("scale"))?;
    if scale >= 0.0 {
        return Err(bad("big-endian PFM not supported"));
    }
    let body = &bytes[pos..];
    if body.len() != w as usize * h as usize * 12 {
        return Err(bad("payload size"));
    }
    let mut img = ImageBuffer::new(w, h);
    let mut vals = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    for v in (0..h).rev() {
        for u in 0..w {
            let i = img.index(u, v);
            img.rgb[i] = [vals.next().unwrap(), vals.next().unwrap(), vals.next().unwrap()];
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImageBuffer {
        let mut img = ImageBuffer::new(3, 2);
        for (i, p) in img.rgb.iter_mut().enumerate() {
            *p = [i as f32 * 0.1, 0.5, 1.0 / (i as f32 + 3.0)];
        }
        img
    }

    #[test]
    fn pfm_round_trip_is_exact() {
        let img = sample();
        let back = read_pfm(&img.to_pfm()).unwrap();
        assert_eq!(back.rgb, img.rgb);
    }

    #[test]
    fn png_decodes() {
        let img = sample();
        let bytes = img.to_png().unwrap();
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (3, 2));
        assert_eq!(&buf[..info.buffer_size()], img.to_rgb8().as_slice());
    }

    #[test]
    fn gamma_endpoints() {
        let mut img = ImageBuffer::new(2, 1);
        img.rgb = vec![[0.0, 1.0, 0.5], [2.0, -1.0, 0.218]];
        assert_eq!(img.to_rgb8(), vec![0, 255, 186, 255, 0, 128]);
    }
}
