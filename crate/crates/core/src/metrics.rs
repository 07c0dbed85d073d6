//! PSNR, SSIM and PSNR restricted to the pixels whose rays hit a box.
//!
//! All metrics work on linear RGB values in `[0, 1]`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pixel_ray, ray_aabb_intersect, Aabb};
use crate::rendering::ImageBuffer;
use crate::sfm::{CameraIntrinsics, ViewRecord};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("image is {got:?}, reference is {expected:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("image {0}x{1} is smaller than the 11x11 SSIM window")]
    ImageTooSmall(u32, u32),
    #[error("mask is empty")]
    EmptyMask,
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

fn same_size(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricError::DimensionMismatch { expected: (b.width, b.height), got: (a.width, a.height) });
    }
    Ok(())
}

fn psnr_from_sum(sq_sum: f64, n: usize) -> f64 {
    let mse = sq_sum / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn masked_sq_sum(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&[bool]>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, (p, q)) in a.rgb.iter().zip(&b.rgb).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for c in 0..3 {
            let d = p[c] as f64 - q[c] as f64;
            sum += d * d;
        }
        n += 3;
    }
    (sum, n)
}

/// `10 log10(1 / MSE)` over every channel; `+inf` for identical images.
pub fn psnr(image: &ImageBuffer, reference: &ImageBuffer) -> Result<f64, MetricError> {
    same_size(image, reference)?;
    if image.is_empty() {
        return Err(MetricError::EmptyMask);
    }
    let (s, n) = masked_sq_sum(image, reference, None);
    Ok(psnr_from_sum(s, n))
}

/// PSNR over the pixels where `mask` is set.
pub fn psnr_with_mask(image: &ImageBuffer, reference: &ImageBuffer, mask: &[bool]) -> Result<f64, MetricError> {
    same_size(image, reference)?;
    assert_eq!(mask.len(), image.len(), "mask size");
    let (s, n) = masked_sq_sum(image, reference, Some(mask));
    if n == 0 {
        return Err(MetricError::EmptyMask);
    }
    Ok(psnr_from_sum(s, n))
}

/// Pixels whose camera ray intersects `aabb`.
pub fn aabb_mask(aabb: &Aabb, view: &ViewRecord, intrinsics: &CameraIntrinsics) -> Vec<bool> {
    let (w, h) = (intrinsics.width as usize, intrinsics.height as usize);
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = pixel_ray(&view.pose, intrinsics, (i % w) as f64, (i / w) as f64);
            ray_aabb_intersect(&ray, aabb).is_some()
        })
        .collect()
}

pub fn masked_psnr(
    image: &ImageBuffer,
    reference: &ImageBuffer,
    aabb: &Aabb,
    view: &ViewRecord,
    intrinsics: &CameraIntrinsics,
) -> Result<f64, MetricError> {
    same_size(image, reference)?;
    if (intrinsics.width, intrinsics.height) != (image.width, image.height) {
        return Err(MetricError::DimensionMismatch {
            expected: (intrinsics.width, intrinsics.height),
            got: (image.width, image.height),
        });
    }
    psnr_with_mask(image, reference, &aabb_mask(aabb, view, intrinsics))
}

fn luma(img: &ImageBuffer) -> Vec<f64> {
    img.rgb.iter().map(|p| LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64).collect()
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode separable filtering; output is `(w - 10) x (h - 10)`.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM on Rec.709 luma, 11x11 Gaussian window (sigma 1.5), dynamic range 1.
pub fn ssim(image: &ImageBuffer, reference: &ImageBuffer) -> Result<f64, MetricError> {
    same_size(image, reference)?;
    let (w, h) = (image.width as usize, image.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::ImageTooSmall(image.width, image.height));
    }
    let k = gaussian_taps();
    let a = luma(image);
    let b = luma(reference);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter(&a, w, h, &k);
    let mu_b = filter(&b, w, h, &k);
    let aa = filter(&prod(&a, &a), w, h, &k);
    let bb = filter(&prod(&b, &b), w, h, &k);
    let ab = filter(&prod(&a, &b), w, h, &k);
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedScore {
    #[serde(with = "crate::serde_inf")]
    pub psnr: f64,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(with = "crate::serde_inf")]
    pub psnr: f64,
    /// Absent for images smaller than the SSIM window.
    pub ssim: Option<f64>,
    /// Only ROIs whose mask is non-empty in this view appear.
    pub masked_psnr: BTreeMap<String, MaskedScore>,
    pub pixels: usize,
}

/// Full report for one rendered view against its reference.
pub fn evaluate_image(
    image: &ImageBuffer,
    reference: &ImageBuffer,
    rois: &[(&str, &Aabb)],
    view: &ViewRecord,
    intrinsics: &CameraIntrinsics,
) -> Result<MetricReport, MetricError> {
    let p = psnr(image, reference)?;
    let s = match ssim(image, reference) {
        Ok(v) => Some(v),
        Err(MetricError::ImageTooSmall(..)) => None,
        Err(e) => return Err(e),
    };
    let mut masked = BTreeMap::new();
    for (name, aabb) in rois {
        let mask = aabb_mask(aabb, view, intrinsics);
        let pixels = mask.iter().filter(|m| **m).count();
        if pixels == 0 {
            continue;
        }
        let psnr = psnr_with_mask(image, reference, &mask)?;
        masked.insert(name.to_string(), MaskedScore { psnr, pixels });
    }
    Ok(MetricReport { psnr: p, ssim: s, masked_psnr: masked, pixels: image.len() })
}
