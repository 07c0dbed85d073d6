use nalgebra::Vector3;

use super::{RenderError, ShadedSamples};
use crate::fields::Rgb;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureResult {
    /// Includes the background term `T_end * bg`.
    pub color: Rgb,
    pub weights: Vec<f64>,
    pub t_end: f64,
    pub opacity: f64,
    /// Depth at cumulative weight 0.5.
    pub depth: Option<f64>,
}

/// `C = sum_k T_k (1 - exp(-sigma_k delta_k)) c_k + T_end bg` with
/// `T_k = exp(-sum_{j<k} sigma_j delta_j)`. Invisible samples contribute
/// nothing.
pub fn quadrature(shaded: &ShadedSamples, background: &Rgb) -> Result<QuadratureResult, RenderError> {
    let n = shaded.count();
    let mut weights = Vec::with_capacity(n);
    let mut color = Vector3::zeros();
    let mut t = 1.0f64;
    let mut opacity = 0.0;
    for k in 0..n {
        let sigma = shaded.sigma[k];
        if !(sigma >= 0.0) {
            return Err(RenderError::NumericalDomain(format!("sample {k}: sigma = {sigma}")));
        }
        if !shaded.visible[k] {
            weights.push(0.0);
            continue;
        }
        let x = sigma * shaded.samples.deltas[k];
        if !x.is_finite() {
            return Err(RenderError::NumericalDomain(format!("sample {k}: sigma*delta = {x}")));
        }
        let alpha = -(-x).exp_m1();
        let w = t * alpha;
        weights.push(w);
        opacity += w;
        color += w * shaded.rgb[k];
        t *= (-x).exp();
    }
    color += t * background;
    let mut out = QuadratureResult { color, weights, t_end: t, opacity, depth: None };
    out.depth = depth_at_weight(&out, shaded, 0.5);
    Ok(out)
}

/// Smallest `t` at which the cumulative weight of visible samples reaches
/// `threshold`, interpolated linearly on the cumulative curve. `None` when
/// the ray never accumulates that much.
pub fn depth_at_weight(result: &QuadratureResult, shaded: &ShadedSamples, threshold: f64) -> Option<f64> {
    let ts = &shaded.samples.ts;
    let mut cum = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..ts.len() {
        if !shaded.visible[k] {
            continue;
        }
        let next = cum + result.weights[k];
        if next >= threshold {
            return Some(match prev {
                None => ts[k],
                Some((tp, cp)) => {
                    let span = next - cp;
                    if span > 0.0 {
                        tp + (threshold - cp) / span * (ts[k] - tp)
                    } else {
                        ts[k]
                    }
                }
            });
        }
        cum = next;
        prev = Some((ts[k], cum));
    }
    None
}
