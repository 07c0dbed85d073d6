use rand::Rng;

use super::{RaySamples, ShadedSamples};
use crate::geometry::Ray;

/// One sample per equal stratum of `[ray.t_near, ray.t_far]`; midpoints when
/// `jitter` is off.
pub fn stratified_samples<R: Rng + ?Sized>(ray: &Ray, n: usize, jitter: bool, rng: &mut R) -> RaySamples {
    assert!(n >= 1, "need at least one sample");
    let (a, b) = (ray.t_near, ray.t_far);
    let h = (b - a) / n as f64;
    let ts = (0..n)
        .map(|i| {
            let u = if jitter { rng.random::<f64>() } else { 0.5 };
            // keep inside the stratum even after rounding
            (a + (i as f64 + u) * h).clamp(a + i as f64 * h, b)
        })
        .collect();
    RaySamples::from_ts(ts, a, b)
}

/// Draws `n_fine` positions by inverse CDF over the coarse weights. Weight
/// `w_k` is spread uniformly over `[t_{k-1}, t_k]` (with `t_{-1} = t_near`),
/// the interval in which the density rise at `t_k` happened. Falls back to
/// uniform sampling of `[t_near, t_far]` when the ray carries no weight.
pub fn importance_ts<R: Rng + ?Sized>(coarse: &RaySamples, weights: &[f64], n_fine: usize, jitter: bool, rng: &mut R) -> Vec<f64> {
    if n_fine == 0 {
        return Vec::new();
    }
    let (a, b) = (coarse.t_near, coarse.t_far);
    let total: f64 = weights.iter().sum();
    let strat = |i: usize, rng: &mut R| {
        let xi = if jitter { rng.random::<f64>() } else { 0.5 };
        (i as f64 + xi) / n_fine as f64
    };
    if !(total > 1e-12) {
        return (0..n_fine).map(|i| (a + strat(i, rng) * (b - a)).clamp(a, b)).collect();
    }
    let mut cdf = Vec::with_capacity(weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in weights {
        acc += w / total;
        cdf.push(acc);
    }
    let edge = |k: usize| if k == 0 { a } else { coarse.ts[k - 1] };
    let mut out = Vec::with_capacity(n_fine);
    for i in 0..n_fine {
        let u = strat(i, rng).min(acc);
        // first bin whose upper cdf value reaches u and which has mass
        let mut k = cdf[1..].partition_point(|&c| c < u).min(weights.len() - 1);
        while weights[k] <= 0.0 && k + 1 < weights.len() {
            k += 1;
        }
        while weights[k] <= 0.0 && k > 0 {
            k -= 1;
        }
        let (lo, hi) = (edge(k), coarse.ts[k]);
        let f = ((u - cdf[k]) / (cdf[k + 1] - cdf[k])).clamp(0.0, 1.0);
        out.push((lo + f * (hi - lo)).clamp(a, b));
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Fine samples merged with the coarse ones, sorted.
pub fn importance_resample<R: Rng + ?Sized>(coarse: &ShadedSamples, weights: &[f64], n_fine: usize, jitter: bool, rng: &mut R) -> RaySamples {
    let mut ts = coarse.samples.ts.clone();
    ts.extend(importance_ts(&coarse.samples, weights, n_fine, jitter, rng));
    ts.sort_by(f64::total_cmp);
    RaySamples::from_ts(ts, coarse.samples.t_near, coarse.samples.t_far)
}

/// Merges two shaded sample sets of the same ray by t (stable, `a` first on
/// ties) and recomputes spacing.
pub fn merge_shaded(a: ShadedSamples, b: ShadedSamples) -> ShadedSamples {
    debug_assert_eq!(a.field_ids, b.field_ids);
    let n = a.count() + b.count();
    let (t_near, t_far) = (a.samples.t_near, a.samples.t_far);
    let mut ts = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut rgb = Vec::with_capacity(n);
    let mut visible = Vec::with_capacity(n);
    let mut source = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < a.count() || j < b.count() {
        let take_a = j >= b.count() || (i < a.count() && a.samples.ts[i] <= b.samples.ts[j]);
        let (s, k) = if take_a { (&a, i) } else { (&b, j) };
        ts.push(s.samples.ts[k]);
        sigma.push(s.sigma[k]);
        rgb.push(s.rgb[k]);
        visible.push(s.visible[k]);
        source.push(s.source[k]);
        if take_a {
            i += 1;
        } else {
            j += 1;
        }
    }
    ShadedSamples { samples: RaySamples::from_ts(ts, t_near, t_far), sigma, rgb, visible, source, field_ids: a.field_ids }
}
