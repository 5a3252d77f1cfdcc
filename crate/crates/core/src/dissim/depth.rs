use super::{arcosh1p, sign0, DepthConfig, Dissim, Evaluated, GFn, SizeFn};
use crate::error::{Error, Result};
use crate::regions::{BallRegion, Region};

/// `g(‖P(a) − P(b)‖ₚᵖ / (f(a) f(b)))`.
pub fn depth_dissim(a: &Region, b: &Region, cfg: &DepthConfig) -> Result<f64> {
    Ok(super::dissim_natural(&Dissim::Depth(*cfg), a, b)?.value)
}

/// Depth dissimilarity with `p = 2`, `g(x) = arcosh(x + 1)`, `f = √2·r`.
pub fn depth_dissim_hyperbolic_config(a: &BallRegion, b: &BallRegion) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let a = Region::Ball(a.clone());
    let b = Region::Ball(b.clone());
    Ok(depth_kernel(&a, &b, &DepthConfig::hyperbolic()).value)
}

#[inline]
fn pow_p(x: f64, p: u32) -> f64 {
    if p == 1 {
        x.abs()
    } else {
        x * x
    }
}

#[inline]
fn dpow_p(x: f64, p: u32) -> f64 {
    if p == 1 {
        sign0(x)
    } else {
        2.0 * x
    }
}

/// Size `f(region)` and its gradient over the natural size slots.
fn size_and_grad(f: SizeFn, sizes: &[f64]) -> (f64, Vec<f64>) {
    match f {
        SizeFn::Radius => (sizes[0], vec![1.0]),
        SizeFn::ScaledRadius(s) => (s * sizes[0], vec![s]),
        SizeFn::OffsetNorm => {
            let norm = sizes.iter().map(|o| o * o).sum::<f64>().sqrt();
            (norm, sizes.iter().map(|o| o / norm).collect())
        }
    }
}

pub(super) fn depth_kernel(a: &Region, b: &Region, cfg: &DepthConfig) -> Evaluated {
    let n = a.dim();
    let p = cfg.p;
    let (sa, sb) = (a.sizes(), b.sizes());
    let (fa, dfa) = size_and_grad(cfg.f, &sa);
    let (fb, dfb) = size_and_grad(cfg.f, &sb);
    let denom = fa * fb;

    let dc: Vec<f64> = a.center().iter().zip(b.center()).map(|(x, y)| x - y).collect();
    let ds: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x - y).collect();
    let numer: f64 = dc.iter().chain(&ds).map(|d| pow_p(*d, p)).sum();
    let x = numer / denom;

    let (value, slope) = match cfg.g {
        GFn::Linear { k, b } => (k * x + b, k),
        GFn::ArcoshPlusOne => {
            let root = (x * (x + 2.0)).sqrt();
            // derivative blows up at x = 0; use the zero subgradient there
            let slope = if root > 0.0 { 1.0 / root } else { 0.0 };
            (arcosh1p(x), slope)
        }
    };

    let len = n + sa.len();
    let mut out = Evaluated::zeros(value, len);
    for (i, d) in dc.iter().enumerate() {
        let g = slope * dpow_p(*d, p) / denom;
        out.grad_a[i] = g;
        out.grad_b[i] = -g;
    }
    for (j, d) in ds.iter().enumerate() {
        let g = dpow_p(*d, p) / denom;
        out.grad_a[n + j] = slope * (g - x * dfa[j] / fa);
        out.grad_b[n + j] = slope * (-g - x * dfb[j] / fb);
    }
    out
}
