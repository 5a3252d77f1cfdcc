use super::{sign0, Dissim, Evaluated};
use crate::error::Result;
use crate::regions::{euclidean, BallRegion, BoxRegion, Region};

/// Intersection-to-child volume ratio below which the volume dissimilarity
/// is clamped (and its gradient is zero).
pub const VOLUME_RATIO_FLOOR: f64 = 1e-10;

/// Signed translation cost of moving `child` into (positive) or out of
/// (negative) `parent`. Non-positive exactly when `child ⊆ parent`.
pub fn boundary_dissim(parent: &Region, child: &Region) -> Result<f64> {
    Ok(super::dissim_natural(&Dissim::Boundary, parent, child)?.value)
}

/// `-ln(vol(parent ∩ child) / vol(child))` with the ratio floored at
/// [`VOLUME_RATIO_FLOOR`].
pub fn volume_dissim(parent: &Region, child: &Region) -> Result<f64> {
    Ok(super::dissim_natural(&Dissim::Volume, parent, child)?.value)
}

/// `arcsinh((‖c₁ − c₂‖ − r₁) / r₂) + arcsinh(1)`.
pub fn cone_boundary_dissim(parent: &Region, child: &Region) -> Result<f64> {
    Ok(super::dissim_natural(&Dissim::Cone, parent, child)?.value)
}

pub(super) fn geometric_kernel(parent: &Region, child: &Region) -> Evaluated {
    match (parent, child) {
        (Region::Ball(p), Region::Ball(c)) => ball_kernel(p, c),
        (Region::Box(p), Region::Box(c)) => box_kernel(p, c),
        _ => unreachable!("kinds checked by caller"),
    }
}

fn ball_kernel(p: &BallRegion, c: &BallRegion) -> Evaluated {
    let n = p.dim();
    let dist = euclidean(&p.center, &c.center);
    let mut out = Evaluated::zeros(dist + c.radius() - p.radius(), n + 1);
    if dist > 0.0 {
        for i in 0..n {
            let u = (p.center[i] - c.center[i]) / dist;
            out.grad_a[i] = u;
            out.grad_b[i] = -u;
        }
    }
    out.grad_a[n] = -1.0;
    out.grad_b[n] = 1.0;
    out
}

fn box_kernel(p: &BoxRegion, c: &BoxRegion) -> Evaluated {
    let n = p.dim();
    let (op, oc) = (p.offsets(), c.offsets());
    let dc: Vec<f64> = p.center.iter().zip(&c.center).map(|(x, y)| x - y).collect();
    // same expression as the analytic containment predicate
    let contained = (0..n).all(|i| dc[i].abs() + oc[i] <= op[i]);
    let excess: Vec<f64> = (0..n).map(|i| dc[i].abs() + oc[i] - op[i]).collect();

    let mut out = Evaluated::zeros(0.0, 2 * n);
    let mut push = |i: usize, w: f64| {
        let s = sign0(dc[i]);
        out.grad_a[i] += w * s;
        out.grad_b[i] -= w * s;
        out.grad_a[n + i] -= w;
        out.grad_b[n + i] += w;
    };
    if contained {
        let mut best = 0;
        for i in 1..n {
            if excess[i] > excess[best] {
                best = i;
            }
        }
        push(best, 1.0);
        out.value = excess[best];
    } else {
        let norm = excess
            .iter()
            .map(|e| e.max(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            for (i, e) in excess.iter().enumerate() {
                if *e > 0.0 {
                    push(i, e / norm);
                }
            }
        }
        out.value = norm;
    }
    out
}

pub(super) fn volume_kernel(p: &BoxRegion, c: &BoxRegion) -> Evaluated {
    let n = p.dim();
    let (op, oc) = (p.offsets(), c.offsets());
    let floored = Evaluated::zeros(-VOLUME_RATIO_FLOOR.ln(), 2 * n);

    let mut log_ratio = 0.0;
    let mut lens = Vec::with_capacity(n);
    let mut upper_from_parent = Vec::with_capacity(n);
    let mut lower_from_parent = Vec::with_capacity(n);
    for i in 0..n {
        let (hp, hc) = (p.center[i] + op[i], c.center[i] + oc[i]);
        let (lp, lc) = (p.center[i] - op[i], c.center[i] - oc[i]);
        // ties resolve to the parent bound
        let up = hp <= hc;
        let lo = lp >= lc;
        let len = if up { hp } else { hc } - if lo { lp } else { lc };
        if len <= 0.0 {
            return floored;
        }
        log_ratio += (len / (2.0 * oc[i])).ln();
        lens.push(len);
        upper_from_parent.push(up);
        lower_from_parent.push(lo);
    }
    if log_ratio < VOLUME_RATIO_FLOOR.ln() {
        return floored;
    }

    let mut out = Evaluated::zeros(-log_ratio, 2 * n);
    for i in 0..n {
        let w = -1.0 / lens[i];
        // d len / d upper = 1, d len / d lower = -1
        let gu = if upper_from_parent[i] {
            &mut out.grad_a
        } else {
            &mut out.grad_b
        };
        gu[i] += w;
        gu[n + i] += w;
        let gl = if lower_from_parent[i] {
            &mut out.grad_a
        } else {
            &mut out.grad_b
        };
        gl[i] -= w;
        gl[n + i] += w;
        out.grad_b[n + i] += 1.0 / oc[i];
    }
    out
}

pub(super) fn cone_kernel(p: &BallRegion, c: &BallRegion) -> Evaluated {
    let n = p.dim();
    let (rp, rc) = (p.radius(), c.radius());
    let dist = euclidean(&p.center, &c.center);
    let z = (dist - rp) / rc;
    let mut out = Evaluated::zeros(z.asinh() + 1f64.asinh(), n + 1);
    let slope = 1.0 / (1.0 + z * z).sqrt();
    if dist > 0.0 {
        for i in 0..n {
            let g = slope * (p.center[i] - c.center[i]) / (dist * rc);
            out.grad_a[i] = g;
            out.grad_b[i] = -g;
        }
    }
    out.grad_a[n] = -slope / rc;
    out.grad_b[n] = -slope * z / rc;
    out
}
