//! Dissimilarities between regions and their analytic gradients.
//!
//! Every kernel produces the value together with gradients with respect to
//! the *natural* parameters `(center, r)` / `(center, o)` of both arguments.
//! [`Evaluated::into_log_space`] chains them through the exponential size
//! map so they line up with the slots of an embedding table.
//!
//! Subgradient conventions at non-differentiable points:
//! `d/dx max(x, 0) = 0` at `x = 0`, `d/dx |x| = 0` at `x = 0`, the unit
//! vector of a zero difference is the zero vector, and ties in a
//! max-over-dimensions go to the lowest index.

mod boundary;
mod depth;
mod hyperbolic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regions::{Region, RegionKind};

pub use boundary::{boundary_dissim, cone_boundary_dissim, volume_dissim, VOLUME_RATIO_FLOOR};
pub use depth::{depth_dissim, depth_dissim_hyperbolic_config};
pub use hyperbolic::{arcosh1p, halfspace_distance};

/// Outer monotone map `g` of the depth dissimilarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GFn {
    /// `g(x) = k x + b`, `k > 0`.
    Linear { k: f64, b: f64 },
    /// `g(x) = arcosh(x + 1)`.
    ArcoshPlusOne,
}

/// Region size `f` in the depth dissimilarity denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SizeFn {
    /// `f = r` (balls).
    Radius,
    /// `f = ‖o‖₂` (boxes).
    OffsetNorm,
    /// `f = s·r` (balls).
    ScaledRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthConfig {
    /// Norm exponent, 1 or 2. The numerator is `‖ΔP‖ₚᵖ` (no root).
    pub p: u32,
    pub g: GFn,
    pub f: SizeFn,
}

impl DepthConfig {
    /// `g(x) = x` with the natural size of `kind`.
    pub fn linear(kind: RegionKind, p: u32) -> Self {
        Self {
            p,
            g: GFn::Linear { k: 1.0, b: 0.0 },
            f: match kind {
                RegionKind::Ball => SizeFn::Radius,
                RegionKind::Box => SizeFn::OffsetNorm,
            },
        }
    }

    /// `p = 2`, `g(x) = arcosh(x + 1)`, `f = √2·r`: the ball space with this
    /// configuration is isometric to the upper half-space model.
    pub fn hyperbolic() -> Self {
        Self {
            p: 2,
            g: GFn::ArcoshPlusOne,
            f: SizeFn::ScaledRadius(std::f64::consts::SQRT_2),
        }
    }

    pub fn validate(&self, kind: RegionKind) -> Result<()> {
        if self.p != 1 && self.p != 2 {
            return Err(Error::Config(format!("p must be 1 or 2, got {}", self.p)));
        }
        if let GFn::Linear { k, .. } = self.g {
            if k <= 0.0 || !k.is_finite() {
                return Err(Error::Config(format!("linear g needs k > 0, got {k}")));
            }
        }
        match (self.f, kind) {
            (SizeFn::ScaledRadius(s), RegionKind::Ball) if s > 0.0 && s.is_finite() => Ok(()),
            (SizeFn::ScaledRadius(s), RegionKind::Ball) => {
                Err(Error::Config(format!("radius scale must be positive, got {s}")))
            }
            (SizeFn::Radius, RegionKind::Ball) | (SizeFn::OffsetNorm, RegionKind::Box) => Ok(()),
            (f, kind) => Err(Error::Unsupported(format!("size function {f:?} on {kind} regions"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryVariant {
    /// Signed translation distance (balls and boxes).
    Geometric,
    /// `-ln(vol(parent ∩ child) / vol(child))`, boxes only.
    Volume,
    /// Cone-apex distance for balls.
    Cone,
}

impl BoundaryVariant {
    pub fn validate(self, kind: RegionKind) -> Result<()> {
        match (self, kind) {
            (BoundaryVariant::Volume, RegionKind::Ball) => {
                Err(Error::Unsupported("volume boundary requires boxes".into()))
            }
            (BoundaryVariant::Cone, RegionKind::Box) => {
                Err(Error::Unsupported("cone boundary requires balls".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn dissim(self) -> Dissim {
        match self {
            BoundaryVariant::Geometric => Dissim::Boundary,
            BoundaryVariant::Volume => Dissim::Volume,
            BoundaryVariant::Cone => Dissim::Cone,
        }
    }
}

impl std::str::FromStr for BoundaryVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(BoundaryVariant::Geometric),
            "volume" => Ok(BoundaryVariant::Volume),
            "cone" => Ok(BoundaryVariant::Cone),
            other => Err(Error::Config(format!("unknown boundary variant `{other}`"))),
        }
    }
}

/// Selects one of the dissimilarities for [`dissim_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dissim {
    Depth(DepthConfig),
    Boundary,
    Volume,
    Cone,
}

/// A dissimilarity value with gradients for its two arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

impl Evaluated {
    pub(crate) fn zeros(value: f64, len: usize) -> Self {
        Self {
            value,
            grad_a: vec![0.0; len],
            grad_b: vec![0.0; len],
        }
    }

    /// Converts natural-parameter gradients into gradients over
    /// `(center, log_radius)` / `(center, log_offset)`.
    pub fn into_log_space(mut self, a: &Region, b: &Region) -> Self {
        chain_sizes(&mut self.grad_a, a);
        chain_sizes(&mut self.grad_b, b);
        self
    }
}

fn chain_sizes(grad: &mut [f64], region: &Region) {
    let n = region.dim();
    for (g, s) in grad[n..].iter_mut().zip(region.sizes()) {
        *g *= s;
    }
}

/// Value and gradient with respect to the natural parameters.
pub fn dissim_natural(sel: &Dissim, a: &Region, b: &Region) -> Result<Evaluated> {
    a.check_compatible(b)?;
    match sel {
        Dissim::Depth(cfg) => {
            cfg.validate(a.kind())?;
            Ok(depth::depth_kernel(a, b, cfg))
        }
        Dissim::Boundary => Ok(boundary::geometric_kernel(a, b)),
        Dissim::Volume => match (a, b) {
            (Region::Box(pa), Region::Box(pb)) => Ok(boundary::volume_kernel(pa, pb)),
            _ => Err(Error::KindMismatch {
                expected: "box",
                found: a.kind().name(),
            }),
        },
        Dissim::Cone => match (a, b) {
            (Region::Ball(pa), Region::Ball(pb)) => Ok(boundary::cone_kernel(pa, pb)),
            _ => Err(Error::KindMismatch {
                expected: "ball",
                found: a.kind().name(),
            }),
        },
    }
}

/// Value and gradient with respect to the log-parameterized slots of `a`
/// and `b`.
pub fn dissim_gradient(sel: &Dissim, a: &Region, b: &Region) -> Result<Evaluated> {
    Ok(dissim_natural(sel, a, b)?.into_log_space(a, b))
}

#[inline]
pub(crate) fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
