//! Balls and axis-aligned boxes in Euclidean space.
//!
//! Trainable parameters store sizes as logarithms (`r = exp(ρ)`,
//! `o = exp(ω)`) so every region produced by an unconstrained optimizer step
//! is valid. The value types below keep the positive sizes themselves;
//! [`Region::param_vector`] returns `(center, r)` / `(center, o)` and
//! [`Region::raw_params`] the log-parameterized slots of an embedding table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Ball,
    Box,
}

impl RegionKind {
    /// Number of trainable slots per region of dimension `dim`.
    pub fn params_per_region(self, dim: usize) -> usize {
        match self {
            RegionKind::Ball => dim + 1,
            RegionKind::Box => 2 * dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionKind::Ball => "ball",
            RegionKind::Box => "box",
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ball" => Ok(RegionKind::Ball),
            "box" => Ok(RegionKind::Box),
            other => Err(Error::Config(format!("unknown region kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallRegion {
    pub center: Vec<f64>,
    radius: f64,
}

impl BallRegion {
    /// # Panics
    ///
    /// Panics if `radius` is not strictly positive.
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        assert!(radius > 0.0, "ball radius must be positive, got {radius}");
        Self { center, radius }
    }

    pub fn from_log(center: Vec<f64>, log_radius: f64) -> Self {
        Self {
            center,
            radius: log_radius.exp(),
        }
    }

    #[inline]
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn log_radius(&self) -> f64 {
        self.radius.ln()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        euclidean(&self.center, x) <= self.radius()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub center: Vec<f64>,
    offsets: Vec<f64>,
}

impl BoxRegion {
    /// # Panics
    ///
    /// Panics on length mismatch or a non-positive offset.
    pub fn new(center: Vec<f64>, offsets: Vec<f64>) -> Self {
        assert_eq!(center.len(), offsets.len(), "center/offset length mismatch");
        assert!(
            offsets.iter().all(|&o| o > 0.0),
            "box offsets must be positive, got {offsets:?}"
        );
        Self { center, offsets }
    }

    pub fn from_log(center: Vec<f64>, log_offset: &[f64]) -> Self {
        Self {
            center,
            offsets: log_offset.iter().map(|w| w.exp()).collect(),
        }
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn log_offsets(&self) -> Vec<f64> {
        self.offsets.iter().map(|o| o.ln()).collect()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.center
            .iter()
            .zip(self.offsets())
            .map(|(c, o)| c - o)
            .collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center
            .iter()
            .zip(self.offsets())
            .map(|(c, o)| c + o)
            .collect()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.center
            .iter()
            .zip(self.offsets())
            .zip(x)
            .all(|((c, o), xi)| (xi - c).abs() <= *o)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Ball(BallRegion),
    Box(BoxRegion),
}

impl From<BallRegion> for Region {
    fn from(b: BallRegion) -> Self {
        Region::Ball(b)
    }
}

impl From<BoxRegion> for Region {
    fn from(b: BoxRegion) -> Self {
        Region::Box(b)
    }
}

impl Region {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Region::Ball(BallRegion::new(center, radius))
    }

    pub fn cuboid(center: Vec<f64>, offsets: Vec<f64>) -> Self {
        Region::Box(BoxRegion::new(center, offsets))
    }

    pub fn kind(&self) -> RegionKind {
        match self {
            Region::Ball(_) => RegionKind::Ball,
            Region::Box(_) => RegionKind::Box,
        }
    }

    pub fn dim(&self) -> usize {
        self.center().len()
    }

    pub fn center(&self) -> &[f64] {
        match self {
            Region::Ball(b) => &b.center,
            Region::Box(b) => &b.center,
        }
    }

    pub fn center_mut(&mut self) -> &mut [f64] {
        match self {
            Region::Ball(b) => &mut b.center,
            Region::Box(b) => &mut b.center,
        }
    }

    /// Size values: `[r]` for balls, the offsets for boxes.
    pub fn sizes(&self) -> Vec<f64> {
        match self {
            Region::Ball(b) => vec![b.radius()],
            Region::Box(b) => b.offsets.clone(),
        }
    }

    /// `(center, r)` or `(center, o)` with raw (non-log) sizes.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut p = self.center().to_vec();
        p.extend(self.sizes());
        p
    }

    /// Log-parameterized slots as stored in an embedding table.
    pub fn raw_params(&self) -> Vec<f64> {
        let mut p = self.center().to_vec();
        match self {
            Region::Ball(b) => p.push(b.log_radius()),
            Region::Box(b) => p.extend(b.log_offsets()),
        }
        p
    }

    /// Inverse of [`Region::raw_params`].
    pub fn from_raw(kind: RegionKind, dim: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != kind.params_per_region(dim) {
            return Err(Error::ShapeMismatch(raw.len(), kind.params_per_region(dim)));
        }
        let center = raw[..dim].to_vec();
        Ok(match kind {
            RegionKind::Ball => Region::Ball(BallRegion::from_log(center, raw[dim])),
            RegionKind::Box => Region::Box(BoxRegion::from_log(center, &raw[dim..])),
        })
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball(b) => b.contains_point(x),
            Region::Box(b) => b.contains_point(x),
        }
    }

    pub(crate) fn check_compatible(&self, other: &Region) -> Result<()> {
        if self.kind() != other.kind() {
            return Err(Error::KindMismatch {
                expected: self.kind().name(),
                found: other.kind().name(),
            });
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Analytic containment test `inner ⊆ outer`.
pub fn contains_region(outer: &Region, inner: &Region) -> Result<bool> {
    outer.check_compatible(inner)?;
    Ok(match (outer, inner) {
        (Region::Ball(o), Region::Ball(i)) => {
            euclidean(&o.center, &i.center) + i.radius() <= o.radius()
        }
        (Region::Box(o), Region::Box(i)) => o
            .center
            .iter()
            .zip(&i.center)
            .zip(o.offsets().iter().zip(i.offsets()))
            .all(|((co, ci), (oo, oi))| (co - ci).abs() + oi <= *oo),
        _ => unreachable!("kinds checked above"),
    })
}

/// Product of the side lengths `2 o_i`.
pub fn box_volume(b: &BoxRegion) -> f64 {
    b.offsets.iter().map(|o| 2.0 * o).product()
}

/// Per-dimension intersection intervals of two boxes. An interval with
/// `lower > upper` marks an empty intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxIntersection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxIntersection {
    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| l > u)
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l).max(0.0))
            .product()
    }
}

pub fn box_intersection(a: &BoxRegion, b: &BoxRegion) -> Result<BoxIntersection> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let (la, ua, lb, ub) = (a.lower(), a.upper(), b.lower(), b.upper());
    Ok(BoxIntersection {
        lower: la.iter().zip(&lb).map(|(x, y)| x.max(*y)).collect(),
        upper: ua.iter().zip(&ub).map(|(x, y)| x.min(*y)).collect(),
    })
}
