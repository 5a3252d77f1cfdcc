//! Energy of a (parent, child) pair, the contrastive training loss, and the
//! trainable embedding table.

mod loss;
mod table;

use serde::{Deserialize, Serialize};

use crate::dissim::{dissim_gradient, BoundaryVariant, DepthConfig, Dissim, Evaluated};
use crate::error::Result;
use crate::regions::{Region, RegionKind};

pub use loss::{batch_loss, contrastive_term, LossOutput, Sample, SparseGrad};
pub use table::{EmbeddingTable, INIT_OFFSET, LOG_SIZE_FLOOR};

/// Hinge margin on positive energies for hierarchy tasks.
pub const DAG_GAMMA1: f64 = 0.001;
/// Hinge margin on negative boundary dissimilarities for hierarchy tasks.
pub const DAG_GAMMA2: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    /// Weight of the depth term.
    pub lambda: f64,
    pub depth: DepthConfig,
    pub boundary: BoundaryVariant,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl EnergyConfig {
    /// Margins `γ1 = 0.001`, `γ2 = 0`.
    pub fn dag(kind: RegionKind, lambda: f64) -> Self {
        Self {
            lambda,
            depth: DepthConfig::linear(kind, 2),
            boundary: BoundaryVariant::Geometric,
            gamma1: DAG_GAMMA1,
            gamma2: DAG_GAMMA2,
        }
    }

    /// Both margins zero.
    pub fn ontology(kind: RegionKind, lambda: f64) -> Self {
        Self {
            gamma1: 0.0,
            gamma2: 0.0,
            ..Self::dag(kind, lambda)
        }
    }

    pub fn validate(&self, kind: RegionKind) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(crate::Error::Config(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            )));
        }
        self.boundary.validate(kind)?;
        self.depth.validate(kind)
    }
}

/// Energy `d_bd(parent, child) + λ·d_dep(parent, child)` with gradients over
/// the log-parameterized slots of both regions. The flag reports whether the
/// depth term was evaluated (it is skipped when `λ = 0`).
pub fn pair_energy(parent: &Region, child: &Region, cfg: &EnergyConfig) -> Result<(Evaluated, bool)> {
    let mut e = dissim_gradient(&cfg.boundary.dissim(), parent, child)?;
    if cfg.lambda == 0.0 {
        return Ok((e, false));
    }
    let d = dissim_gradient(&Dissim::Depth(cfg.depth), parent, child)?;
    e.value += cfg.lambda * d.value;
    for (g, h) in e.grad_a.iter_mut().zip(&d.grad_a) {
        *g += cfg.lambda * h;
    }
    for (g, h) in e.grad_b.iter_mut().zip(&d.grad_b) {
        *g += cfg.lambda * h;
    }
    Ok((e, true))
}

/// Energy of the pair `(parent, child)` looked up by id.
pub fn energy(table: &EmbeddingTable, parent: &str, child: &str, cfg: &EnergyConfig) -> Result<f64> {
    let p = table.region_of(parent)?;
    let c = table.region_of(child)?;
    Ok(pair_energy(&p, &c, cfg)?.0.value)
}

pub fn energy_by_index(table: &EmbeddingTable, parent: usize, child: usize, cfg: &EnergyConfig) -> Result<f64> {
    Ok(pair_energy(&table.region(parent), &table.region(child), cfg)?.0.value)
}

/// `parent ≺ child` is predicted when the energy is at most `threshold`.
pub fn predict(
    table: &EmbeddingTable,
    parent: &str,
    child: &str,
    cfg: &EnergyConfig,
    threshold: f64,
) -> Result<bool> {
    Ok(energy(table, parent, child, cfg)? <= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissim::boundary_dissim;

    fn table(regions: Vec<Region>) -> EmbeddingTable {
        EmbeddingTable::from_regions(
            regions
                .into_iter()
                .enumerate()
                .map(|(i, r)| (format!("n{i}"), r))
                .collect(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn lambda_zero_is_boundary() {
        let p = Region::ball(vec![0.0, 0.0], 2.0);
        let c = Region::ball(vec![0.5, 0.3], 0.7);
        let cfg = EnergyConfig::dag(RegionKind::Ball, 0.0);
        let (e, depth_used) = pair_energy(&p, &c, &cfg).unwrap();
        assert_eq!(e.value, boundary_dissim(&p, &c).unwrap());
        assert!(!depth_used);
    }

    #[test]
    fn weighted_sum_example() {
        let t = table(vec![
            Region::ball(vec![0.0, 0.0], 2.0),
            Region::ball(vec![0.0, 0.0], 1.0),
        ]);
        let cfg = EnergyConfig::dag(RegionKind::Ball, 1.0);
        let e = energy(&t, "n0", "n1", &cfg).unwrap();
        assert!((e + 0.5).abs() < 1e-14, "{e}");
        assert_eq!(energy(&t, "n0", "n0", &cfg).unwrap(), 0.0);
        assert!(energy(&t, "n0", "missing", &cfg).is_err());
    }

    #[test]
    fn closed_threshold() {
        let t = table(vec![
            Region::ball(vec![0.0, 0.0], 2.0),
            Region::ball(vec![0.0, 0.0], 1.0),
            Region::ball(vec![1.2, 0.0], 1.0),
        ]);
        let cfg = EnergyConfig::dag(RegionKind::Ball, 0.0);
        // E(n0, n1) = -1, E(n0, n2) = 0.2
        assert!(predict(&t, "n0", "n1", &cfg, 0.0).unwrap());
        assert!(!predict(&t, "n0", "n2", &cfg, 0.0).unwrap());
        let e = energy(&t, "n0", "n2", &cfg).unwrap();
        assert!(predict(&t, "n0", "n2", &cfg, e).unwrap());
        let cfg = EnergyConfig::dag(RegionKind::Ball, 1.0);
        assert!(predict(&t, "n0", "n1", &cfg, -0.5).unwrap());
    }

    #[test]
    fn validation() {
        let mut cfg = EnergyConfig::dag(RegionKind::Box, 0.5);
        assert!(cfg.validate(RegionKind::Box).is_ok());
        assert!(cfg.validate(RegionKind::Ball).is_err());
        cfg.lambda = -1.0;
        assert!(cfg.validate(RegionKind::Box).is_err());
    }
}
