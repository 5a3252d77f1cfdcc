use crate::dissim::dissim_gradient;
use crate::error::{Error, Result};

use super::{pair_energy, EmbeddingTable, EnergyConfig};

/// Gradient entries `(parameter index, value)`; indices may repeat.
pub type SparseGrad = Vec<(usize, f64)>;

/// One positive pair `(parent, child)` with corrupted children sharing the
/// same parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub parent: usize,
    pub child: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Dense gradient over every slot of the table.
    pub grad: Vec<f64>,
    /// Number of depth dissimilarity evaluations performed.
    pub depth_evals: u64,
}

/// Contribution of one positive and its negatives:
/// `max{E, γ1} + log Σ exp(max{γ2 − d_bd(neg), 0})`.
///
/// `negatives` holds `(d_bd, gradient)` per corruption. Gradients are
/// scattered into `grad`.
pub fn contrastive_term(
    positive: (f64, &SparseGrad),
    negatives: &[(f64, SparseGrad)],
    gamma1: f64,
    gamma2: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Config("every positive needs at least one negative".into()));
    }
    let (energy, pos_grad) = positive;
    let mut loss = energy.max(gamma1);
    if energy > gamma1 {
        for &(i, g) in pos_grad {
            grad[i] += g;
        }
    }

    let hinges: Vec<f64> = negatives.iter().map(|(d, _)| (gamma2 - d).max(0.0)).collect();
    let shift = hinges.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = hinges.iter().map(|h| (h - shift).exp()).collect();
    let total: f64 = weights.iter().sum();
    loss += shift + total.ln();
    for ((d, g), w) in negatives.iter().zip(&weights) {
        if gamma2 - d > 0.0 {
            // d/d(d_bd) of the hinge is -1, weighted by the softmax share
            let scale = -w / total;
            for &(i, gi) in g {
                grad[i] += scale * gi;
            }
        }
    }
    Ok(loss)
}

fn pair_grad(table: &EmbeddingTable, a: usize, b: usize, ga: &[f64], gb: &[f64]) -> SparseGrad {
    let (oa, ob) = (table.node_offset(a), table.node_offset(b));
    ga.iter()
        .enumerate()
        .map(|(k, g)| (oa + k, *g))
        .chain(gb.iter().enumerate().map(|(k, g)| (ob + k, *g)))
        .collect()
}

/// Contrastive loss summed (not averaged) over `samples`, with its gradient.
pub fn batch_loss(samples: &[Sample], table: &EmbeddingTable, cfg: &EnergyConfig) -> Result<LossOutput> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let boundary = cfg.boundary.dissim();
    let mut grad = vec![0.0; table.params().len()];
    let mut loss = 0.0;
    let mut depth_evals = 0;
    for s in samples {
        let parent = table.region(s.parent);
        let (pos, used_depth) = pair_energy(&parent, &table.region(s.child), cfg)?;
        depth_evals += u64::from(used_depth);
        let pos_grad = pair_grad(table, s.parent, s.child, &pos.grad_a, &pos.grad_b);

        let negatives = s
            .negatives
            .iter()
            .map(|&v| {
                let e = dissim_gradient(&boundary, &parent, &table.region(v))?;
                Ok((e.value, pair_grad(table, s.parent, v, &e.grad_a, &e.grad_b)))
            })
            .collect::<Result<Vec<_>>>()?;
        loss += contrastive_term((pos.value, &pos_grad), &negatives, cfg.gamma1, cfg.gamma2, &mut grad)?;
    }
    Ok(LossOutput {
        loss,
        grad,
        depth_evals,
    })
}
