//! Minibatch training with Adam, shared by the hierarchy and ontology tasks.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{best_threshold_f1, Scored};
use crate::graph::{sample_corruptions, Edge};
use crate::model::{batch_loss, energy_by_index, EmbeddingTable, EnergyConfig, LossOutput, Sample};
use crate::ontology::{axiom_energy, corrupt, ontology_batch_loss, Axiom, OntologyConfig, OntologySample};
use crate::optim::AdamState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Corruptions per positive.
    pub negatives: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.negatives == 0 {
            return Err(Error::Config("batch_size and negatives must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub valid_f1: Option<f64>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub last: Option<EpochLog>,
    /// Depth dissimilarity evaluations over the whole run.
    pub depth_evals: u64,
}

/// Best validation F1 and its threshold, or `None` when the validation set
/// does not contain both classes.
pub fn validation_f1(scored: &[Scored]) -> Result<Option<(f64, f64)>> {
    match best_threshold_f1(scored) {
        Ok((t, f1)) => Ok(Some((t, f1))),
        Err(Error::SingleClass) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run<P>(
    table: &mut EmbeddingTable,
    positives: &[P],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut loss: impl FnMut(&[&P], &EmbeddingTable, &mut ChaCha8Rng) -> Result<LossOutput>,
    mut validate: impl FnMut(&EmbeddingTable) -> Result<Option<(f64, f64)>>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if positives.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut adam = AdamState::new(table.params().len(), cfg.lr);
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut report = TrainReport {
        last: None,
        depth_evals: 0,
    };
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&P> = chunk.iter().map(|&i| &positives[i]).collect();
            let out = loss(&batch, table, rng)?;
            total += out.loss;
            report.depth_evals += out.depth_evals;
            adam.step(table.params_mut(), &out.grad)?;
            table.clamp_log_sizes();
        }
        let valid = validate(table)?;
        let log = EpochLog {
            epoch,
            loss: total,
            valid_f1: valid.map(|v| v.1),
            threshold: valid.map(|v| v.0),
        };
        log::debug!("epoch {epoch}: loss {total:.6}");
        on_epoch(&log);
        report.last = Some(log);
    }
    Ok(report)
}

/// Energies of labeled `(parent, child)` pairs.
pub fn score_edges(table: &EmbeddingTable, pairs: &[(Edge, bool)], energy: &EnergyConfig) -> Result<Vec<Scored>> {
    pairs
        .iter()
        .map(|&((p, c), label)| Ok(Scored::new(energy_by_index(table, p, c, energy)?, label)))
        .collect()
}

pub fn score_axioms(table: &EmbeddingTable, axioms: &[(Axiom<usize>, bool)], cfg: &OntologyConfig) -> Result<Vec<Scored>> {
    axioms
        .iter()
        .map(|(ax, label)| Ok(Scored::new(axiom_energy(ax, table, cfg)?, *label)))
        .collect()
}

/// Trains on hierarchy edges; negatives replace the child, avoiding
/// training positives.
pub fn train_dag(
    table: &mut EmbeddingTable,
    train: &[Edge],
    valid: &[(Edge, bool)],
    energy: &EnergyConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    energy.validate(table.kind())?;
    let positives: HashSet<Edge> = train.iter().copied().collect();
    let n = table.num_nodes();
    run(
        table,
        train,
        cfg,
        rng,
        |batch, table, rng| {
            let samples = batch
                .iter()
                .map(|&&(p, c)| {
                    let negatives = sample_corruptions(n, cfg.negatives, |v| v == p || positives.contains(&(p, v)), rng)
                        .ok_or_else(|| Error::NoValidCorruption(table.ids()[p].clone()))?;
                    Ok(Sample {
                        parent: p,
                        child: c,
                        negatives,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            batch_loss(&samples, table, energy)
        },
        |table| validation_f1(&score_edges(table, valid, energy)?),
        on_epoch,
    )
}

/// Trains on normalized axioms; negatives corrupt one concept name,
/// avoiding training axioms.
pub fn train_ontology(
    table: &mut EmbeddingTable,
    train: &[Axiom<usize>],
    valid: &[(Axiom<usize>, bool)],
    ocfg: &OntologyConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    ocfg.validate(table.kind())?;
    let known: HashSet<Axiom<usize>> = train.iter().cloned().collect();
    let n = table.num_nodes();
    run(
        table,
        train,
        cfg,
        rng,
        |batch, table, rng| {
            let samples = batch
                .iter()
                .map(|&ax| {
                    Ok(OntologySample {
                        axiom: ax.clone(),
                        negatives: corrupt(ax, n, cfg.negatives, &known, rng)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ontology_batch_loss(&samples, table, ocfg)
        },
        |table| validation_f1(&score_axioms(table, valid, ocfg)?),
        on_epoch,
    )
}
