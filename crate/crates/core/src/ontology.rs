//! Normalized EL axioms scored with box (ELBE-style) or ball (ELEM-style)
//! concept embeddings, optionally with the RegD energy and loss.
//!
//! Subsumption `C ⊑ D` is scored as the pair energy with `D` as parent and
//! `C` as child. Existentials `∃r.B` translate the region of `B` by `−v_r`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dissim::{dissim_natural, sign0, Dissim, Evaluated};
use crate::error::{Error, Result};
use crate::eval::{pessimistic_rank, RankResult};
use crate::model::{contrastive_term, EmbeddingTable, EnergyConfig, LossOutput, SparseGrad};
use crate::regions::{euclidean, Region, RegionKind};

/// Smallest size given to an approximated conjunction region.
pub const MEET_SIZE_FLOOR: f64 = 1e-8;
/// Weight of the ELEM unit-norm center regularizer.
pub const ELEM_RHO: f64 = 0.1;

/// The four normal forms. Fields hold concept names (or indices) and role
/// names (or indices).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axiom<T> {
    /// `sub ⊑ sup`
    Nf1 { sub: T, sup: T },
    /// `left ⊓ right ⊑ sup`
    Nf2 { left: T, right: T, sup: T },
    /// `sub ⊑ ∃role.filler`
    Nf3 { sub: T, role: T, filler: T },
    /// `∃role.filler ⊑ sup`
    Nf4 { role: T, filler: T, sup: T },
}

impl<T: Clone> Axiom<T> {
    pub fn concepts(&self) -> Vec<T> {
        match self {
            Axiom::Nf1 { sub, sup } => vec![sub.clone(), sup.clone()],
            Axiom::Nf2 { left, right, sup } => vec![left.clone(), right.clone(), sup.clone()],
            Axiom::Nf3 { sub, filler, .. } => vec![sub.clone(), filler.clone()],
            Axiom::Nf4 { filler, sup, .. } => vec![filler.clone(), sup.clone()],
        }
    }

    pub fn role(&self) -> Option<&T> {
        match self {
            Axiom::Nf3 { role, .. } | Axiom::Nf4 { role, .. } => Some(role),
            _ => None,
        }
    }

    /// Same axiom with concept position `pos` (in [`Axiom::concepts`] order)
    /// replaced.
    pub fn with_concept(&self, pos: usize, c: T) -> Self {
        let mut out = self.clone();
        let slot = match (&mut out, pos) {
            (Axiom::Nf1 { sub, .. }, 0) => sub,
            (Axiom::Nf1 { sup, .. }, 1) => sup,
            (Axiom::Nf2 { left, .. }, 0) => left,
            (Axiom::Nf2 { right, .. }, 1) => right,
            (Axiom::Nf2 { sup, .. }, 2) => sup,
            (Axiom::Nf3 { sub, .. }, 0) => sub,
            (Axiom::Nf3 { filler, .. }, 1) => filler,
            (Axiom::Nf4 { filler, .. }, 0) => filler,
            (Axiom::Nf4 { sup, .. }, 1) => sup,
            _ => panic!("concept position {pos} out of range"),
        };
        *slot = c;
        out
    }

    fn try_map<U, E>(&self, mut concept: impl FnMut(&T) -> std::result::Result<U, E>, mut role: impl FnMut(&T) -> std::result::Result<U, E>) -> std::result::Result<Axiom<U>, E> {
        Ok(match self {
            Axiom::Nf1 { sub, sup } => Axiom::Nf1 { sub: concept(sub)?, sup: concept(sup)? },
            Axiom::Nf2 { left, right, sup } => Axiom::Nf2 {
                left: concept(left)?,
                right: concept(right)?,
                sup: concept(sup)?,
            },
            Axiom::Nf3 { sub, role: r, filler } => Axiom::Nf3 {
                sub: concept(sub)?,
                role: role(r)?,
                filler: concept(filler)?,
            },
            Axiom::Nf4 { role: r, filler, sup } => Axiom::Nf4 {
                role: role(r)?,
                filler: concept(filler)?,
                sup: concept(sup)?,
            },
        })
    }
}

impl fmt::Display for Axiom<String> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axiom::Nf1 { sub, sup } => write!(f, "nf1 {sub} {sup}"),
            Axiom::Nf2 { left, right, sup } => write!(f, "nf2 {left} {right} {sup}"),
            Axiom::Nf3 { sub, role, filler } => write!(f, "nf3 {sub} {role} {filler}"),
            Axiom::Nf4 { role, filler, sup } => write!(f, "nf4 {role} {filler} {sup}"),
        }
    }
}

/// One axiom per line: `nf1 A B`, `nf2 A B C`, `nf3 A r B`, `nf4 r B A`.
pub fn parse_axioms(text: &str) -> Result<Vec<Axiom<String>>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        let ax = match (t[0].to_ascii_lowercase().as_str(), t.len()) {
            ("nf1", 3) => Axiom::Nf1 { sub: t[1].clone(), sup: t[2].clone() },
            ("nf2", 4) => Axiom::Nf2 {
                left: t[1].clone(),
                right: t[2].clone(),
                sup: t[3].clone(),
            },
            ("nf3", 4) => Axiom::Nf3 {
                sub: t[1].clone(),
                role: t[2].clone(),
                filler: t[3].clone(),
            },
            ("nf4", 4) => Axiom::Nf4 {
                role: t[1].clone(),
                filler: t[2].clone(),
                sup: t[3].clone(),
            },
            _ => return Err(Error::parse(n + 1, format!("malformed axiom `{line}`"))),
        };
        out.push(ax);
    }
    Ok(out)
}

pub fn read_axioms(path: &Path) -> Result<Vec<Axiom<String>>> {
    parse_axioms(&std::fs::read_to_string(path)?)
}

/// Concept and role names in first-seen order.
pub fn vocabulary<'a>(axioms: impl IntoIterator<Item = &'a Axiom<String>>) -> (Vec<String>, Vec<String>) {
    let (mut concepts, mut roles) = (Vec::new(), Vec::new());
    let (mut seen_c, mut seen_r) = (HashSet::new(), HashSet::new());
    for ax in axioms {
        for c in ax.concepts() {
            if seen_c.insert(c.clone()) {
                concepts.push(c);
            }
        }
        if let Some(r) = ax.role() {
            if seen_r.insert(r.clone()) {
                roles.push(r.clone());
            }
        }
    }
    (concepts, roles)
}

/// Maps names to table indices, listing every unknown name on failure.
pub fn resolve(axioms: &[Axiom<String>], table: &EmbeddingTable) -> Result<Vec<Axiom<usize>>> {
    index_with(axioms, |c| table.node_index(c).ok(), |r| table.role_index(r).ok())
}

/// Indexes axioms against a fixed concept/role numbering, as used when
/// building a fresh table.
pub fn index_axioms(axioms: &[Axiom<String>], concepts: &[String], roles: &[String]) -> Result<Vec<Axiom<usize>>> {
    let ci: HashMap<&str, usize> = concepts.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let ri: HashMap<&str, usize> = roles.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    index_with(axioms, |c| ci.get(c).copied(), |r| ri.get(r).copied())
}

fn index_with(
    axioms: &[Axiom<String>],
    concept: impl Fn(&str) -> Option<usize>,
    role: impl Fn(&str) -> Option<usize>,
) -> Result<Vec<Axiom<usize>>> {
    let mut missing = BTreeSet::new();
    for ax in axioms {
        missing.extend(ax.concepts().into_iter().filter(|c| concept(c).is_none()));
        if let Some(r) = ax.role().filter(|r| role(r).is_none()) {
            missing.insert(format!("role {r}"));
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnknownIds(missing.into_iter().collect()));
    }
    Ok(axioms
        .iter()
        .map(|ax| ax.try_map(|c| concept(c).ok_or(()), |r| role(r).ok_or(())).expect("names checked"))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseModel {
    /// Boxes.
    Elbe,
    /// Balls.
    Elem,
}

impl BaseModel {
    pub fn kind(self) -> RegionKind {
        match self {
            BaseModel::Elbe => RegionKind::Box,
            BaseModel::Elem => RegionKind::Ball,
        }
    }
}

impl std::str::FromStr for BaseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "elbe" => Ok(BaseModel::Elbe),
            "elem" => Ok(BaseModel::Elem),
            _ => Err(Error::Config(format!("unknown base model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OntologyConfig {
    pub base: BaseModel,
    /// Score with the RegD energy and train with the contrastive loss.
    pub use_regd: bool,
    pub center_regularizer: bool,
    pub rho: f64,
    /// Margin of the hinge on negatives in the base loss.
    pub base_margin: f64,
    pub energy: EnergyConfig,
}

impl OntologyConfig {
    pub fn new(base: BaseModel, lambda: f64) -> Self {
        Self {
            base,
            use_regd: true,
            center_regularizer: base == BaseModel::Elem,
            rho: ELEM_RHO,
            base_margin: 1.0,
            energy: EnergyConfig::ontology(base.kind(), lambda),
        }
    }

    pub fn validate(&self, kind: RegionKind) -> Result<()> {
        if kind != self.base.kind() {
            return Err(Error::KindMismatch {
                expected: self.base.kind().name(),
                found: kind.name(),
            });
        }
        self.energy.validate(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `x ↦ x − v`
    Forward,
    /// `x ↦ x + v`
    Inverse,
}

pub fn translated_region(region: &Region, v: &[f64], dir: Direction) -> Result<Region> {
    if v.len() != region.dim() {
        return Err(Error::DimensionMismatch(region.dim(), v.len()));
    }
    let mut out = region.clone();
    for (c, x) in out.center_mut().iter_mut().zip(v) {
        match dir {
            Direction::Forward => *c -= x,
            Direction::Inverse => *c += x,
        }
    }
    Ok(out)
}

/// Translation by a role of the table, looked up by name.
pub fn translate_by_role(table: &EmbeddingTable, region: &Region, role: &str, dir: Direction) -> Result<Region> {
    translated_region(region, table.role_vector(table.role_index(role)?), dir)
}

/// Natural-parameter gradient of a pair term, or of a conjunction region.
struct Natural {
    value: f64,
    parent: Vec<f64>,
    child: Vec<f64>,
}

fn pair_natural(parent: &Region, child: &Region, cfg: &OntologyConfig, with_depth: bool) -> Result<Natural> {
    let Evaluated { mut value, mut grad_a, mut grad_b } = if cfg.use_regd {
        dissim_natural(&cfg.energy.boundary.dissim(), parent, child)?
    } else {
        dissim_natural(&Dissim::Boundary, parent, child)?
    };
    if !cfg.use_regd {
        // ‖max{·, 0}‖ for boxes and max{·, 0} for balls both reduce to the
        // positive part of the geometric boundary dissimilarity
        if value <= 0.0 {
            value = 0.0;
            grad_a.fill(0.0);
            grad_b.fill(0.0);
        }
    } else if with_depth && cfg.energy.lambda != 0.0 {
        let d = dissim_natural(&Dissim::Depth(cfg.energy.depth), parent, child)?;
        let l = cfg.energy.lambda;
        value += l * d.value;
        grad_a.iter_mut().zip(&d.grad_a).for_each(|(g, h)| *g += l * h);
        grad_b.iter_mut().zip(&d.grad_b).for_each(|(g, h)| *g += l * h);
    }
    Ok(Natural {
        value,
        parent: grad_a,
        child: grad_b,
    })
}

/// Region standing in for `A ⊓ B`, a penalty that is positive when the
/// two regions are disjoint, and the data needed to chain gradients back.
struct Meet {
    region: Region,
    penalty: f64,
    kind: MeetKind,
}

enum MeetKind {
    Box {
        /// Per dimension: which operand supplied the lower/upper bound.
        lo_src: Vec<usize>,
        hi_src: Vec<usize>,
        floored: Vec<bool>,
        /// Gradient of the penalty with respect to each lower bound.
        gap_grad: Vec<f64>,
    },
    Ball {
        unit: Vec<f64>,
        floored: bool,
        separated: bool,
    },
}

fn meet(a: &Region, b: &Region) -> Result<Meet> {
    a.check_compatible(b)?;
    match (a, b) {
        (Region::Box(ba), Region::Box(bb)) => {
            let n = ba.dim();
            let (la, ua, lb, ub) = (ba.lower(), ba.upper(), bb.lower(), bb.upper());
            let (mut center, mut offsets) = (Vec::with_capacity(n), Vec::with_capacity(n));
            let (mut lo_src, mut hi_src, mut floored, mut gaps) = (vec![0; n], vec![0; n], vec![false; n], vec![0.0; n]);
            for i in 0..n {
                // ties go to the first operand
                let (lo, ls) = if lb[i] > la[i] { (lb[i], 1) } else { (la[i], 0) };
                let (hi, hs) = if ub[i] < ua[i] { (ub[i], 1) } else { (ua[i], 0) };
                lo_src[i] = ls;
                hi_src[i] = hs;
                if ls == hs {
                    let src = if ls == 0 { ba } else { bb };
                    center.push(src.center[i]);
                    offsets.push(src.offsets()[i]);
                } else {
                    let half = (hi - lo) / 2.0;
                    floored[i] = !(half > MEET_SIZE_FLOOR);
                    center.push((lo + hi) / 2.0);
                    offsets.push(if floored[i] { MEET_SIZE_FLOOR } else { half });
                }
                gaps[i] = (lo - hi).max(0.0);
            }
            let penalty = gaps.iter().map(|g| g * g).sum::<f64>().sqrt();
            let gap_grad = if penalty > 0.0 {
                gaps.iter().map(|g| g / penalty).collect()
            } else {
                vec![0.0; n]
            };
            Ok(Meet {
                region: Region::cuboid(center, offsets),
                penalty,
                kind: MeetKind::Box {
                    lo_src,
                    hi_src,
                    floored,
                    gap_grad,
                },
            })
        }
        (Region::Ball(ba), Region::Ball(bb)) => {
            let (ra, rb) = (ba.radius(), bb.radius());
            let d = euclidean(&ba.center, &bb.center);
            let unit: Vec<f64> = if d > 0.0 {
                ba.center.iter().zip(&bb.center).map(|(x, y)| (x - y) / d).collect()
            } else {
                vec![0.0; ba.dim()]
            };
            let center: Vec<f64> = ba.center.iter().zip(&bb.center).map(|(x, y)| (x + y) / 2.0).collect();
            let half = (ra + rb - d) / 2.0;
            let floored = !(half > MEET_SIZE_FLOOR);
            let excess = d - ra - rb;
            Ok(Meet {
                region: Region::ball(center, if floored { MEET_SIZE_FLOOR } else { half }),
                penalty: excess.max(0.0),
                kind: MeetKind::Ball {
                    unit,
                    floored,
                    separated: excess > 0.0,
                },
            })
        }
        _ => unreachable!("checked compatible"),
    }
}

impl Meet {
    /// Chains a natural gradient over the meet region (and a weight on the
    /// penalty) back to the natural parameters of both operands.
    fn chain(&self, g: &[f64], penalty_weight: f64) -> [Vec<f64>; 2] {
        let len = g.len();
        let mut out = [vec![0.0; len], vec![0.0; len]];
        match &self.kind {
            MeetKind::Box {
                lo_src,
                hi_src,
                floored,
                gap_grad,
            } => {
                let n = lo_src.len();
                for i in 0..n {
                    let (gc, go) = (g[i], g[n + i]);
                    let (mut dlo, mut dhi) = (0.0, 0.0);
                    if lo_src[i] == hi_src[i] {
                        let s = &mut out[lo_src[i]];
                        s[i] += gc;
                        s[n + i] += go;
                    } else {
                        let go = if floored[i] { 0.0 } else { go };
                        dlo += gc / 2.0 - go / 2.0;
                        dhi += gc / 2.0 + go / 2.0;
                    }
                    dlo += penalty_weight * gap_grad[i];
                    dhi -= penalty_weight * gap_grad[i];
                    // lower = c − o, upper = c + o
                    out[lo_src[i]][i] += dlo;
                    out[lo_src[i]][n + i] -= dlo;
                    out[hi_src[i]][i] += dhi;
                    out[hi_src[i]][n + i] += dhi;
                }
            }
            MeetKind::Ball { unit, floored, separated } => {
                let n = unit.len();
                for i in 0..n {
                    out[0][i] += g[i] / 2.0;
                    out[1][i] += g[i] / 2.0;
                }
                // d‖cA − cB‖/dcA = u; the meet radius is (rA + rB − d)/2
                let mut dd = 0.0;
                if !floored {
                    out[0][n] += g[n] / 2.0;
                    out[1][n] += g[n] / 2.0;
                    dd -= g[n] / 2.0;
                }
                if *separated {
                    out[0][n] -= penalty_weight;
                    out[1][n] -= penalty_weight;
                    dd += penalty_weight;
                }
                for i in 0..n {
                    out[0][i] += dd * unit[i];
                    out[1][i] -= dd * unit[i];
                }
            }
        }
        out
    }
}

/// Adds a natural-parameter gradient of node `idx`, chained to its
/// log-size slots.
fn push_node(table: &EmbeddingTable, idx: usize, g: &[f64], out: &mut SparseGrad) {
    let n = table.dim();
    let sizes = table.region(idx).sizes();
    let base = table.node_offset(idx);
    for (k, gk) in g.iter().enumerate() {
        let v = if k < n { *gk } else { gk * sizes[k - n] };
        out.push((base + k, v));
    }
}

fn push_role(table: &EmbeddingTable, role: usize, g_center: &[f64], scale: f64, out: &mut SparseGrad) {
    let base = table.role_offset(role);
    for (k, g) in g_center.iter().enumerate() {
        out.push((base + k, scale * g));
    }
}

fn axiom_eval(ax: &Axiom<usize>, table: &EmbeddingTable, cfg: &OntologyConfig, with_depth: bool) -> Result<(f64, SparseGrad)> {
    let n = table.dim();
    let mut grad = SparseGrad::new();
    let value = match *ax {
        Axiom::Nf1 { sub, sup } => {
            let e = pair_natural(&table.region(sup), &table.region(sub), cfg, with_depth)?;
            push_node(table, sup, &e.parent, &mut grad);
            push_node(table, sub, &e.child, &mut grad);
            e.value
        }
        Axiom::Nf2 { left, right, sup } => {
            let m = meet(&table.region(left), &table.region(right))?;
            let e = pair_natural(&table.region(sup), &m.region, cfg, with_depth)?;
            let [ga, gb] = m.chain(&e.child, 1.0);
            push_node(table, sup, &e.parent, &mut grad);
            push_node(table, left, &ga, &mut grad);
            push_node(table, right, &gb, &mut grad);
            e.value + m.penalty
        }
        Axiom::Nf3 { sub, role, filler } => {
            let parent = translated_region(&table.region(filler), table.role_vector(role), Direction::Forward)?;
            let e = pair_natural(&parent, &table.region(sub), cfg, with_depth)?;
            push_node(table, filler, &e.parent, &mut grad);
            push_role(table, role, &e.parent[..n], -1.0, &mut grad);
            push_node(table, sub, &e.child, &mut grad);
            e.value
        }
        Axiom::Nf4 { role, filler, sup } => {
            let child = translated_region(&table.region(filler), table.role_vector(role), Direction::Forward)?;
            let e = pair_natural(&table.region(sup), &child, cfg, with_depth)?;
            push_node(table, sup, &e.parent, &mut grad);
            push_node(table, filler, &e.child, &mut grad);
            push_role(table, role, &e.child[..n], -1.0, &mut grad);
            e.value
        }
    };
    Ok((value, grad))
}

/// Energy of an axiom: the pair energy with the super-concept as parent.
pub fn axiom_energy(ax: &Axiom<usize>, table: &EmbeddingTable, cfg: &OntologyConfig) -> Result<f64> {
    Ok(axiom_eval(ax, table, cfg, true)?.0)
}

/// Energy and gradient over the table slots (log-parameterized sizes).
pub fn axiom_energy_gradient(ax: &Axiom<usize>, table: &EmbeddingTable, cfg: &OntologyConfig) -> Result<(f64, SparseGrad)> {
    axiom_eval(ax, table, cfg, true)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OntologySample {
    pub axiom: Axiom<usize>,
    pub negatives: Vec<Axiom<usize>>,
}

/// Summed loss over a batch of axioms and their corruptions.
///
/// With RegD, negatives enter through the hinge on their energy without the
/// depth term; otherwise the base loss `Σ E(pos) + Σ max{γ − E(neg), 0}`
/// is used.
pub fn ontology_batch_loss(samples: &[OntologySample], table: &EmbeddingTable, cfg: &OntologyConfig) -> Result<LossOutput> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grad = vec![0.0; table.params().len()];
    let mut loss = 0.0;
    let mut depth_evals = 0;
    let mut touched = BTreeSet::new();
    for s in samples {
        touched.extend(s.axiom.concepts());
        let (e, g) = axiom_eval(&s.axiom, table, cfg, true)?;
        let negatives = s
            .negatives
            .iter()
            .map(|neg| {
                touched.extend(neg.concepts());
                axiom_eval(neg, table, cfg, false)
            })
            .collect::<Result<Vec<_>>>()?;
        if cfg.use_regd {
            depth_evals += u64::from(cfg.energy.lambda != 0.0);
            loss += contrastive_term((e, &g), &negatives, cfg.energy.gamma1, cfg.energy.gamma2, &mut grad)?;
        } else {
            loss += e;
            for (i, gi) in g {
                grad[i] += gi;
            }
            for (en, gn) in negatives {
                if cfg.base_margin - en > 0.0 {
                    loss += cfg.base_margin - en;
                    for (i, gi) in gn {
                        grad[i] -= gi;
                    }
                }
            }
        }
    }
    if cfg.center_regularizer && cfg.base == BaseModel::Elem {
        for c in touched {
            let region = table.region(c);
            let norm = region.center().iter().map(|x| x * x).sum::<f64>().sqrt();
            loss += cfg.rho * (norm - 1.0).abs();
            if norm > 0.0 {
                let s = cfg.rho * sign0(norm - 1.0) / norm;
                let base = table.node_offset(c);
                for (k, x) in region.center().iter().enumerate() {
                    grad[base + k] += s * x;
                }
            }
        }
    }
    Ok(LossOutput {
        loss,
        grad,
        depth_evals,
    })
}

/// `k` corruptions of `ax`, each replacing one concept position chosen
/// uniformly, rejecting the axiom itself and anything in `exclude`.
pub fn corrupt<R: Rng>(
    ax: &Axiom<usize>,
    num_concepts: usize,
    k: usize,
    exclude: &HashSet<Axiom<usize>>,
    rng: &mut R,
) -> Result<Vec<Axiom<usize>>> {
    const TRIES: usize = 64;
    let positions = ax.concepts().len();
    let valid = |cand: &Axiom<usize>| cand != ax && !exclude.contains(cand);
    let mut out = Vec::with_capacity(k);
    let mut pool: Option<Vec<Axiom<usize>>> = None;
    for _ in 0..k {
        let mut pick = None;
        if pool.is_none() {
            for _ in 0..TRIES {
                let cand = ax.with_concept(rng.gen_range(0..positions), rng.gen_range(0..num_concepts));
                if valid(&cand) {
                    pick = Some(cand);
                    break;
                }
            }
        }
        let cand = match pick {
            Some(c) => c,
            None => {
                let pool = pool.get_or_insert_with(|| {
                    (0..positions)
                        .flat_map(|p| (0..num_concepts).map(move |c| (p, c)))
                        .map(|(p, c)| ax.with_concept(p, c))
                        .filter(|c| valid(c))
                        .collect()
                });
                if pool.is_empty() {
                    return Err(Error::NoValidCorruption(format!("{ax:?}")));
                }
                pool[rng.gen_range(0..pool.len())].clone()
            }
        };
        out.push(cand);
    }
    Ok(out)
}

/// All `(sub, sup)` concept-name subsumptions with `sub ≠ sup` entailed by
/// the axioms, by saturation of the EL completion rules.
pub fn entailed_subsumptions(axioms: &[Axiom<usize>], num_concepts: usize) -> BTreeSet<(usize, usize)> {
    let mut subs: Vec<BTreeSet<usize>> = (0..num_concepts).map(|a| BTreeSet::from([a])).collect();
    let mut links: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_concepts];
    loop {
        let mut changed = false;
        for x in 0..num_concepts {
            for ax in axioms {
                match *ax {
                    Axiom::Nf1 { sub, sup } => {
                        if subs[x].contains(&sub) {
                            changed |= subs[x].insert(sup);
                        }
                    }
                    Axiom::Nf2 { left, right, sup } => {
                        if subs[x].contains(&left) && subs[x].contains(&right) {
                            changed |= subs[x].insert(sup);
                        }
                    }
                    Axiom::Nf3 { sub, role, filler } => {
                        if subs[x].contains(&sub) {
                            changed |= links[x].insert((role, filler));
                        }
                    }
                    Axiom::Nf4 { role, filler, sup } => {
                        let fires = links[x].iter().any(|&(r, y)| r == role && subs[y].contains(&filler));
                        if fires {
                            changed |= subs[x].insert(sup);
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    subs.iter()
        .enumerate()
        .flat_map(|(a, s)| s.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
        .collect()
}

/// Rank of the true answer of a query built from `ax`: for `∃r.B ⊑ ?A`
/// every concept is tried as `A`, for `C ⊑ ?D` every concept as `D`.
/// Other normal forms are not queries.
pub fn rank_query(ax: &Axiom<usize>, table: &EmbeddingTable, cfg: &OntologyConfig) -> Result<Option<RankResult>> {
    let (pos, truth) = match *ax {
        Axiom::Nf1 { sup, .. } => (1, sup),
        Axiom::Nf4 { sup, .. } => (1, sup),
        _ => return Ok(None),
    };
    let target = axiom_energy(ax, table, cfg)?;
    let others = (0..table.num_nodes())
        .filter(|&c| c != truth)
        .map(|c| axiom_energy(&ax.with_concept(pos, c), table, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(pessimistic_rank(target, others)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissim::depth_dissim;
    use crate::optim::{finite_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table_of(regions: Vec<(&str, Region)>, roles: Vec<(&str, Vec<f64>)>) -> EmbeddingTable {
        EmbeddingTable::from_regions(
            regions.into_iter().map(|(n, r)| (n.to_string(), r)).collect(),
            roles.into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
        )
        .unwrap()
    }

    fn base(base: BaseModel) -> OntologyConfig {
        OntologyConfig {
            use_regd: false,
            ..OntologyConfig::new(base, 0.0)
        }
    }

    #[test]
    fn parse_and_print() {
        let text = "# toy\nnf1 A B\nnf2 A B C\nnf3 A r B\nNF4 r B A\n";
        let axioms = parse_axioms(text).unwrap();
        assert_eq!(axioms.len(), 4);
        assert_eq!(axioms[3].to_string(), "nf4 r B A");
        assert!(matches!(parse_axioms("nf1 A"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_axioms("nf5 A B").is_err());
        let (concepts, roles) = vocabulary(&axioms);
        assert_eq!(concepts, vec!["A", "B", "C"]);
        assert_eq!(roles, vec!["r"]);
    }

    #[test]
    fn translation() {
        let r = Region::cuboid(vec![1.0, 1.0], vec![1.0, 1.0]);
        assert_eq!(translated_region(&r, &[0.0, 0.0], Direction::Forward).unwrap(), r);
        assert_eq!(
            translated_region(&r, &[1.0, 0.0], Direction::Forward).unwrap(),
            Region::cuboid(vec![0.0, 1.0], vec![1.0, 1.0])
        );
        let v = [0.25, -0.125];
        let there = translated_region(&r, &v, Direction::Forward).unwrap();
        assert_eq!(translated_region(&there, &v, Direction::Inverse).unwrap(), r);
        assert!(translated_region(&r, &[1.0], Direction::Forward).is_err());

        let t = table_of(vec![("A", r.clone())], vec![("r", vec![1.0, 0.0])]);
        assert!(translate_by_role(&t, &r, "r", Direction::Forward).is_ok());
        assert!(matches!(translate_by_role(&t, &r, "s", Direction::Forward), Err(Error::UnknownRole(_))));
    }

    #[test]
    fn translation_preserves_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [RegionKind::Ball, RegionKind::Box] {
            let cfg = crate::dissim::DepthConfig::linear(kind, 2);
            for _ in 0..100 {
                let ids = vec!["a".to_string(), "b".to_string()];
                let t = EmbeddingTable::initialize(kind, 3, ids, vec![], &mut rng).unwrap();
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (a, b) = (t.region(0), t.region(1));
                let before = depth_dissim(&a, &b, &cfg).unwrap();
                let ta = translated_region(&a, &v, Direction::Forward).unwrap();
                let tb = translated_region(&b, &v, Direction::Forward).unwrap();
                let after = depth_dissim(&ta, &tb, &cfg).unwrap();
                assert!((before - after).abs() <= 1e-12 * before.max(1.0));
            }
        }
    }

    #[test]
    fn base_energies() {
        let t = table_of(
            vec![
                ("u", Region::cuboid(vec![0.0], vec![1.0])),
                ("v", Region::cuboid(vec![2.0], vec![1.0])),
            ],
            vec![],
        );
        let cfg = base(BaseModel::Elbe);
        assert_eq!(axiom_energy(&Axiom::Nf1 { sub: 0, sup: 0 }, &t, &cfg).unwrap(), 0.0);
        // v ⊑ u: parent u, child v
        assert_eq!(axiom_energy(&Axiom::Nf1 { sub: 1, sup: 0 }, &t, &cfg).unwrap(), 2.0);

        let t = table_of(
            vec![
                ("u", Region::ball(vec![0.0, 0.0], 2.0)),
                ("v", Region::ball(vec![0.0, 0.0], 1.0)),
            ],
            vec![],
        );
        let cfg = base(BaseModel::Elem);
        assert_eq!(axiom_energy(&Axiom::Nf1 { sub: 1, sup: 0 }, &t, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn conjunction_of_equal_regions_is_nf1() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for b in [BaseModel::Elbe, BaseModel::Elem] {
            for use_regd in [true, false] {
                let ids: Vec<String> = ["a", "c"].iter().map(|s| s.to_string()).collect();
                let t = EmbeddingTable::initialize(b.kind(), 4, ids, vec![], &mut rng).unwrap();
                let cfg = OntologyConfig {
                    use_regd,
                    ..OntologyConfig::new(b, 0.5)
                };
                let nf2 = axiom_energy(&Axiom::Nf2 { left: 0, right: 0, sup: 1 }, &t, &cfg).unwrap();
                let nf1 = axiom_energy(&Axiom::Nf1 { sub: 0, sup: 1 }, &t, &cfg).unwrap();
                assert_eq!(nf2, nf1);
            }
        }
    }

    #[test]
    fn disjoint_conjunction_is_penalized() {
        let t = table_of(
            vec![
                ("a", Region::cuboid(vec![0.0], vec![1.0])),
                ("b", Region::cuboid(vec![5.0], vec![1.0])),
                ("c", Region::cuboid(vec![0.0], vec![100.0])),
            ],
            vec![],
        );
        let cfg = OntologyConfig::new(BaseModel::Elbe, 0.0);
        // gap between the boxes is 3; the pseudo-box itself sits inside c
        let e = axiom_energy(&Axiom::Nf2 { left: 0, right: 1, sup: 2 }, &t, &cfg).unwrap();
        let inside = e - 3.0;
        assert!(inside < 0.0, "{e}");
    }

    #[test]
    fn regd_margins_saturate() {
        let t = table_of(
            vec![
                ("big", Region::ball(vec![0.0, 0.0], 2.0)),
                ("small", Region::ball(vec![0.0, 0.0], 1.0)),
                ("far", Region::ball(vec![10.0, 0.0], 1.0)),
            ],
            vec![],
        );
        let cfg = OntologyConfig {
            center_regularizer: false,
            ..OntologyConfig::new(BaseModel::Elem, 0.0)
        };
        let s = OntologySample {
            axiom: Axiom::Nf1 { sub: 1, sup: 0 },
            negatives: vec![Axiom::Nf1 { sub: 2, sup: 0 }],
        };
        let out = ontology_batch_loss(&[s], &t, &cfg).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(ontology_batch_loss(&[], &t, &cfg).is_err());
    }

    fn random_setup(rng: &mut ChaCha8Rng, kind: RegionKind) -> EmbeddingTable {
        let ids = (0..6).map(|i| format!("c{i}")).collect();
        let roles = vec!["r".to_string(), "s".to_string()];
        let mut t = EmbeddingTable::initialize(kind, 3, ids, roles, rng).unwrap();
        for p in t.params_mut() {
            *p += rng.gen_range(-0.5..0.5);
        }
        // keep the conjunction operands overlapping: a floored meet makes
        // the depth term ~1e8 and finite differences meaningless
        let mut near = t.region(1);
        for (c, s) in near.center_mut().iter_mut().zip([0.1, -0.05, 0.07]) {
            *c += s;
        }
        t.set_region(2, &near).unwrap();
        t
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let samples = vec![
            OntologySample {
                axiom: Axiom::Nf1 { sub: 0, sup: 1 },
                negatives: vec![Axiom::Nf1 { sub: 2, sup: 1 }, Axiom::Nf1 { sub: 0, sup: 3 }],
            },
            OntologySample {
                axiom: Axiom::Nf2 { left: 1, right: 2, sup: 3 },
                negatives: vec![Axiom::Nf2 { left: 1, right: 2, sup: 4 }],
            },
            OntologySample {
                axiom: Axiom::Nf3 { sub: 4, role: 0, filler: 5 },
                negatives: vec![Axiom::Nf3 { sub: 4, role: 0, filler: 0 }],
            },
            OntologySample {
                axiom: Axiom::Nf4 { role: 1, filler: 2, sup: 0 },
                negatives: vec![Axiom::Nf4 { role: 1, filler: 3, sup: 0 }],
            },
        ];
        for b in [BaseModel::Elbe, BaseModel::Elem] {
            for use_regd in [true, false] {
                let t = random_setup(&mut rng, b.kind());
                let mut cfg = OntologyConfig {
                    use_regd,
                    ..OntologyConfig::new(b, 0.5)
                };
                cfg.energy.gamma2 = 0.2;
                let out = ontology_batch_loss(&samples, &t, &cfg).unwrap();
                let fd = finite_difference(
                    |x| {
                        let mut probe = t.clone();
                        probe.params_mut().copy_from_slice(x);
                        ontology_batch_loss(&samples, &probe, &cfg).unwrap().loss
                    },
                    t.params(),
                    1e-6,
                );
                for (k, (a, n)) in out.grad.iter().zip(&fd).enumerate() {
                    assert!(relative_error(*a, *n, 1e-3) < 1e-4, "{b:?} regd={use_regd} slot {k}: {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn corruption_avoids_training_axioms() {
        let ax = Axiom::Nf1 { sub: 0, sup: 1 };
        let exclude: HashSet<Axiom<usize>> = [ax.clone(), Axiom::Nf1 { sub: 2, sup: 1 }].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let negs = corrupt(&ax, 3, 50, &exclude, &mut rng).unwrap();
        assert!(negs.iter().all(|n| !exclude.contains(n)));
        assert!(negs.iter().any(|n| matches!(n, Axiom::Nf1 { sup: 1, .. })));
        assert!(negs.iter().any(|n| matches!(n, Axiom::Nf1 { sub: 0, .. })));

        let everything: HashSet<Axiom<usize>> = (0..2)
            .flat_map(|a| (0..2).map(move |b| Axiom::Nf1 { sub: a, sup: b }))
            .collect();
        assert!(matches!(corrupt(&ax, 2, 1, &everything, &mut rng), Err(Error::NoValidCorruption(_))));
    }

    #[test]
    fn completion_rules() {
        // 0 ⊑ 1 ⊑ 2, 0 ⊑ ∃r.3, ∃r.3 ⊑ 4, 1 ⊓ 4 ⊑ 5
        let axioms = vec![
            Axiom::Nf1 { sub: 0, sup: 1 },
            Axiom::Nf1 { sub: 1, sup: 2 },
            Axiom::Nf3 { sub: 0, role: 0, filler: 3 },
            Axiom::Nf4 { role: 0, filler: 3, sup: 4 },
            Axiom::Nf2 { left: 1, right: 4, sup: 5 },
        ];
        let e = entailed_subsumptions(&axioms, 6);
        let expected: BTreeSet<(usize, usize)> = [(0, 1), (0, 2), (1, 2), (0, 4), (0, 5)].into_iter().collect();
        assert_eq!(e, expected);
    }

    #[test]
    fn unknown_names_are_listed() {
        let t = table_of(vec![("A", Region::ball(vec![0.0], 1.0))], vec![]);
        let axioms = parse_axioms("nf1 A B\nnf3 A r C\n").unwrap();
        match resolve(&axioms, &t) {
            Err(Error::UnknownIds(ids)) => assert_eq!(ids, vec!["B", "C", "role r"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn query_ranking() {
        let t = table_of(
            vec![
                ("top", Region::ball(vec![0.0, 0.0], 3.0)),
                ("mid", Region::ball(vec![0.0, 0.0], 2.0)),
                ("leaf", Region::ball(vec![0.5, 0.0], 0.5)),
                ("far", Region::ball(vec![9.0, 0.0], 0.5)),
            ],
            vec![],
        );
        let cfg = OntologyConfig::new(BaseModel::Elem, 0.0);
        // top has the lowest energy as parent of leaf, so `mid` ranks second
        let r = rank_query(&Axiom::Nf1 { sub: 2, sup: 1 }, &t, &cfg).unwrap().unwrap();
        assert_eq!(r, RankResult { rank: 2, count: 4 });
        assert!(rank_query(&Axiom::Nf3 { sub: 0, role: 0, filler: 1 }, &t, &cfg).unwrap().is_none());
    }
}
