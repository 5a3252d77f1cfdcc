//! The `regd` command line: `closure`, `train`, `eval` and `verify`.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dissim::{BoundaryVariant, DepthConfig};
use crate::error::{Error, Result};
use crate::eval::{best_threshold_f1, f1_at_threshold, ranking_metrics, RankResult, Scored};
use crate::graph::{Dag, Edge, SplitSpec};
use crate::model::{EmbeddingTable, EnergyConfig};
use crate::ontology::{
    axiom_energy, corrupt, entailed_subsumptions, index_axioms, parse_axioms, rank_query, vocabulary, Axiom,
    BaseModel, OntologyConfig,
};
use crate::regions::RegionKind;
use crate::train::{score_axioms, score_edges, train_dag, train_ontology, validation_f1, TrainConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Name of the labeled validation set written next to the embeddings.
pub const VALID_LABELED: &str = "valid.labeled";

#[derive(Debug, Parser)]
#[command(name = "regd", version, about = "Region embeddings of hierarchies and EL ontologies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transitive closure, basic edges and held-out splits of an edge list.
    Closure(ClosureArgs),
    /// Train region embeddings.
    Train(TrainArgs),
    /// Score held-out data with trained embeddings.
    Eval(EvalArgs),
    /// Run the numerical verification suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct ClosureArgs {
    /// `parent<TAB>child` edge list.
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub valid: f64,
    #[arg(long, default_value_t = 0.05)]
    pub test: f64,
    /// Fraction of non-basic edges added to the training edges.
    #[arg(long, default_value_t = 0.0)]
    pub train_non_basic: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupted children per held-out edge.
    #[arg(long, default_value_t = 10)]
    pub negatives: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Any configuration key, e.g. `--set lambda=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Labeled validation data; defaults to the one saved by `train`.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    /// Manifest written by `train`; supplies the configuration.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Write per-pair scores (or ranked candidates) as TSV.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Dag,
    OntologyInference,
    OntologyPrediction,
}

impl Task {
    fn is_ontology(self) -> bool {
        self != Task::Dag
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthKind {
    Linear,
    Hyperbolic,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Ontology tasks take the kind from the base model.
    pub kind: Option<RegionKind>,
    pub dim: usize,
    pub lambda: f64,
    pub p: u32,
    pub depth: DepthKind,
    pub boundary: BoundaryVariant,
    pub base: BaseModel,
    pub use_regd: bool,
    pub center_regularizer: Option<bool>,
    pub lr: f64,
    pub batch_size: usize,
    /// 400 for hierarchies, 5000 for ontologies when unset.
    pub epochs: Option<usize>,
    pub negatives: usize,
    pub eval_negatives: usize,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Dag,
            train: None,
            valid: None,
            test: None,
            out: None,
            kind: None,
            dim: 5,
            lambda: 0.5,
            p: 2,
            depth: DepthKind::Linear,
            boundary: BoundaryVariant::Geometric,
            base: BaseModel::Elbe,
            use_regd: true,
            center_regularizer: None,
            lr: 0.01,
            batch_size: 32,
            epochs: None,
            negatives: 10,
            eval_negatives: 10,
            gamma1: None,
            gamma2: None,
            seed: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "task" => {
                self.task = match value {
                    "dag" => Task::Dag,
                    "ontology-inference" => Task::OntologyInference,
                    "ontology-prediction" => Task::OntologyPrediction,
                    _ => return Err(Error::Config(format!("unknown task `{value}`"))),
                }
            }
            "train" => self.train = Some(value.into()),
            "valid" => self.valid = Some(value.into()),
            "test" => self.test = Some(value.into()),
            "out" => self.out = Some(value.into()),
            "kind" => self.kind = Some(value.parse()?),
            "dim" => self.dim = parse_value("dim", value)?,
            "lambda" => self.lambda = parse_value("lambda", value)?,
            "p" => self.p = parse_value("p", value)?,
            "depth" => {
                self.depth = match value {
                    "linear" => DepthKind::Linear,
                    "hyperbolic" => DepthKind::Hyperbolic,
                    _ => return Err(Error::Config(format!("unknown depth function `{value}`"))),
                }
            }
            "boundary" => self.boundary = value.parse()?,
            "base" => self.base = value.parse()?,
            "use_regd" => self.use_regd = parse_bool(key, value)?,
            "center_regularizer" => self.center_regularizer = Some(parse_bool(key, value)?),
            "lr" => self.lr = parse_value("lr", value)?,
            "batch_size" => self.batch_size = parse_value("batch_size", value)?,
            "epochs" => self.epochs = Some(parse_value("epochs", value)?),
            "negatives" => self.negatives = parse_value("negatives", value)?,
            "eval_negatives" => self.eval_negatives = parse_value("eval_negatives", value)?,
            "gamma1" => self.gamma1 = Some(parse_value("gamma1", value)?),
            "gamma2" => self.gamma2 = Some(parse_value("gamma2", value)?),
            "seed" => self.seed = parse_value("seed", value)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment. Relative paths are
    /// taken relative to `base_dir`.
    pub fn apply_text(&mut self, text: &str, base_dir: Option<&Path>) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n + 1, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match (key, base_dir) {
                ("train" | "valid" | "test" | "out", Some(dir)) if Path::new(value).is_relative() => {
                    self.set(key, &dir.join(value).to_string_lossy())?
                }
                _ => self.set(key, value)?,
            }
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{pair}`")))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn region_kind(&self) -> Result<RegionKind> {
        if !self.task.is_ontology() {
            return Ok(self.kind.unwrap_or(RegionKind::Box));
        }
        match self.kind {
            Some(k) if k != self.base.kind() => Err(Error::Config(format!(
                "base model {:?} uses {} regions, but kind = {k}",
                self.base,
                self.base.kind()
            ))),
            _ => Ok(self.base.kind()),
        }
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(if self.task.is_ontology() { 5000 } else { 400 })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(),
            batch_size: self.batch_size,
            lr: self.lr,
            negatives: self.negatives,
        }
    }

    pub fn energy(&self) -> Result<EnergyConfig> {
        let kind = self.region_kind()?;
        let mut e = if self.task.is_ontology() {
            EnergyConfig::ontology(kind, self.lambda)
        } else {
            EnergyConfig::dag(kind, self.lambda)
        };
        e.boundary = self.boundary;
        e.depth = match self.depth {
            DepthKind::Linear => DepthConfig::linear(kind, self.p),
            DepthKind::Hyperbolic => DepthConfig::hyperbolic(),
        };
        if let Some(g) = self.gamma1 {
            e.gamma1 = g;
        }
        if let Some(g) = self.gamma2 {
            e.gamma2 = g;
        }
        e.validate(kind)?;
        Ok(e)
    }

    pub fn ontology(&self) -> Result<OntologyConfig> {
        let mut o = OntologyConfig::new(self.base, self.lambda);
        o.use_regd = self.use_regd;
        if let Some(c) = self.center_regularizer {
            o.center_regularizer = c;
        }
        o.energy = self.energy()?;
        o.validate(self.region_kind()?)?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.eval_negatives == 0 {
            return Err(Error::Config("eval_negatives must be positive".into()));
        }
        self.train_config().validate()?;
        if self.task.is_ontology() {
            self.ontology()?;
        } else {
            self.energy()?;
        }
        Ok(())
    }
}

/// Process exit status for an error: configuration problems are usage
/// errors, everything else is a data error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Unsupported(_) | Error::KindMismatch { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Splits an optional trailing `<TAB>0|1` label off a line.
fn split_label(line: &str) -> (&str, Option<bool>) {
    match line.rsplit_once('\t') {
        Some((rest, "1")) => (rest, Some(true)),
        Some((rest, "0")) => (rest, Some(false)),
        _ => (line, None),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// `parent<TAB>child[<TAB>label]` lines; a missing label means positive.
pub fn parse_labeled_edges(text: &str) -> Result<Vec<((String, String), Option<bool>)>> {
    data_lines(text)
        .map(|(n, line)| {
            let (rest, label) = split_label(line);
            match rest.split('\t').collect::<Vec<_>>()[..] {
                [p, c] if !p.is_empty() && !c.is_empty() => Ok(((p.to_string(), c.to_string()), label)),
                _ => Err(Error::parse(n, "expected `parent<TAB>child[<TAB>0|1]`")),
            }
        })
        .collect()
}

/// Axiom lines with an optional `<TAB>0|1` label.
pub fn parse_labeled_axioms(text: &str) -> Result<Vec<(Axiom<String>, Option<bool>)>> {
    data_lines(text)
        .map(|(n, line)| {
            let (rest, label) = split_label(line);
            let ax = parse_axioms(rest)
                .map_err(|_| Error::parse(n, format!("malformed axiom `{rest}`")))?
                .pop()
                .ok_or_else(|| Error::parse(n, "empty axiom"))?;
            Ok((ax, label))
        })
        .collect()
}

fn looks_like_axioms(text: &str) -> bool {
    data_lines(text).next().is_some_and(|(_, l)| {
        let head = l.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
        matches!(head.as_str(), "nf1" | "nf2" | "nf3" | "nf4") && !l.contains('\t')
    })
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Closure(args) => cmd_closure(&args).map(|_| 0),
        Command::Train(args) => cmd_train(&args).map(|_| 0),
        Command::Eval(args) => cmd_eval(&args).map(|_| 0),
        Command::Verify(args) => Ok(if cmd_verify(&args) { 0 } else { EXIT_VERIFY }),
    }
}

pub fn cmd_closure(args: &ClosureArgs) -> Result<()> {
    let spec = SplitSpec {
        valid: args.valid,
        test: args.test,
        train_non_basic: args.train_non_basic,
        seed: args.seed,
    };
    spec.validate()?;
    if args.negatives == 0 {
        return Err(Error::Config("negatives must be positive".into()));
    }
    let dag = Dag::parse_tsv(&read(&args.input)?)?;
    let split = dag.split(&spec)?;

    // negatives avoid every true edge, held out or not
    let closure: HashSet<Edge> = split.closure.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let labeled = |edges: &[Edge], rng: &mut ChaCha8Rng| {
        let mut out = String::new();
        for ((p, c), label) in dag.with_negatives(edges, args.negatives, &closure, rng) {
            let _ = writeln!(out, "{}\t{}\t{}", dag.id(p), dag.id(c), u8::from(label));
        }
        out
    };
    let valid = labeled(&split.valid, &mut rng);
    let test = labeled(&split.test, &mut rng);

    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("basic.tsv"), dag.edges_to_tsv(&split.basic))?;
    fs::write(args.out.join("closure.tsv"), dag.edges_to_tsv(&split.closure))?;
    fs::write(args.out.join("train.tsv"), dag.edges_to_tsv(&split.train))?;
    fs::write(args.out.join("valid.tsv"), valid)?;
    fs::write(args.out.join("test.tsv"), test)?;
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "command": "closure",
            "input": args.input,
            "seed": args.seed,
            "fractions": { "valid": args.valid, "test": args.test, "train_non_basic": args.train_non_basic },
            "negatives": args.negatives,
            "counts": {
                "nodes": dag.num_nodes(),
                "edges": dag.edges().len(),
                "basic": split.basic.len(),
                "closure": split.closure.len(),
                "train": split.train.len(),
                "valid": split.valid.len(),
                "test": split.test.len(),
            },
        }),
    )?;
    eprintln!(
        "{} nodes, {} basic edges, {} closure edges, {} valid / {} test held out",
        dag.num_nodes(),
        split.basic.len(),
        split.closure.len(),
        split.valid.len(),
        split.test.len()
    );
    Ok(())
}

fn train_run_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_text(&read(path)?, path.parent())?;
    }
    let flags = [
        ("task", args.task.clone()),
        ("train", args.train.as_ref().map(|p| p.to_string_lossy().into_owned())),
        ("valid", args.valid.as_ref().map(|p| p.to_string_lossy().into_owned())),
        ("test", args.test.as_ref().map(|p| p.to_string_lossy().into_owned())),
        ("out", args.out.as_ref().map(|p| p.to_string_lossy().into_owned())),
        ("seed", args.seed.map(|s| s.to_string())),
        ("epochs", args.epochs.map(|e| e.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    cfg.apply_overrides(&args.set)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Labeled validation data in the form both training and evaluation score.
enum Prepared {
    Dag {
        table: EmbeddingTable,
        train: Vec<Edge>,
        valid: Vec<(Edge, bool)>,
    },
    Ontology {
        table: EmbeddingTable,
        train: Vec<Axiom<usize>>,
        valid: Vec<(Axiom<usize>, bool)>,
    },
}

fn prepare_dag(cfg: &RunConfig, train_path: &Path, rng: &mut ChaCha8Rng) -> Result<Prepared> {
    let text = read(train_path)?;
    if looks_like_axioms(&text) {
        return Err(Error::Config(format!(
            "{} looks like an axiom file; use task = ontology-inference or ontology-prediction",
            train_path.display()
        )));
    }
    let mut dag = Dag::parse_tsv(&text)?;
    let mut files = Vec::new();
    for path in [&cfg.valid, &cfg.test].into_iter().flatten() {
        let pairs = parse_labeled_edges(&read(path)?)?;
        for ((p, c), _) in &pairs {
            dag.intern(p);
            dag.intern(c);
        }
        files.push(pairs);
    }
    let train: Vec<Edge> = dag.edges().iter().copied().collect();
    let table = EmbeddingTable::initialize(cfg.region_kind()?, cfg.dim, dag.ids().to_vec(), vec![], rng)?;
    let valid = match (&cfg.valid, files.first()) {
        (Some(_), Some(pairs)) => {
            let known: HashSet<Edge> = files
                .iter()
                .flatten()
                .filter(|(_, l)| *l != Some(false))
                .map(|((p, c), _)| (dag.index_of(p).unwrap(), dag.index_of(c).unwrap()))
                .chain(train.iter().copied())
                .collect();
            label_edges(&dag, pairs, &known, cfg.eval_negatives, rng)
        }
        _ => {
            log::warn!("no validation data; validation F1 is not tracked");
            Vec::new()
        }
    };
    Ok(Prepared::Dag { table, train, valid })
}

/// Keeps explicit labels; unlabeled lines are positives and get corrupted
/// children avoiding `known`.
fn label_edges(
    dag: &Dag,
    pairs: &[((String, String), Option<bool>)],
    known: &HashSet<Edge>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Edge, bool)> {
    let idx = |(p, c): &(String, String)| (dag.index_of(p).unwrap(), dag.index_of(c).unwrap());
    let mut out: Vec<(Edge, bool)> = pairs
        .iter()
        .filter_map(|(e, l)| l.map(|l| (idx(e), l)))
        .collect();
    let unlabeled: Vec<Edge> = pairs.iter().filter(|(_, l)| l.is_none()).map(|(e, _)| idx(e)).collect();
    if !unlabeled.is_empty() {
        log::warn!("{} unlabeled pairs treated as positives with {k} generated negatives each", unlabeled.len());
        out.extend(dag.with_negatives(&unlabeled, k, known, rng));
    }
    out
}

fn label_axioms(
    pairs: &[(Axiom<usize>, Option<bool>)],
    known: &HashSet<Axiom<usize>>,
    num_concepts: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Axiom<usize>, bool)>> {
    let mut out = Vec::new();
    for (ax, label) in pairs {
        match label {
            Some(l) => out.push((ax.clone(), *l)),
            None => {
                out.push((ax.clone(), true));
                match corrupt(ax, num_concepts, k, known, rng) {
                    Ok(negs) => out.extend(negs.into_iter().map(|n| (n, false))),
                    Err(e) => log::warn!("{e}; positive kept without negatives"),
                }
            }
        }
    }
    Ok(out)
}

fn prepare_ontology(cfg: &RunConfig, train_path: &Path, rng: &mut ChaCha8Rng) -> Result<Prepared> {
    let text = read(train_path)?;
    if !looks_like_axioms(&text) {
        return Err(Error::Config(format!(
            "{} is not an axiom file (`nf1 A B`, ...); use task = dag for edge lists",
            train_path.display()
        )));
    }
    let train_named = parse_axioms(&text)?;
    let mut held: Vec<Vec<(Axiom<String>, Option<bool>)>> = Vec::new();
    for path in [&cfg.valid, &cfg.test].into_iter().flatten() {
        held.push(parse_labeled_axioms(&read(path)?)?);
    }
    let (concepts, roles) = vocabulary(train_named.iter().chain(held.iter().flatten().map(|(a, _)| a)));
    let index = |axs: &[Axiom<String>]| index_axioms(axs, &concepts, &roles);
    let train = index(&train_named)?;
    let n = concepts.len();
    let table = EmbeddingTable::initialize(cfg.region_kind()?, cfg.dim, concepts.clone(), roles.clone(), rng)?;

    let entailed: Vec<Axiom<usize>> = entailed_subsumptions(&train, n)
        .into_iter()
        .map(|(sub, sup)| Axiom::Nf1 { sub, sup })
        .collect();
    let mut known: HashSet<Axiom<usize>> = train.iter().chain(&entailed).cloned().collect();
    let mut held_idx = Vec::new();
    for file in &held {
        let axs: Vec<Axiom<String>> = file.iter().map(|(a, _)| a.clone()).collect();
        let idx: Vec<(Axiom<usize>, Option<bool>)> = index(&axs)?.into_iter().zip(file.iter().map(|(_, l)| *l)).collect();
        known.extend(idx.iter().filter(|(_, l)| *l != Some(false)).map(|(a, _)| a.clone()));
        held_idx.push(idx);
    }

    let valid_pos: Vec<(Axiom<usize>, Option<bool>)> = match (&cfg.valid, held_idx.first()) {
        (Some(_), Some(v)) => v.clone(),
        _ => {
            // validate on what the training axioms entail beyond themselves
            let trained: HashSet<&Axiom<usize>> = train.iter().collect();
            let mut inferred: Vec<Axiom<usize>> = entailed.iter().filter(|a| !trained.contains(a)).cloned().collect();
            if inferred.is_empty() {
                inferred = train.clone();
            }
            inferred.into_iter().map(|a| (a, None)).collect()
        }
    };
    let valid = label_axioms(&valid_pos, &known, n, cfg.eval_negatives, rng)?;
    Ok(Prepared::Ontology { table, train, valid })
}

fn labeled_valid_text(prepared: &Prepared) -> String {
    let mut out = String::new();
    match prepared {
        Prepared::Dag { table, valid, .. } => {
            for &((p, c), l) in valid {
                let _ = writeln!(out, "{}\t{}\t{}", table.ids()[p], table.ids()[c], u8::from(l));
            }
        }
        Prepared::Ontology { table, valid, .. } => {
            for (ax, l) in valid {
                let _ = writeln!(out, "{}\t{}", name_axiom(ax, table), u8::from(*l));
            }
        }
    }
    out
}

fn name_axiom(ax: &Axiom<usize>, table: &EmbeddingTable) -> Axiom<String> {
    let c = |i: usize| table.ids()[i].clone();
    let r = |i: usize| table.roles()[i].clone();
    match *ax {
        Axiom::Nf1 { sub, sup } => Axiom::Nf1 { sub: c(sub), sup: c(sup) },
        Axiom::Nf2 { left, right, sup } => Axiom::Nf2 { left: c(left), right: c(right), sup: c(sup) },
        Axiom::Nf3 { sub, role, filler } => Axiom::Nf3 { sub: c(sub), role: r(role), filler: c(filler) },
        Axiom::Nf4 { role, filler, sup } => Axiom::Nf4 { role: r(role), filler: c(filler), sup: c(sup) },
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = train_run_config(args)?;
    let train_path = cfg.train.clone().ok_or_else(|| Error::Config("no training data (`train = PATH`)".into()))?;
    let out = cfg.out.clone().ok_or_else(|| Error::Config("no output directory (`out = DIR`)".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prepared = if cfg.task.is_ontology() {
        prepare_ontology(&cfg, &train_path, &mut rng)?
    } else {
        prepare_dag(&cfg, &train_path, &mut rng)?
    };

    fs::create_dir_all(&out)?;
    let mut log_file = std::io::BufWriter::new(fs::File::create(out.join("train_log.jsonl"))?);
    let mut log_err = None;
    let mut on_epoch = |l: &crate::train::EpochLog| {
        if log_err.is_none() {
            if let Err(e) = serde_json::to_writer(&mut log_file, l).map_err(Error::from).and_then(|_| {
                log_file.write_all(b"\n")?;
                Ok(())
            }) {
                log_err = Some(e);
            }
        }
    };
    let train_cfg = cfg.train_config();
    let (table, report, valid_text) = match prepared {
        Prepared::Dag { mut table, train, valid } => {
            let energy = cfg.energy()?;
            let report = train_dag(&mut table, &train, &valid, &energy, &train_cfg, &mut rng, &mut on_epoch)?;
            let text = labeled_valid_text(&Prepared::Dag { table: table.clone(), train, valid });
            (table, report, text)
        }
        Prepared::Ontology { mut table, train, valid } => {
            let ocfg = cfg.ontology()?;
            let report = train_ontology(&mut table, &train, &valid, &ocfg, &train_cfg, &mut rng, &mut on_epoch)?;
            let text = labeled_valid_text(&Prepared::Ontology { table: table.clone(), train, valid });
            (table, report, text)
        }
    };
    if let Some(e) = log_err {
        return Err(e);
    }
    log_file.flush()?;

    let embeddings = table.to_v1();
    fs::write(out.join("embeddings.regd"), &embeddings)?;
    fs::write(out.join(VALID_LABELED), &valid_text)?;

    // score what was written, not the in-memory table
    let reloaded = EmbeddingTable::from_v1(&embeddings)?;
    let final_valid = score_valid(&cfg, &reloaded, &valid_text)?;
    let in_memory = report.last.and_then(|l| l.valid_f1.zip(l.threshold));
    if final_valid.map(|(t, f)| (f, t)) != in_memory {
        log::warn!("validation F1 after reload {final_valid:?} differs from in-memory {in_memory:?}");
    }
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": "train",
            "config": cfg,
            "nodes": table.num_nodes(),
            "roles": table.num_roles(),
            "depth_evals": report.depth_evals,
            "final_loss": report.last.map(|l| l.loss),
            "valid_f1": final_valid.map(|v| v.1),
            "threshold": final_valid.map(|v| v.0),
            "files": {
                "embeddings": "embeddings.regd",
                "log": "train_log.jsonl",
                "valid": VALID_LABELED,
            },
        }),
    )?;
    match final_valid {
        Some((t, f1)) => eprintln!("trained {} epochs: validation F1 {f1:.4} at t = {t:.6}", cfg.epochs()),
        None => eprintln!("trained {} epochs", cfg.epochs()),
    }
    Ok(())
}

fn missing_ids(table: &EmbeddingTable, names: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut missing: BTreeSet<String> = BTreeSet::new();
    for n in names {
        if table.node_index(&n).is_err() {
            missing.insert(n);
        }
    }
    missing.into_iter().collect()
}

fn resolve_edges(table: &EmbeddingTable, pairs: &[((String, String), Option<bool>)]) -> Result<Vec<(Edge, Option<bool>)>> {
    let missing = missing_ids(table, pairs.iter().flat_map(|((p, c), _)| [p.clone(), c.clone()]));
    if !missing.is_empty() {
        return Err(Error::UnknownIds(missing));
    }
    pairs
        .iter()
        .map(|((p, c), l)| Ok(((table.node_index(p)?, table.node_index(c)?), *l)))
        .collect()
}

fn resolve_labeled_axioms(
    table: &EmbeddingTable,
    pairs: &[(Axiom<String>, Option<bool>)],
) -> Result<Vec<(Axiom<usize>, Option<bool>)>> {
    let axioms: Vec<Axiom<String>> = pairs.iter().map(|(a, _)| a.clone()).collect();
    let missing = missing_ids(table, axioms.iter().flat_map(|a| a.concepts()));
    if !missing.is_empty() {
        return Err(Error::UnknownIds(missing));
    }
    Ok(index_axioms(&axioms, table.ids(), table.roles())?
        .into_iter()
        .zip(pairs.iter().map(|(_, l)| *l))
        .collect())
}

/// Scores labeled data, generating negatives for unlabeled lines.
fn score_text(cfg: &RunConfig, table: &EmbeddingTable, text: &str, rng: &mut ChaCha8Rng) -> Result<Vec<(String, Scored)>> {
    if cfg.task.is_ontology() {
        let ocfg = cfg.ontology()?;
        let pairs = resolve_labeled_axioms(table, &parse_labeled_axioms(text)?)?;
        let known = pairs.iter().filter(|(_, l)| *l != Some(false)).map(|(a, _)| a.clone()).collect();
        let labeled = label_axioms(&pairs, &known, table.num_nodes(), cfg.eval_negatives, rng)?;
        let scored = score_axioms(table, &labeled, &ocfg)?;
        Ok(labeled.iter().map(|(a, _)| name_axiom(a, table).to_string()).zip(scored).collect())
    } else {
        let energy = cfg.energy()?;
        let pairs = resolve_edges(table, &parse_labeled_edges(text)?)?;
        let known: HashSet<Edge> = pairs.iter().filter(|(_, l)| *l != Some(false)).map(|(e, _)| *e).collect();
        let dag = Dag::from_index_edges(table.num_nodes(), std::iter::empty())?;
        let mut labeled: Vec<(Edge, bool)> = pairs.iter().filter_map(|(e, l)| l.map(|l| (*e, l))).collect();
        let unlabeled: Vec<Edge> = pairs.iter().filter(|(_, l)| l.is_none()).map(|(e, _)| *e).collect();
        if !unlabeled.is_empty() {
            log::warn!("{} unlabeled pairs treated as positives with generated negatives", unlabeled.len());
            labeled.extend(dag.with_negatives(&unlabeled, cfg.eval_negatives, &known, rng));
        }
        let scored = score_edges(table, &labeled, &energy)?;
        let ids = table.ids();
        Ok(labeled.iter().map(|&((p, c), _)| format!("{}\t{}", ids[p], ids[c])).zip(scored).collect())
    }
}

fn score_valid(cfg: &RunConfig, table: &EmbeddingTable, text: &str) -> Result<Option<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scored: Vec<Scored> = score_text(cfg, table, text, &mut rng)?.into_iter().map(|(_, s)| s).collect();
    if scored.is_empty() {
        return Ok(None);
    }
    validation_f1(&scored)
}

#[derive(Deserialize)]
struct TrainManifest {
    config: RunConfig,
    files: ManifestFiles,
}

#[derive(Deserialize)]
struct ManifestFiles {
    valid: PathBuf,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (mut cfg, saved_valid) = match (&args.manifest, &args.config) {
        (Some(path), _) => {
            let m: TrainManifest = serde_json::from_str(&read(path)?)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            (m.config, Some(dir.join(m.files.valid)))
        }
        (None, Some(path)) => {
            let mut cfg = RunConfig::default();
            cfg.apply_text(&read(path)?, path.parent())?;
            (cfg, None)
        }
        (None, None) => (RunConfig::default(), None),
    };
    cfg.apply_overrides(&args.set)?;
    cfg.validate()?;
    let table = EmbeddingTable::read_v1(&args.embeddings)?;
    if table.kind() != cfg.region_kind()? {
        return Err(Error::KindMismatch {
            expected: cfg.region_kind()?.name(),
            found: table.kind().name(),
        });
    }
    let valid_path = args.valid.clone().or(saved_valid);

    let result = if cfg.task == Task::OntologyPrediction {
        eval_ranking(&cfg, &table, &args.test, args.dump.as_deref())?
    } else {
        let valid_path = valid_path.ok_or_else(|| Error::Config("eval needs --valid (or --manifest)".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let valid = score_text(&cfg, &table, &read(&valid_path)?, &mut rng)?;
        let test = score_text(&cfg, &table, &read(&args.test)?, &mut rng)?;
        let valid_scores: Vec<Scored> = valid.iter().map(|(_, s)| *s).collect();
        let test_scores: Vec<Scored> = test.iter().map(|(_, s)| *s).collect();
        let (t, valid_f1) = best_threshold_f1(&valid_scores)?;
        let c = f1_at_threshold(&test_scores, t);
        if let Some(path) = &args.dump {
            let mut text = String::from("split\tpair\tlabel\tenergy\n");
            for (split, rows) in [("valid", &valid), ("test", &test)] {
                for (name, s) in rows.iter() {
                    let _ = writeln!(text, "{split}\t{name}\t{}\t{:e}", u8::from(s.label), s.energy);
                }
            }
            fs::write(path, text)?;
        }
        eprintln!("threshold  {t:.6}\nvalid F1   {valid_f1:.4}\nprecision  {:.4}\nrecall     {:.4}\ntest F1    {:.4}", c.precision, c.recall, c.f1);
        json!({ "t": t, "precision": c.precision, "recall": c.recall, "f1": c.f1, "valid_f1": valid_f1 })
    };
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn eval_ranking(cfg: &RunConfig, table: &EmbeddingTable, test: &Path, dump: Option<&Path>) -> Result<serde_json::Value> {
    let ocfg = cfg.ontology()?;
    let pairs = resolve_labeled_axioms(table, &parse_labeled_axioms(&read(test)?)?)?;
    let mut results: Vec<RankResult> = Vec::new();
    let mut dumped = String::from("query\ttrue_rank\tcandidates\n");
    for (ax, label) in pairs {
        if label == Some(false) {
            continue;
        }
        let Some(r) = rank_query(&ax, table, &ocfg)? else {
            log::warn!("`{}` is not a query form; skipped", name_axiom(&ax, table));
            continue;
        };
        results.push(r);
        if dump.is_some() {
            let named = name_axiom(&ax, table).to_string();
            let query = named.rsplit_once(' ').map(|(q, _)| format!("{q} ?")).unwrap_or(named);
            let mut cands = (0..table.num_nodes())
                .map(|c| Ok((c, axiom_energy(&ax.with_concept(ax.concepts().len() - 1, c), table, &ocfg)?)))
                .collect::<Result<Vec<_>>>()?;
            cands.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let top: Vec<String> = cands.iter().take(10).map(|(c, e)| format!("{}:{e:.6}", table.ids()[*c])).collect();
            let _ = writeln!(dumped, "{query}\t{}\t{}", r.rank, top.join(","));
        }
    }
    let m = ranking_metrics(&results)?;
    if let Some(path) = dump {
        fs::write(path, dumped)?;
    }
    eprintln!(
        "queries {}\nH@1     {:.4}\nH@10    {:.4}\nH@100   {:.4}\nmedian  {}\nMRR     {:.4}\nMR      {:.2}\nAUC     {}",
        results.len(),
        m.h1,
        m.h10,
        m.h100,
        m.median,
        m.mrr,
        m.mr,
        m.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
    );
    Ok(serde_json::to_value(m)?)
}

pub fn cmd_verify(args: &VerifyArgs) -> bool {
    let start = std::time::Instant::now();
    let reports = crate::verify::run_all(args.seed);
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!(
        "{} of {} suites passed in {:.1} s",
        reports.len() - failed,
        reports.len(),
        start.elapsed().as_secs_f64()
    );
    failed == 0
}
