//! Hierarchies as DAGs: ingestion, transitive closure and reduction,
//! held-out splits of the inferred edges, and child corruption.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(parent, child)` by node index.
pub type Edge = (usize, usize);

/// Node ids are interned in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct Dag {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    children: Vec<Vec<usize>>,
    edges: BTreeSet<Edge>,
}

impl Dag {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds and checks a DAG from named edges.
    pub fn from_edges<S: AsRef<str>>(edges: impl IntoIterator<Item = (S, S)>) -> Result<Self> {
        let mut dag = Self::new();
        for (p, c) in edges {
            let (p, c) = (dag.intern(p.as_ref()), dag.intern(c.as_ref()));
            dag.insert(p, c)?;
        }
        dag.check_acyclic()?;
        Ok(dag)
    }

    /// Nodes named `0..n`, as used by the random-graph tests.
    pub fn from_index_edges(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut dag = Self::new();
        for i in 0..n {
            dag.intern(&i.to_string());
        }
        for (p, c) in edges {
            if p >= n || c >= n {
                return Err(Error::UnknownNode(p.max(c).to_string()));
            }
            dag.insert(p, c)?;
        }
        dag.check_acyclic()?;
        Ok(dag)
    }

    /// Returns the index of `id`, adding it when unseen.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        self.children.push(Vec::new());
        i
    }

    fn insert(&mut self, p: usize, c: usize) -> Result<()> {
        if p == c {
            return Err(Error::Cycle(vec![self.ids[p].clone(), self.ids[p].clone()]));
        }
        if self.edges.insert((p, c)) {
            self.children[p].push(c);
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Fails with a witness cycle `a -> ... -> a` if one exists.
    pub fn check_acyclic(&self) -> Result<()> {
        // 0 = unvisited, 1 = on the stack, 2 = done
        let mut state = vec![0u8; self.num_nodes()];
        for root in 0..self.num_nodes() {
            if state[root] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
            state[root] = 1;
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                if let Some(&w) = self.children[v].get(*next) {
                    *next += 1;
                    match state[w] {
                        0 => {
                            state[w] = 1;
                            stack.push((w, 0));
                        }
                        1 => {
                            let start = stack.iter().position(|&(u, _)| u == w).unwrap();
                            let mut cycle: Vec<String> =
                                stack[start..].iter().map(|&(u, _)| self.ids[u].clone()).collect();
                            cycle.push(self.ids[w].clone());
                            return Err(Error::Cycle(cycle));
                        }
                        _ => {}
                    }
                } else {
                    state[v] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `v` by a non-empty path.
    pub fn descendants(&self, v: usize) -> Vec<usize> {
        let mut seen = vec![false; self.num_nodes()];
        let mut stack: Vec<usize> = self.children[v].clone();
        let mut out = Vec::new();
        while let Some(w) = stack.pop() {
            if !seen[w] {
                seen[w] = true;
                out.push(w);
                stack.extend_from_slice(&self.children[w]);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn transitive_closure(&self) -> BTreeSet<Edge> {
        (0..self.num_nodes())
            .flat_map(|u| self.descendants(u).into_iter().map(move |w| (u, w)))
            .collect()
    }

    /// The transitive reduction: edges of the closure not implied by two
    /// shorter hops.
    pub fn basic_edges(&self) -> BTreeSet<Edge> {
        let reach: Vec<Vec<usize>> = (0..self.num_nodes()).map(|u| self.descendants(u)).collect();
        let mut basic = BTreeSet::new();
        let mut implied = vec![false; self.num_nodes()];
        for u in 0..self.num_nodes() {
            for &v in &reach[u] {
                for &w in &reach[v] {
                    implied[w] = true;
                }
            }
            for &v in &reach[u] {
                if !implied[v] {
                    basic.insert((u, v));
                }
            }
            for &v in &reach[u] {
                for &w in &reach[v] {
                    implied[w] = false;
                }
            }
        }
        basic
    }

    pub fn split(&self, spec: &SplitSpec) -> Result<Split> {
        spec.validate()?;
        let closure = self.transitive_closure();
        let basic = self.basic_edges();
        let mut non_basic: Vec<Edge> = closure.difference(&basic).copied().collect();
        let available = non_basic.len();

        let count = |frac: f64| {
            if frac > 0.0 {
                ((frac * available as f64).round() as usize).max(1)
            } else {
                0
            }
        };
        let (nv, nt, nx) = (count(spec.valid), count(spec.test), count(spec.train_non_basic));
        if nv + nt + nx > available {
            return Err(Error::NotEnoughEdges {
                requested: nv + nt + nx,
                available,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        non_basic.shuffle(&mut rng);
        let mut valid = non_basic[..nv].to_vec();
        let mut test = non_basic[nv..nv + nt].to_vec();
        let mut train: Vec<Edge> = basic.iter().copied().chain(non_basic[nv + nt..nv + nt + nx].iter().copied()).collect();
        valid.sort_unstable();
        test.sort_unstable();
        train.sort_unstable();
        Ok(Split {
            train,
            valid,
            test,
            closure,
            basic,
        })
    }

    /// Draws `k` corrupted children `v′` for `parent`, uniformly over nodes
    /// and rejecting `v′ = parent` or `(parent, v′) ∈ exclude`.
    pub fn sample_negatives<R: Rng>(
        &self,
        parent: usize,
        k: usize,
        exclude: &HashSet<Edge>,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        sample_corruptions(self.num_nodes(), k, |v| v == parent || exclude.contains(&(parent, v)), rng)
            .ok_or_else(|| Error::NoValidCorruption(self.ids[parent].clone()))
    }

    /// Labels `positives` true and adds `k` corrupted children per positive
    /// labeled false. Positives whose parent has no valid corruption (e.g.
    /// a root when `exclude` is the full closure) get none.
    pub fn with_negatives<R: Rng>(
        &self,
        positives: &[Edge],
        k: usize,
        exclude: &HashSet<Edge>,
        rng: &mut R,
    ) -> Vec<(Edge, bool)> {
        let mut out = Vec::with_capacity(positives.len() * (k + 1));
        for &(p, c) in positives {
            out.push(((p, c), true));
            match self.sample_negatives(p, k, exclude, rng) {
                Ok(negs) => out.extend(negs.into_iter().map(|v| ((p, v), false))),
                Err(e) => log::warn!("{e}; positive kept without negatives"),
            }
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        Self::from_edges(parse_edge_lines(text)?)
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        Self::parse_tsv(&std::fs::read_to_string(path)?)
    }

    /// Edge list as `parent\tchild` lines in the given order.
    pub fn edges_to_tsv<'a>(&self, edges: impl IntoIterator<Item = &'a Edge>) -> String {
        let mut out = String::new();
        for &(p, c) in edges {
            let _ = writeln!(out, "{}\t{}", self.ids[p], self.ids[c]);
        }
        out
    }
}

/// Rejection sampling with a linear-scan fallback, so that the impossible
/// case is detected without looping forever.
pub(crate) fn sample_corruptions<R: Rng>(
    n: usize,
    k: usize,
    reject: impl Fn(usize) -> bool,
    rng: &mut R,
) -> Option<Vec<usize>> {
    const TRIES: usize = 64;
    let mut out = Vec::with_capacity(k);
    let mut candidates: Option<Vec<usize>> = None;
    for _ in 0..k {
        let mut pick = None;
        if candidates.is_none() {
            for _ in 0..TRIES {
                let v = rng.gen_range(0..n);
                if !reject(v) {
                    pick = Some(v);
                    break;
                }
            }
        }
        let v = match pick {
            Some(v) => v,
            None => {
                let pool = candidates.get_or_insert_with(|| (0..n).filter(|&v| !reject(v)).collect());
                if pool.is_empty() {
                    return None;
                }
                pool[rng.gen_range(0..pool.len())]
            }
        };
        out.push(v);
    }
    Some(out)
}

/// Lines of `a\tb[\t...]`; blank lines and `#` comments are skipped.
pub fn parse_edge_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next()) {
            (Some(p), Some(c)) if !p.is_empty() && !c.is_empty() => out.push((p.to_string(), c.to_string())),
            _ => return Err(Error::parse(n + 1, "expected `parent<TAB>child`")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of non-basic edges held out for validation.
    pub valid: f64,
    pub test: f64,
    /// Fraction of non-basic edges added to the training edges.
    pub train_non_basic: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            valid: 0.05,
            test: 0.05,
            train_non_basic: 0.0,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.valid, self.test, self.train_non_basic];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || fracs.iter().sum::<f64>() > 1.0 {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1] and sum to at most 1, got {fracs:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Edge>,
    pub valid: Vec<Edge>,
    pub test: Vec<Edge>,
    pub closure: BTreeSet<Edge>,
    pub basic: BTreeSet<Edge>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn named(dag: &Dag, edges: &BTreeSet<Edge>) -> BTreeSet<(String, String)> {
        edges
            .iter()
            .map(|&(p, c)| (dag.id(p).to_string(), dag.id(c).to_string()))
            .collect()
    }

    fn pairs(list: &[(&str, &str)]) -> BTreeSet<(String, String)> {
        list.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn chain_closure_and_reduction() {
        let dag = Dag::from_edges([("a", "b"), ("b", "c")]).unwrap();
        assert_eq!(
            named(&dag, &dag.transitive_closure()),
            pairs(&[("a", "b"), ("b", "c"), ("a", "c")])
        );
        let closed = Dag::from_edges([("a", "b"), ("b", "c"), ("a", "c")]).unwrap();
        assert_eq!(named(&closed, &closed.basic_edges()), pairs(&[("a", "b"), ("b", "c")]));
    }

    #[test]
    fn single_edge() {
        let dag = Dag::from_edges([("x", "y")]).unwrap();
        assert_eq!(dag.transitive_closure(), dag.edges().clone());
        assert_eq!(dag.basic_edges(), dag.edges().clone());
    }

    #[test]
    fn tree_edges_are_basic() {
        let dag = Dag::from_edges([("r", "a"), ("r", "b"), ("a", "c"), ("a", "d"), ("b", "e")]).unwrap();
        assert_eq!(dag.basic_edges(), dag.edges().clone());
    }

    #[test]
    fn cycles_are_reported() {
        match Dag::from_edges([("a", "b"), ("b", "c"), ("c", "a")]) {
            Err(Error::Cycle(w)) => {
                assert_eq!(w.first(), w.last());
                assert_eq!(w.len(), 4);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(Dag::from_edges([("a", "a")]), Err(Error::Cycle(_))));
    }

    #[test]
    fn tsv_parsing() {
        let dag = Dag::parse_tsv("# header\nroot\tleaf one\n\nroot\tother\r\n").unwrap();
        assert_eq!(dag.ids(), &["root", "leaf one", "other"]);
        assert!(matches!(Dag::parse_tsv("a b\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn tree_split_with_zero_fractions() {
        let dag = Dag::from_edges([("r", "a"), ("r", "b")]).unwrap();
        let spec = SplitSpec { valid: 0.0, test: 0.0, ..Default::default() };
        let s = dag.split(&spec).unwrap();
        assert!(s.valid.is_empty() && s.test.is_empty());
        assert_eq!(s.train.len(), 2);
        assert!(matches!(dag.split(&SplitSpec::default()), Err(Error::NotEnoughEdges { .. })));
    }

    #[test]
    fn chain_split_counts() {
        let dag = Dag::from_edges([("a", "b"), ("b", "c"), ("c", "d")]).unwrap();
        assert_eq!(dag.transitive_closure().len(), 6);
        let spec = SplitSpec { valid: 1.0 / 3.0, test: 1.0 / 3.0, ..Default::default() };
        let s = dag.split(&spec).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (3, 1, 1));
        assert!(s.valid.iter().all(|e| !s.test.contains(e) && !s.basic.contains(e)));

        let extra = SplitSpec { train_non_basic: 1.0 / 3.0, ..spec };
        let s = dag.split(&extra).unwrap();
        assert_eq!(s.train.len(), 4);
    }

    #[test]
    fn bad_fractions() {
        let dag = Dag::from_edges([("a", "b")]).unwrap();
        let spec = SplitSpec { valid: 0.7, test: 0.7, ..Default::default() };
        assert!(matches!(dag.split(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn forced_corruption() {
        let mut dag = Dag::from_edges([("a", "b")]).unwrap();
        dag.intern("c");
        let exclude: HashSet<Edge> = dag.edges().iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs = dag.sample_negatives(0, 5, &exclude, &mut rng).unwrap();
        assert_eq!(negs, vec![2; 5]);

        let full: HashSet<Edge> = [(0, 1), (0, 2)].into_iter().collect();
        assert!(matches!(
            dag.sample_negatives(0, 1, &full, &mut rng),
            Err(Error::NoValidCorruption(_))
        ));
    }

    #[test]
    fn labeled_negatives_skip_roots() {
        let dag = Dag::from_edges([("r", "a"), ("a", "b"), ("r", "c")]).unwrap();
        let closure: HashSet<Edge> = dag.transitive_closure().into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labeled = dag.with_negatives(&[(0, 2), (1, 3)], 3, &closure, &mut rng);
        // r reaches every node; a can still be corrupted with r or c
        assert_eq!(labeled.iter().filter(|(e, _)| e.0 == 0).count(), 1);
        assert_eq!(labeled.iter().filter(|(e, l)| e.0 == 1 && !l).count(), 3);
        assert!(labeled.iter().all(|(e, l)| *l || !closure.contains(e)));
    }

    #[test]
    fn negative_stream_is_seeded() {
        let dag = Dag::from_index_edges(30, (1..30).map(|i| (0, i))).unwrap();
        let exclude = HashSet::new();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|i| dag.sample_negatives(i, 10, &exclude, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    fn random_dag() -> impl Strategy<Value = (usize, Vec<Edge>)> {
        (2usize..20).prop_flat_map(|n| {
            let pairs: Vec<Edge> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
            (Just(n), proptest::sample::subsequence(pairs.clone(), 0..=pairs.len()))
        })
    }

    proptest! {
        #[test]
        fn reduction_preserves_closure((n, edges) in random_dag()) {
            let dag = Dag::from_index_edges(n, edges).unwrap();
            let basic = Dag::from_index_edges(n, dag.basic_edges()).unwrap();
            prop_assert_eq!(basic.transitive_closure(), dag.transitive_closure());
            prop_assert!(dag.basic_edges().is_subset(dag.edges()));
        }

        #[test]
        fn split_is_reproducible((n, edges) in random_dag(), seed in 0u64..1000) {
            let dag = Dag::from_index_edges(n, edges).unwrap();
            let available = dag.transitive_closure().len() - dag.basic_edges().len();
            let frac = if available >= 2 { 0.25 } else { 0.0 };
            let spec = SplitSpec { valid: frac, test: frac, train_non_basic: 0.0, seed };
            let a = dag.split(&spec).unwrap();
            let b = dag.split(&spec).unwrap();
            prop_assert!(a.valid.iter().all(|e| !a.test.contains(e) && !a.train.contains(e)));
            prop_assert!(a.valid.iter().chain(&a.test).all(|e| a.closure.contains(e)));
            prop_assert_eq!(a.train, b.train);
            prop_assert_eq!(a.valid, b.valid);
            prop_assert_eq!(a.test, b.test);
        }
    }
}
