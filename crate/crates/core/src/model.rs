//! Domain types: features, schemas, causal graphs, feature sets and the
//! antichain of minimal failure-inducing combinations.
//!
//! Feature sets are bitmasks over a graph's canonical node order (ascending
//! by id), so every ordering in the crate derives from the id order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on schema size imposed by the 64-bit feature-set encoding.
pub const MAX_FEATURES: usize = 64;

const METAGPT_SCHEMA: &str = include_str!("../schemas/metagpt.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("edge endpoint `{0}` is not a node")]
    UnknownEndpoint(String),
    #[error("duplicate feature id `{0}`")]
    DuplicateFeature(String),
    #[error("feature id must be non-empty")]
    EmptyFeatureId,
    #[error("{0} features exceed the supported maximum of {MAX_FEATURES}")]
    TooManyFeatures(usize),
    #[error("combination length {length} out of range 1..={max}")]
    LengthOutOfRange { length: usize, max: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("problem `{problem}` has no baseline value for `{feature}`")]
    MissingBaseline { problem: String, feature: String },
    #[error("schema: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Specification,
    Analysis,
    Design,
    Dependency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub id: String,
    pub category: Category,
    #[serde(default)]
    pub description: String,
    pub stage_index: u32,
    #[serde(default)]
    pub token_weight: u64,
}

/// An authored feature schema: the feature catalog plus information-flow edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<Feature>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

impl Schema {
    /// The bundled 12-feature schema derived from MetaGPT's intermediate outputs.
    pub fn metagpt() -> Schema {
        serde_json::from_str(METAGPT_SCHEMA).expect("bundled schema is valid JSON")
    }

    pub fn from_json(text: &str) -> Result<Schema, ModelError> {
        let schema: Schema = serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
        schema.check_ids()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Schema, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Schema(format!("{}: {e}", path.display())))?;
        Schema::from_json(&text)
    }

    fn check_ids(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for f in &self.features {
            if f.id.is_empty() {
                return Err(ModelError::EmptyFeatureId);
            }
            if !seen.insert(f.id.as_str()) {
                return Err(ModelError::DuplicateFeature(f.id.clone()));
            }
        }
        Ok(())
    }

    pub fn graph(&self) -> Result<CausalGraph, ModelError> {
        self.check_ids()?;
        validate_graph(self.features.iter().map(|f| f.id.clone()), &self.edges)
    }

    pub fn feature(&self, id: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.id == id)
    }

    /// Feature ids ordered by `(stage_index, id)`.
    pub fn stage_order(&self) -> Vec<String> {
        let mut order: Vec<&Feature> = self.features.iter().collect();
        order.sort_by(|a, b| a.stage_index.cmp(&b.stage_index).then_with(|| a.id.cmp(&b.id)));
        order.into_iter().map(|f| f.id.clone()).collect()
    }

    pub fn token_weights(&self) -> BTreeMap<String, u64> {
        self.features.iter().map(|f| (f.id.clone(), f.token_weight)).collect()
    }
}

/// A set of features, encoded as a bitmask over a graph's canonical node order.
///
/// The total order is lexicographic over the ascending member indices, which
/// matches lexicographic order over canonical (id-sorted) member lists.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FeatureSet(u64);

/// A feature set used as an intervention target.
pub type Combination = FeatureSet;

impl FeatureSet {
    pub const EMPTY: FeatureSet = FeatureSet(0);

    pub fn from_bits(bits: u64) -> FeatureSet {
        FeatureSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn singleton(index: usize) -> FeatureSet {
        debug_assert!(index < MAX_FEATURES);
        FeatureSet(1 << index)
    }

    /// The first `n` indices.
    pub fn full(n: usize) -> FeatureSet {
        if n >= 64 {
            FeatureSet(u64::MAX)
        } else {
            FeatureSet((1u64 << n) - 1)
        }
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> FeatureSet {
        indices.into_iter().fold(FeatureSet::EMPTY, |s, i| s.with(i))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, index: usize) -> bool {
        index < 64 && self.0 & (1 << index) != 0
    }

    pub fn with(self, index: usize) -> FeatureSet {
        FeatureSet(self.0 | (1 << index))
    }

    pub fn without(self, index: usize) -> FeatureSet {
        FeatureSet(self.0 & !(1 << index))
    }

    pub fn union(self, other: FeatureSet) -> FeatureSet {
        FeatureSet(self.0 | other.0)
    }

    pub fn intersection(self, other: FeatureSet) -> FeatureSet {
        FeatureSet(self.0 & other.0)
    }

    pub fn difference(self, other: FeatureSet) -> FeatureSet {
        FeatureSet(self.0 & !other.0)
    }

    pub fn is_subset_of(self, other: FeatureSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_strict_subset_of(self, other: FeatureSet) -> bool {
        self.is_subset_of(other) && self != other
    }

    pub fn indices(self) -> Indices {
        Indices(self.0)
    }

    /// All non-empty strict subsets, in no particular order.
    pub fn strict_subsets(self) -> impl Iterator<Item = FeatureSet> {
        let full = self.0;
        let mut sub = full;
        std::iter::from_fn(move || {
            if sub == 0 {
                return None;
            }
            sub = (sub - 1) & full;
            (sub != 0).then_some(FeatureSet(sub))
        })
    }

    /// The `k`-subsets of this set in lexicographic order.
    pub fn subsets_of_size(self, k: usize) -> KSubsets {
        KSubsets::new(self.indices().collect(), k)
    }
}

impl Ord for FeatureSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.indices().cmp(other.indices())
    }
}

impl PartialOrd for FeatureSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.indices()).finish()
    }
}

/// Ascending member indices of a [`FeatureSet`].
#[derive(Clone)]
pub struct Indices(u64);

impl Iterator for Indices {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Indices {}

/// Lexicographic enumeration of the `k`-subsets of a member list.
pub struct KSubsets {
    members: Vec<usize>,
    cursor: Vec<usize>,
    done: bool,
}

impl KSubsets {
    fn new(members: Vec<usize>, k: usize) -> KSubsets {
        let done = k == 0 || k > members.len();
        KSubsets { members, cursor: (0..k).collect(), done }
    }
}

impl Iterator for KSubsets {
    type Item = FeatureSet;

    fn next(&mut self) -> Option<FeatureSet> {
        if self.done {
            return None;
        }
        let out = FeatureSet::from_indices(self.cursor.iter().map(|&c| self.members[c]));
        let n = self.members.len();
        let k = self.cursor.len();
        match (0..k).rev().find(|&i| self.cursor[i] != i + n - k) {
            Some(i) => {
                self.cursor[i] += 1;
                for j in i + 1..k {
                    self.cursor[j] = self.cursor[j - 1] + 1;
                }
            }
            None => self.done = true,
        }
        Some(out)
    }
}

/// A validated DAG over feature ids with a cached topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    topo: Vec<usize>,
}

/// Builds a [`CausalGraph`], rejecting cycles, self-loops and dangling edges.
pub fn validate_graph<I>(nodes: I, edges: &[(String, String)]) -> Result<CausalGraph, ModelError>
where
    I: IntoIterator<Item = String>,
{
    let mut ids: Vec<String> = nodes.into_iter().collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(ModelError::DuplicateFeature(w[0].clone()));
    }
    if ids.iter().any(|id| id.is_empty()) {
        return Err(ModelError::EmptyFeatureId);
    }
    if ids.len() > MAX_FEATURES {
        return Err(ModelError::TooManyFeatures(ids.len()));
    }
    let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();

    let mut resolved = BTreeSet::new();
    for (src, dst) in edges {
        let s = *index.get(src).ok_or_else(|| ModelError::UnknownEndpoint(src.clone()))?;
        let d = *index.get(dst).ok_or_else(|| ModelError::UnknownEndpoint(dst.clone()))?;
        if s == d {
            return Err(ModelError::CycleDetected(vec![src.clone(), src.clone()]));
        }
        resolved.insert((s, d));
    }
    let edges: Vec<(usize, usize)> = resolved.into_iter().collect();

    // Kahn's algorithm; the ready set is ordered so ties resolve by id.
    let n = ids.len();
    let mut indegree = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for &(s, d) in &edges {
        indegree[d] += 1;
        succ[s].push(d);
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut topo = Vec::with_capacity(n);
    while let Some(next) = ready.pop_first() {
        topo.push(next);
        for &d in &succ[next] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.insert(d);
            }
        }
    }
    if topo.len() < n {
        let cycle = find_cycle(&succ, &indegree);
        return Err(ModelError::CycleDetected(cycle.into_iter().map(|i| ids[i].clone()).collect()));
    }
    Ok(CausalGraph { ids, index, edges, topo })
}

// Every node left after Kahn's pass still has a remaining predecessor, so
// walking predecessors must revisit a node; the walk is reversed at the end.
fn find_cycle(succ: &[Vec<usize>], indegree: &[usize]) -> Vec<usize> {
    let mut pred = vec![Vec::new(); succ.len()];
    for (s, targets) in succ.iter().enumerate() {
        for &d in targets {
            pred[d].push(s);
        }
    }
    let mut cur = indegree.iter().position(|&d| d > 0).expect("a node remains");
    let mut seen = HashMap::new();
    let mut path = Vec::new();
    loop {
        if let Some(&pos) = seen.get(&cur) {
            let mut cycle: Vec<usize> = path[pos..].to_vec();
            cycle.push(cur);
            cycle.reverse();
            return cycle;
        }
        seen.insert(cur, path.len());
        path.push(cur);
        cur = *pred[cur].iter().find(|&&p| indegree[p] > 0).expect("remaining node has a remaining predecessor");
    }
}

impl CausalGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Node ids in canonical (ascending) order; position = index.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges.iter().map(|&(s, d)| (self.ids[s].as_str(), self.ids[d].as_str()))
    }

    pub fn edge_indices(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn topological_order(&self) -> impl Iterator<Item = &str> {
        self.topo.iter().map(|&i| self.ids[i].as_str())
    }

    pub fn all(&self) -> FeatureSet {
        FeatureSet::full(self.len())
    }

    pub fn set_of<S: AsRef<str>>(&self, ids: &[S]) -> Result<FeatureSet, ModelError> {
        ids.iter().try_fold(FeatureSet::EMPTY, |set, id| {
            let id = id.as_ref();
            self.index_of(id).map(|i| set.with(i)).ok_or_else(|| ModelError::UnknownFeature(id.to_string()))
        })
    }

    pub fn ids_of(&self, set: FeatureSet) -> Vec<String> {
        set.indices().map(|i| self.ids[i].clone()).collect()
    }
}

/// Every `length`-subset of the graph's nodes that contains none of
/// `excluded` as a subset, in lexicographic order.
pub fn combinations(
    graph: &CausalGraph,
    length: usize,
    excluded: &[FeatureSet],
) -> Result<Vec<Combination>, ModelError> {
    if length == 0 || length > graph.len() {
        return Err(ModelError::LengthOutOfRange { length, max: graph.len() });
    }
    Ok(graph.all().subsets_of_size(length).filter(|c| !excluded.iter().any(|e| e.is_subset_of(*c))).collect())
}

/// Result of [`ImportantFeatureSet::insert_minimal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    Inserted {
        evicted: usize,
    },
    /// A subset of the candidate was already present.
    Rejected,
}

/// An antichain of minimal failure-inducing combinations for one problem.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportantFeatureSet {
    sets: Vec<Combination>,
}

impl ImportantFeatureSet {
    pub fn new() -> ImportantFeatureSet {
        ImportantFeatureSet::default()
    }

    /// Inserts each set in turn through [`Self::insert_minimal`].
    pub fn from_sets<I: IntoIterator<Item = Combination>>(sets: I) -> ImportantFeatureSet {
        sets.into_iter().fold(ImportantFeatureSet::new(), |acc, s| acc.insert_minimal(s).0)
    }

    /// Returns a new antichain with `set` inserted and its strict supersets
    /// evicted, or an unchanged copy flagged `Rejected` when a subset of
    /// `set` is already present.
    pub fn insert_minimal(&self, set: Combination) -> (ImportantFeatureSet, Insertion) {
        if self.dominates(set) {
            return (self.clone(), Insertion::Rejected);
        }
        let mut sets: Vec<Combination> = self.sets.iter().copied().filter(|s| !set.is_subset_of(*s)).collect();
        let evicted = self.sets.len() - sets.len();
        let pos = sets.binary_search(&set).unwrap_or_else(|p| p);
        sets.insert(pos, set);
        (ImportantFeatureSet { sets }, Insertion::Inserted { evicted })
    }

    /// True if some member is a subset of `set` (including `set` itself).
    pub fn dominates(&self, set: Combination) -> bool {
        self.sets.iter().any(|s| s.is_subset_of(set))
    }

    pub fn contains(&self, set: Combination) -> bool {
        self.sets.binary_search(&set).is_ok()
    }

    pub fn sets(&self) -> &[Combination] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn is_antichain(&self) -> bool {
        is_antichain(&self.sets)
    }

    pub fn to_ids(&self, graph: &CausalGraph) -> Vec<Vec<String>> {
        self.sets.iter().map(|s| graph.ids_of(*s)).collect()
    }
}

/// Pairwise check that no set is a subset of another.
pub fn is_antichain(sets: &[FeatureSet]) -> bool {
    sets.iter().enumerate().all(|(i, a)| sets.iter().enumerate().all(|(j, b)| i == j || !a.is_subset_of(*b)))
}

/// Search parameters. Defaults: 100 executions, length 5, θ = 0.5, patience 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub budget: usize,
    pub max_length: usize,
    pub theta: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { budget: 100, max_length: 5, theta: 0.5, patience: 10, seed: 0 }
    }
}

impl AnalysisConfig {
    /// Unlimited budget and patience, for exhaustive comparison runs.
    pub fn unbounded(max_length: usize) -> AnalysisConfig {
        AnalysisConfig { budget: usize::MAX, max_length, patience: usize::MAX, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.budget == 0 {
            return Err(ModelError::InvalidConfig("budget must be positive".into()));
        }
        if self.max_length == 0 {
            return Err(ModelError::InvalidConfig("max_length must be positive".into()));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(ModelError::InvalidConfig(format!("theta {} not in (0, 1)", self.theta)));
        }
        if self.patience == 0 {
            return Err(ModelError::InvalidConfig("patience must be positive".into()));
        }
        Ok(())
    }

    pub fn validate_for(&self, graph: &CausalGraph) -> Result<(), ModelError> {
        self.validate()?;
        if self.max_length > graph.len() {
            return Err(ModelError::InvalidConfig(format!(
                "max_length {} exceeds the {} graph nodes",
                self.max_length,
                graph.len()
            )));
        }
        Ok(())
    }
}

/// A problem the pipeline solves in its original run, with that run's final
/// feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    #[serde(default)]
    pub specification: String,
    pub baseline: BTreeMap<String, String>,
}

impl Problem {
    pub fn validate_for(&self, graph: &CausalGraph) -> Result<(), ModelError> {
        match graph.ids().iter().find(|id| !self.baseline.contains_key(*id)) {
            Some(missing) => Err(ModelError::MissingBaseline { problem: self.id.clone(), feature: missing.clone() }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|x| x.to_string()).collect()
    }

    fn e(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn abcd() -> CausalGraph {
        validate_graph(s(&["A", "B", "C", "D"]), &[]).unwrap()
    }

    #[test]
    fn empty_graph_is_valid() {
        let g = validate_graph(Vec::<String>::new(), &[]).unwrap();
        assert!(g.is_empty());
        assert_eq!(g.topological_order().count(), 0);
    }

    #[test]
    fn chain_orders_topologically() {
        let g = validate_graph(s(&["C", "B", "A"]), &e(&[("A", "B"), ("B", "C")])).unwrap();
        assert_eq!(g.topological_order().collect::<Vec<_>>(), vec!["A", "B", "C"]);
    }

    #[test]
    fn topological_ties_break_by_id() {
        let g = validate_graph(s(&["Z", "B", "A"]), &e(&[("Z", "A")])).unwrap();
        assert_eq!(g.topological_order().collect::<Vec<_>>(), vec!["B", "Z", "A"]);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let err = validate_graph(s(&["A", "B"]), &e(&[("A", "B"), ("B", "A")])).unwrap_err();
        match err {
            ModelError::CycleDetected(cycle) => {
                assert_eq!(cycle.first(), cycle.last());
                assert_eq!(cycle.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn self_loop_and_dangling_edges_are_rejected() {
        assert!(matches!(validate_graph(s(&["A"]), &e(&[("A", "A")])), Err(ModelError::CycleDetected(_))));
        assert_eq!(validate_graph(s(&["A"]), &e(&[("A", "Q")])).unwrap_err(), ModelError::UnknownEndpoint("Q".into()));
    }

    #[test]
    fn pairs_of_four() {
        assert_eq!(combinations(&abcd(), 2, &[]).unwrap().len(), 6);
    }

    #[test]
    fn pairs_excluding_supersets_of_a() {
        let g = abcd();
        let a = g.set_of(&["A"]).unwrap();
        let got: Vec<Vec<String>> = combinations(&g, 2, &[a]).unwrap().into_iter().map(|c| g.ids_of(c)).collect();
        assert_eq!(got, vec![s(&["B", "C"]), s(&["B", "D"]), s(&["C", "D"])]);
    }

    #[test]
    fn length_out_of_range() {
        assert!(matches!(combinations(&abcd(), 5, &[]), Err(ModelError::LengthOutOfRange { .. })));
        assert!(matches!(combinations(&abcd(), 0, &[]), Err(ModelError::LengthOutOfRange { .. })));
    }

    #[test]
    fn insert_minimal_examples() {
        let g = abcd();
        let a = g.set_of(&["A"]).unwrap();
        let ab = g.set_of(&["A", "B"]).unwrap();

        let (one, flag) = ImportantFeatureSet::new().insert_minimal(a);
        assert_eq!(one.sets(), &[a]);
        assert_eq!(flag, Insertion::Inserted { evicted: 0 });

        let (same, flag) = one.insert_minimal(ab);
        assert_eq!(flag, Insertion::Rejected);
        assert_eq!(same, one);

        let (with_ab, _) = ImportantFeatureSet::new().insert_minimal(ab);
        let (reduced, flag) = with_ab.insert_minimal(a);
        assert_eq!(reduced.sets(), &[a]);
        assert_eq!(flag, Insertion::Inserted { evicted: 1 });
        // the original value is untouched
        assert_eq!(with_ab.sets(), &[ab]);
    }

    #[test]
    fn lexicographic_set_order() {
        let g = abcd();
        let mut sets = [
            g.set_of(&["B"]).unwrap(),
            g.set_of(&["A", "C"]).unwrap(),
            g.set_of(&["A"]).unwrap(),
            g.set_of(&["A", "B", "D"]).unwrap(),
        ];
        sets.sort();
        let ids: Vec<_> = sets.iter().map(|x| g.ids_of(*x).join("")).collect();
        assert_eq!(ids, vec!["A", "ABD", "AC", "B"]);
    }

    #[test]
    fn bundled_schema_is_a_twelve_feature_dag() {
        let schema = Schema::metagpt();
        assert_eq!(schema.features.len(), 12);
        let graph = schema.graph().unwrap();
        assert_eq!(graph.len(), 12);
        let cats: BTreeSet<Category> = schema.features.iter().map(|f| f.category).collect();
        assert_eq!(cats.len(), 4);
        assert_eq!(schema.stage_order()[0], "Req_Stat");
    }

    #[test]
    fn config_defaults_and_bounds() {
        let c = AnalysisConfig::default();
        assert_eq!((c.budget, c.max_length, c.theta, c.patience), (100, 5, 0.5, 10));
        assert!(AnalysisConfig { theta: 1.5, ..c.clone() }.validate().is_err());
        assert!(AnalysisConfig { theta: 0.0, ..c.clone() }.validate().is_err());
        assert!(c.validate_for(&abcd()).is_err());
    }

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    proptest! {
        #[test]
        fn antichain_holds_for_any_insert_order(bits in proptest::collection::vec(1u64..256, 0..24)) {
            let set = ImportantFeatureSet::from_sets(bits.into_iter().map(FeatureSet::from_bits));
            prop_assert!(set.is_antichain());
        }

        #[test]
        fn combination_count_matches_filtered_enumeration(
            n in 1usize..=12,
            len_seed in 0usize..12,
            excluded in proptest::collection::vec(1u64..4096, 0..4),
        ) {
            let ids: Vec<String> = (0..n).map(|i| format!("f{i:02}")).collect();
            let g = validate_graph(ids, &[]).unwrap();
            let len = 1 + len_seed % n;
            let excluded: Vec<FeatureSet> = excluded
                .into_iter()
                .map(|b| FeatureSet::from_bits(b).intersection(g.all()))
                .filter(|x| !x.is_empty())
                .collect();
            let got = combinations(&g, len, &excluded).unwrap();
            // independent count: every mask of the right popcount
            let dominated = (0u64..(1 << n))
                .map(FeatureSet::from_bits)
                .filter(|m| m.len() == len && excluded.iter().any(|e| e.is_subset_of(*m)))
                .count();
            prop_assert_eq!(got.len(), binomial(n, len) - dominated);
            prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn edges_go_forward_in_topological_order(n in 1usize..10, raw in proptest::collection::vec((0usize..10, 0usize..10), 0..30)) {
            let ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
            // lower index -> higher index keeps it acyclic
            let edges: Vec<(String, String)> = raw
                .into_iter()
                .filter(|(a, b)| a < b && *b < n)
                .map(|(a, b)| (ids[a].clone(), ids[b].clone()))
                .collect();
            let g = validate_graph(ids, &edges).unwrap();
            let pos: HashMap<&str, usize> = g.topological_order().enumerate().map(|(i, id)| (id, i)).collect();
            for (s, d) in g.edges() {
                prop_assert!(pos[s] < pos[d]);
            }
        }
    }
}
