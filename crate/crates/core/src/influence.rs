//! Similarity metrics, observed influence sets and collective influence.

use std::collections::{HashMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::ExecutionRecord;
use crate::model::{CausalGraph, Combination, FeatureSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfluenceError {
    #[error("influence sets are only computed for passing runs")]
    OutcomeNotPass,
    #[error("unknown similarity metric `{0}`")]
    UnknownMetric(String),
    #[error("remote similarity failed: {0}")]
    Remote(String),
}

fn tokens(text: &str) -> HashSet<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Jaccard similarity over lowercased whitespace tokens. Two empty texts are
/// identical.
pub fn similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let shared = ta.intersection(&tb).count();
    shared as f64 / (ta.len() + tb.len() - shared) as f64
}

/// `1 - levenshtein / max_len` over characters.
pub fn edit_ratio(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

/// A similarity metric selectable by name.
#[derive(Debug, Clone, Default)]
pub enum Metric {
    #[default]
    Jaccard,
    EditRatio,
    RemoteEmbedding(RemoteSimilarity),
}

#[derive(Debug, Clone)]
pub struct RemoteSimilarity {
    url: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    a: &'a str,
    b: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

impl RemoteSimilarity {
    pub fn new(url: impl Into<String>, timeout: Duration) -> RemoteSimilarity {
        RemoteSimilarity { url: url.into(), agent: ureq::AgentBuilder::new().timeout(timeout).build() }
    }

    pub fn score(&self, a: &str, b: &str) -> Result<f64, InfluenceError> {
        let body = serde_json::to_value(ScoreRequest { a, b }).expect("serializable");
        let resp: ScoreResponse = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| InfluenceError::Remote(e.to_string()))?
            .into_json()
            .map_err(|e| InfluenceError::Remote(e.to_string()))?;
        if !(0.0..=1.0).contains(&resp.score) {
            return Err(InfluenceError::Remote(format!("score {} outside [0, 1]", resp.score)));
        }
        Ok(resp.score)
    }
}

impl Metric {
    /// `"jaccard"`, `"edit-ratio"` or `"remote-embedding"` (requires `url`).
    pub fn from_name(name: &str, url: Option<&str>) -> Result<Metric, InfluenceError> {
        match (name, url) {
            ("jaccard", _) => Ok(Metric::Jaccard),
            ("edit-ratio", _) => Ok(Metric::EditRatio),
            ("remote-embedding", Some(url)) => {
                Ok(Metric::RemoteEmbedding(RemoteSimilarity::new(url, Duration::from_secs(30))))
            }
            ("remote-embedding", None) => Err(InfluenceError::Remote("remote-embedding needs a url".into())),
            (other, _) => Err(InfluenceError::UnknownMetric(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Jaccard => "jaccard",
            Metric::EditRatio => "edit-ratio",
            Metric::RemoteEmbedding(_) => "remote-embedding",
        }
    }

    pub fn score(&self, a: &str, b: &str) -> Result<f64, InfluenceError> {
        match self {
            Metric::Jaccard => Ok(similarity(a, b)),
            Metric::EditRatio => Ok(edit_ratio(a, b)),
            Metric::RemoteEmbedding(remote) => {
                if a == b {
                    return Ok(1.0);
                }
                remote.score(a, b)
            }
        }
    }
}

/// Influence sets of combinations whose intervention did not fail.
#[derive(Debug, Clone, Default)]
pub struct InfluenceCache {
    entries: HashMap<Combination, FeatureSet>,
}

impl InfluenceCache {
    pub fn new() -> InfluenceCache {
        InfluenceCache::default()
    }

    /// Stores `influenced` for `key`, dropping any members of `key`.
    pub fn insert(&mut self, key: Combination, influenced: FeatureSet) {
        self.entries.insert(key, influenced.difference(key));
    }

    pub fn get(&self, key: Combination) -> Option<FeatureSet> {
        self.entries.get(&key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Combination, FeatureSet)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }
}

/// Features outside `s` whose observed value moved below `theta` similarity
/// of the baseline. Missing observed values count as influenced.
pub fn influence_set(
    graph: &CausalGraph,
    baseline: &ExecutionRecord,
    intervened: &ExecutionRecord,
    s: Combination,
    theta: f64,
    metric: &Metric,
) -> Result<FeatureSet, InfluenceError> {
    if !intervened.outcome.is_pass() {
        return Err(InfluenceError::OutcomeNotPass);
    }
    let mut out = FeatureSet::EMPTY;
    for (i, id) in graph.ids().iter().enumerate() {
        if s.contains(i) {
            continue;
        }
        let influenced = match (baseline.observed.get(id), intervened.observed.get(id)) {
            (_, None) => true,
            (None, Some(after)) => !after.is_empty(),
            (Some(before), Some(after)) => {
                if !before.is_empty() && after.is_empty() {
                    true
                } else {
                    metric.score(before, after)? < theta
                }
            }
        };
        if influenced {
            out = out.with(i);
        }
    }
    Ok(out)
}

/// Union of cached influence sets over the strict subsets of `s`, with the
/// members of `s` removed.
pub fn collective_influence(s: Combination, cache: &InfluenceCache) -> FeatureSet {
    s.strict_subsets().filter_map(|sub| cache.get(sub)).fold(FeatureSet::EMPTY, FeatureSet::union).difference(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::execution::sim::fixtures;
    use crate::execution::{build_sim, Intervention, Outcome, SystemUnderTest};
    use crate::model::validate_graph;
    use proptest::prelude::*;

    #[test]
    fn jaccard_examples() {
        assert_eq!(similarity("abc def", "abc def"), 1.0);
        assert_eq!(similarity("abc", "xyz"), 0.0);
        assert_eq!(similarity("sort the list", "sort the array"), 0.5);
        assert_eq!(similarity("", ""), 1.0);
        assert_eq!(similarity("", "x"), 0.0);
        assert_eq!(similarity("Sort  LIST", "sort list"), 1.0);
    }

    #[test]
    fn metric_names() {
        assert_eq!(Metric::from_name("jaccard", None).unwrap().name(), "jaccard");
        assert_eq!(Metric::from_name("edit-ratio", None).unwrap().name(), "edit-ratio");
        assert!(Metric::from_name("cosine", None).is_err());
        assert!(Metric::from_name("remote-embedding", None).is_err());
        assert_eq!(Metric::EditRatio.score("abcd", "abce").unwrap(), 0.75);
    }

    fn graph_of(spec: &crate::execution::SimPipelineSpec) -> CausalGraph {
        validate_graph(spec.features.clone(), &[]).unwrap()
    }

    #[test]
    fn identical_records_have_empty_influence() {
        let spec = fixtures::f1();
        let sim = build_sim(&spec).unwrap();
        let g = graph_of(&spec);
        let p = fixtures::problem(&spec);
        let base = sim.execute(&p, &Intervention::new(), 0);
        let e = influence_set(&g, &base, &base, FeatureSet::EMPTY, 0.5, &Metric::Jaccard).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn f1_and_f3_influence_sets() {
        let spec = fixtures::f1();
        let sim = build_sim(&spec).unwrap();
        let g = graph_of(&spec);
        let p = fixtures::problem(&spec);
        let base = sim.execute(&p, &Intervention::new(), 0);
        let c = sim.execute(&p, &fixtures::intervention(&["C"]), 1);
        let e = influence_set(&g, &base, &c, g.set_of(&["C"]).unwrap(), 0.5, &Metric::Jaccard).unwrap();
        assert!(e.is_empty());

        let spec = fixtures::f3();
        let sim = build_sim(&spec).unwrap();
        let g = graph_of(&spec);
        let p = fixtures::problem(&spec);
        let base = sim.execute(&p, &Intervention::new(), 0);
        let ab = sim.execute(&p, &fixtures::intervention(&["A", "B"]), 1);
        assert_eq!(ab.outcome, Outcome::Pass);
        let e = influence_set(&g, &base, &ab, g.set_of(&["A", "B"]).unwrap(), 0.5, &Metric::Jaccard).unwrap();
        assert_eq!(g.ids_of(e), vec!["C", "D"]);
    }

    #[test]
    fn failing_runs_have_no_influence_set() {
        let spec = fixtures::f1();
        let sim = build_sim(&spec).unwrap();
        let g = graph_of(&spec);
        let p = fixtures::problem(&spec);
        let base = sim.execute(&p, &Intervention::new(), 0);
        let d = sim.execute(&p, &fixtures::intervention(&["D"]), 1);
        assert_eq!(
            influence_set(&g, &base, &d, g.set_of(&["D"]).unwrap(), 0.5, &Metric::Jaccard),
            Err(InfluenceError::OutcomeNotPass)
        );
    }

    #[test]
    fn missing_values_count_as_influenced() {
        let g = validate_graph(vec!["A".into(), "B".into()], &[]).unwrap();
        let mk = |observed: &[(&str, &str)]| ExecutionRecord {
            problem_id: "p".into(),
            intervention: Intervention::new(),
            outcome: Outcome::Pass,
            observed: observed.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            tokens: 0,
        };
        let base = mk(&[("A", "alpha beta"), ("B", "gamma")]);
        let gone = mk(&[("A", "alpha beta")]);
        let e = influence_set(&g, &base, &gone, FeatureSet::EMPTY, 0.5, &Metric::Jaccard).unwrap();
        assert_eq!(g.ids_of(e), vec!["B"]);
    }

    #[test]
    fn collective_influence_examples() {
        let g = validate_graph(["A", "B", "C", "D"].map(String::from).to_vec(), &[]).unwrap();
        let set = |ids: &[&str]| g.set_of(ids).unwrap();
        let cache = InfluenceCache::new();
        assert!(collective_influence(set(&["A", "B"]), &cache).is_empty());

        let mut cache = InfluenceCache::new();
        cache.insert(set(&["B"]), set(&["C", "D"]));
        cache.insert(set(&["A"]), set(&["B"]));
        assert_eq!(g.ids_of(collective_influence(set(&["A", "B"]), &cache)), vec!["C", "D"]);

        let mut cache = InfluenceCache::new();
        cache.insert(set(&["A"]), set(&["B"]));
        cache.insert(set(&["C"]), set(&["B"]));
        assert_eq!(g.ids_of(collective_influence(set(&["A", "C"]), &cache)), vec!["B"]);
    }

    proptest! {
        #[test]
        fn jaccard_is_symmetric_and_bounded(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
            let s = similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, similarity(&b, &a));
            prop_assert_eq!(similarity(&a, &a), 1.0);
        }

        #[test]
        fn collective_influence_grows_with_the_cache(
            entries in proptest::collection::vec((1u64..64, 0u64..64), 0..12),
            extra in (1u64..64, 0u64..64),
            target in 1u64..64,
        ) {
            let mut cache = InfluenceCache::new();
            for (k, v) in &entries {
                cache.insert(FeatureSet::from_bits(*k), FeatureSet::from_bits(*v));
            }
            let s = FeatureSet::from_bits(target);
            let before = collective_influence(s, &cache);
            prop_assert!(before.intersection(s).is_empty());
            // inserting a fresh key can only add to the union
            if cache.get(FeatureSet::from_bits(extra.0)).is_none() {
                cache.insert(FeatureSet::from_bits(extra.0), FeatureSet::from_bits(extra.1));
                prop_assert!(before.is_subset_of(collective_influence(s, &cache)));
            }
        }
    }
}
