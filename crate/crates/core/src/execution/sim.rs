//! Deterministic pipeline simulator.
//!
//! Intervening on a set `S` corrupts `S` plus every feature `S` influences;
//! the influence map is transitively closed, so one hop from `S` reaches the
//! whole closure. Each influence edge leaving `S` can be suppressed with
//! probability `corruption_noise`, modelling downstream agents that absorb an
//! upstream error. The run fails iff the corrupted set covers a planted cause.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ExecutionRecord, Intervention, Outcome, SystemUnderTest};
use crate::model::{is_antichain, FeatureSet, Problem, MAX_FEATURES};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("influence is not transitively closed: {from} -> {via} -> {to} but not {from} -> {to}")]
    NotTransitivelyClosed { from: String, via: String, to: String },
    #[error("planted cause references unknown feature `{0}`")]
    PredicateReferencesUnknownFeature(String),
    #[error("planted causes are not an antichain")]
    NotAntichain,
    #[error("planted cause is empty")]
    EmptyCause,
    #[error("influence or token weight references unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("duplicate feature `{0}`")]
    DuplicateFeature(String),
    #[error("too many features: {0}")]
    TooManyFeatures(usize),
    #[error("corruption noise {0} not in [0, 1]")]
    NoiseOutOfRange(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPipelineSpec {
    pub features: Vec<String>,
    #[serde(default)]
    pub influence: BTreeMap<String, BTreeSet<String>>,
    pub planted_causes: Vec<BTreeSet<String>>,
    #[serde(default)]
    pub token_weights: BTreeMap<String, u64>,
    #[serde(default)]
    pub corruption_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A built simulator. Pure: identical inputs always give identical records.
#[derive(Debug, Clone)]
pub struct SimPipeline {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    influence: Vec<FeatureSet>,
    causes: Vec<FeatureSet>,
    weights: Vec<u64>,
    noise: f64,
    seed: u64,
}

/// Modifiers applied on top of an intervention.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Variation {
    /// Features removed from the pipeline: they produce no output, cost no
    /// tokens, never propagate, and count as lost members of any planted
    /// cause that contains them.
    pub disabled: FeatureSet,
    /// Features held at their baseline value regardless of upstream corruption.
    pub restored: FeatureSet,
}

pub fn build_sim(spec: &SimPipelineSpec) -> Result<SimPipeline, SimError> {
    let mut ids = spec.features.clone();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(SimError::DuplicateFeature(w[0].clone()));
    }
    if ids.len() > MAX_FEATURES {
        return Err(SimError::TooManyFeatures(ids.len()));
    }
    if !(0.0..=1.0).contains(&spec.corruption_noise) {
        return Err(SimError::NoiseOutOfRange(spec.corruption_noise));
    }
    let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    let lookup = |id: &String| index.get(id).copied().ok_or_else(|| SimError::UnknownFeature(id.clone()));

    let mut influence = vec![FeatureSet::EMPTY; ids.len()];
    for (src, targets) in &spec.influence {
        let s = lookup(src)?;
        for t in targets {
            influence[s] = influence[s].with(lookup(t)?);
        }
    }
    for (f, reach) in influence.iter().enumerate() {
        for g in reach.indices() {
            if let Some(h) = influence[g].difference(*reach).indices().find(|&h| h != f) {
                return Err(SimError::NotTransitivelyClosed {
                    from: ids[f].clone(),
                    via: ids[g].clone(),
                    to: ids[h].clone(),
                });
            }
        }
    }

    let mut causes = Vec::with_capacity(spec.planted_causes.len());
    for cause in &spec.planted_causes {
        if cause.is_empty() {
            return Err(SimError::EmptyCause);
        }
        let mut set = FeatureSet::EMPTY;
        for id in cause {
            let i = index.get(id).ok_or_else(|| SimError::PredicateReferencesUnknownFeature(id.clone()))?;
            set = set.with(*i);
        }
        causes.push(set);
    }
    if !is_antichain(&causes) {
        return Err(SimError::NotAntichain);
    }
    causes.sort();

    let mut weights = vec![0u64; ids.len()];
    for (id, w) in &spec.token_weights {
        weights[lookup(id)?] = *w;
    }

    Ok(SimPipeline { ids, index, influence, causes, weights, noise: spec.corruption_noise, seed: spec.seed })
}

impl SimPipeline {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn planted_causes(&self) -> &[FeatureSet] {
        &self.causes
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn set_of<S: AsRef<str>>(&self, ids: impl IntoIterator<Item = S>) -> Option<FeatureSet> {
        ids.into_iter().try_fold(FeatureSet::EMPTY, |s, id| self.index.get(id.as_ref()).map(|&i| s.with(i)))
    }

    pub fn ids_of(&self, set: FeatureSet) -> Vec<String> {
        set.indices().map(|i| self.ids[i].clone()).collect()
    }

    pub fn token_weight_of(&self, set: FeatureSet) -> u64 {
        set.indices().map(|i| self.weights[i]).sum()
    }

    pub fn total_token_weight(&self) -> u64 {
        self.weights.iter().sum()
    }

    /// `roots` plus every feature reached through an unsuppressed influence edge.
    pub fn corrupted(&self, roots: FeatureSet, run_seed: u64) -> FeatureSet {
        let mut out = roots;
        if self.noise == 0.0 {
            for r in roots.indices() {
                out = out.union(self.influence[r]);
            }
            return out;
        }
        let mut rng = seed::rng(self.seed, &[b"propagation", &run_seed.to_le_bytes()]);
        for r in roots.indices() {
            for t in self.influence[r].indices() {
                if !rng.gen_bool(self.noise) {
                    out = out.with(t);
                }
            }
        }
        out
    }

    /// Corrupted set and failure flag for an intervention on `roots`.
    pub fn evaluate(&self, roots: FeatureSet, variation: Variation, run_seed: u64) -> (FeatureSet, bool) {
        let blocked = variation.disabled.union(variation.restored);
        let corrupted = self.corrupted(roots.difference(blocked), run_seed).difference(blocked);
        let failed = self.causes.iter().any(|c| c.difference(variation.disabled).is_subset_of(corrupted));
        (corrupted, failed)
    }

    pub fn execute_with(
        &self,
        problem: &Problem,
        intervention: &Intervention,
        variation: Variation,
        run_seed: u64,
    ) -> ExecutionRecord {
        let Some(roots) = self.set_of(intervention.keys()) else {
            let unknown = intervention.keys().find(|k| !self.index.contains_key(*k)).cloned().unwrap_or_default();
            return ExecutionRecord::error(&problem.id, intervention, format!("unknown feature `{unknown}`"));
        };
        let (corrupted, failed) = self.evaluate(roots, variation, run_seed);
        let observed = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let value = if variation.disabled.contains(i) {
                    String::new()
                } else if corrupted.contains(i) {
                    sentinel(id, run_seed)
                } else {
                    problem.baseline.get(id).cloned().unwrap_or_default()
                };
                (id.clone(), value)
            })
            .collect();
        let produced = FeatureSet::full(self.ids.len()).difference(variation.disabled);
        ExecutionRecord {
            problem_id: problem.id.clone(),
            intervention: intervention.clone(),
            outcome: if failed { Outcome::Fail } else { Outcome::Pass },
            observed,
            tokens: self.token_weight_of(produced),
        }
    }
}

/// Observed text of a corrupted feature.
pub fn sentinel(feature: &str, run_seed: u64) -> String {
    format!("corrupted:{feature}:{run_seed}")
}

impl SystemUnderTest for SimPipeline {
    fn execute(&self, problem: &Problem, intervention: &Intervention, run_seed: u64) -> ExecutionRecord {
        self.execute_with(problem, intervention, Variation::default(), run_seed)
    }

    /// Noisy pipelines are seed-stable but propagate differently per run.
    fn is_deterministic(&self) -> bool {
        self.noise() == 0.0
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    pub fn spec(features: &[&str], influence: &[(&str, &[&str])], causes: &[&[&str]]) -> SimPipelineSpec {
        SimPipelineSpec {
            features: features.iter().map(|s| s.to_string()).collect(),
            influence: influence.iter().map(|(k, v)| (k.to_string(), set(v))).collect(),
            planted_causes: causes.iter().map(|c| set(c)).collect(),
            token_weights: features.iter().enumerate().map(|(i, f)| (f.to_string(), 10 * (i as u64 + 1))).collect(),
            corruption_noise: 0.0,
            seed: 1,
        }
    }

    /// A->{B,D}, B->{D}; planted {{A,C},{D}}.
    pub fn f1() -> SimPipelineSpec {
        spec(&["A", "B", "C", "D"], &[("A", &["B", "D"]), ("B", &["D"])], &[&["A", "C"], &["D"]])
    }

    /// No influence; planted {{A},{B,C}}.
    pub fn f2() -> SimPipelineSpec {
        spec(&["A", "B", "C", "D"], &[], &[&["A"], &["B", "C"]])
    }

    /// A->{B,C,D}; planted {{D,E}}.
    pub fn f3() -> SimPipelineSpec {
        spec(&["A", "B", "C", "D", "E"], &[("A", &["B", "C", "D"])], &[&["D", "E"]])
    }

    pub fn problem(spec: &SimPipelineSpec) -> Problem {
        Problem {
            id: "p0".into(),
            specification: "fixture".into(),
            baseline: spec.features.iter().map(|f| (f.clone(), format!("original {f} value text"))).collect(),
        }
    }

    pub fn intervention(ids: &[&str]) -> Intervention {
        ids.iter().map(|f| (f.to_string(), format!("wrong {f}"))).collect()
    }
}
