//! Brute-force ground truth: run every combination up to a length bound.
//!
//! Lengths are enumerated in ascending order and supersets of causes found
//! at shorter lengths are skipped. That skip is what makes every surviving
//! failure minimal: any failing strict subset would have been found (and its
//! supersets excluded) at its own, smaller length.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::{Outcome, SystemUnderTest};
use crate::intervene::Replacements;
use crate::model::{combinations, CausalGraph, Combination, ImportantFeatureSet, ModelError, Problem};
use crate::par::{self, Parallelism};
use crate::search::{execute_combination, ProblemResult, SearchStats};

/// Exhaustive enumeration is only offered for graphs this small.
pub const MAX_ORACLE_FEATURES: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle supports at most {MAX_ORACLE_FEATURES} features, graph has {0}")]
    TooManyFeatures(usize),
    #[error("system under test is not deterministic: {0}")]
    NondeterministicSUT(String),
    #[error("run on {combination} errored: {detail}")]
    Execution { combination: String, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Every minimal failing combination of length ≤ `max_length`.
///
/// `seed` must match the one given to the search for run seeds to line up.
pub fn enumerate_minimal_causes<S: SystemUnderTest + ?Sized>(
    sut: &S,
    graph: &CausalGraph,
    problem: &Problem,
    replacements: &Replacements,
    max_length: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<ImportantFeatureSet, OracleError> {
    if graph.len() > MAX_ORACLE_FEATURES {
        return Err(OracleError::TooManyFeatures(graph.len()));
    }
    if !sut.is_deterministic() {
        return Err(OracleError::NondeterministicSUT("declared nondeterministic".into()));
    }
    probe(sut, graph, problem, replacements, seed)?;
    let mode = mode.capped(sut.max_in_flight());
    let mut found = ImportantFeatureSet::new();
    for length in 1..=max_length.min(graph.len()) {
        let candidates = combinations(graph, length, found.sets())?;
        let outcomes =
            par::map(&candidates, mode, |c| execute_combination(sut, graph, replacements, problem, seed, *c));
        for (c, record) in candidates.iter().zip(outcomes) {
            match record.outcome {
                Outcome::Fail => found = found.insert_minimal(*c).0,
                Outcome::Pass => {}
                Outcome::ExecError(detail) => {
                    return Err(OracleError::Execution { combination: graph.ids_of(*c).join(","), detail })
                }
            }
        }
    }
    Ok(found)
}

/// Runs the baseline twice and every single feature twice under two run
/// seeds; any disagreement means oracle answers would depend on the seed.
fn probe<S: SystemUnderTest + ?Sized>(
    sut: &S,
    graph: &CausalGraph,
    problem: &Problem,
    replacements: &Replacements,
    seed: u64,
) -> Result<(), OracleError> {
    let alt = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let probes = std::iter::once(Combination::EMPTY).chain((0..graph.len()).map(Combination::singleton));
    for c in probes {
        let a = execute_combination(sut, graph, replacements, problem, seed, c);
        let b = execute_combination(sut, graph, replacements, problem, seed, c);
        let d = execute_combination(sut, graph, replacements, problem, alt, c);
        if a.outcome != b.outcome || a.outcome != d.outcome {
            return Err(OracleError::NondeterministicSUT(format!(
                "probe {{{}}} gave {:?}, {:?} and {:?}",
                graph.ids_of(c).join(","),
                a.outcome,
                b.outcome,
                d.outcome
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub precision: f64,
    pub recall: f64,
    pub minimality_violations: usize,
    /// Recall restricted to truth sets of each length.
    pub by_length_recall: BTreeMap<usize, f64>,
}

/// Set-level precision and recall of `reported` against `truth`. An empty
/// report has precision 1 (nothing false was claimed); an empty truth has
/// recall 1.
pub fn verify_result(reported: &ImportantFeatureSet, truth: &ImportantFeatureSet) -> Verification {
    let hits = reported.sets().iter().filter(|s| truth.contains(**s)).count();
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let minimality_violations =
        reported.sets().iter().filter(|s| truth.sets().iter().any(|t| t.is_strict_subset_of(**s))).count();
    let mut per_length: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for t in truth.sets() {
        let e = per_length.entry(t.len()).or_default();
        e.1 += 1;
        if reported.contains(*t) {
            e.0 += 1;
        }
    }
    Verification {
        precision: ratio(hits, reported.len()),
        recall: ratio(hits, truth.len()),
        minimality_violations,
        by_length_recall: per_length.into_iter().map(|(l, (h, n))| (l, ratio(h, n))).collect(),
    }
}

impl ProblemResult {
    pub fn from_oracle(problem_id: &str, graph: &CausalGraph, truth: &ImportantFeatureSet) -> ProblemResult {
        ProblemResult {
            problem_id: problem_id.to_string(),
            important_sets: truth.to_ids(graph),
            unverifiable: Vec::new(),
            stats: SearchStats::default(),
            source: Some("oracle".into()),
        }
    }
}
