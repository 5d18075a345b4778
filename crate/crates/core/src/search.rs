//! Budgeted greedy search for the important feature set of one problem.
//!
//! Every single feature is intervened first. Then, for each length from 2
//! up to the configured maximum, candidates that contain a known cause are
//! dropped and the candidate with the largest collective influence is run
//! next. A failing candidate is kept only if all of its one-smaller subsets
//! are known to pass. A passing candidate prunes every same-length
//! combination inside its influence set, because intervening on such a
//! combination perturbs strictly less of the pipeline. Each length ends
//! after `patience` consecutive runs that discover nothing; everything ends
//! when the execution budget is spent.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::{ExecutionRecord, Outcome, SystemUnderTest};
use crate::influence::{collective_influence, influence_set, InfluenceCache, InfluenceError, Metric};
use crate::intervene::{InterveneError, InterventionEngine, Replacements};
use crate::model::{
    combinations, AnalysisConfig, CausalGraph, Combination, FeatureSet, ImportantFeatureSet, Insertion, ModelError,
    Problem,
};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("problem `{0}` fails without any intervention")]
    BaselineFails(String),
    #[error("baseline run of `{problem}` did not complete: {detail}")]
    BaselineError { problem: String, detail: String },
    #[error("budget {budget} cannot cover the baseline and single-feature runs ({needed})")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Intervene(#[from] InterveneError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub executions_used: usize,
    pub pruned_by_minimality: usize,
    pub pruned_by_influence: usize,
    /// Lengths abandoned because patience ran out.
    pub early_stops: usize,
    pub combos_tested_per_length: BTreeMap<usize, usize>,
}

/// What is known about a combination's outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Known {
    Pass,
    Fail,
    /// Never run; implied non-failing by an influence set.
    InferredPass,
}

pub type ResultCache = HashMap<Combination, Known>;

/// Execution budget in SUT runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetTracker {
    used: usize,
    limit: usize,
    cost: usize,
}

impl BudgetTracker {
    pub fn new(limit: usize, cost_per_execution: usize) -> BudgetTracker {
        BudgetTracker { used: 0, limit, cost: cost_per_execution.max(1) }
    }

    pub fn can_afford(&self) -> bool {
        self.limit - self.used >= self.cost
    }

    /// Charges one execution if it fits.
    pub fn try_charge(&mut self) -> bool {
        if self.can_afford() {
            self.used += self.cost;
            true
        } else {
            false
        }
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.limit - self.used
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinimalCheck {
    Minimal,
    NotMinimal,
    /// The budget ran out (or runs kept erroring) before every subset was known.
    Unverifiable,
}

/// Decides whether a failing `s` is minimal by checking its one-smaller
/// subsets: cached failures answer immediately, uncached subsets are run
/// through `execute` (charging `budget`) and recorded in `results`.
///
/// Returns the verdict plus every record produced, so the caller can derive
/// influence sets from the passing ones.
pub fn check_minimal<F>(
    s: Combination,
    results: &mut ResultCache,
    budget: &mut BudgetTracker,
    mut execute: F,
) -> (MinimalCheck, Vec<(Combination, ExecutionRecord)>)
where
    F: FnMut(Combination) -> ExecutionRecord,
{
    let subsets: Vec<Combination> = s.subsets_of_size(s.len() - 1).collect();
    if subsets.iter().any(|t| results.get(t) == Some(&Known::Fail)) {
        return (MinimalCheck::NotMinimal, Vec::new());
    }
    let mut produced = Vec::new();
    for t in subsets {
        if results.contains_key(&t) {
            continue;
        }
        let mut attempts = 0;
        loop {
            if !budget.try_charge() {
                return (MinimalCheck::Unverifiable, produced);
            }
            let record = execute(t);
            attempts += 1;
            match record.outcome {
                Outcome::Fail => {
                    results.insert(t, Known::Fail);
                    return (MinimalCheck::NotMinimal, produced);
                }
                Outcome::Pass => {
                    results.insert(t, Known::Pass);
                    produced.push((t, record));
                    break;
                }
                Outcome::ExecError(ref detail) => {
                    log::warn!("minimality probe {t:?} errored: {detail}");
                    if attempts >= 2 {
                        return (MinimalCheck::Unverifiable, produced);
                    }
                }
            }
        }
    }
    (MinimalCheck::Minimal, produced)
}

/// The candidate with the largest member-excluded collective influence;
/// ties go to the lexicographically smallest.
pub fn select_candidate(candidates: &[Combination], cache: &InfluenceCache) -> Result<Combination, SearchError> {
    candidates
        .iter()
        .map(|c| (collective_influence(*c, cache).len(), *c))
        .max_by(|(sa, ca), (sb, cb)| sa.cmp(sb).then_with(|| cb.cmp(ca)))
        .map(|(_, c)| c)
        .ok_or(SearchError::EmptyCandidates)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub important: ImportantFeatureSet,
    /// Failing combinations whose minimality could not be confirmed.
    pub unverifiable: Vec<Combination>,
    pub stats: SearchStats,
    /// Every combination removed by the influence-set rule.
    pub influence_pruned: Vec<Combination>,
}

fn run_seed(base: u64, problem: &Problem, set: Combination) -> u64 {
    seed::derive(base, &[b"run", problem.id.as_bytes(), &set.bits().to_le_bytes()])
}

/// Runs `set` against the SUT with the planned replacement values.
pub fn execute_combination<S: SystemUnderTest + ?Sized>(
    sut: &S,
    graph: &CausalGraph,
    replacements: &Replacements,
    problem: &Problem,
    base_seed: u64,
    set: Combination,
) -> ExecutionRecord {
    sut.execute(problem, &replacements.intervention(graph, set), run_seed(base_seed, problem, set))
}

/// Searches one problem, generating intervention values with `engine`.
pub fn analyze_problem<S: SystemUnderTest + ?Sized>(
    sut: &S,
    graph: &CausalGraph,
    config: &AnalysisConfig,
    engine: &InterventionEngine,
    problem: &Problem,
    metric: &Metric,
) -> Result<SearchOutcome, SearchError> {
    config.validate_for(graph)?;
    problem.validate_for(graph)?;
    let replacements = Replacements::plan(engine, graph, problem, config.seed, config.theta, metric)?;
    analyze_with(sut, graph, config, &replacements, problem, metric)
}

/// [`analyze_problem`] with precomputed replacement values.
pub fn analyze_with<S: SystemUnderTest + ?Sized>(
    sut: &S,
    graph: &CausalGraph,
    config: &AnalysisConfig,
    replacements: &Replacements,
    problem: &Problem,
    metric: &Metric,
) -> Result<SearchOutcome, SearchError> {
    config.validate_for(graph)?;
    // the baseline run is charged like any other
    let needed = (graph.len() + 1).saturating_mul(sut.runs_per_execution().max(1));
    if config.budget < needed {
        return Err(SearchError::BudgetTooSmall { budget: config.budget, needed });
    }
    let mut budget = BudgetTracker::new(config.budget, sut.runs_per_execution());
    budget.try_charge();
    let baseline = execute_combination(sut, graph, replacements, problem, config.seed, FeatureSet::EMPTY);
    match &baseline.outcome {
        Outcome::Pass => {}
        Outcome::Fail => return Err(SearchError::BaselineFails(problem.id.clone())),
        Outcome::ExecError(detail) => {
            return Err(SearchError::BaselineError { problem: problem.id.clone(), detail: detail.clone() })
        }
    }
    let mut search = Search {
        sut,
        graph,
        config,
        replacements,
        problem,
        metric,
        baseline,
        budget,
        results: ResultCache::new(),
        cache: InfluenceCache::new(),
        important: ImportantFeatureSet::new(),
        stats: SearchStats::default(),
        unverifiable: Vec::new(),
        influence_pruned: Vec::new(),
    };
    search.single_features()?;
    let max_len = config.max_length.min(graph.len());
    for length in 2..=max_len {
        if !search.budget.can_afford() {
            break;
        }
        search.length(length)?;
    }
    search.stats.executions_used = search.budget.used();
    Ok(SearchOutcome {
        important: search.important,
        unverifiable: search.unverifiable,
        stats: search.stats,
        influence_pruned: search.influence_pruned,
    })
}

struct Candidate {
    set: Combination,
    score: FeatureSet,
    alive: bool,
    retried: bool,
}

struct Search<'a, S: ?Sized> {
    sut: &'a S,
    graph: &'a CausalGraph,
    config: &'a AnalysisConfig,
    replacements: &'a Replacements,
    problem: &'a Problem,
    metric: &'a Metric,
    baseline: ExecutionRecord,
    budget: BudgetTracker,
    results: ResultCache,
    cache: InfluenceCache,
    important: ImportantFeatureSet,
    stats: SearchStats,
    unverifiable: Vec<Combination>,
    influence_pruned: Vec<Combination>,
}

impl<S: SystemUnderTest + ?Sized> Search<'_, S> {
    fn run(&self, set: Combination) -> ExecutionRecord {
        execute_combination(self.sut, self.graph, self.replacements, self.problem, self.config.seed, set)
    }

    fn influence(&self, set: Combination, record: &ExecutionRecord) -> Result<FeatureSet, SearchError> {
        Ok(influence_set(self.graph, &self.baseline, record, set, self.config.theta, self.metric)?)
    }

    fn insert(&mut self, set: Combination) -> bool {
        let (next, flag) = self.important.insert_minimal(set);
        self.important = next;
        matches!(flag, Insertion::Inserted { .. })
    }

    fn single_features(&mut self) -> Result<(), SearchError> {
        for i in 0..self.graph.len() {
            let set = FeatureSet::singleton(i);
            for attempt in 0..2 {
                if !self.budget.try_charge() {
                    return Ok(());
                }
                let record = self.run(set);
                *self.stats.combos_tested_per_length.entry(1).or_default() += 1;
                match record.outcome {
                    Outcome::Fail => {
                        self.results.insert(set, Known::Fail);
                        self.insert(set);
                    }
                    Outcome::Pass => {
                        self.results.insert(set, Known::Pass);
                        let e = self.influence(set, &record)?;
                        self.cache.insert(set, e);
                    }
                    Outcome::ExecError(ref detail) => {
                        log::warn!("{}: run on {:?} errored (attempt {}): {detail}", self.problem.id, set, attempt + 1);
                        continue;
                    }
                }
                break;
            }
        }
        Ok(())
    }

    fn length(&mut self, length: usize) -> Result<(), SearchError> {
        let total = self.graph.all().subsets_of_size(length).count();
        let sets = combinations(self.graph, length, self.important.sets())?;
        self.stats.pruned_by_minimality += total - sets.len();
        let mut candidates: Vec<Candidate> = sets
            .into_iter()
            .map(|set| Candidate { set, score: collective_influence(set, &self.cache), alive: true, retried: false })
            .collect();

        let mut idle = 0usize;
        while let Some(pick) = best(&candidates) {
            if !self.budget.try_charge() {
                break;
            }
            let set = candidates[pick].set;
            let record = self.run(set);
            *self.stats.combos_tested_per_length.entry(length).or_default() += 1;
            match record.outcome {
                Outcome::Fail => {
                    candidates[pick].alive = false;
                    self.results.insert(set, Known::Fail);
                    if self.confirm(set, &mut candidates)? {
                        idle = 0;
                    } else {
                        idle += 1;
                    }
                }
                Outcome::Pass => {
                    candidates[pick].alive = false;
                    self.results.insert(set, Known::Pass);
                    let e = self.influence(set, &record)?;
                    self.cache.insert(set, e);
                    for c in candidates.iter_mut().filter(|c| c.alive && c.set.is_subset_of(e)) {
                        c.alive = false;
                        self.results.insert(c.set, Known::InferredPass);
                        self.stats.pruned_by_influence += 1;
                        self.influence_pruned.push(c.set);
                    }
                    idle += 1;
                }
                Outcome::ExecError(ref detail) => {
                    let c = &mut candidates[pick];
                    if c.retried {
                        log::warn!("{}: dropping {:?} after repeated errors: {detail}", self.problem.id, set);
                        c.alive = false;
                    } else {
                        c.retried = true;
                    }
                    idle += 1;
                }
            }
            if idle >= self.config.patience {
                self.stats.early_stops += 1;
                break;
            }
            if !self.budget.can_afford() {
                break;
            }
        }
        Ok(())
    }

    /// Minimality check for a failing candidate; inserts it when confirmed.
    fn confirm(&mut self, set: Combination, candidates: &mut [Candidate]) -> Result<bool, SearchError> {
        let (sut, graph, replacements, problem, seed) =
            (self.sut, self.graph, self.replacements, self.problem, self.config.seed);
        let (verdict, produced) = check_minimal(set, &mut self.results, &mut self.budget, |t| {
            execute_combination(sut, graph, replacements, problem, seed, t)
        });
        for (t, record) in produced {
            *self.stats.combos_tested_per_length.entry(t.len()).or_default() += 1;
            let e = self.influence(t, &record)?;
            self.cache.insert(t, e);
            for c in candidates.iter_mut().filter(|c| c.alive && t.is_strict_subset_of(c.set)) {
                c.score = c.score.union(e.difference(c.set));
            }
        }
        Ok(match verdict {
            MinimalCheck::Minimal => self.insert(set),
            MinimalCheck::NotMinimal => false,
            MinimalCheck::Unverifiable => {
                self.unverifiable.push(set);
                false
            }
        })
    }
}

fn best(candidates: &[Candidate]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in candidates.iter().enumerate().filter(|(_, c)| c.alive) {
        let score = c.score.len();
        // candidates are in lexicographic order, so strict > keeps the first maximum
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Serializable per-problem result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemResult {
    pub problem_id: String,
    pub important_sets: Vec<Vec<String>>,
    #[serde(default)]
    pub unverifiable: Vec<Vec<String>>,
    #[serde(default)]
    pub stats: SearchStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl ProblemResult {
    pub fn from_outcome(problem_id: &str, graph: &CausalGraph, outcome: &SearchOutcome) -> ProblemResult {
        ProblemResult {
            problem_id: problem_id.to_string(),
            important_sets: outcome.important.to_ids(graph),
            unverifiable: outcome.unverifiable.iter().map(|s| graph.ids_of(*s)).collect(),
            stats: outcome.stats.clone(),
            source: None,
        }
    }
}
