//! Uses of a responsibility table: pruning low-responsibility features and
//! prioritizing features for repair, each with an evaluation on simulators.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::ResponsibilityTable;
use crate::execution::sim::Variation;
use crate::execution::{build_sim, Benchmark, ExecutionRecord, Intervention, SimError, SimPipeline, SystemUnderTest};
use crate::model::{FeatureSet, Problem, Schema};
use crate::par::{self, Parallelism};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AppError {
    #[error("n = {n} must be in {min}..{max}")]
    NOutOfRange { n: usize, min: usize, max: usize },
    #[error("original {0} is zero; relative change undefined")]
    ZeroBaseline(&'static str),
    #[error("length-based repair needs the observed values of the failing run")]
    MissingContext,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A simulated pipeline with one problem to run it on.
#[derive(Debug, Clone)]
pub struct SimCase {
    pub sim: SimPipeline,
    pub problem: Problem,
}

pub fn cases_from_benchmark(bench: &Benchmark) -> Result<Vec<SimCase>, AppError> {
    bench.instances.iter().map(|i| Ok(SimCase { sim: build_sim(&i.spec)?, problem: i.problem.clone() })).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningPlan {
    /// Lowest responsibility first.
    pub disabled: Vec<String>,
    pub n: usize,
}

/// The last `n` features of the ranking, i.e. the lowest FR with ties
/// going to the lexicographically later id.
pub fn pruning_plan(table: &ResponsibilityTable, n: usize) -> Result<PruningPlan, AppError> {
    let count = table.ranking.len();
    if n == 0 || n >= count {
        return Err(AppError::NOutOfRange { n, min: 1, max: count });
    }
    Ok(PruningPlan { disabled: table.ranking.iter().rev().take(n).cloned().collect(), n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningReport {
    pub n: usize,
    pub delta_pass1: f64,
    pub delta_tokens: f64,
    pub pass1_original: f64,
    pub pass1_pruned: f64,
    pub tokens_original: u64,
    pub tokens_pruned: u64,
}

/// Runs every case once as-is and once with the plan's features disabled.
pub fn evaluate_pruning(cases: &[SimCase], plan: &PruningPlan, mode: Parallelism) -> Result<PruningReport, AppError> {
    let runs = par::map(cases, mode, |case| -> Result<(ExecutionRecord, ExecutionRecord), AppError> {
        let disabled =
            case.sim.set_of(plan.disabled.iter()).ok_or_else(|| AppError::UnknownFeature(plan.disabled.join(",")))?;
        let none = Intervention::new();
        let seed = seed::derive(0, &[b"prune", case.problem.id.as_bytes()]);
        let original = case.sim.execute(&case.problem, &none, seed);
        let pruned = case.sim.execute_with(&case.problem, &none, Variation { disabled, ..Default::default() }, seed);
        Ok((original, pruned))
    });
    let (mut passed, mut passed_pruned, mut tokens, mut tokens_pruned) = (0usize, 0usize, 0u64, 0u64);
    for run in runs {
        let (original, pruned) = run?;
        passed += original.outcome.is_pass() as usize;
        passed_pruned += pruned.outcome.is_pass() as usize;
        tokens += original.tokens;
        tokens_pruned += pruned.tokens;
    }
    if passed == 0 {
        return Err(AppError::ZeroBaseline("Pass@1"));
    }
    if tokens == 0 {
        return Err(AppError::ZeroBaseline("token count"));
    }
    let total = cases.len() as f64;
    let (p0, p1) = (passed as f64 / total, passed_pruned as f64 / total);
    Ok(PruningReport {
        n: plan.n,
        delta_pass1: (p1 - p0) / p0,
        delta_tokens: (tokens - tokens_pruned) as f64 / tokens as f64,
        pass1_original: p0,
        pass1_pruned: p1,
        tokens_original: tokens,
        tokens_pruned,
    })
}

/// `n,delta_pass1,delta_tokens` rows, as percentages.
pub fn pruning_csv(reports: &[PruningReport]) -> String {
    let mut out = String::from("n,delta_pass1,delta_tokens\n");
    for r in reports {
        out.push_str(&format!("{},{:.6},{:.6}\n", r.n, 100.0 * r.delta_pass1, 100.0 * r.delta_tokens));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairStrategy {
    /// Highest FR first.
    CausalityGuided,
    /// Uniform sample without replacement, seeded per problem.
    RandomSelect(u64),
    /// Earliest pipeline stages first.
    TemporalFirst,
    /// Longest observed outputs first.
    LengthBased,
}

impl RepairStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            RepairStrategy::CausalityGuided => "causality-guided",
            RepairStrategy::RandomSelect(_) => "random-select",
            RepairStrategy::TemporalFirst => "temporal-first",
            RepairStrategy::LengthBased => "length-based",
        }
    }
}

/// What a strategy may look at for one failing problem.
#[derive(Debug, Clone, Default)]
pub struct RepairContext {
    pub problem_id: String,
    pub stage_index: BTreeMap<String, u32>,
    /// Final values of the failing run.
    pub observed: Option<BTreeMap<String, String>>,
}

/// Top `n` features under `strategy`; ties always go to the smaller id.
pub fn repair_priorities(
    table: &ResponsibilityTable,
    strategy: RepairStrategy,
    n: usize,
    context: &RepairContext,
) -> Result<Vec<String>, AppError> {
    let count = table.ranking.len();
    if n == 0 || n > count {
        return Err(AppError::NOutOfRange { n, min: 1, max: count + 1 });
    }
    let mut ids: Vec<String> = table.fr.keys().cloned().collect();
    match strategy {
        RepairStrategy::CausalityGuided => return Ok(table.top(n).to_vec()),
        RepairStrategy::RandomSelect(s) => {
            let mut rng = seed::rng(s, &[b"repair", context.problem_id.as_bytes()]);
            return Ok(ids.choose_multiple(&mut rng, n).cloned().collect());
        }
        RepairStrategy::TemporalFirst => {
            ids.sort_by_key(|f| (context.stage_index.get(f).copied().unwrap_or(u32::MAX), f.clone()));
        }
        RepairStrategy::LengthBased => {
            let observed = context.observed.as_ref().ok_or(AppError::MissingContext)?;
            let length = |f: &String| observed.get(f).map_or(0, |v| v.split_whitespace().count());
            ids.sort_by(|a, b| length(b).cmp(&length(a)).then_with(|| a.cmp(b)));
        }
    }
    ids.truncate(n);
    Ok(ids)
}

/// A problem made to fail by corrupting `roots`.
#[derive(Debug, Clone)]
pub struct FailingInstance {
    pub case: SimCase,
    pub intervention: Intervention,
    pub record: ExecutionRecord,
    pub run_seed: u64,
}

impl FailingInstance {
    pub fn context(&self, schema: &Schema) -> RepairContext {
        RepairContext {
            problem_id: self.case.problem.id.clone(),
            stage_index: schema.features.iter().map(|f| (f.id.clone(), f.stage_index)).collect(),
            observed: Some(self.record.observed.clone()),
        }
    }
}

/// One failing instance per case, injected at one of the case's planted
/// predicate terms. Cases without causes are skipped.
pub fn planted_failures(cases: &[SimCase], seed: u64) -> Vec<FailingInstance> {
    let causes: Vec<Vec<FeatureSet>> = cases.iter().map(|c| c.sim.planted_causes().to_vec()).collect();
    inject_failures(cases, &causes, seed)
}

/// One failing instance per case: a seeded choice among `causes[i]`, plus
/// one extra feature outside it half of the time. Cases with no causes are
/// skipped.
pub fn inject_failures(cases: &[SimCase], causes: &[Vec<FeatureSet>], seed: u64) -> Vec<FailingInstance> {
    cases
        .iter()
        .zip(causes)
        .filter_map(|(case, options)| {
            let mut rng = seed::rng(seed, &[b"failure", case.problem.id.as_bytes()]);
            let cause = *options.choose(&mut rng)?;
            let mut roots = cause;
            let outside: Vec<usize> = (0..case.sim.len()).filter(|i| !cause.contains(*i)).collect();
            if rng.gen_bool(0.5) {
                if let Some(extra) = outside.choose(&mut rng) {
                    roots = roots.with(*extra);
                }
            }
            let intervention: Intervention =
                case.sim.ids_of(roots).into_iter().map(|f| (f.clone(), format!("wrong {f}"))).collect();
            let run_seed = rng.gen();
            let record = case.sim.execute(&case.problem, &intervention, run_seed);
            if !record.outcome.is_fail() {
                log::warn!("{}: injecting {:?} did not fail; skipped", case.problem.id, case.sim.ids_of(roots));
                return None;
            }
            Some(FailingInstance { case: case.clone(), intervention, record, run_seed })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub fix_rate: f64,
    pub fixed: usize,
    pub total: usize,
}

/// Restores each instance's prioritized features to their baseline values
/// and reruns it; an instance is fixed when it now passes.
pub fn evaluate_repair(
    instances: &[FailingInstance],
    priorities: &[Vec<String>],
    mode: Parallelism,
) -> Result<RepairReport, AppError> {
    let pairs: Vec<(&FailingInstance, &Vec<String>)> = instances.iter().zip(priorities).collect();
    let fixed = par::map(&pairs, mode, |(inst, features)| -> Result<bool, AppError> {
        let restored: FeatureSet =
            inst.case.sim.set_of(features.iter()).ok_or_else(|| AppError::UnknownFeature(features.join(",")))?;
        let rerun = inst.case.sim.execute_with(
            &inst.case.problem,
            &inst.intervention,
            Variation { restored, ..Default::default() },
            inst.run_seed,
        );
        Ok(rerun.outcome.is_pass())
    });
    let fixed = fixed.into_iter().collect::<Result<Vec<bool>, _>>()?.into_iter().filter(|f| *f).count();
    let total = instances.len();
    Ok(RepairReport { fix_rate: if total == 0 { 0.0 } else { fixed as f64 / total as f64 }, fixed, total })
}
