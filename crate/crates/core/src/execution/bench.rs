//! Seeded generator for simulator benchmarks with known planted causes.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sim::SimPipelineSpec;
use crate::model::{Category, Feature, FeatureSet, Problem, Schema};
use crate::seed;

/// Oracle tractability guard.
pub const MAX_BENCH_FEATURES: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("{0} features exceed the benchmark maximum of {MAX_BENCH_FEATURES}")]
    TooManyFeatures(usize),
    #[error("invalid cause profile: {0}")]
    InvalidProfile(String),
}

/// Shape of generated instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CauseProfile {
    /// Relative weight of each planted-cause length; entry `i` is length `i + 1`.
    pub length_weights: Vec<f64>,
    /// Planted causes drawn per instance (before antichain reduction).
    pub causes_per_instance: (usize, usize),
    /// Probability of each forward edge in the benchmark-wide schema DAG.
    pub edge_probability: f64,
    /// Probability that an instance keeps a schema edge in its own influence map.
    pub edge_retention: f64,
    /// Zipf exponent for how strongly some features dominate planted causes.
    pub skew: f64,
    pub corruption_noise: f64,
}

impl Default for CauseProfile {
    fn default() -> Self {
        CauseProfile {
            length_weights: vec![1.0, 1.0, 1.0, 1.0],
            causes_per_instance: (1, 3),
            edge_probability: 0.3,
            edge_retention: 0.7,
            skew: 1.0,
            corruption_noise: 0.0,
        }
    }
}

impl CauseProfile {
    /// Uniform weights over lengths `min..=max`.
    pub fn lengths(min: usize, max: usize) -> CauseProfile {
        let length_weights = (1..=max).map(|l| if l >= min { 1.0 } else { 0.0 }).collect();
        CauseProfile { length_weights, ..Default::default() }
    }

    pub fn max_length(&self) -> usize {
        self.length_weights.iter().rposition(|w| *w > 0.0).map_or(0, |i| i + 1)
    }

    fn validate(&self, n: usize) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidProfile(m.to_string()));
        if self.length_weights.iter().any(|w| !w.is_finite() || *w < 0.0) || self.max_length() == 0 {
            return bad("length weights must be non-negative with at least one positive");
        }
        if self.max_length() > n {
            return bad("cause length exceeds feature count");
        }
        let (lo, hi) = self.causes_per_instance;
        if lo == 0 || lo > hi {
            return bad("causes_per_instance must satisfy 1 <= min <= max");
        }
        for p in [self.edge_probability, self.edge_retention, self.corruption_noise] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if !self.skew.is_finite() || self.skew < 0.0 {
            return bad("skew must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkInstance {
    pub spec: SimPipelineSpec,
    pub problem: Problem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub seed: u64,
    pub schema: Schema,
    pub instances: Vec<BenchmarkInstance>,
}

const WORDS: &[&str] = &[
    "parse",
    "input",
    "list",
    "return",
    "integer",
    "string",
    "sorted",
    "maximum",
    "minimum",
    "index",
    "matrix",
    "graph",
    "count",
    "prefix",
    "window",
    "recursive",
    "cache",
    "boundary",
    "unique",
    "pair",
];

/// Generates `instances` reproducible simulator instances over `features` features.
///
/// A benchmark-wide schema DAG is drawn first; each instance keeps a random
/// subset of its edges and transitively closes them into an influence map.
/// Planted causes favour a fixed, seed-dependent subset of features so that
/// aggregate importance is learnable across instances.
pub fn generate_benchmark(
    seed: u64,
    features: usize,
    instances: usize,
    profile: &CauseProfile,
) -> Result<Benchmark, BenchError> {
    if features > MAX_BENCH_FEATURES {
        return Err(BenchError::TooManyFeatures(features));
    }
    profile.validate(features)?;
    let n = features;
    let ids: Vec<String> = (0..n).map(|i| format!("f{i:02}")).collect();

    let mut rng = seed::rng(seed, &[b"schema"]);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(profile.edge_probability) {
                edges.push((i, j));
            }
        }
    }
    let categories = [Category::Specification, Category::Analysis, Category::Design, Category::Dependency];
    let schema = Schema {
        features: (0..n)
            .map(|i| Feature {
                id: ids[i].clone(),
                category: categories[i * categories.len() / n.max(1)],
                description: format!("synthetic feature {i}"),
                stage_index: i as u32,
                token_weight: rng.gen_range(10..=300),
            })
            .collect(),
        edges: edges.iter().map(|&(i, j)| (ids[i].clone(), ids[j].clone())).collect(),
    };

    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(&mut rng);
    let popularity: Vec<f64> = ranks.iter().map(|&r| 1.0 / (1.0 + r as f64).powf(profile.skew)).collect();
    let token_weights: BTreeMap<String, u64> = schema.token_weights();

    let instances = (0..instances)
        .map(|k| {
            let mut rng = seed::rng(seed, &[b"instance", &(k as u64).to_le_bytes()]);
            let kept: Vec<(usize, usize)> =
                edges.iter().copied().filter(|_| rng.gen_bool(profile.edge_retention)).collect();
            let reach = close(n, &kept);
            let causes = draw_causes(&mut rng, n, &popularity, profile);
            let pid = format!("p{k:04}");
            let spec = SimPipelineSpec {
                features: ids.clone(),
                influence: (0..n)
                    .filter(|&i| !reach[i].is_empty())
                    .map(|i| (ids[i].clone(), reach[i].indices().map(|j| ids[j].clone()).collect()))
                    .collect(),
                planted_causes: causes
                    .iter()
                    .map(|c| c.indices().map(|i| ids[i].clone()).collect::<BTreeSet<_>>())
                    .collect(),
                token_weights: token_weights.clone(),
                corruption_noise: profile.corruption_noise,
                seed: rng.gen(),
            };
            let baseline = ids
                .iter()
                .map(|id| {
                    let words: Vec<&str> = (0..6).map(|_| *WORDS.choose(&mut rng).expect("non-empty")).collect();
                    (id.clone(), format!("{id} of {pid}: {}", words.join(" ")))
                })
                .collect();
            let problem = Problem { id: pid.clone(), specification: format!("synthetic problem {pid}"), baseline };
            BenchmarkInstance { spec, problem }
        })
        .collect();

    Ok(Benchmark { seed, schema, instances })
}

fn close(n: usize, edges: &[(usize, usize)]) -> Vec<FeatureSet> {
    let mut reach = vec![FeatureSet::EMPTY; n];
    // edges go forward, so a reverse sweep sees every successor's closure first
    for i in (0..n).rev() {
        let mut r = FeatureSet::EMPTY;
        for &(s, d) in edges {
            if s == i {
                r = r.with(d).union(reach[d]);
            }
        }
        reach[i] = r;
    }
    reach
}

fn draw_causes<R: Rng>(rng: &mut R, n: usize, popularity: &[f64], profile: &CauseProfile) -> Vec<FeatureSet> {
    let (lo, hi) = profile.causes_per_instance;
    let count = rng.gen_range(lo..=hi);
    let lengths = WeightedIndex::new(&profile.length_weights).expect("validated length weights");
    let mut drawn: Vec<FeatureSet> = (0..count)
        .map(|_| {
            let len = lengths.sample(rng) + 1;
            weighted_sample(rng, n, popularity, len)
        })
        .collect();
    // antichain: shortest first, drop supersets and duplicates
    drawn.sort_by_key(|c| (c.len(), *c));
    let mut kept: Vec<FeatureSet> = Vec::new();
    for c in drawn {
        if !kept.iter().any(|k| k.is_subset_of(c)) {
            kept.push(c);
        }
    }
    kept
}

// Sequential draws without replacement, proportional to popularity.
fn weighted_sample<R: Rng>(rng: &mut R, n: usize, popularity: &[f64], len: usize) -> FeatureSet {
    let mut chosen = FeatureSet::EMPTY;
    for _ in 0..len {
        let weights = (0..n).map(|i| if chosen.contains(i) { 0.0 } else { popularity[i] });
        let pick = WeightedIndex::new(weights).expect("len <= n leaves a positive weight").sample(rng);
        chosen = chosen.with(pick);
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::execution::sim::build_sim;
    use crate::model::is_antichain;

    #[test]
    fn reproducible_and_valid() {
        let profile = CauseProfile::lengths(1, 4);
        let a = generate_benchmark(7, 12, 100, &profile).unwrap();
        let b = generate_benchmark(7, 12, 100, &profile).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.instances.len(), 100);
        assert!(a.schema.graph().is_ok());
        for inst in &a.instances {
            let sim = build_sim(&inst.spec).unwrap();
            assert!(is_antichain(sim.planted_causes()));
            assert!(sim.planted_causes().iter().all(|c| (1..=4).contains(&c.len())));
            assert_eq!(inst.problem.baseline.len(), 12);
        }
        assert_ne!(a, generate_benchmark(8, 12, 100, &profile).unwrap());
    }

    #[test]
    fn rejects_large_feature_counts() {
        assert_eq!(
            generate_benchmark(1, 20, 1, &CauseProfile::default()).unwrap_err(),
            BenchError::TooManyFeatures(20)
        );
    }

    #[test]
    fn length_profile_is_respected() {
        let b = generate_benchmark(3, 10, 50, &CauseProfile::lengths(2, 2)).unwrap();
        for inst in &b.instances {
            assert!(inst.spec.planted_causes.iter().all(|c| c.len() == 2));
        }
    }
}
