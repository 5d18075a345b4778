//! Counterfactual intervention engines: produce a replacement value for a
//! feature that is semantically distinct from the original.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::Intervention;
use crate::influence::{similarity, InfluenceError, Metric};
use crate::model::{CausalGraph, Combination, Problem};
use crate::seed;

/// Candidates tried before giving up on a feature.
pub const MAX_CANDIDATES: usize = 5;

pub const DEFAULT_TEMPLATES: &[&str] = &[
    "{feature} deliberately misread: assume the opposite constraint holds",
    "{feature} replaced by an unrelated plausible requirement",
    "{feature} omitted key details and invented conflicting assumptions",
    "{feature} describes a different task entirely",
    "{feature} silently swaps inputs and expected outputs",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterveneError {
    #[error("no candidate for `{feature}` is distinct from the original")]
    NoDistinctCandidate { feature: String },
    #[error("catalog has no candidates for `{0}`")]
    MissingCatalogEntry(String),
    #[error("remote engine unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("original value of `{0}` is empty")]
    EmptyOriginal(String),
    #[error(transparent)]
    Similarity(#[from] InfluenceError),
    #[error("catalog: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone)]
pub enum InterventionEngine {
    /// Curated plausible-but-wrong values per feature.
    Catalog(BTreeMap<String, Vec<String>>),
    /// Error templates with `{feature}`, `{problem}` and `{original}` placeholders.
    Template(Vec<String>),
    Remote(RemoteEngine),
}

impl Default for InterventionEngine {
    fn default() -> Self {
        InterventionEngine::Template(DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect())
    }
}

/// An HTTP service generating replacements.
///
/// Request body `{"feature", "original", "problem", "seed"}`, response
/// `{"replacement"}`. With a prompt template set, the `problem` field carries
/// the rendered prompt instead of the problem statement.
#[derive(Debug, Clone)]
pub struct RemoteEngine {
    pub url: String,
    pub prompt_template: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    feature: &'a str,
    original: &'a str,
    problem: &'a str,
    seed: u64,
}

#[derive(Deserialize)]
struct RemoteResponse {
    replacement: String,
}

impl RemoteEngine {
    pub fn new(url: impl Into<String>, prompt_template: Option<String>, timeout: Duration) -> RemoteEngine {
        RemoteEngine { url: url.into(), prompt_template, agent: ureq::AgentBuilder::new().timeout(timeout).build() }
    }

    fn request(&self, feature: &str, original: &str, problem: &str, seed: u64) -> Result<String, InterveneError> {
        let body = serde_json::to_value(RemoteRequest { feature, original, problem, seed }).expect("serializable");
        let resp: RemoteResponse = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| InterveneError::RemoteUnavailable(e.to_string()))?
            .into_json()
            .map_err(|e| InterveneError::RemoteUnavailable(e.to_string()))?;
        Ok(resp.replacement)
    }
}

impl InterventionEngine {
    pub fn load_catalog(path: &Path) -> Result<InterventionEngine, InterveneError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| InterveneError::Catalog(format!("{}: {e}", path.display())))?;
        let entries: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|e| InterveneError::Catalog(e.to_string()))?;
        Ok(InterventionEngine::Catalog(entries))
    }

    /// Catalog engines must list candidates for every graph node.
    pub fn validate_for(&self, graph: &CausalGraph) -> Result<(), InterveneError> {
        if let InterventionEngine::Catalog(entries) = self {
            if let Some(id) = graph.ids().iter().find(|id| entries.get(*id).is_none_or(Vec::is_empty)) {
                return Err(InterveneError::MissingCatalogEntry(id.clone()));
            }
        }
        Ok(())
    }
}

fn render(template: &str, feature: &str, problem: &Problem, original: &str) -> String {
    template.replace("{feature}", feature).replace("{problem}", &problem.specification).replace("{original}", original)
}

/// A replacement for `feature` with similarity to `original` below `theta`;
/// a pure function of the engine and its inputs.
pub fn generate_intervention(
    engine: &InterventionEngine,
    problem: &Problem,
    feature: &str,
    original: &str,
    seed: u64,
    theta: f64,
    metric: &Metric,
) -> Result<String, InterveneError> {
    if original.is_empty() {
        return Err(InterveneError::EmptyOriginal(feature.to_string()));
    }
    let mut rng = seed::rng(seed, &[b"intervene", feature.as_bytes(), problem.id.as_bytes()]);
    let candidates: Vec<String> = match engine {
        InterventionEngine::Catalog(entries) => {
            let list = entries.get(feature).filter(|l| !l.is_empty());
            let list = list.ok_or_else(|| InterveneError::MissingCatalogEntry(feature.to_string()))?;
            list.choose_multiple(&mut rng, MAX_CANDIDATES.min(list.len())).cloned().collect()
        }
        InterventionEngine::Template(templates) => templates
            .choose_multiple(&mut rng, MAX_CANDIDATES.min(templates.len()))
            .map(|t| render(t, feature, problem, original))
            .collect(),
        InterventionEngine::Remote(remote) => {
            let context = match &remote.prompt_template {
                Some(t) => render(t, feature, problem, original),
                None => problem.specification.clone(),
            };
            for attempt in 0..MAX_CANDIDATES as u64 {
                let candidate = remote.request(feature, original, &context, seed.wrapping_add(attempt))?;
                if metric.score(original, &candidate)? < theta {
                    return Ok(candidate);
                }
            }
            return Err(InterveneError::NoDistinctCandidate { feature: feature.to_string() });
        }
    };
    for candidate in candidates {
        if metric.score(original, &candidate)? < theta {
            return Ok(candidate);
        }
    }
    Err(InterveneError::NoDistinctCandidate { feature: feature.to_string() })
}

/// True iff the replacement's Jaccard similarity to the original is below `theta`.
pub fn verify_intervention(original: &str, replacement: &str, theta: f64) -> bool {
    similarity(original, replacement) < theta
}

/// One replacement per graph node for a problem, so every combination that
/// intervenes on a feature uses the same value for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Replacements {
    values: Vec<String>,
}

impl Replacements {
    pub fn plan(
        engine: &InterventionEngine,
        graph: &CausalGraph,
        problem: &Problem,
        seed: u64,
        theta: f64,
        metric: &Metric,
    ) -> Result<Replacements, InterveneError> {
        let values = graph
            .ids()
            .iter()
            .map(|id| {
                let original = problem.baseline.get(id).map(String::as_str).unwrap_or_default();
                generate_intervention(engine, problem, id, original, seed, theta, metric)
            })
            .collect::<Result<_, _>>()?;
        Ok(Replacements { values })
    }

    pub fn from_values(values: Vec<String>) -> Replacements {
        Replacements { values }
    }

    pub fn intervention(&self, graph: &CausalGraph, set: Combination) -> Intervention {
        set.indices().map(|i| (graph.id(i).to_string(), self.values[i].clone())).collect()
    }
}
