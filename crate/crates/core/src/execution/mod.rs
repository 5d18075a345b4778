//! The system-under-test abstraction and its implementations: a deterministic
//! pipeline simulator with planted causes, and wire-protocol adapters for
//! external pipelines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::Problem;

pub mod adapter;
pub mod bench;
pub mod sim;

pub use adapter::{AdapterOptions, AdapterRequest, AdapterResponse, HttpSut, SubprocessSut};
pub use bench::{generate_benchmark, Benchmark, BenchmarkInstance, CauseProfile};
pub use sim::{build_sim, SimError, SimPipeline, SimPipelineSpec};

/// Feature id -> replacement text.
pub type Intervention = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    /// The run did not complete. Never evidence of causation.
    ExecError(String),
}

impl Outcome {
    pub fn is_pass(&self) -> bool {
        matches!(self, Outcome::Pass)
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, Outcome::Fail)
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Outcome::ExecError(_))
    }
}

/// One pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub problem_id: String,
    pub intervention: Intervention,
    pub outcome: Outcome,
    /// Final value of every feature; missing features are empty text.
    pub observed: BTreeMap<String, String>,
    pub tokens: u64,
}

impl ExecutionRecord {
    pub fn error(problem_id: &str, intervention: &Intervention, detail: impl Into<String>) -> Self {
        ExecutionRecord {
            problem_id: problem_id.to_string(),
            intervention: intervention.clone(),
            outcome: Outcome::ExecError(detail.into()),
            observed: BTreeMap::new(),
            tokens: 0,
        }
    }
}

/// A staged generation pipeline that can be run under intervention.
pub trait SystemUnderTest: Send + Sync {
    fn execute(&self, problem: &Problem, intervention: &Intervention, run_seed: u64) -> ExecutionRecord;

    /// Budget units charged per [`SystemUnderTest::execute`] call.
    fn runs_per_execution(&self) -> usize {
        1
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    /// Concurrent calls the implementation tolerates.
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
}

impl<T: SystemUnderTest + ?Sized> SystemUnderTest for Box<T> {
    fn execute(&self, problem: &Problem, intervention: &Intervention, run_seed: u64) -> ExecutionRecord {
        (**self).execute(problem, intervention, run_seed)
    }

    fn runs_per_execution(&self) -> usize {
        (**self).runs_per_execution()
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

impl<T: SystemUnderTest + ?Sized> SystemUnderTest for &T {
    fn execute(&self, problem: &Problem, intervention: &Intervention, run_seed: u64) -> ExecutionRecord {
        (**self).execute(problem, intervention, run_seed)
    }

    fn runs_per_execution(&self) -> usize {
        (**self).runs_per_execution()
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

/// Runs the problem with no intervention.
pub fn baseline_record<S: SystemUnderTest + ?Sized>(sut: &S, problem: &Problem, run_seed: u64) -> ExecutionRecord {
    sut.execute(problem, &Intervention::new(), run_seed)
}
