//! Adapters for external pipelines speaking the JSON wire protocol.
//!
//! Request: `{"problem_id", "interventions": {feature: text}, "run_seed"}`.
//! Response: `{"outcome": "pass"|"fail"|"error", "observed": {feature: text},
//! "tokens": int, "error_detail"?}`. Over a subprocess each message is one
//! line on the child's stdin/stdout; over HTTP it is a POST body.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ExecutionRecord, Intervention, Outcome, SystemUnderTest};
use crate::model::Problem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub problem_id: String,
    pub interventions: BTreeMap<String, String>,
    pub run_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireOutcome {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub outcome: WireOutcome,
    #[serde(default)]
    pub observed: BTreeMap<String, String>,
    #[serde(default)]
    pub tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
}

impl AdapterResponse {
    pub fn from_record(record: &ExecutionRecord) -> AdapterResponse {
        let (outcome, error_detail) = match &record.outcome {
            Outcome::Pass => (WireOutcome::Pass, None),
            Outcome::Fail => (WireOutcome::Fail, None),
            Outcome::ExecError(detail) => (WireOutcome::Error, Some(detail.clone())),
        };
        AdapterResponse { outcome, observed: record.observed.clone(), tokens: record.tokens, error_detail }
    }

    pub fn error(detail: impl Into<String>) -> AdapterResponse {
        AdapterResponse {
            outcome: WireOutcome::Error,
            observed: BTreeMap::new(),
            tokens: 0,
            error_detail: Some(detail.into()),
        }
    }

    fn into_record(self, problem: &Problem, intervention: &Intervention) -> ExecutionRecord {
        let outcome = match self.outcome {
            WireOutcome::Pass => Outcome::Pass,
            WireOutcome::Fail => Outcome::Fail,
            WireOutcome::Error => Outcome::ExecError(self.error_detail.unwrap_or_else(|| "adapter error".into())),
        };
        let mut observed = self.observed;
        for id in problem.baseline.keys() {
            observed.entry(id.clone()).or_default();
        }
        ExecutionRecord {
            problem_id: problem.id.clone(),
            intervention: intervention.clone(),
            outcome,
            observed,
            tokens: self.tokens,
        }
    }
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("adapter timed out after {0:?}")]
    AdapterTimeout(Duration),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("adapter unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterOptions {
    pub timeout_ms: u64,
    /// Whether identical requests always produce identical responses.
    pub deterministic: bool,
    /// Runs per execution; the majority outcome wins. Every run is charged.
    pub repeat: usize,
    pub max_in_flight: usize,
}

impl Default for AdapterOptions {
    fn default() -> Self {
        AdapterOptions { timeout_ms: 30_000, deterministic: true, repeat: 1, max_in_flight: 1 }
    }
}

impl AdapterOptions {
    fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

fn request_for(problem: &Problem, intervention: &Intervention, run_seed: u64) -> AdapterRequest {
    AdapterRequest { problem_id: problem.id.clone(), interventions: intervention.clone(), run_seed }
}

fn repeat_majority<F>(
    options: &AdapterOptions,
    problem: &Problem,
    intervention: &Intervention,
    mut once: F,
) -> ExecutionRecord
where
    F: FnMut() -> Result<AdapterResponse, AdapterError>,
{
    let runs: Vec<ExecutionRecord> = (0..options.repeat.max(1))
        .map(|_| match once() {
            Ok(resp) => resp.into_record(problem, intervention),
            Err(e) => ExecutionRecord::error(&problem.id, intervention, e.to_string()),
        })
        .collect();
    majority(runs)
}

/// Majority outcome over repeated runs; errors do not vote, ties are errors.
fn majority(mut runs: Vec<ExecutionRecord>) -> ExecutionRecord {
    if runs.len() == 1 {
        return runs.pop().expect("one run");
    }
    let passes = runs.iter().filter(|r| r.outcome.is_pass()).count();
    let fails = runs.iter().filter(|r| r.outcome.is_fail()).count();
    let want = match passes.cmp(&fails) {
        std::cmp::Ordering::Greater => Outcome::Pass,
        std::cmp::Ordering::Less => Outcome::Fail,
        std::cmp::Ordering::Equal => {
            let first = runs.swap_remove(0);
            let detail = if passes == 0 { "every repeated run errored" } else { "repeated runs split evenly" };
            return ExecutionRecord::error(&first.problem_id, &first.intervention, detail);
        }
    };
    runs.into_iter().find(|r| r.outcome == want).expect("majority outcome exists")
}

struct ChildProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<io::Result<String>>,
}

impl Drop for ChildProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A child process speaking one JSON object per line. Calls are serialized.
pub struct SubprocessSut {
    command: Vec<String>,
    options: AdapterOptions,
    child: Mutex<Option<ChildProcess>>,
}

impl SubprocessSut {
    pub fn new(command: Vec<String>, options: AdapterOptions) -> SubprocessSut {
        SubprocessSut { command, options, child: Mutex::new(None) }
    }

    fn spawn(&self) -> Result<ChildProcess, AdapterError> {
        let (program, args) =
            self.command.split_first().ok_or_else(|| AdapterError::Unavailable("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AdapterError::Unavailable(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ChildProcess { child, stdin, lines })
    }

    /// One request/response exchange.
    pub fn call(&self, request: &AdapterRequest) -> Result<AdapterResponse, AdapterError> {
        let mut guard = self.child.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let proc = guard.as_mut().expect("spawned");
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        if let Err(e) = proc.stdin.write_all(line.as_bytes()).and_then(|_| proc.stdin.flush()) {
            *guard = None;
            return Err(AdapterError::Unavailable(e.to_string()));
        }
        match proc.lines.recv_timeout(self.options.timeout()) {
            Ok(Ok(reply)) => serde_json::from_str(&reply).map_err(|e| AdapterError::MalformedResponse(e.to_string())),
            Ok(Err(e)) => {
                *guard = None;
                Err(AdapterError::Unavailable(e.to_string()))
            }
            Err(RecvTimeoutError::Timeout) => {
                // the child may still answer later; restart it to stay in sync
                *guard = None;
                Err(AdapterError::AdapterTimeout(self.options.timeout()))
            }
            Err(RecvTimeoutError::Disconnected) => {
                *guard = None;
                Err(AdapterError::Unavailable("child closed its output".into()))
            }
        }
    }
}

impl SystemUnderTest for SubprocessSut {
    fn execute(&self, problem: &Problem, intervention: &Intervention, run_seed: u64) -> ExecutionRecord {
        let request = request_for(problem, intervention, run_seed);
        repeat_majority(&self.options, problem, intervention, || self.call(&request))
    }

    fn runs_per_execution(&self) -> usize {
        self.options.repeat.max(1)
    }

    fn is_deterministic(&self) -> bool {
        self.options.deterministic
    }

    fn max_in_flight(&self) -> usize {
        1
    }
}

/// An HTTP endpoint accepting wire-protocol requests as POST bodies.
pub struct HttpSut {
    url: String,
    options: AdapterOptions,
    agent: ureq::Agent,
}

impl HttpSut {
    pub fn new(url: impl Into<String>, options: AdapterOptions) -> HttpSut {
        let agent = ureq::AgentBuilder::new().timeout(options.timeout()).build();
        HttpSut { url: url.into(), options, agent }
    }

    pub fn call(&self, request: &AdapterRequest) -> Result<AdapterResponse, AdapterError> {
        let body = serde_json::to_value(request).expect("request serializes");
        match self.agent.post(&self.url).send_json(body) {
            Ok(resp) => {
                let text = resp.into_string().map_err(|e| AdapterError::MalformedResponse(e.to_string()))?;
                serde_json::from_str(&text).map_err(|e| AdapterError::MalformedResponse(e.to_string()))
            }
            Err(ureq::Error::Transport(t)) if t.kind() == ureq::ErrorKind::Io => {
                let text = t.to_string();
                if text.contains("timed out") {
                    Err(AdapterError::AdapterTimeout(self.options.timeout()))
                } else {
                    Err(AdapterError::Unavailable(text))
                }
            }
            Err(e) => Err(AdapterError::Unavailable(e.to_string())),
        }
    }
}

impl SystemUnderTest for HttpSut {
    fn execute(&self, problem: &Problem, intervention: &Intervention, run_seed: u64) -> ExecutionRecord {
        let request = request_for(problem, intervention, run_seed);
        repeat_majority(&self.options, problem, intervention, || self.call(&request))
    }

    fn runs_per_execution(&self) -> usize {
        self.options.repeat.max(1)
    }

    fn is_deterministic(&self) -> bool {
        self.options.deterministic
    }

    fn max_in_flight(&self) -> usize {
        self.options.max_in_flight.max(1)
    }
}

/// Serves the line protocol: one request per input line, one response per
/// output line. Unparseable requests get an `error` response.
pub fn serve<R, W, F>(input: R, mut output: W, mut handle: F) -> io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(AdapterRequest) -> AdapterResponse,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<AdapterRequest>(&line) {
            Ok(request) => handle(request),
            Err(e) => AdapterResponse::error(format!("bad request: {e}")),
        };
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// Reference echo: passes, observes exactly the intervened values, and
/// reports their total character count as tokens.
pub fn echo(request: AdapterRequest) -> AdapterResponse {
    let tokens = request.interventions.values().map(|v| v.chars().count() as u64).sum();
    AdapterResponse { outcome: WireOutcome::Pass, observed: request.interventions, tokens, error_detail: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(outcome: Outcome) -> ExecutionRecord {
        ExecutionRecord {
            problem_id: "p".into(),
            intervention: Intervention::new(),
            outcome,
            observed: BTreeMap::new(),
            tokens: 1,
        }
    }

    #[test]
    fn majority_vote() {
        let r = majority(vec![record(Outcome::Fail), record(Outcome::Pass), record(Outcome::Fail)]);
        assert_eq!(r.outcome, Outcome::Fail);
        let r = majority(vec![record(Outcome::Pass), record(Outcome::ExecError("x".into())), record(Outcome::Fail)]);
        assert!(r.outcome.is_error());
        let r = majority(vec![record(Outcome::Pass), record(Outcome::ExecError("x".into()))]);
        assert_eq!(r.outcome, Outcome::Pass);
    }

    #[test]
    fn wire_field_names_are_exact() {
        let req = AdapterRequest {
            problem_id: "p1".into(),
            interventions: [("A".to_string(), "x".to_string())].into_iter().collect(),
            run_seed: 5,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"problem_id":"p1","interventions":{"A":"x"},"run_seed":5}"#
        );
        let resp: AdapterResponse =
            serde_json::from_str(r#"{"outcome":"error","tokens":0,"error_detail":"boom"}"#).unwrap();
        assert_eq!(resp.outcome, WireOutcome::Error);
        assert!(serde_json::from_str::<AdapterResponse>(r#"{"outcome":"maybe"}"#).is_err());
    }

    #[test]
    fn serve_answers_each_line() {
        let input = b"{\"problem_id\":\"p\",\"interventions\":{\"A\":\"abc\"},\"run_seed\":1}\nnot json\n";
        let mut out = Vec::new();
        serve(&input[..], &mut out, echo).unwrap();
        let lines: Vec<AdapterResponse> =
            String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].observed["A"], "abc");
        assert_eq!(lines[0].tokens, 3);
        assert_eq!(lines[1].outcome, WireOutcome::Error);
    }

    #[test]
    fn missing_observed_features_become_empty() {
        let problem = Problem {
            id: "p".into(),
            specification: String::new(),
            baseline: [("A".to_string(), "a".to_string()), ("B".to_string(), "b".to_string())].into_iter().collect(),
        };
        let resp = AdapterResponse {
            outcome: WireOutcome::Pass,
            observed: [("A".to_string(), "a".to_string())].into_iter().collect(),
            tokens: 2,
            error_detail: None,
        };
        let rec = resp.into_record(&problem, &Intervention::new());
        assert_eq!(rec.observed["B"], "");
    }

    #[test]
    fn unavailable_command_is_an_exec_error() {
        let sut = SubprocessSut::new(vec!["/nonexistent/adapter".into()], AdapterOptions::default());
        let problem = Problem { id: "p".into(), specification: String::new(), baseline: BTreeMap::new() };
        let rec = sut.execute(&problem, &Intervention::new(), 0);
        assert!(rec.outcome.is_error());
    }
}
