//! Command-line front end.
//!
//! Every subcommand writes `<name>.json` into `--out`; with `--format csv`
//! or `--format markdown` a second rendering is written next to it.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{self, kendall_tau_scores, Normalization, ProblemCauses, ResponsibilityTable};
use crate::apps::{self, RepairStrategy, SimCase};
use crate::execution::adapter::{self, AdapterOptions, AdapterResponse};
use crate::execution::{
    build_sim, generate_benchmark, Benchmark, CauseProfile, HttpSut, SimPipelineSpec, SubprocessSut, SystemUnderTest,
};
use crate::influence::Metric;
use crate::intervene::{InterventionEngine, RemoteEngine, Replacements};
use crate::model::{validate_graph, AnalysisConfig, CausalGraph, ImportantFeatureSet, Problem, Schema};
use crate::oracle::{enumerate_minimal_causes, verify_result, Verification};
use crate::par::{self, Parallelism};
use crate::report::{self, canonical_json, Format};
use crate::search::{analyze_problem, ProblemResult, SearchError};

pub const SEED_ENV: &str = "CAUSESCOPE_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::InvalidConfig(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "causescope", version, about = "Find the feature combinations that make a staged pipeline fail")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Report directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Problems analyzed concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Executions per problem (N).
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Longest combination searched (L_max).
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    /// Similarity below which a feature counts as influenced.
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Non-discoveries before moving to the next length (k).
    #[arg(long, global = true)]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    K,
    MaxLen,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search every problem for its important feature set.
    Analyze,
    /// Exhaustively enumerate minimal causes (small simulators only).
    Oracle,
    /// Score analyze results against oracle results.
    Verify { results: PathBuf, truth: PathBuf },
    /// Feature responsibility table from one or more result files.
    Rank {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Schema listing every feature; defaults to the config's graph.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long, value_enum, default_value_t = NormalizationArg::Max)]
        normalization: NormalizationArg,
    },
    /// Kendall tau-b between two rankings.
    Compare { a: PathBuf, b: PathBuf },
    /// Disable the bottom-n features and measure the effect.
    Prune {
        #[arg(long)]
        ranking: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
        n: Vec<usize>,
    },
    /// Compare repair prioritization strategies on injected failures.
    Repair {
        #[arg(long)]
        ranking: PathBuf,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Where failures are injected.
        #[arg(long, value_enum, default_value_t = FailureOrigin::Minimal)]
        origin: FailureOrigin,
    },
    /// Generate a simulator benchmark and a config pointing at it.
    Bench {
        #[arg(long, default_value_t = 12)]
        features: usize,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        min_cause_len: usize,
        #[arg(long, default_value_t = 4)]
        max_cause_len: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 1.0)]
        skew: f64,
    },
    /// Rerun analyze for several values of k or L_max.
    Sweep {
        #[arg(long, value_enum, default_value_t = SweepParam::K)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 15, 20, 25])]
        values: Vec<usize>,
    },
    /// Serve a simulator over the line protocol on stdin/stdout.
    #[command(hide = true)]
    ServeSim {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        problems: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FailureOrigin {
    /// A minimal failing combination found by the oracle.
    Minimal,
    /// One of the simulator's planted predicate terms.
    Planted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizationArg {
    Max,
    Sum,
}

impl From<NormalizationArg> for Normalization {
    fn from(n: NormalizationArg) -> Self {
        match n {
            NormalizationArg::Max => Normalization::Max,
            NormalizationArg::Sum => Normalization::Sum,
        }
    }
}

/// Parses `argv` and runs it, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
            eprintln!("{line}");
            return 1;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("causescope: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Analyze => analyze(g),
        Command::Oracle => oracle(g),
        Command::Verify { results, truth } => verify(g, results, truth),
        Command::Rank { results, schema, top_k, normalization } => {
            rank(g, results, schema.as_deref(), *top_k, (*normalization).into())
        }
        Command::Compare { a, b } => compare(g, a, b),
        Command::Prune { ranking, n } => prune(g, ranking, n),
        Command::Repair { ranking, n, origin } => repair(g, ranking, *n, *origin),
        Command::Bench { features, instances, min_cause_len, max_cause_len, noise, skew } => {
            let mut profile = CauseProfile::lengths(*min_cause_len, *max_cause_len);
            profile.corruption_noise = *noise;
            profile.skew = *skew;
            bench(g, *features, *instances, &profile)
        }
        Command::Sweep { param, values } => sweep(g, *param, values),
        Command::ServeSim { spec, problems } => serve_sim(spec, problems.as_deref()),
    }
}

// ---- configuration ----

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema: Option<PathBuf>,
    problems: Option<PathBuf>,
    sut: SutDescriptor,
    #[serde(default)]
    engine: EngineDescriptor,
    #[serde(default)]
    analysis: AnalysisConfig,
    #[serde(default = "default_similarity")]
    similarity: String,
    similarity_url: Option<String>,
}

fn default_similarity() -> String {
    "jaccard".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum SutDescriptor {
    Sim {
        spec: PathBuf,
    },
    Benchmark {
        path: PathBuf,
    },
    Subprocess {
        command: Vec<String>,
        #[serde(default)]
        options: AdapterOptions,
    },
    Http {
        url: String,
        #[serde(default)]
        options: AdapterOptions,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum EngineDescriptor {
    #[default]
    Template,
    Catalog {
        path: PathBuf,
    },
    Remote {
        url: String,
        prompt_template: Option<String>,
        #[serde(default = "default_remote_timeout")]
        timeout_ms: u64,
    },
}

fn default_remote_timeout() -> u64 {
    30_000
}

/// Problems and what to run them against.
pub enum Workload {
    /// Simulated cases; prune, repair and oracle need these.
    Sims(Vec<SimCase>),
    Shared {
        sut: Arc<dyn SystemUnderTest>,
        problems: Vec<Problem>,
    },
}

impl Workload {
    fn jobs(&self) -> Vec<(&dyn SystemUnderTest, &Problem)> {
        match self {
            Workload::Sims(cases) => cases.iter().map(|c| (&c.sim as &dyn SystemUnderTest, &c.problem)).collect(),
            Workload::Shared { sut, problems } => problems.iter().map(|p| (sut.as_ref(), p)).collect(),
        }
    }

    fn max_in_flight(&self) -> usize {
        match self {
            Workload::Sims(_) => usize::MAX,
            Workload::Shared { sut, .. } => sut.max_in_flight(),
        }
    }

    fn sims(&self, command: &str) -> Result<&[SimCase], CliError> {
        match self {
            Workload::Sims(cases) => Ok(cases),
            Workload::Shared { .. } => {
                Err(CliError::Usage(format!("`{command}` needs a sim or benchmark system under test")))
            }
        }
    }
}

/// A loaded, validated run configuration.
pub struct RunConfig {
    pub graph: CausalGraph,
    pub schema: Option<Schema>,
    pub workload: Workload,
    pub engine: InterventionEngine,
    pub analysis: AnalysisConfig,
    pub metric: Metric,
}

impl RunConfig {
    /// Stage positions, falling back to id order without a schema.
    pub fn stage_index(&self) -> BTreeMap<String, u32> {
        match &self.schema {
            Some(s) => s.features.iter().map(|f| (f.id.clone(), f.stage_index)).collect(),
            None => self.graph.ids().iter().enumerate().map(|(i, f)| (f.clone(), i as u32)).collect(),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Usage(format!("{SEED_ENV}={v} is not a u64"))),
        Err(_) => Ok(None),
    }
}

/// Config values, then `CAUSESCOPE_SEED`, then flags.
fn apply_overrides(mut analysis: AnalysisConfig, g: &GlobalArgs) -> Result<AnalysisConfig, CliError> {
    if let Some(seed) = env_seed()? {
        analysis.seed = seed;
    }
    if let Some(seed) = g.seed {
        analysis.seed = seed;
    }
    if let Some(b) = g.budget {
        analysis.budget = b;
    }
    if let Some(l) = g.max_len {
        analysis.max_length = l;
    }
    if let Some(t) = g.theta {
        analysis.theta = t;
    }
    if let Some(k) = g.patience {
        analysis.patience = k;
    }
    Ok(analysis)
}

pub fn load_config(path: &Path, g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let file: ConfigFile = parse_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let analysis = apply_overrides(file.analysis, g)?;
    analysis.validate().map_err(|e| CliError::InvalidConfig(e.to_string()))?;

    let schema = match &file.schema {
        Some(p) => {
            let p = resolve(base, p);
            Some(Schema::load(&p).map_err(|e| CliError::Parse { path: p, message: e.to_string() })?)
        }
        None => None,
    };
    let problems = |required: bool| -> Result<Vec<Problem>, CliError> {
        match &file.problems {
            Some(p) => parse_json(&resolve(base, p)),
            None if required => {
                Err(CliError::InvalidConfig("`problems` is required for this system under test".into()))
            }
            None => Ok(Vec::new()),
        }
    };

    let (graph, schema, workload) = match &file.sut {
        SutDescriptor::Benchmark { path: p } => {
            let bench: Benchmark = parse_json(&resolve(base, p))?;
            let schema = schema.unwrap_or_else(|| bench.schema.clone());
            let graph = schema.graph().map_err(|e| CliError::InvalidConfig(e.to_string()))?;
            let cases = apps::cases_from_benchmark(&bench).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
            (graph, Some(schema), Workload::Sims(cases))
        }
        SutDescriptor::Sim { spec } => {
            let spec: SimPipelineSpec = parse_json(&resolve(base, spec))?;
            let sim = build_sim(&spec).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
            let graph = match &schema {
                Some(s) => s.graph(),
                None => {
                    let edges: Vec<(String, String)> = spec
                        .influence
                        .iter()
                        .flat_map(|(s, ts)| ts.iter().map(move |t| (s.clone(), t.clone())))
                        .collect();
                    validate_graph(spec.features.clone(), &edges)
                }
            }
            .map_err(|e| CliError::InvalidConfig(e.to_string()))?;
            if graph.ids() != sim.ids() {
                return Err(CliError::InvalidConfig("simulator features differ from the schema".into()));
            }
            let cases = problems(true)?.into_iter().map(|problem| SimCase { sim: sim.clone(), problem }).collect();
            (graph, schema, Workload::Sims(cases))
        }
        SutDescriptor::Subprocess { command, options } => {
            let schema = schema.unwrap_or_else(Schema::metagpt);
            let graph = schema.graph().map_err(|e| CliError::InvalidConfig(e.to_string()))?;
            let sut: Arc<dyn SystemUnderTest> = Arc::new(SubprocessSut::new(command.clone(), options.clone()));
            (graph, Some(schema), Workload::Shared { sut, problems: problems(true)? })
        }
        SutDescriptor::Http { url, options } => {
            let schema = schema.unwrap_or_else(Schema::metagpt);
            let graph = schema.graph().map_err(|e| CliError::InvalidConfig(e.to_string()))?;
            let sut: Arc<dyn SystemUnderTest> = Arc::new(HttpSut::new(url.clone(), options.clone()));
            (graph, Some(schema), Workload::Shared { sut, problems: problems(true)? })
        }
    };
    analysis.validate_for(&graph).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    for (_, p) in workload.jobs() {
        p.validate_for(&graph).map_err(|e| CliError::InvalidConfig(format!("problem `{}`: {e}", p.id)))?;
    }

    let engine =
        match &file.engine {
            EngineDescriptor::Template => InterventionEngine::default(),
            EngineDescriptor::Catalog { path: p } => InterventionEngine::load_catalog(&resolve(base, p))
                .map_err(|e| CliError::Parse { path: resolve(base, p), message: e.to_string() })?,
            EngineDescriptor::Remote { url, prompt_template, timeout_ms } => InterventionEngine::Remote(
                RemoteEngine::new(url.clone(), prompt_template.clone(), Duration::from_millis(*timeout_ms)),
            ),
        };
    engine.validate_for(&graph).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    let metric = Metric::from_name(&file.similarity, file.similarity_url.as_deref())
        .map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    Ok(RunConfig { graph, schema, workload, engine, analysis, metric })
}

fn require_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let path = g.config.as_ref().ok_or_else(|| CliError::Usage("--config is required".into()))?;
    load_config(path, g)
}

// ---- output ----

/// Writes `<name>.json`, plus `<name>.csv` / `<name>.md` when asked for.
pub fn emit_report<T: Serialize>(
    g: &GlobalArgs,
    name: &str,
    value: &T,
    csv: Option<&dyn Fn() -> String>,
    markdown: Option<&dyn Fn() -> String>,
) -> Result<(), CliError> {
    let write = |file: String, body: &str| {
        let path = g.out.join(file);
        report::write_file(&path, body).map_err(|source| CliError::Io { path, source })
    };
    write(format!("{name}.json"), &canonical_json(value))?;
    let extra = match g.format {
        Format::Json => None,
        Format::Csv => csv,
        Format::Markdown => markdown,
    };
    if let Some(render) = extra {
        write(format!("{name}.{}", g.format.extension()), &render())?;
    }
    Ok(())
}

fn results_csv(results: &[ProblemResult]) -> String {
    let mut out = String::from("problem_id,important_sets,unverifiable,executions_used\n");
    let join = |sets: &[Vec<String>]| sets.iter().map(|s| s.join("+")).collect::<Vec<_>>().join(" ");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.problem_id,
            join(&r.important_sets),
            join(&r.unverifiable),
            r.stats.executions_used
        ));
    }
    out
}

fn results_markdown(results: &[ProblemResult]) -> String {
    let mut out = String::from("| problem | important sets | executions |\n|---|---|---|\n");
    for r in results {
        let sets: Vec<String> = r.important_sets.iter().map(|s| format!("{{{}}}", s.join(", "))).collect();
        out.push_str(&format!("| {} | {} | {} |\n", r.problem_id, sets.join(" "), r.stats.executions_used));
    }
    out
}

// ---- subcommands ----

fn parallelism(g: &GlobalArgs, workload: &Workload) -> Parallelism {
    Parallelism::from_jobs(g.jobs).capped(workload.max_in_flight())
}

/// Runs the search over every problem; problems that already fail without
/// intervention are skipped.
pub fn analyze_all(
    cfg: &RunConfig,
    analysis: &AnalysisConfig,
    mode: Parallelism,
) -> Result<Vec<ProblemResult>, CliError> {
    let jobs = cfg.workload.jobs();
    let outcomes = par::map(&jobs, mode, |(sut, problem)| {
        analyze_problem(*sut, &cfg.graph, analysis, &cfg.engine, problem, &cfg.metric)
    });
    let mut results = Vec::new();
    for ((_, problem), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(o) => results.push(ProblemResult::from_outcome(&problem.id, &cfg.graph, &o)),
            Err(SearchError::BaselineFails(id)) => log::warn!("skipping `{id}`: fails without intervention"),
            Err(e) => return Err(CliError::Runtime(format!("problem `{}`: {e}", problem.id))),
        }
    }
    Ok(results)
}

fn analyze(g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = require_config(g)?;
    let results = analyze_all(&cfg, &cfg.analysis, parallelism(g, &cfg.workload))?;
    log::info!("analyzed {} problems", results.len());
    emit_report(g, "results", &results, Some(&|| results_csv(&results)), Some(&|| results_markdown(&results)))
}

fn oracle(g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = require_config(g)?;
    let cases = cfg.workload.sims("oracle")?;
    let mode = Parallelism::from_jobs(g.jobs);
    let mut results = Vec::new();
    for case in cases {
        let truth = oracle_truth(&cfg, case, mode)?;
        results.push(ProblemResult::from_oracle(&case.problem.id, &cfg.graph, &truth));
    }
    emit_report(g, "oracle", &results, Some(&|| results_csv(&results)), Some(&|| results_markdown(&results)))
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    problems: BTreeMap<String, Verification>,
    mean_precision: f64,
    mean_recall: f64,
    minimality_violations: usize,
    missing_from_results: Vec<String>,
}

fn verify(g: &GlobalArgs, results: &Path, truth: &Path) -> Result<(), CliError> {
    let reported: Vec<ProblemResult> = parse_json(results)?;
    let expected: Vec<ProblemResult> = parse_json(truth)?;
    let ids: BTreeSet<String> =
        reported.iter().chain(&expected).flat_map(|r| r.important_sets.iter().flatten().cloned()).collect();
    let graph = validate_graph(ids, &[]).map_err(|e| CliError::Runtime(e.to_string()))?;
    let to_sets = |r: &ProblemResult| -> Result<ImportantFeatureSet, CliError> {
        let sets = r.important_sets.iter().map(|s| graph.set_of(s)).collect::<Result<Vec<_>, _>>();
        Ok(ImportantFeatureSet::from_sets(sets.map_err(|e| CliError::Runtime(e.to_string()))?))
    };
    let by_id: BTreeMap<&str, &ProblemResult> = reported.iter().map(|r| (r.problem_id.as_str(), r)).collect();
    let mut problems = BTreeMap::new();
    let mut missing = Vec::new();
    for t in &expected {
        match by_id.get(t.problem_id.as_str()) {
            Some(r) => {
                problems.insert(t.problem_id.clone(), verify_result(&to_sets(r)?, &to_sets(t)?));
            }
            None => missing.push(t.problem_id.clone()),
        }
    }
    let n = problems.len().max(1) as f64;
    let report = VerifyReport {
        mean_precision: problems.values().map(|v| v.precision).sum::<f64>() / n,
        mean_recall: problems.values().map(|v| v.recall).sum::<f64>() / n,
        minimality_violations: problems.values().map(|v| v.minimality_violations).sum(),
        missing_from_results: missing,
        problems,
    };
    println!(
        "precision {:.6}  recall {:.6}  minimality violations {}",
        report.mean_precision, report.mean_recall, report.minimality_violations
    );
    emit_report(g, "verification", &report, None, None)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankReport {
    pub table: ResponsibilityTable,
    pub fr_std: Option<f64>,
    pub normalization: Normalization,
    pub top_k: usize,
    /// Per-input top-k appearance counts.
    pub topk_appearance: BTreeMap<String, usize>,
    pub settings: usize,
}

fn rank(
    g: &GlobalArgs,
    inputs: &[PathBuf],
    schema: Option<&Path>,
    top_k: usize,
    normalization: Normalization,
) -> Result<(), CliError> {
    let settings: Vec<Vec<ProblemResult>> = inputs.iter().map(|p| parse_json(p)).collect::<Result<_, _>>()?;
    let features: Vec<String> = if let Some(p) = schema {
        let s = Schema::load(p).map_err(|e| CliError::Parse { path: p.to_path_buf(), message: e.to_string() })?;
        s.features.iter().map(|f| f.id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else if g.config.is_some() {
        require_config(g)?.graph.ids().to_vec()
    } else {
        settings
            .iter()
            .flatten()
            .flat_map(|r| r.important_sets.iter().flatten().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    };
    let causes = |rs: &[ProblemResult]| rs.iter().map(|r| r.important_sets.clone()).collect::<Vec<ProblemCauses>>();
    let all: Vec<ProblemCauses> = settings.iter().flat_map(|s| causes(s)).collect();
    let table = aggregate::feature_responsibility(&features, &all);
    let per_setting: Vec<ResponsibilityTable> =
        settings.iter().map(|s| aggregate::feature_responsibility(&features, &causes(s))).collect();
    let k = top_k.min(features.len());
    let report = RankReport {
        fr_std: aggregate::fr_std(&table, normalization).ok(),
        normalization,
        top_k: k,
        topk_appearance: aggregate::topk_appearance(&per_setting, k),
        settings: settings.len(),
        table,
    };
    let md = || report::markdown(&report.table, Some((k, &report.topk_appearance)));
    emit_report(g, "ranking", &report, Some(&|| report.table.to_csv()), Some(&md))
}

/// A rank report, or a bare JSON array of ids best-first.
fn load_scores(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    let value: serde_json::Value = parse_json(path)?;
    let bad = |m: &str| CliError::Parse { path: path.to_path_buf(), message: m.to_string() };
    if let Some(list) = value.as_array() {
        let ids: Vec<&str> =
            list.iter().map(|v| v.as_str().ok_or_else(|| bad("expected an array of ids"))).collect::<Result<_, _>>()?;
        return Ok(ids.iter().enumerate().map(|(i, id)| (id.to_string(), -(i as f64))).collect());
    }
    let report: RankReport = serde_json::from_value(value).map_err(|e| bad(&e.to_string()))?;
    Ok(report.table.fr)
}

fn compare(g: &GlobalArgs, a: &Path, b: &Path) -> Result<(), CliError> {
    let (sa, sb) = (load_scores(a)?, load_scores(b)?);
    let tau = kendall_tau_scores(&sa, &sb).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("kendall_tau_b {tau:.6}");
    #[derive(Serialize)]
    struct Comparison {
        kendall_tau_b: f64,
        features: usize,
    }
    emit_report(g, "compare", &Comparison { kendall_tau_b: tau, features: sa.len() }, None, None)
}

fn load_table(path: &Path) -> Result<ResponsibilityTable, CliError> {
    Ok(parse_json::<RankReport>(path)?.table)
}

fn prune(g: &GlobalArgs, ranking: &Path, ns: &[usize]) -> Result<(), CliError> {
    let cfg = require_config(g)?;
    let cases = cfg.workload.sims("prune")?;
    let table = load_table(ranking)?;
    let mode = Parallelism::from_jobs(g.jobs);
    #[derive(Serialize)]
    struct Row {
        plan: apps::PruningPlan,
        report: apps::PruningReport,
    }
    let mut rows = Vec::new();
    for &n in ns {
        let plan = apps::pruning_plan(&table, n).map_err(|e| CliError::Usage(e.to_string()))?;
        let report = apps::evaluate_pruning(cases, &plan, mode).map_err(|e| CliError::Runtime(e.to_string()))?;
        rows.push(Row { plan, report });
    }
    let csv = || apps::pruning_csv(&rows.iter().map(|r| r.report.clone()).collect::<Vec<_>>());
    let md = || {
        let mut out = String::from("| n | disabled | ΔPass@1 (%) | ΔTokens (%) |\n|---|---|---|---|\n");
        for r in &rows {
            out.push_str(&format!(
                "| {} | {} | {:.6} | {:.6} |\n",
                r.plan.n,
                r.plan.disabled.join(", "),
                100.0 * r.report.delta_pass1,
                100.0 * r.report.delta_tokens
            ));
        }
        out
    };
    emit_report(g, "pruning", &rows, Some(&csv), Some(&md))
}

#[derive(Debug, Serialize)]
struct RepairRow {
    strategy: String,
    fix_rate: f64,
    fixed: usize,
    total: usize,
}

fn oracle_truth(cfg: &RunConfig, case: &SimCase, mode: Parallelism) -> Result<ImportantFeatureSet, CliError> {
    let a = &cfg.analysis;
    let plan = Replacements::plan(&cfg.engine, &cfg.graph, &case.problem, a.seed, a.theta, &cfg.metric)
        .map_err(|e| CliError::Runtime(format!("problem `{}`: {e}", case.problem.id)))?;
    enumerate_minimal_causes(&case.sim, &cfg.graph, &case.problem, &plan, a.max_length, a.seed, mode)
        .map_err(|e| CliError::Runtime(format!("problem `{}`: {e}", case.problem.id)))
}

fn repair(g: &GlobalArgs, ranking: &Path, n: usize, origin: FailureOrigin) -> Result<(), CliError> {
    let cfg = require_config(g)?;
    let cases = cfg.workload.sims("repair")?;
    let table = load_table(ranking)?;
    let seed = cfg.analysis.seed;
    let mode = Parallelism::from_jobs(g.jobs);
    let failures = match origin {
        FailureOrigin::Planted => apps::planted_failures(cases, seed),
        FailureOrigin::Minimal => {
            let causes = cases
                .iter()
                .map(|c| Ok(oracle_truth(&cfg, c, mode)?.sets().to_vec()))
                .collect::<Result<Vec<_>, CliError>>()?;
            apps::inject_failures(cases, &causes, seed)
        }
    };
    let stages = cfg.stage_index();
    let strategies = [
        RepairStrategy::CausalityGuided,
        RepairStrategy::RandomSelect(seed),
        RepairStrategy::TemporalFirst,
        RepairStrategy::LengthBased,
    ];
    let mut rows = Vec::new();
    for strategy in strategies {
        let priorities = failures
            .iter()
            .map(|f| {
                let ctx = apps::RepairContext {
                    problem_id: f.case.problem.id.clone(),
                    stage_index: stages.clone(),
                    observed: Some(f.record.observed.clone()),
                };
                apps::repair_priorities(&table, strategy, n, &ctx)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let r = apps::evaluate_repair(&failures, &priorities, mode).map_err(|e| CliError::Runtime(e.to_string()))?;
        rows.push(RepairRow { strategy: strategy.name().into(), fix_rate: r.fix_rate, fixed: r.fixed, total: r.total });
    }
    let csv = || {
        let mut out = String::from("strategy,fix_rate,fixed,total\n");
        for r in &rows {
            out.push_str(&format!("{},{:.6},{},{}\n", r.strategy, r.fix_rate, r.fixed, r.total));
        }
        out
    };
    let md = || {
        let mut out = String::from("| strategy | fix rate | fixed | total |\n|---|---|---|---|\n");
        for r in &rows {
            out.push_str(&format!("| {} | {:.6} | {} | {} |\n", r.strategy, r.fix_rate, r.fixed, r.total));
        }
        out
    };
    emit_report(g, "repair", &rows, Some(&csv), Some(&md))
}

fn bench(g: &GlobalArgs, features: usize, instances: usize, profile: &CauseProfile) -> Result<(), CliError> {
    let seed = match g.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let bench = generate_benchmark(seed, features, instances, profile).map_err(|e| CliError::Usage(e.to_string()))?;
    let path = g.out.join("benchmark.json");
    let text = serde_json::to_string_pretty(&bench).expect("benchmark serializes") + "\n";
    report::write_file(&path, &text).map_err(|source| CliError::Io { path, source })?;
    let config = serde_json::json!({
        "sut": {"kind": "benchmark", "path": "benchmark.json"},
        "analysis": {"seed": seed, "max_length": profile.max_length().min(features)},
    });
    let path = g.out.join("config.json");
    let text = serde_json::to_string_pretty(&config).expect("config serializes") + "\n";
    report::write_file(&path, &text).map_err(|source| CliError::Io { path, source })
}

#[derive(Debug, Serialize)]
struct SweepRow {
    value: usize,
    identified_total: usize,
    identified_mean: f64,
    executions_mean: f64,
}

fn sweep(g: &GlobalArgs, param: SweepParam, values: &[usize]) -> Result<(), CliError> {
    let cfg = require_config(g)?;
    let mode = parallelism(g, &cfg.workload);
    let mut rows = Vec::new();
    for &value in values {
        let mut analysis = cfg.analysis.clone();
        match param {
            SweepParam::K => analysis.patience = value,
            SweepParam::MaxLen => analysis.max_length = value,
        }
        analysis.validate_for(&cfg.graph).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
        let results = analyze_all(&cfg, &analysis, mode)?;
        let n = results.len().max(1) as f64;
        let total: usize = results.iter().map(|r| r.important_sets.len()).sum();
        let executions: usize = results.iter().map(|r| r.stats.executions_used).sum();
        rows.push(SweepRow {
            value,
            identified_total: total,
            identified_mean: total as f64 / n,
            executions_mean: executions as f64 / n,
        });
    }
    let name = match param {
        SweepParam::K => "k",
        SweepParam::MaxLen => "max_len",
    };
    let csv = || {
        let mut out = format!("{name},identified_total,identified_mean,executions_mean\n");
        for r in &rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                r.value, r.identified_total, r.identified_mean, r.executions_mean
            ));
        }
        out
    };
    let md = || {
        let mut out = format!("| {name} | identified | mean per problem | mean executions |\n|---|---|---|---|\n");
        for r in &rows {
            out.push_str(&format!(
                "| {} | {} | {:.6} | {:.6} |\n",
                r.value, r.identified_total, r.identified_mean, r.executions_mean
            ));
        }
        out
    };
    emit_report(g, "sweep", &rows, Some(&csv), Some(&md))
}

fn serve_sim(spec: &Path, problems: Option<&Path>) -> Result<(), CliError> {
    let spec: SimPipelineSpec = parse_json(spec)?;
    let sim = build_sim(&spec).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    let problems: BTreeMap<String, Problem> = match problems {
        Some(p) => parse_json::<Vec<Problem>>(p)?.into_iter().map(|p| (p.id.clone(), p)).collect(),
        None => BTreeMap::new(),
    };
    let stdin = std::io::stdin();
    adapter::serve(stdin.lock(), std::io::stdout().lock(), |request| {
        let problem = problems.get(&request.problem_id).cloned().unwrap_or_else(|| Problem {
            id: request.problem_id.clone(),
            specification: String::new(),
            baseline: BTreeMap::new(),
        });
        AdapterResponse::from_record(&sim.execute(&problem, &request.interventions, request.run_seed))
    })
    .map_err(|e| CliError::Runtime(e.to_string()))
}
