//! Command-line front end: scenario runs, policy comparisons, gossip demos,
//! name resolution and task orchestration.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 I/O failure,
//! 4 failed assertion (non-convergence, unsatisfiable plan, broken invariant).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use edgecollab_core::cms::{converged, gossip_round, CmsStore, KEY_NODE_HEALTH, KEY_NODE_LOAD};
use edgecollab_core::config::{load_task, LoadError, ScenarioFile};
use edgecollab_core::discovery::parse_name;
use edgecollab_core::engine::{run_comparison_reports, Engine, RunReport};
use edgecollab_core::metrics::MetricsSummary;
use edgecollab_core::orchestrator::{execute_plan, plan, ExecutionStatus, PlanError};
use edgecollab_core::report::{write_outcomes_jsonl, write_summary_json, SummaryDocument};
use edgecollab_core::{rng, AgentId, EngineError, Money, PolicyKind, Scenario, Topology, TraceMode};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_ASSERTION: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Assertion(_) => EXIT_ASSERTION,
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { .. } => CliError::Io(e.to_string()),
            LoadError::Config(c) => CliError::Config(c.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(c) => CliError::Config(c.to_string()),
            other => CliError::Assertion(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "edgecollab", version, about = "Collaborative edge inference simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario with its configured policy.
    Simulate(SimulateArgs),
    /// Run several policies over several seeds and emit a grouped CSV.
    Compare(CompareArgs),
    /// Gossip a fresh set of agent stores until they agree.
    GossipDemo(GossipArgs),
    /// Rank agents advertising a semantic name.
    Resolve(ResolveArgs),
    /// Plan and execute a task file over the scenario's agents.
    Orchestrate(OrchestrateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated, e.g. `random,weighted,load_aware`. Defaults to the
    /// scenario's list.
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<String>,
    /// Comma-separated seeds. Defaults to the scenario seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Reuse one arrival trace per seed across policies.
    #[arg(long, conflicts_with = "independent_traces")]
    pub shared_trace: bool,
    /// Draw a separate trace per policy.
    #[arg(long)]
    pub independent_traces: bool,
}

#[derive(Debug, Args)]
pub struct GossipArgs {
    #[arg(long, default_value_t = 32)]
    pub agents: usize,
    /// `complete` or `ring`.
    #[arg(long, default_value = "complete")]
    pub topology: String,
    /// JSON adjacency lists; overrides `--topology`.
    #[arg(long)]
    pub adjacency: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub fanout: usize,
    /// Maximum rounds to run.
    #[arg(long, default_value_t = 50)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `gossip.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with status 4 unless the stores converge.
    #[arg(long)]
    pub require_convergence: bool,
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Semantic name to look up, e.g. `knowledge.gpt/arithmetic`.
    pub name: String,
    /// Agent whose view is queried. Defaults to the first agent.
    #[arg(long)]
    pub agent: Option<u32>,
}

#[derive(Debug, Args)]
pub struct OrchestrateArgs {
    pub task: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    /// Agent that plans the task. Defaults to the first agent.
    #[arg(long)]
    pub agent: Option<u32>,
    /// Directory for `plan.json` and `execution.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Output formats
// ---------------------------------------------------------------------------

/// One line of the grouped comparison CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: String,
    pub seed: u64,
    pub processed_edge: u64,
    pub processed_cloud: u64,
    pub rejected: u64,
    #[serde(deserialize_with = "money_from_str")]
    pub cloud_cost: Money,
}

fn money_from_str<'de, D: Deserializer<'de>>(d: D) -> Result<Money, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

impl From<&MetricsSummary> for AggregateRow {
    fn from(s: &MetricsSummary) -> Self {
        Self {
            policy: s.policy.clone(),
            seed: s.seed,
            processed_edge: s.processed_edge,
            processed_cloud: s.processed_cloud,
            rejected: s.rejected,
            cloud_cost: s.total_cloud_cost,
        }
    }
}

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate_csv<R: std::io::Read>(input: R) -> Result<Vec<AggregateRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Fixed-width summary table.
pub fn format_table(rows: &[MetricsSummary]) -> String {
    let mut s = format!(
        "{:<12} {:>6} {:>8} {:>8} {:>8} {:>8} {:>14} {:>8}\n",
        "policy", "seed", "arrivals", "edge", "cloud", "rejected", "cloud_cost", "p95_wait"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<12} {:>6} {:>8} {:>8} {:>8} {:>8} {:>14} {:>8}\n",
            r.policy,
            r.seed,
            r.arrivals,
            r.processed_edge,
            r.processed_cloud,
            r.rejected,
            r.total_cloud_cost.to_string(),
            r.queue_wait.p95
        ));
    }
    s
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = create_file(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Io(e.to_string()))?;
    f.write_all(b"\n").and_then(|_| f.flush()).map_err(io_err(path))
}

fn write_csv(path: &Path, rows: &[AggregateRow]) -> Result<(), CliError> {
    write_aggregate_csv(create_file(path)?, rows).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn check_run(report: &RunReport) -> Result<(), CliError> {
    if !report.summary.is_conserved() {
        return Err(CliError::Assertion(format!(
            "conservation broken: {:?}",
            report.summary
        )));
    }
    if let Some(v) = report.audit.violations.first() {
        return Err(CliError::Assertion(format!("capacity violated: {v:?}")));
    }
    Ok(())
}

fn write_run(dir: &Path, stem: &str, scenario: &Scenario, report: &RunReport) -> Result<(), CliError> {
    let summary = dir.join(format!("{stem}summary.json"));
    let mut f = create_file(&summary)?;
    write_summary_json(&mut f, &SummaryDocument::new(scenario, report)).map_err(io_err(&summary))?;
    f.flush().map_err(io_err(&summary))?;
    let outcomes = dir.join(format!("{stem}outcomes.jsonl"));
    let mut f = create_file(&outcomes)?;
    write_outcomes_jsonl(&mut f, &report.outcomes).map_err(io_err(&outcomes))?;
    f.flush().map_err(io_err(&outcomes))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Compare(a) => cmd_compare(&a, out),
        Command::GossipDemo(a) => cmd_gossip_demo(&a, out),
        Command::Resolve(a) => cmd_resolve(&a, out),
        Command::Orchestrate(a) => cmd_orchestrate(&a, out),
    }
}

fn print(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ScenarioFile::load(&args.scenario)?;
    let mut scenario = file.scenario();
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let report = edgecollab_core::run(&scenario)?;
    check_run(&report)?;
    ensure_dir(&args.out)?;
    write_run(&args.out, "", &scenario, &report)?;
    write_csv(&args.out.join("aggregates.csv"), &[AggregateRow::from(&report.summary)])?;
    print(out, &format_table(std::slice::from_ref(&report.summary)))
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ScenarioFile::load(&args.scenario)?;
    let policies: Vec<PolicyKind> = if args.policies.is_empty() {
        file.policies.clone()
    } else {
        args.policies
            .iter()
            .map(|p| {
                p.trim()
                    .parse::<PolicyKind>()
                    .map_err(|e| CliError::Config(e.to_string()))
            })
            .collect::<Result<_, _>>()?
    };
    if policies.len() < 2 {
        return Err(CliError::Config(
            "`--policies`: compare needs at least two policies".into(),
        ));
    }
    let seeds = if args.seeds.is_empty() {
        vec![file.seed]
    } else {
        args.seeds.clone()
    };
    let mode = if args.independent_traces {
        TraceMode::Independent
    } else if args.shared_trace {
        TraceMode::Shared
    } else {
        file.trace_mode
    };
    let base = file.scenario();

    let per_seed: Vec<(Scenario, Vec<RunReport>)> = seeds
        .par_iter()
        .map(|&seed| {
            let scenario = base.with_seed(seed);
            run_comparison_reports(&scenario, &policies, mode).map(|r| (scenario, r))
        })
        .collect::<Result<_, _>>()?;

    ensure_dir(&args.out)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (scenario, reports) in &per_seed {
        for report in reports {
            check_run(report)?;
            let variant = scenario.with_policy(policy_of(report)?);
            write_run(
                &args.out,
                &format!("{}-seed{}-", report.summary.policy, scenario.seed),
                &variant,
                report,
            )?;
            rows.push(AggregateRow::from(&report.summary));
            summaries.push(report.summary.clone());
        }
    }
    write_csv(&args.out.join("compare.csv"), &rows)?;

    let mut text = format_table(&summaries);
    text.push_str("\nmean over seeds\n");
    for policy in &policies {
        let costs: Vec<f64> = summaries
            .iter()
            .filter(|s| s.policy == policy.as_str())
            .map(|s| s.total_cloud_cost.to_f64())
            .collect();
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        text.push_str(&format!("{:<12} cloud_cost {:>12.6}\n", policy.as_str(), mean));
    }
    print(out, &text)
}

fn policy_of(report: &RunReport) -> Result<PolicyKind, CliError> {
    report
        .summary
        .policy
        .parse()
        .map_err(|e: edgecollab_core::ConfigError| CliError::Assertion(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipReport {
    pub agents: usize,
    pub fanout: usize,
    pub seed: u64,
    pub topology: Topology,
    pub connected: bool,
    /// `None` if the stores never agreed within the round limit.
    pub converged_at: Option<usize>,
    /// Entries adopted in each round that ran.
    pub adoptions: Vec<usize>,
}

/// Every agent publishes its health and load, then gossip runs until the
/// stores agree or `max_rounds` is reached.
pub fn gossip_demo(
    agents: usize,
    topology: &Topology,
    fanout: usize,
    max_rounds: usize,
    seed: u64,
) -> Result<GossipReport, CliError> {
    if agents == 0 {
        return Err(CliError::Config("`--agents` must be at least 1".into()));
    }
    topology
        .validate(agents)
        .map_err(|e| CliError::Config(format!("`--topology`: {e}")))?;
    if fanout == 0 {
        return Err(CliError::Config("`--fanout` must be at least 1".into()));
    }
    let mut stores: Vec<CmsStore> = (0..agents)
        .map(|i| {
            let mut s = CmsStore::new(AgentId(i as u32));
            s.put_local(KEY_NODE_HEALTH, "ok").expect("valid entry");
            s.put_local(KEY_NODE_LOAD, i as f64 / agents as f64)
                .expect("valid entry");
            s
        })
        .collect();
    let mut rng = rng::stream(seed, rng::STREAM_GOSSIP);
    let mut adoptions = Vec::new();
    let mut converged_at = converged(&stores).then_some(0);
    while converged_at.is_none() && adoptions.len() < max_rounds {
        let adopted =
            gossip_round(&mut stores, topology, fanout, &mut rng).map_err(|e| CliError::Config(e.to_string()))?;
        adoptions.push(adopted);
        if converged(&stores) {
            converged_at = Some(adoptions.len());
        }
    }
    Ok(GossipReport {
        agents,
        fanout,
        seed,
        topology: topology.clone(),
        connected: topology.is_connected(agents),
        converged_at,
        adoptions,
    })
}

pub fn cmd_gossip_demo(args: &GossipArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let topology = match &args.adjacency {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let lists: Vec<Vec<usize>> =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("`--adjacency`: {e}")))?;
            Topology::Adjacency(lists)
        }
        None => match args.topology.as_str() {
            "complete" => Topology::Complete,
            "ring" => Topology::Ring,
            other => return Err(CliError::Config(format!("`--topology`: unknown topology `{other}`"))),
        },
    };
    let report = gossip_demo(args.agents, &topology, args.fanout, args.rounds, args.seed)?;

    let mut text = String::from("round  adopted\n");
    for (i, a) in report.adoptions.iter().enumerate() {
        text.push_str(&format!("{:>5}  {:>7}\n", i + 1, a));
    }
    match report.converged_at {
        Some(r) => text.push_str(&format!("converged at round {r}\n")),
        None => text.push_str(&format!("not converged after {} rounds\n", report.adoptions.len())),
    }
    print(out, &text)?;
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        write_json(&dir.join("gossip.json"), &report)?;
    }
    if args.require_convergence && report.converged_at.is_none() {
        let why = if report.connected {
            "round limit reached"
        } else {
            "topology is disconnected, so some agents can never hear from others"
        };
        return Err(CliError::Assertion(format!(
            "stores did not converge within {} rounds: {why}",
            args.rounds
        )));
    }
    Ok(())
}

fn planner_view(file: &ScenarioFile, agent: Option<u32>) -> Result<CmsStore, CliError> {
    if file.agents.is_empty() {
        return Err(CliError::Config("`agents`: scenario defines no agents".into()));
    }
    let (stores, _) = file.bootstrap().map_err(|e| CliError::Assertion(e.to_string()))?;
    match agent {
        None => Ok(stores.into_iter().next().expect("non-empty")),
        Some(id) => stores
            .into_iter()
            .find(|s| s.owner() == AgentId(id))
            .ok_or_else(|| CliError::Config(format!("`--agent`: no agent {id} in scenario"))),
    }
}

pub fn cmd_resolve(args: &ResolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ScenarioFile::load(&args.scenario)?;
    let name = parse_name(&args.name).map_err(|e| CliError::Config(format!("name `{}`: {e}", args.name)))?;
    let view = planner_view(&file, args.agent)?;
    let candidates = edgecollab_core::resolve(&name, &view, file.planner.freshness_horizon);
    let mut text = format!("{:<6} {:<40} {:<6} {:>6}\n", "agent", "advertised", "fresh", "load");
    for c in &candidates {
        text.push_str(&format!(
            "{:<6} {:<40} {:<6} {:>6}\n",
            c.agent_id.to_string(),
            c.advertisement.name.to_string(),
            c.fresh,
            c.load.map_or("-".to_string(), |l| format!("{l:.2}"))
        ));
    }
    if candidates.is_empty() {
        text.push_str("no agent advertises a match\n");
    }
    print(out, &text)
}

pub fn cmd_orchestrate(args: &OrchestrateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ScenarioFile::load(&args.scenario)?;
    let task = load_task(&args.task)?;
    let view = planner_view(&file, args.agent)?;
    let plan = plan(&task, &view, &file.rule_table(), &file.planner).map_err(|e| match e {
        PlanError::Invalid(c) => CliError::Config(c.to_string()),
        unresolved => CliError::Assertion(unresolved.to_string()),
    })?;

    let scenario = file.scenario();
    let mut engine = Engine::new(
        scenario.fleet.clone(),
        scenario.pricing.clone(),
        scenario.policy_config(),
        scenario.seed,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let execution = execute_plan(&plan, &mut engine, &file.execution)?;

    let mut text = format!("plan for {}\n", plan.task_id);
    for (i, stage) in plan.stages.iter().enumerate() {
        for a in &stage.assignments {
            text.push_str(&format!(
                "stage {i}  {:<20} -> agent {:<4} {:<40} {}\n",
                a.subtask,
                a.agent.to_string(),
                a.capability.to_string(),
                a.note
            ));
        }
    }
    text.push_str("\nexecution\n");
    for r in &execution.subtasks {
        let start = r.started_at.map_or("-".to_string(), |s| s.to_string());
        let done = r.outcome.completion_time.map_or("-".to_string(), |s| s.to_string());
        text.push_str(&format!(
            "stage {}  {:<20} start {:>8} done {:>8}  {}\n",
            r.stage,
            r.subtask,
            start,
            done,
            serde_json::to_string(&r.outcome.fate).expect("fate serializes")
        ));
    }
    let status = match &execution.status {
        ExecutionStatus::Complete => "complete".to_string(),
        ExecutionStatus::Partial { rejected, skipped } => {
            format!(
                "partial (rejected: {}; skipped: {})",
                rejected.join(", "),
                skipped.join(", ")
            )
        }
    };
    text.push_str(&format!(
        "makespan {} ms, cloud cost {}, {status}\n",
        execution.makespan, execution.total_cloud_cost
    ));
    print(out, &text)?;

    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        write_json(&dir.join("plan.json"), &plan)?;
        write_json(&dir.join("execution.json"), &execution)?;
    }
    Ok(())
}
