//! Task classification, decomposition and execution.
//!
//! A [`TaskDescriptor`] is a tree: atomic leaves, sequential chains and
//! parallel fan-outs. Planning classifies every leaf, finds an agent
//! advertising the capability the leaf needs, and lays the leaves out in
//! stages. Executing a plan submits stage after stage to the simulator, each
//! stage starting once the previous one has fully completed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cms::{CmsStore, KEY_NODE_CONCURRENCY, KEY_NODE_DECODE_RATE};
use crate::discovery::{advertisements, resolve, SemanticName, DEFAULT_FRESHNESS_HORIZON};
use crate::engine::{Engine, Routing};
use crate::error::{ConfigError, EngineError};
use crate::model::{AgentId, Fate, Millis, Money, NodeSpec, RequestId, RequestOutcome, RequestSpec};
use crate::workload::InputTokenRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cooperation {
    /// Sharing observations or embeddings.
    Data,
    /// Splitting work across agents.
    Computation,
    /// Asking a peer with the missing expertise.
    Knowledge,
}

impl fmt::Display for Cooperation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cooperation::Data => "data",
            Cooperation::Computation => "computation",
            Cooperation::Knowledge => "knowledge",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    #[default]
    Atomic,
    Sequential(Vec<TaskDescriptor>),
    Parallel(Vec<TaskDescriptor>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDescriptor {
    pub id: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub required_capabilities: Vec<SemanticName>,
    #[serde(default)]
    pub est_output_tokens: u32,
    #[serde(default)]
    pub mode: TaskMode,
}

impl TaskDescriptor {
    pub fn atomic(id: &str, tags: &[&str], est_output_tokens: u32) -> Self {
        Self {
            id: id.to_string(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            required_capabilities: Vec::new(),
            est_output_tokens,
            mode: TaskMode::Atomic,
        }
    }

    pub fn sequential(id: &str, children: Vec<TaskDescriptor>) -> Self {
        Self {
            mode: TaskMode::Sequential(children),
            ..Self::atomic(id, &[], 0)
        }
    }

    pub fn parallel(id: &str, children: Vec<TaskDescriptor>) -> Self {
        Self {
            mode: TaskMode::Parallel(children),
            ..Self::atomic(id, &[], 0)
        }
    }

    pub fn children(&self) -> &[TaskDescriptor] {
        match &self.mode {
            TaskMode::Atomic => &[],
            TaskMode::Sequential(c) | TaskMode::Parallel(c) => c,
        }
    }

    /// Atomic descendants in depth-first order.
    pub fn leaves(&self) -> Vec<&TaskDescriptor> {
        match &self.mode {
            TaskMode::Atomic => vec![self],
            _ => self.children().iter().flat_map(TaskDescriptor::leaves).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut ids = BTreeSet::new();
        self.validate_inner(&mut ids)
    }

    fn validate_inner<'a>(&'a self, ids: &mut BTreeSet<&'a str>) -> Result<(), ConfigError> {
        let field = |what: &str| format!("task[{}].{what}", self.id);
        if self.id.is_empty() {
            return Err(ConfigError::new("task.id", "must not be empty"));
        }
        if !ids.insert(&self.id) {
            return Err(ConfigError::new(field("id"), "duplicate task id"));
        }
        match &self.mode {
            TaskMode::Atomic => {
                if self.tags.is_empty() && self.required_capabilities.is_empty() {
                    return Err(ConfigError::new(
                        field("tags"),
                        "atomic task needs a tag or a required capability",
                    ));
                }
                if self.est_output_tokens == 0 {
                    return Err(ConfigError::new(field("est_output_tokens"), "must be at least 1"));
                }
            }
            TaskMode::Sequential(children) | TaskMode::Parallel(children) => {
                if children.is_empty() {
                    return Err(ConfigError::new(field("mode"), "composite task needs children"));
                }
                for child in children {
                    child.validate_inner(ids)?;
                }
            }
        }
        Ok(())
    }

    /// Leaves grouped into execution stages: a sequential node concatenates
    /// its children's stages, a parallel node overlays them.
    pub fn stages(&self) -> Vec<Vec<&TaskDescriptor>> {
        match &self.mode {
            TaskMode::Atomic => vec![vec![self]],
            TaskMode::Sequential(children) => children.iter().flat_map(TaskDescriptor::stages).collect(),
            TaskMode::Parallel(children) => {
                let mut merged: Vec<Vec<&TaskDescriptor>> = Vec::new();
                for child in children {
                    for (i, stage) in child.stages().into_iter().enumerate() {
                        if merged.len() <= i {
                            merged.push(Vec::new());
                        }
                        merged[i].extend(stage);
                    }
                }
                merged
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub tag: String,
    pub cooperation: Cooperation,
    #[serde(default)]
    pub capabilities: Vec<SemanticName>,
}

/// Ordered tag rules; the first rule whose tag the task carries wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleTable {
    pub rules: Vec<Rule>,
    /// Output-token estimate that maps to complexity 1.0.
    #[serde(default = "default_ceiling")]
    pub complexity_ceiling: u32,
}

fn default_ceiling() -> u32 {
    500
}

impl Default for RuleTable {
    fn default() -> Self {
        let rule = |tag: &str, cooperation, cap: &str| Rule {
            tag: tag.to_string(),
            cooperation,
            capabilities: vec![cap.parse().expect("built-in name")],
        };
        Self {
            rules: vec![
                rule("arithmetic", Cooperation::Knowledge, "knowledge.gpt/arithmetic"),
                rule(
                    "embedding_lookup",
                    Cooperation::Data,
                    "data.gpt/domain/processed_embeddings",
                ),
                rule(
                    "task_distribution",
                    Cooperation::Computation,
                    "computation.gpt/task_distribution",
                ),
            ],
            complexity_ceiling: default_ceiling(),
        }
    }
}

impl RuleTable {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rules.is_empty() {
            return Err(ConfigError::new("rules", "rule table must not be empty"));
        }
        if self.complexity_ceiling == 0 {
            return Err(ConfigError::new("rules.complexity_ceiling", "must be positive"));
        }
        Ok(())
    }

    /// Rules of `self` first, then those of `other`.
    pub fn extended_with(&self, other: &RuleTable) -> RuleTable {
        RuleTable {
            rules: self.rules.iter().chain(&other.rules).cloned().collect(),
            complexity_ceiling: self.complexity_ceiling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub cooperation: Cooperation,
    /// `est_output_tokens / complexity_ceiling`, clamped to `[0, 1]`.
    pub complexity: f64,
    pub resolved_capabilities: Vec<SemanticName>,
    pub matched_tag: Option<String>,
}

/// Turns a task into a [`Classification`]. [`RuleTable`] is the built-in
/// implementation; a model-backed classifier can implement this too.
pub trait Classifier {
    fn classify(&self, task: &TaskDescriptor) -> Classification;
}

impl Classifier for RuleTable {
    fn classify(&self, task: &TaskDescriptor) -> Classification {
        let complexity = (f64::from(task.est_output_tokens) / f64::from(self.complexity_ceiling.max(1))).min(1.0);
        let rule = self.rules.iter().find(|r| task.tags.contains(&r.tag));
        let mut resolved: Vec<SemanticName> = rule.map(|r| r.capabilities.clone()).unwrap_or_default();
        for cap in &task.required_capabilities {
            if !resolved.contains(cap) {
                resolved.push(cap.clone());
            }
        }
        Classification {
            cooperation: rule.map_or(Cooperation::Knowledge, |r| r.cooperation),
            complexity,
            resolved_capabilities: resolved,
            matched_tag: rule.map(|r| r.tag.clone()),
        }
    }
}

pub fn classify(task: &TaskDescriptor, rules: &RuleTable) -> Classification {
    rules.classify(task)
}

/// Required capabilities the agent does not cover. An owned capability
/// covers a requirement when it is the same name or a more general one
/// (its path is a prefix of the requirement's path).
pub fn detect_gap(owned: &[SemanticName], classification: &Classification) -> Vec<SemanticName> {
    classification
        .resolved_capabilities
        .iter()
        .filter(|required| !owned.iter().any(|o| o.matches_as_owner(required)))
        .cloned()
        .collect()
}

impl SemanticName {
    fn matches_as_owner(&self, required: &SemanticName) -> bool {
        self.category == required.category
            && self.authority == required.authority
            && required.path.starts_with(&self.path)
    }
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Computation leaves below this complexity go to the weakest matching agent.
    pub lightweight_threshold: f64,
    pub freshness_horizon: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            lightweight_threshold: 0.3,
            freshness_horizon: DEFAULT_FRESHNESS_HORIZON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub subtask: String,
    pub agent: AgentId,
    /// Advertised capability the agent was matched on.
    pub capability: SemanticName,
    /// Capability the subtask required.
    pub requirement: SemanticName,
    pub cooperation: Cooperation,
    pub complexity: f64,
    pub est_output_tokens: u32,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Stage {
    pub assignments: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TaskPlan {
    pub task_id: String,
    pub stages: Vec<Stage>,
}

impl TaskPlan {
    pub fn assignments(&self) -> impl Iterator<Item = (usize, &Assignment)> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.assignments.iter().map(move |a| (i, a)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedLeaf {
    pub subtask: String,
    pub capabilities: Vec<SemanticName>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error(transparent)]
    Invalid(#[from] ConfigError),
    #[error("cannot assign subtasks: {}", describe_unresolved(.0))]
    Unresolved(Vec<UnresolvedLeaf>),
}

fn describe_unresolved(leaves: &[UnresolvedLeaf]) -> String {
    leaves
        .iter()
        .map(|l| {
            if l.capabilities.is_empty() {
                format!("{} (no capability could be derived)", l.subtask)
            } else {
                let caps: Vec<String> = l.capabilities.iter().map(ToString::to_string).collect();
                format!("{} needs {}", l.subtask, caps.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Publish the figures the planner uses to rank agents by capability.
pub fn publish_node_profile(store: &mut CmsStore, node: &NodeSpec) -> Result<(), crate::cms::CmsError> {
    store.put_local(KEY_NODE_DECODE_RATE, node.decode_rate)?;
    store.put_local(KEY_NODE_CONCURRENCY, f64::from(node.concurrency_limit))?;
    Ok(())
}

/// `decode_rate * concurrency_limit` as advertised in the CMS.
pub fn advertised_capability_score(view: &CmsStore, agent: AgentId) -> Option<f64> {
    let get = |key| view.get(agent, key).and_then(|e| e.payload.as_number());
    Some(get(KEY_NODE_DECODE_RATE)? * get(KEY_NODE_CONCURRENCY)?)
}

/// Names advertised by each agent in `view`.
fn advertised_by_agent(view: &CmsStore) -> BTreeMap<AgentId, Vec<SemanticName>> {
    let mut map: BTreeMap<AgentId, Vec<SemanticName>> = BTreeMap::new();
    for ad in advertisements(view) {
        map.entry(ad.agent_id).or_default().push(ad.name);
    }
    map
}

fn assign_leaf(
    leaf: &TaskDescriptor,
    classification: &Classification,
    view: &CmsStore,
    by_agent: &BTreeMap<AgentId, Vec<SemanticName>>,
    config: &PlannerConfig,
) -> Result<Assignment, UnresolvedLeaf> {
    let unresolved = |capabilities: Vec<SemanticName>| UnresolvedLeaf {
        subtask: leaf.id.clone(),
        capabilities,
    };
    let Some(primary) = classification.resolved_capabilities.first() else {
        return Err(unresolved(Vec::new()));
    };
    let covers_rest = |agent: AgentId| {
        let owned = by_agent.get(&agent).map(Vec::as_slice).unwrap_or_default();
        classification.resolved_capabilities[1..]
            .iter()
            .all(|req| owned.iter().any(|o| req.matches(o)))
    };
    let candidates: Vec<_> = resolve(primary, view, config.freshness_horizon)
        .into_iter()
        .filter(|c| covers_rest(c.agent_id))
        .collect();
    if candidates.is_empty() {
        let missing: Vec<SemanticName> = classification
            .resolved_capabilities
            .iter()
            .filter(|req| !by_agent.values().flatten().any(|o| req.matches(o)))
            .cloned()
            .collect();
        return Err(unresolved(if missing.is_empty() {
            classification.resolved_capabilities.clone()
        } else {
            missing
        }));
    }

    let lightweight = classification.cooperation == Cooperation::Computation
        && classification.complexity < config.lightweight_threshold;
    let (chosen, note) = if lightweight {
        let weakest = candidates
            .iter()
            .enumerate()
            .min_by(|(ia, a), (ib, b)| {
                let sa = advertised_capability_score(view, a.agent_id).unwrap_or(f64::INFINITY);
                let sb = advertised_capability_score(view, b.agent_id).unwrap_or(f64::INFINITY);
                sa.total_cmp(&sb).then(ia.cmp(ib))
            })
            .map(|(_, c)| c)
            .expect("non-empty");
        (
            weakest,
            format!(
                "lightweight ({:.2} < {:.2}): lowest-capability of {} candidates",
                classification.complexity,
                config.lightweight_threshold,
                candidates.len()
            ),
        )
    } else {
        (&candidates[0], format!("top-ranked of {} candidates", candidates.len()))
    };
    Ok(Assignment {
        subtask: leaf.id.clone(),
        agent: chosen.agent_id,
        capability: chosen.advertisement.name.clone(),
        requirement: primary.clone(),
        cooperation: classification.cooperation,
        complexity: classification.complexity,
        est_output_tokens: leaf.est_output_tokens,
        note: format!("{} cooperation; {note}", classification.cooperation),
    })
}

/// Build the execution plan of `task` from what `view` knows about peers.
pub fn plan(
    task: &TaskDescriptor,
    view: &CmsStore,
    classifier: &dyn Classifier,
    config: &PlannerConfig,
) -> Result<TaskPlan, PlanError> {
    task.validate()?;
    let by_agent = advertised_by_agent(view);
    let mut stages = Vec::new();
    let mut unresolved = Vec::new();
    for leaves in task.stages() {
        let mut stage = Stage::default();
        for leaf in leaves {
            let classification = classifier.classify(leaf);
            match assign_leaf(leaf, &classification, view, &by_agent, config) {
                Ok(a) => stage.assignments.push(a),
                Err(u) => unresolved.push(u),
            }
        }
        stages.push(stage);
    }
    if !unresolved.is_empty() {
        return Err(PlanError::Unresolved(unresolved));
    }
    Ok(TaskPlan {
        task_id: task.id.clone(),
        stages,
    })
}

/// Every leaf of `task` appears exactly once in `plan`, and nothing else does.
pub fn check_completeness(task: &TaskDescriptor, plan: &TaskPlan) -> Result<(), String> {
    let mut counts: BTreeMap<&str, usize> = task.leaves().iter().map(|l| (l.id.as_str(), 0)).collect();
    for (_, a) in plan.assignments() {
        match counts.get_mut(a.subtask.as_str()) {
            Some(c) => *c += 1,
            None => return Err(format!("plan contains unknown subtask {}", a.subtask)),
        }
    }
    match counts.iter().find(|(_, &c)| c != 1) {
        Some((id, c)) => Err(format!("subtask {id} appears {c} times")),
        None => Ok(()),
    }
}

/// Every assigned agent advertises a name matching the subtask requirement.
pub fn check_assignment_validity(plan: &TaskPlan, view: &CmsStore) -> Result<(), String> {
    let by_agent = advertised_by_agent(view);
    for (_, a) in plan.assignments() {
        let owned = by_agent.get(&a.agent).map(Vec::as_slice).unwrap_or_default();
        if !owned.iter().any(|o| a.requirement.matches(o)) {
            return Err(format!("agent {} does not advertise {}", a.agent, a.requirement));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutionOptions {
    pub input_tokens: InputTokenRule,
    pub deadline: Millis,
    pub origin: AgentId,
}

impl Default for ExecutionOptions {
    fn default() -> Self {
        Self {
            input_tokens: InputTokenRule::Fixed(0),
            deadline: 60_000,
            origin: AgentId(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskRecord {
    pub subtask: String,
    pub stage: usize,
    pub agent: AgentId,
    pub request_id: RequestId,
    pub submitted_at: Millis,
    /// `None` when rejected.
    pub started_at: Option<Millis>,
    pub outcome: RequestOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExecutionStatus {
    Complete,
    /// A stage had rejections; later stages were not submitted.
    Partial {
        rejected: Vec<String>,
        skipped: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanExecution {
    pub task_id: String,
    pub subtasks: Vec<SubtaskRecord>,
    /// First start to last completion.
    pub makespan: Millis,
    pub total_cloud_cost: Money,
    pub status: ExecutionStatus,
}

/// Run `plan` on `engine`, stage by stage, starting at the engine's clock.
pub fn execute_plan(
    plan: &TaskPlan,
    engine: &mut Engine,
    options: &ExecutionOptions,
) -> Result<PlanExecution, EngineError> {
    let mut records: Vec<SubtaskRecord> = Vec::new();
    let mut rejected = Vec::new();
    let mut skipped = Vec::new();
    let mut stage_start = engine.now();

    for (index, stage) in plan.stages.iter().enumerate() {
        if !rejected.is_empty() {
            skipped.extend(stage.assignments.iter().map(|a| a.subtask.clone()));
            continue;
        }
        let mut submitted = Vec::new();
        for a in &stage.assignments {
            let id = engine.fresh_request_id();
            engine.submit(
                RequestSpec {
                    id,
                    arrival_time: stage_start,
                    input_tokens: options.input_tokens.input_for(a.est_output_tokens),
                    output_tokens: a.est_output_tokens,
                    deadline: options.deadline,
                    origin: options.origin,
                },
                Routing::Pinned(a.agent.into()),
            )?;
            submitted.push((a, id));
        }
        engine.run_until_idle()?;

        let mut stage_end = stage_start;
        for (a, id) in submitted {
            let outcome = engine
                .outcome(id)
                .cloned()
                .ok_or_else(|| EngineError::Invariant(format!("subtask {} has no outcome", a.subtask)))?;
            let started_at = match outcome.fate {
                Fate::Rejected { .. } => {
                    rejected.push(a.subtask.clone());
                    None
                }
                _ => Some(stage_start + outcome.queue_wait),
            };
            if let Some(done) = outcome.completion_time {
                stage_end = stage_end.max(done);
            }
            records.push(SubtaskRecord {
                subtask: a.subtask.clone(),
                stage: index,
                agent: a.agent,
                request_id: id,
                submitted_at: stage_start,
                started_at,
                outcome,
            });
        }
        stage_start = stage_end;
    }

    let first_start = records.iter().filter_map(|r| r.started_at).min();
    let last_done = records.iter().filter_map(|r| r.outcome.completion_time).max();
    let makespan = match (first_start, last_done) {
        (Some(s), Some(e)) => e - s,
        _ => 0,
    };
    let total_cloud_cost = records
        .iter()
        .map(|r| match r.outcome.fate {
            Fate::ProcessedCloud { cost } => cost,
            _ => Money::ZERO,
        })
        .sum();
    let status = if rejected.is_empty() {
        ExecutionStatus::Complete
    } else {
        ExecutionStatus::Partial { rejected, skipped }
    };
    Ok(PlanExecution {
        task_id: plan.task_id.clone(),
        subtasks: records,
        makespan,
        total_cloud_cost,
        status,
    })
}

/// No subtask of stage k+1 starts before every subtask of stage k finished.
pub fn check_stage_ordering(execution: &PlanExecution) -> Result<(), String> {
    let mut stage_done: BTreeMap<usize, Millis> = BTreeMap::new();
    for r in &execution.subtasks {
        if let Some(done) = r.outcome.completion_time {
            let e = stage_done.entry(r.stage).or_default();
            *e = (*e).max(done);
        }
    }
    for r in &execution.subtasks {
        let Some(start) = r.started_at else { continue };
        if let Some((&stage, &done)) = stage_done.range(..r.stage).next_back() {
            if start < done {
                return Err(format!(
                    "subtask {} (stage {}) started at {start} before stage {stage} finished at {done}",
                    r.subtask, r.stage
                ));
            }
        }
    }
    Ok(())
}
