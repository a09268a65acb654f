//! Scenario and task files.
//!
//! Scenarios are TOML, tasks are JSON. Unknown fields are rejected and every
//! error carries the dotted path of the offending field.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cms::{converged, gossip_round, CmsStore, Payload};
use crate::discovery::{advertise, SemanticName};
use crate::engine::TraceMode;
use crate::error::ConfigError;
use crate::model::{AgentId, CloudPricing, NodeId, NodeSpec};
use crate::orchestrator::{publish_node_profile, ExecutionOptions, PlannerConfig, RuleTable, TaskDescriptor};
use crate::rng;
use crate::scenario::{GossipConfig, Scenario};
use crate::scheduler::{PolicyKind, WeightedMode};
use crate::workload::WorkloadConfig;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvertisedCapability {
    pub name: SemanticName,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// An agent and what it publishes at start-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub id: AgentId,
    /// Node hosting the agent; defaults to the node with the same id.
    #[serde(default)]
    pub node: Option<NodeId>,
    #[serde(default)]
    pub advertise: Vec<AdvertisedCapability>,
    /// Extra CMS keys, e.g. `model.architecture`.
    #[serde(default)]
    pub publish: BTreeMap<String, Payload>,
}

impl AgentProfile {
    pub fn node_id(&self) -> NodeId {
        self.node.unwrap_or(self.id.into())
    }
}

fn default_policies() -> Vec<PolicyKind> {
    PolicyKind::ALL.to_vec()
}

/// Everything one scenario file can hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub weighted_mode: WeightedMode,
    /// Policies for `compare`.
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default)]
    pub trace_mode: TraceMode,
    pub fleet: Vec<NodeSpec>,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub pricing: CloudPricing,
    #[serde(default)]
    pub gossip: Option<GossipConfig>,
    #[serde(default)]
    pub agents: Vec<AgentProfile>,
    /// Replaces the built-in classification rules when present.
    #[serde(default)]
    pub rules: Option<RuleTable>,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub execution: ExecutionOptions,
}

fn default_policy() -> PolicyKind {
    PolicyKind::LoadAware
}

/// Rounds allowed for the start-up gossip that spreads agent profiles.
pub const BOOTSTRAP_ROUND_LIMIT: usize = 1000;

impl ScenarioFile {
    pub fn from_toml_str(text: &str) -> Result<ScenarioFile, ConfigError> {
        let de = toml::de::Deserializer::parse(text).map_err(|e| ConfigError::new("<toml>", e.to_string()))?;
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().message().trim(),
            )
        })?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<ScenarioFile, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_toml_str(&text)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario().validate()?;
        if self.policies.is_empty() {
            return Err(ConfigError::new("policies", "at least one policy is required"));
        }
        if let Some(rules) = &self.rules {
            rules.validate()?;
        }
        if !(0.0..=1.0).contains(&self.planner.lightweight_threshold) {
            return Err(ConfigError::new(
                "planner.lightweight_threshold",
                "must be within [0, 1]",
            ));
        }
        if self.execution.deadline == 0 {
            return Err(ConfigError::new("execution.deadline", "must be positive"));
        }
        let nodes: BTreeSet<NodeId> = self.fleet.iter().map(|n| n.id).collect();
        let mut ids = BTreeSet::new();
        for (i, agent) in self.agents.iter().enumerate() {
            if !ids.insert(agent.id) {
                return Err(ConfigError::new(
                    format!("agents[{i}].id"),
                    format!("duplicate agent id {}", agent.id),
                ));
            }
            if !nodes.contains(&agent.node_id()) {
                return Err(ConfigError::new(
                    format!("agents[{i}].node"),
                    format!("node {} is not in the fleet", agent.node_id()),
                ));
            }
            for (key, value) in &agent.publish {
                if key.is_empty() {
                    return Err(ConfigError::new(format!("agents[{i}].publish"), "empty key"));
                }
                if value.as_number().is_some_and(f64::is_nan) {
                    return Err(ConfigError::new(
                        format!("agents[{i}].publish.{key}"),
                        "NaN is not allowed",
                    ));
                }
            }
        }
        if let Some(g) = &self.gossip {
            if !self.agents.is_empty() {
                g.topology
                    .validate(self.agents.len())
                    .map_err(|e| ConfigError::new("gossip.topology", e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            seed: self.seed,
            policy: self.policy,
            weighted_mode: self.weighted_mode,
            fleet: self.fleet.clone(),
            workload: self.workload.clone(),
            pricing: self.pricing.clone(),
            gossip: self.gossip.clone(),
        }
    }

    pub fn rule_table(&self) -> RuleTable {
        self.rules.clone().unwrap_or_default()
    }

    pub fn gossip_config(&self) -> GossipConfig {
        self.gossip.clone().unwrap_or_default()
    }

    /// Fresh CMS stores holding each agent's own profile and ads, in
    /// `agents` order.
    pub fn agent_stores(&self) -> Vec<CmsStore> {
        self.agents
            .iter()
            .map(|agent| {
                let mut store = CmsStore::new(agent.id);
                if let Some(node) = self.fleet.iter().find(|n| n.id == agent.node_id()) {
                    publish_node_profile(&mut store, node).expect("validated node profile");
                }
                for (key, value) in &agent.publish {
                    store.put_local(key, value.clone()).expect("validated publish entry");
                }
                for ad in &agent.advertise {
                    advertise(&mut store, &ad.name, ad.attributes.clone()).expect("valid advertisement");
                }
                store
            })
            .collect()
    }

    /// Gossip the agent stores until every replica agrees. Returns the
    /// stores and the number of rounds it took.
    pub fn bootstrap(&self) -> Result<(Vec<CmsStore>, usize), ConfigError> {
        let mut stores = self.agent_stores();
        let g = self.gossip_config();
        let mut rng = rng::stream(self.seed, "gossip/bootstrap");
        let rounds = gossip_until_converged(&mut stores, &g, &mut rng, BOOTSTRAP_ROUND_LIMIT)
            .map_err(|e| ConfigError::new("gossip", e))?;
        Ok((stores, rounds))
    }
}

/// Run gossip rounds until the replicas converge.
pub fn gossip_until_converged<R: Rng + ?Sized>(
    stores: &mut [CmsStore],
    gossip: &GossipConfig,
    rng: &mut R,
    limit: usize,
) -> Result<usize, String> {
    let mut rounds = 0;
    while !converged(stores) {
        if rounds == limit {
            return Err(format!("no convergence within {limit} rounds"));
        }
        gossip_round(stores, &gossip.topology, gossip.fanout, rng).map_err(|e| e.to_string())?;
        rounds += 1;
    }
    Ok(rounds)
}

pub fn task_from_json_str(text: &str) -> Result<TaskDescriptor, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let task: TaskDescriptor = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(
            if path == "." { "<root>".into() } else { path },
            e.into_inner().to_string(),
        )
    })?;
    task.validate()?;
    Ok(task)
}

pub fn load_task(path: &Path) -> Result<TaskDescriptor, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(task_from_json_str(&text)?)
}
