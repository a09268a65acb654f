//! Request-allocation policies and the admission rule that turns a policy's
//! choice into an edge placement, a cloud redirection or a rejection.
//!
//! `Random` and `Weighted` pick a target without looking at its occupancy and
//! never probe a second node: if the target is full the request leaves the
//! edge. `LoadAware` picks the least utilized node, so it only leaves the
//! edge when the whole fleet is saturated.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::model::{CloudPricing, NodeId, NodeState, RejectReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Weighted,
    LoadAware,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Random, PolicyKind::Weighted, PolicyKind::LoadAware];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Weighted => "weighted",
            PolicyKind::LoadAware => "load_aware",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(PolicyKind::Random),
            "weighted" => Ok(PolicyKind::Weighted),
            "load_aware" => Ok(PolicyKind::LoadAware),
            other => Err(ConfigError::new(
                "policy",
                format!("unknown policy `{other}` (expected random, weighted or load_aware)"),
            )),
        }
    }
}

/// How the weighted policy turns capability scores into a choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightedMode {
    /// Pick a node with probability proportional to its score.
    #[default]
    Proportional,
    /// Try nodes in descending score order (ties: lower id first) and take
    /// the first one that can admit. Sensitivity option only.
    StrictPriority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default)]
    pub weighted_mode: WeightedMode,
}

impl From<PolicyKind> for PolicyConfig {
    fn from(kind: PolicyKind) -> Self {
        Self {
            kind,
            weighted_mode: WeightedMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "target", rename_all = "snake_case")]
pub enum PlacementDecision {
    Edge(NodeId),
    Cloud,
    Reject(RejectReason),
}

fn empty_fleet() -> ConfigError {
    ConfigError::new("fleet", "at least one node is required")
}

/// Uniform choice over every node, saturated or not.
pub fn select_random<R: Rng + ?Sized>(nodes: &[NodeState], rng: &mut R) -> Result<NodeId, ConfigError> {
    if nodes.is_empty() {
        return Err(empty_fleet());
    }
    Ok(nodes[rng.random_range(0..nodes.len())].id())
}

/// Choice proportional to `decode_rate * concurrency_limit`.
pub fn select_weighted<R: Rng + ?Sized>(nodes: &[NodeState], rng: &mut R) -> Result<NodeId, ConfigError> {
    if nodes.is_empty() {
        return Err(empty_fleet());
    }
    let index = WeightedIndex::new(nodes.iter().map(|n| n.spec.capability_score()))
        .map_err(|e| ConfigError::new("fleet", format!("capability scores unusable: {e}")))?;
    Ok(nodes[index.sample(rng)].id())
}

/// Node with the lowest utilization; ties go to the lowest id.
pub fn select_load_aware(nodes: &[NodeState]) -> Result<NodeId, ConfigError> {
    nodes
        .iter()
        .min_by(|a, b| a.utilization().total_cmp(&b.utilization()).then(a.id().cmp(&b.id())))
        .map(NodeState::id)
        .ok_or_else(empty_fleet)
}

fn select_strict_priority(nodes: &[NodeState]) -> Result<NodeId, ConfigError> {
    let mut order: Vec<&NodeState> = nodes.iter().collect();
    if order.is_empty() {
        return Err(empty_fleet());
    }
    order.sort_by(|a, b| {
        b.spec
            .capability_score()
            .total_cmp(&a.spec.capability_score())
            .then(a.id().cmp(&b.id()))
    });
    Ok(order.iter().find(|n| n.can_admit()).unwrap_or(&order[0]).id())
}

/// Where the request goes once the edge has been ruled out.
pub fn fallback(cloud_inflight: u32, pricing: &CloudPricing) -> PlacementDecision {
    if !pricing.enabled() {
        PlacementDecision::Reject(RejectReason::CloudDisabled)
    } else if cloud_inflight < pricing.max_inflight {
        PlacementDecision::Cloud
    } else {
        PlacementDecision::Reject(RejectReason::CloudSaturated)
    }
}

/// Decide the fate of one arriving request against a fleet snapshot.
pub fn place<R: Rng + ?Sized>(
    policy: PolicyConfig,
    nodes: &[NodeState],
    cloud_inflight: u32,
    pricing: &CloudPricing,
    rng: &mut R,
) -> Result<PlacementDecision, ConfigError> {
    let target = match (policy.kind, policy.weighted_mode) {
        (PolicyKind::Random, _) => select_random(nodes, rng)?,
        (PolicyKind::Weighted, WeightedMode::Proportional) => select_weighted(nodes, rng)?,
        (PolicyKind::Weighted, WeightedMode::StrictPriority) => select_strict_priority(nodes)?,
        (PolicyKind::LoadAware, _) => select_load_aware(nodes)?,
    };
    let node = nodes
        .iter()
        .find(|n| n.id() == target)
        .expect("selected node is in the fleet");
    if node.can_admit() {
        Ok(PlacementDecision::Edge(target))
    } else {
        Ok(fallback(cloud_inflight, pricing))
    }
}
