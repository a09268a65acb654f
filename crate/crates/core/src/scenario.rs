//! Scenario description and the shipped reference configuration.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cms::Topology;
use crate::error::ConfigError;
use crate::model::{CloudPricing, Millis, Money, NodeId, NodeSpec};
use crate::scheduler::{PolicyConfig, PolicyKind, WeightedMode};
use crate::workload::WorkloadConfig;

/// Periodic CMS gossip among the agents running on the fleet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GossipConfig {
    pub period: Millis,
    pub fanout: usize,
    pub topology: Topology,
}

impl Default for GossipConfig {
    fn default() -> Self {
        Self {
            period: 10_000,
            fanout: 3,
            topology: Topology::Complete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub policy: PolicyKind,
    pub weighted_mode: WeightedMode,
    pub fleet: Vec<NodeSpec>,
    pub workload: WorkloadConfig,
    pub pricing: CloudPricing,
    pub gossip: Option<GossipConfig>,
}

pub(crate) fn validate_fleet(fleet: &[NodeSpec]) -> Result<(), ConfigError> {
    if fleet.is_empty() {
        return Err(ConfigError::new("fleet", "at least one node is required"));
    }
    let mut ids = BTreeSet::new();
    for (i, node) in fleet.iter().enumerate() {
        let path = format!("fleet[{i}]");
        node.validate(&path)?;
        if !ids.insert(node.id) {
            return Err(ConfigError::new(
                format!("{path}.id"),
                format!("duplicate node id {}", node.id),
            ));
        }
    }
    Ok(())
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_fleet(&self.fleet)?;
        self.workload.validate()?;
        self.pricing.validate("pricing")?;
        if let Some(g) = &self.gossip {
            if g.period == 0 {
                return Err(ConfigError::new("gossip.period", "must be positive"));
            }
            if g.fanout == 0 {
                return Err(ConfigError::new("gossip.fanout", "must be at least 1"));
            }
            g.topology
                .validate(self.fleet.len())
                .map_err(|e| ConfigError::new("gossip.topology", e.to_string()))?;
        }
        Ok(())
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            kind: self.policy,
            weighted_mode: self.weighted_mode,
        }
    }

    pub fn with_policy(&self, policy: PolicyKind) -> Scenario {
        Scenario { policy, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Scenario {
        Scenario { seed, ..self.clone() }
    }

    /// Eight heterogeneous nodes under a one-hour bursty workload.
    ///
    /// Two high-capability nodes (40 tok/s decode, 4 slots) and six
    /// low-capability nodes (12 tok/s decode, 2 slots). Prices are
    /// illustrative per-token figures, not a provider quote.
    pub fn reference() -> Scenario {
        let high = |id: u32| NodeSpec {
            id: NodeId(id),
            label: "agx-orin".into(),
            decode_rate: 40.0,
            prefill_rate: 400.0,
            concurrency_limit: 4,
            queue_capacity: 2,
        };
        let low = |id: u32| NodeSpec {
            id: NodeId(id),
            label: "orin-nano".into(),
            decode_rate: 12.0,
            prefill_rate: 120.0,
            concurrency_limit: 2,
            queue_capacity: 1,
        };
        let mut fleet = vec![high(0), high(1)];
        fleet.extend((2..8).map(low));
        Scenario {
            seed: 7,
            policy: PolicyKind::LoadAware,
            weighted_mode: WeightedMode::Proportional,
            fleet,
            workload: WorkloadConfig {
                duration: 3_600_000,
                base_rate: 1.0,
                burst_period: 600_000,
                burst_duration: 60_000,
                burst_multiplier: 4.0,
                deadline: 20_000,
                ..WorkloadConfig::default()
            },
            pricing: CloudPricing {
                rate_in: Money::from_nanos(30_000),
                rate_out: Money::from_nanos(60_000),
                rtt: 200,
                cloud_decode_rate: 50.0,
                max_inflight: 16,
            },
            gossip: None,
        }
    }
}
