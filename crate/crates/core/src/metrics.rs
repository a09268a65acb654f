//! Per-run aggregates.

use serde::{Deserialize, Serialize};

use crate::model::{Fate, Millis, Money, NodeId, NodeState, RejectReason, RequestOutcome};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionBreakdown {
    pub cloud_saturated: u64,
    pub cloud_disabled: u64,
    pub deadline_exceeded: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node: NodeId,
    pub served: u64,
    pub tokens: u64,
}

/// Nearest-rank percentiles of queueing wait over processed requests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaitPercentiles {
    pub p50: Millis,
    pub p95: Millis,
    pub p99: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub policy: String,
    pub seed: u64,
    pub arrivals: u64,
    pub processed_edge: u64,
    pub processed_cloud: u64,
    pub rejected: u64,
    pub rejected_by_reason: RejectionBreakdown,
    pub total_cloud_cost: Money,
    pub nodes: Vec<NodeSummary>,
    pub queue_wait: WaitPercentiles,
}

impl MetricsSummary {
    /// Every arrival has exactly one fate.
    pub fn is_conserved(&self) -> bool {
        self.processed_edge + self.processed_cloud + self.rejected == self.arrivals
    }
}

/// Nearest-rank percentile of an ascending slice; 0 when empty.
pub fn percentile(sorted: &[Millis], pct: u32) -> Millis {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (u64::from(pct) * sorted.len() as u64).div_ceil(100).max(1) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn summarize(
    policy: &str,
    seed: u64,
    arrivals: u64,
    outcomes: &[RequestOutcome],
    nodes: &[NodeState],
) -> MetricsSummary {
    let mut summary = MetricsSummary {
        policy: policy.to_string(),
        seed,
        arrivals,
        processed_edge: 0,
        processed_cloud: 0,
        rejected: 0,
        rejected_by_reason: RejectionBreakdown::default(),
        total_cloud_cost: Money::ZERO,
        nodes: nodes
            .iter()
            .map(|n| NodeSummary {
                node: n.id(),
                served: n.served_requests,
                tokens: n.served_tokens,
            })
            .collect(),
        queue_wait: WaitPercentiles::default(),
    };
    let mut waits = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o.fate {
            Fate::ProcessedEdge { .. } => {
                summary.processed_edge += 1;
                waits.push(o.queue_wait);
            }
            Fate::ProcessedCloud { cost } => {
                summary.processed_cloud += 1;
                summary.total_cloud_cost += cost;
                waits.push(o.queue_wait);
            }
            Fate::Rejected { reason } => {
                summary.rejected += 1;
                let slot = match reason {
                    RejectReason::CloudSaturated => &mut summary.rejected_by_reason.cloud_saturated,
                    RejectReason::CloudDisabled => &mut summary.rejected_by_reason.cloud_disabled,
                    RejectReason::DeadlineExceeded => &mut summary.rejected_by_reason.deadline_exceeded,
                };
                *slot += 1;
            }
        }
    }
    waits.sort_unstable();
    summary.queue_wait = WaitPercentiles {
        p50: percentile(&waits, 50),
        p95: percentile(&waits, 95),
        p99: percentile(&waits, 99),
    };
    summary
}
