//! Cloud fallback: completion latency, in-flight accounting and the cost ledger.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ceil_millis, cloud_cost, CloudPricing, Millis, Money, RequestId, RequestSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudCostRecord {
    pub request_id: RequestId,
    pub dispatched_at: Millis,
    pub completes_at: Millis,
    pub cost: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CloudError {
    #[error("cloud at capacity ({inflight}/{max_inflight} in flight)")]
    AtCapacity { inflight: u32, max_inflight: u32 },
    #[error("cloud completion reported with nothing in flight")]
    NothingInFlight,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudLedger {
    pub inflight: u32,
    pub total_cost: Money,
    pub redirected: u64,
    pub records: Vec<CloudCostRecord>,
}

/// Cloud-side latency: round trip plus decode time.
pub fn cloud_latency(req: &RequestSpec, pricing: &CloudPricing) -> Millis {
    pricing.rtt + ceil_millis(f64::from(req.output_tokens) / pricing.cloud_decode_rate)
}

impl CloudLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Send `req` to the cloud at `now`. Fails if every cloud slot is taken;
    /// the scheduler is expected to have ruled that out.
    pub fn dispatch_cloud(
        &mut self,
        req: &RequestSpec,
        pricing: &CloudPricing,
        now: Millis,
    ) -> Result<CloudCostRecord, CloudError> {
        if self.inflight >= pricing.max_inflight {
            return Err(CloudError::AtCapacity {
                inflight: self.inflight,
                max_inflight: pricing.max_inflight,
            });
        }
        let record = CloudCostRecord {
            request_id: req.id,
            dispatched_at: now,
            completes_at: now + cloud_latency(req, pricing),
            cost: cloud_cost(req, pricing),
        };
        self.inflight += 1;
        self.redirected += 1;
        self.total_cost += record.cost;
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn complete(&mut self) -> Result<(), CloudError> {
        self.inflight = self.inflight.checked_sub(1).ok_or(CloudError::NothingInFlight)?;
        Ok(())
    }

    /// Total recomputed from the individual records.
    pub fn recomputed_total(&self) -> Money {
        self.records.iter().map(|r| r.cost).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AgentId;

    fn req(id: u64, input: u32, output: u32) -> RequestSpec {
        RequestSpec {
            id: RequestId(id),
            arrival_time: 0,
            input_tokens: input,
            output_tokens: output,
            deadline: 1,
            origin: AgentId(0),
        }
    }

    fn pricing(max: u32) -> CloudPricing {
        CloudPricing {
            rate_in: Money::from_nanos(10_000),
            rate_out: Money::from_nanos(30_000),
            rtt: 200,
            cloud_decode_rate: 100.0,
            max_inflight: max,
        }
    }

    #[test]
    fn completion_time_is_rtt_plus_decode() {
        let mut ledger = CloudLedger::new();
        let rec = ledger.dispatch_cloud(&req(1, 100, 100), &pricing(4), 5_000).unwrap();
        assert_eq!(rec.completes_at, 6_200);
        assert_eq!(rec.cost, "0.004".parse().unwrap());
        assert_eq!(ledger.inflight, 1);
    }

    #[test]
    fn zero_rates_still_count_as_redirected() {
        let mut ledger = CloudLedger::new();
        let free = CloudPricing {
            rate_in: Money::ZERO,
            rate_out: Money::ZERO,
            ..pricing(2)
        };
        let rec = ledger.dispatch_cloud(&req(1, 10, 10), &free, 0).unwrap();
        assert_eq!(rec.cost, Money::ZERO);
        assert_eq!(ledger.redirected, 1);
    }

    #[test]
    fn dispatch_over_capacity_fails() {
        let mut ledger = CloudLedger::new();
        ledger.dispatch_cloud(&req(1, 1, 1), &pricing(1), 0).unwrap();
        assert_eq!(
            ledger.dispatch_cloud(&req(2, 1, 1), &pricing(1), 0),
            Err(CloudError::AtCapacity {
                inflight: 1,
                max_inflight: 1
            })
        );
        ledger.complete().unwrap();
        ledger.dispatch_cloud(&req(2, 1, 1), &pricing(1), 0).unwrap();
        assert!(CloudLedger::new().complete().is_err());
    }

    #[test]
    fn running_total_matches_records() {
        let mut ledger = CloudLedger::new();
        for i in 0..50 {
            ledger
                .dispatch_cloud(&req(i, (i * 7) as u32, 1 + (i * 13) as u32), &pricing(100), i)
                .unwrap();
        }
        assert_eq!(ledger.total_cost, ledger.recomputed_total());
    }
}
