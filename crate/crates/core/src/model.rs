//! Domain types and the time/cost arithmetic every other module builds on.
//!
//! Simulated time is integer milliseconds ([`Millis`]). Money is an exact
//! fixed-point decimal ([`Money`]) so cost totals never drift.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ConfigError;

/// Milliseconds since scenario start.
pub type Millis = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

/// Identifier of a collaborating agent. Agent `n` runs on node `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl From<AgentId> for NodeId {
    fn from(a: AgentId) -> Self {
        NodeId(a.0)
    }
}

impl From<NodeId> for AgentId {
    fn from(n: NodeId) -> Self {
        AgentId(n.0)
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ---------------------------------------------------------------------------
// Money
// ---------------------------------------------------------------------------

/// Exact non-negative currency amount, stored in units of 10⁻⁹.
///
/// Serialized as a decimal string (`"0.007"`) so JSON and CSV round-trip
/// without loss. Deserialization also accepts plain numbers, which are
/// rounded to the nearest 10⁻⁹.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(u64);

impl Money {
    pub const ZERO: Money = Money(0);
    /// Sub-units per whole currency unit.
    pub const SCALE: u64 = 1_000_000_000;
    const FRACTION_DIGITS: usize = 9;

    pub const fn from_nanos(nanos: u64) -> Self {
        Money(nanos)
    }

    pub const fn nanos(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Price of `count` units at `self` per unit.
    pub fn times(self, count: u64) -> Money {
        Money(self.0.checked_mul(count).expect("money overflow"))
    }

    /// Lossy conversion for plotting and averages.
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    /// Nearest representable amount to a float; `None` for negative or
    /// non-finite input.
    pub fn from_f64(value: f64) -> Option<Money> {
        if !value.is_finite() || value < 0.0 {
            return None;
        }
        let scaled = (value * Self::SCALE as f64).round();
        if scaled > u64::MAX as f64 {
            return None;
        }
        Some(Money(scaled as u64))
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0.checked_add(rhs.0).expect("money overflow"))
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        *self = *self + rhs;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        iter.copied().sum()
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / Self::SCALE;
        let frac = self.0 % Self::SCALE;
        if frac == 0 {
            return write!(f, "{whole}");
        }
        let digits = format!("{frac:0width$}", width = Self::FRACTION_DIGITS);
        write!(f, "{whole}.{}", digits.trim_end_matches('0'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid money amount `{0}`")]
pub struct ParseMoneyError(String);

impl FromStr for Money {
    type Err = ParseMoneyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseMoneyError(s.to_string());
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() && frac.is_empty() {
            return Err(err());
        }
        if !whole.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let frac = frac.trim_end_matches('0');
        if frac.len() > Self::FRACTION_DIGITS {
            return Err(err());
        }
        let whole: u64 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| err())?
        };
        let mut frac_units: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| err())?
        };
        for _ in frac.len()..Self::FRACTION_DIGITS {
            frac_units *= 10;
        }
        whole
            .checked_mul(Self::SCALE)
            .and_then(|w| w.checked_add(frac_units))
            .map(Money)
            .ok_or_else(err)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MoneyVisitor;

        impl de::Visitor<'_> for MoneyVisitor {
            type Value = Money;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative decimal amount as a string or number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Money, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Money, E> {
                v.checked_mul(Money::SCALE)
                    .map(Money)
                    .ok_or_else(|| E::custom("money overflow"))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Money, E> {
                u64::try_from(v)
                    .map_err(|_| E::custom("money must be non-negative"))
                    .and_then(|v| self.visit_u64(v))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Money, E> {
                Money::from_f64(v).ok_or_else(|| E::custom("money must be finite and non-negative"))
            }
        }

        deserializer.deserialize_any(MoneyVisitor)
    }
}

// ---------------------------------------------------------------------------
// Requests and nodes
// ---------------------------------------------------------------------------

/// One token-generation request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub id: RequestId,
    pub arrival_time: Millis,
    pub input_tokens: u32,
    pub output_tokens: u32,
    /// Longest allowed queueing wait before service must begin.
    pub deadline: Millis,
    pub origin: AgentId,
}

impl RequestSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.output_tokens == 0 {
            return Err(ConfigError::new("request.output_tokens", "must be at least 1"));
        }
        if self.deadline == 0 {
            return Err(ConfigError::new("request.deadline", "must be positive"));
        }
        Ok(())
    }
}

/// Static capacity of an edge node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    #[serde(default)]
    pub label: String,
    /// Output tokens per second, per active slot.
    pub decode_rate: f64,
    /// Input tokens per second, per active slot.
    pub prefill_rate: f64,
    pub concurrency_limit: u32,
    #[serde(default)]
    pub queue_capacity: u32,
}

impl NodeSpec {
    pub fn validate(&self, path: &str) -> Result<(), ConfigError> {
        if !(self.decode_rate.is_finite() && self.decode_rate > 0.0) {
            return Err(ConfigError::new(
                format!("{path}.decode_rate"),
                "must be positive and finite",
            ));
        }
        if !(self.prefill_rate.is_finite() && self.prefill_rate > 0.0) {
            return Err(ConfigError::new(
                format!("{path}.prefill_rate"),
                "must be positive and finite",
            ));
        }
        if self.concurrency_limit == 0 {
            return Err(ConfigError::new(
                format!("{path}.concurrency_limit"),
                "must be at least 1",
            ));
        }
        Ok(())
    }

    /// Capability score used by the weighted policy: aggregate decode
    /// throughput with every slot busy.
    pub fn capability_score(&self) -> f64 {
        self.decode_rate * f64::from(self.concurrency_limit)
    }
}

/// Live occupancy of an edge node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub spec: NodeSpec,
    pub active: BTreeSet<RequestId>,
    pub queue: VecDeque<RequestId>,
    pub served_requests: u64,
    pub served_tokens: u64,
}

impl NodeState {
    pub fn new(spec: NodeSpec) -> Self {
        Self {
            spec,
            active: BTreeSet::new(),
            queue: VecDeque::new(),
            served_requests: 0,
            served_tokens: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.spec.id
    }

    pub fn has_free_slot(&self) -> bool {
        self.active.len() < self.spec.concurrency_limit as usize
    }

    pub fn queue_has_room(&self) -> bool {
        self.queue.len() < self.spec.queue_capacity as usize
    }

    /// A request can be started immediately or queued.
    pub fn can_admit(&self) -> bool {
        self.has_free_slot() || self.queue_has_room()
    }

    /// `(active + queued) / (slots + queue capacity)`, in `[0, 1]`.
    pub fn utilization(&self) -> f64 {
        let occupied = (self.active.len() + self.queue.len()) as f64;
        let capacity = f64::from(self.spec.concurrency_limit) + f64::from(self.spec.queue_capacity);
        occupied / capacity
    }
}

// ---------------------------------------------------------------------------
// Cloud pricing
// ---------------------------------------------------------------------------

/// Cloud fallback parameters. Default rates are illustrative, not a quote of
/// any provider's current price list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudPricing {
    /// Price per input token.
    pub rate_in: Money,
    /// Price per output token.
    pub rate_out: Money,
    /// Round-trip network latency.
    pub rtt: Millis,
    /// Output tokens per second for a cloud request.
    pub cloud_decode_rate: f64,
    /// Simultaneous cloud requests allowed; 0 disables the cloud.
    pub max_inflight: u32,
}

impl Default for CloudPricing {
    fn default() -> Self {
        // 30 / 60 per million tokens.
        Self {
            rate_in: Money::from_nanos(30_000),
            rate_out: Money::from_nanos(60_000),
            rtt: 200,
            cloud_decode_rate: 50.0,
            max_inflight: 16,
        }
    }
}

impl CloudPricing {
    pub fn validate(&self, path: &str) -> Result<(), ConfigError> {
        if !(self.cloud_decode_rate.is_finite() && self.cloud_decode_rate > 0.0) {
            return Err(ConfigError::new(
                format!("{path}.cloud_decode_rate"),
                "must be positive and finite",
            ));
        }
        Ok(())
    }

    pub fn enabled(&self) -> bool {
        self.max_inflight > 0
    }
}

// ---------------------------------------------------------------------------
// Outcomes and metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// No edge capacity and every cloud slot busy.
    CloudSaturated,
    /// No edge capacity and cloud fallback switched off.
    CloudDisabled,
    /// Waited in a node queue past its deadline.
    DeadlineExceeded,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::CloudSaturated => "cloud_saturated",
            RejectReason::CloudDisabled => "cloud_disabled",
            RejectReason::DeadlineExceeded => "deadline_exceeded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fate {
    ProcessedEdge { node: NodeId },
    ProcessedCloud { cost: Money },
    Rejected { reason: RejectReason },
}

/// Terminal fate of one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestOutcome {
    pub request_id: RequestId,
    pub fate: Fate,
    pub queue_wait: Millis,
    pub completion_time: Option<Millis>,
    pub cost: Money,
}

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

/// `ceil(1000 * tokens / rate)` summed over terms, in milliseconds.
///
/// Values within 1e-9 (relative) of an integer snap to it so that exact
/// quotients like `100 / 10` are not bumped up by float noise.
pub(crate) fn ceil_millis(seconds: f64) -> Millis {
    let ms = seconds * 1000.0;
    let nearest = ms.round();
    if (ms - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as Millis
    } else {
        ms.ceil() as Millis
    }
}

/// Time a request occupies one slot of `node`.
pub fn edge_service_time(req: &RequestSpec, node: &NodeSpec) -> Millis {
    ceil_millis(f64::from(req.input_tokens) / node.prefill_rate + f64::from(req.output_tokens) / node.decode_rate)
}

/// Price of serving `req` in the cloud.
pub fn cloud_cost(req: &RequestSpec, pricing: &CloudPricing) -> Money {
    pricing.rate_in.times(u64::from(req.input_tokens)) + pricing.rate_out.times(u64::from(req.output_tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(input: u32, output: u32) -> RequestSpec {
        RequestSpec {
            id: RequestId(0),
            arrival_time: 0,
            input_tokens: input,
            output_tokens: output,
            deadline: 1,
            origin: AgentId(0),
        }
    }

    fn node(decode: f64, prefill: f64) -> NodeSpec {
        NodeSpec {
            id: NodeId(0),
            label: String::new(),
            decode_rate: decode,
            prefill_rate: prefill,
            concurrency_limit: 1,
            queue_capacity: 0,
        }
    }

    fn pricing(rate_in: &str, rate_out: &str) -> CloudPricing {
        CloudPricing {
            rate_in: rate_in.parse().unwrap(),
            rate_out: rate_out.parse().unwrap(),
            ..CloudPricing::default()
        }
    }

    #[test]
    fn service_time_examples() {
        assert_eq!(edge_service_time(&req(0, 100), &node(10.0, 100.0)), 10_000);
        assert_eq!(edge_service_time(&req(100, 100), &node(10.0, 100.0)), 11_000);
        assert_eq!(edge_service_time(&req(50, 50), &node(50.0, 50.0)), 2_000);
    }

    #[test]
    fn service_time_rounds_up() {
        // 1 token at 3 tok/s = 333.33.. ms
        assert_eq!(edge_service_time(&req(0, 1), &node(3.0, 1.0)), 334);
    }

    #[test]
    fn cloud_cost_examples() {
        assert_eq!(cloud_cost(&req(0, 0), &pricing("5", "7")), Money::ZERO);
        assert_eq!(
            cloud_cost(&req(100, 200), &pricing("0.00001", "0.00003")),
            "0.007".parse().unwrap()
        );
        assert_eq!(cloud_cost(&req(500, 500), &pricing("0", "0")), Money::ZERO);
    }

    #[test]
    fn money_parse_and_display() {
        let m: Money = "0.007".parse().unwrap();
        assert_eq!(m.nanos(), 7_000_000);
        assert_eq!(m.to_string(), "0.007");
        assert_eq!("12".parse::<Money>().unwrap().to_string(), "12");
        assert_eq!(".5".parse::<Money>().unwrap().to_string(), "0.5");
        assert_eq!("1.000000001".parse::<Money>().unwrap().nanos(), 1_000_000_001);
        assert_eq!("1.5000000000".parse::<Money>().unwrap().nanos(), 1_500_000_000);
        assert!("1.0000000001".parse::<Money>().is_err());
        assert!("-1".parse::<Money>().is_err());
        assert!("".parse::<Money>().is_err());
        assert!(".".parse::<Money>().is_err());
        assert!("1e-5".parse::<Money>().is_err());
    }

    #[test]
    fn money_deserializes_numbers() {
        let m: Money = serde_json::from_str("0.00001").unwrap();
        assert_eq!(m.nanos(), 10_000);
        let m: Money = serde_json::from_str("3").unwrap();
        assert_eq!(m.nanos(), 3_000_000_000);
        let m: Money = serde_json::from_str("\"0.0000025\"").unwrap();
        assert_eq!(m.nanos(), 2_500);
        assert!(serde_json::from_str::<Money>("-0.5").is_err());
    }

    #[test]
    fn utilization_counts_queue() {
        let mut s = NodeState::new(NodeSpec {
            concurrency_limit: 2,
            queue_capacity: 2,
            ..node(1.0, 1.0)
        });
        assert_eq!(s.utilization(), 0.0);
        s.active.insert(RequestId(1));
        s.queue.push_back(RequestId(2));
        assert_eq!(s.utilization(), 0.5);
        assert!(s.can_admit());
    }

    #[test]
    fn outcome_json_shape() {
        let o = RequestOutcome {
            request_id: RequestId(3),
            fate: Fate::ProcessedCloud {
                cost: "0.0042".parse().unwrap(),
            },
            queue_wait: 0,
            completion_time: Some(1200),
            cost: "0.0042".parse().unwrap(),
        };
        let text = serde_json::to_string(&o).unwrap();
        assert_eq!(
            text,
            r#"{"request_id":3,"fate":{"kind":"processed_cloud","cost":"0.0042"},"queue_wait":0,"completion_time":1200,"cost":"0.0042"}"#
        );
        let back: RequestOutcome = serde_json::from_str(&text).unwrap();
        assert_eq!(back, o);
    }

    proptest! {
        #[test]
        fn cloud_cost_is_linear(
            a_in in 0u32..100_000, a_out in 0u32..100_000,
            b_in in 0u32..100_000, b_out in 0u32..100_000,
            rin in 0u64..1_000_000, rout in 0u64..1_000_000,
        ) {
            let p = CloudPricing { rate_in: Money::from_nanos(rin), rate_out: Money::from_nanos(rout), ..CloudPricing::default() };
            let sum = cloud_cost(&req(a_in, a_out), &p) + cloud_cost(&req(b_in, b_out), &p);
            prop_assert_eq!(sum, cloud_cost(&req(a_in + b_in, a_out + b_out), &p));
        }

        #[test]
        fn service_time_is_monotone(
            input in 0u32..2_000, output in 1u32..2_000, extra in 0u32..500,
            decode in 1.0f64..200.0, prefill in 1.0f64..2_000.0, speedup in 1.0f64..4.0,
        ) {
            let n = node(decode, prefill);
            let base = edge_service_time(&req(input, output), &n);
            prop_assert!(edge_service_time(&req(input + extra, output), &n) >= base);
            prop_assert!(edge_service_time(&req(input, output + extra), &n) >= base);
            prop_assert!(edge_service_time(&req(input, output), &node(decode * speedup, prefill)) <= base);
            prop_assert!(edge_service_time(&req(input, output), &node(decode, prefill * speedup)) <= base);
        }

        #[test]
        fn money_text_round_trip(nanos in any::<u64>()) {
            let m = Money::from_nanos(nanos);
            prop_assert_eq!(m.to_string().parse::<Money>().unwrap(), m);
        }
    }
}
