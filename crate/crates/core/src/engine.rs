//! Discrete-event loop tying workload, scheduler, nodes and cloud together.
//!
//! Events are processed in `(time, class, sequence)` order. At equal
//! timestamps completions run first, then deadline expiries, then gossip
//! ticks, then arrivals, so an arrival sees every slot freed at its own
//! instant. Within a class, insertion order decides.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::cloud::{CloudCostRecord, CloudLedger};
use crate::cms::{gossip_round, CmsStore, KEY_NODE_LOAD};
use crate::error::{ConfigError, EngineError};
use crate::metrics::{summarize, MetricsSummary};
use crate::model::{
    edge_service_time, CloudPricing, Fate, Millis, NodeId, NodeSpec, NodeState, RejectReason, RequestId,
    RequestOutcome, RequestSpec,
};
use crate::rng::{self, SimRng};
use crate::scenario::{validate_fleet, GossipConfig, Scenario};
use crate::scheduler::{fallback, place, PlacementDecision, PolicyConfig, PolicyKind};
use crate::workload::{generate, WorkloadConfig};

/// How an arriving request picks its node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// Ask the configured allocation policy.
    Policy,
    /// Send to this node; fall back to the cloud if it cannot admit.
    Pinned(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Arrival { request: RequestSpec, routing: Routing },
    EdgeServiceDone { node: NodeId, request: RequestId },
    CloudServiceDone { request: RequestId },
    DeadlineExpired { request: RequestId },
    GossipTick { round: u64 },
}

impl EventKind {
    fn class(&self) -> u8 {
        match self {
            EventKind::EdgeServiceDone { .. } | EventKind::CloudServiceDone { .. } => 0,
            EventKind::DeadlineExpired { .. } => 1,
            EventKind::GossipTick { .. } => 2,
            EventKind::Arrival { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time: Millis,
    pub sequence: u64,
    pub kind: EventKind,
}

impl Event {
    fn key(&self) -> (Millis, u8, u64) {
        (self.time, self.kind.class(), self.sequence)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Capacity checks taken after every processed event.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyAudit {
    pub checks: u64,
    pub violations: Vec<OccupancyViolation>,
    /// Highest number of simultaneously active requests seen per node.
    pub peak_active: BTreeMap<NodeId, u32>,
    pub deadline_events: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyViolation {
    pub time: Millis,
    pub node: NodeId,
    pub active: u32,
    pub queued: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipStats {
    pub rounds: u64,
    pub adoptions: u64,
}

struct GossipRuntime {
    config: GossipConfig,
    stores: Vec<CmsStore>,
    rng: SimRng,
    until: Millis,
    stats: GossipStats,
}

#[derive(Debug, Clone)]
enum Placement {
    Queued(usize),
    Active { started: Millis },
}

#[derive(Debug, Clone)]
struct InFlight {
    spec: RequestSpec,
    placement: Placement,
}

pub struct Engine {
    nodes: Vec<NodeState>,
    pricing: CloudPricing,
    policy: PolicyConfig,
    rng: SimRng,
    ledger: CloudLedger,
    events: BinaryHeap<Reverse<Event>>,
    next_sequence: u64,
    now: Millis,
    in_flight: BTreeMap<RequestId, InFlight>,
    submitted: BTreeSet<RequestId>,
    outcomes: BTreeMap<RequestId, RequestOutcome>,
    arrivals: u64,
    audit: OccupancyAudit,
    gossip: Option<GossipRuntime>,
}

impl Engine {
    /// `seed` is the run's master seed; the scheduler uses its own sub-stream.
    pub fn new(
        fleet: Vec<NodeSpec>,
        pricing: CloudPricing,
        policy: PolicyConfig,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        validate_fleet(&fleet)?;
        pricing.validate("pricing")?;
        let nodes: Vec<NodeState> = fleet.into_iter().map(NodeState::new).collect();
        let audit = OccupancyAudit {
            peak_active: nodes.iter().map(|n| (n.id(), 0)).collect(),
            ..OccupancyAudit::default()
        };
        Ok(Self {
            nodes,
            pricing,
            policy,
            rng: rng::stream(seed, rng::STREAM_SCHEDULER),
            ledger: CloudLedger::new(),
            events: BinaryHeap::new(),
            next_sequence: 0,
            now: 0,
            in_flight: BTreeMap::new(),
            submitted: BTreeSet::new(),
            outcomes: BTreeMap::new(),
            arrivals: 0,
            audit,
            gossip: None,
        })
    }

    /// Run CMS gossip every `config.period` ms from t=0 until `until`. Each
    /// node hosts one agent that publishes its utilization before a round.
    pub fn enable_gossip(&mut self, config: GossipConfig, seed: u64, until: Millis) -> Result<(), ConfigError> {
        config
            .topology
            .validate(self.nodes.len())
            .map_err(|e| ConfigError::new("gossip.topology", e.to_string()))?;
        if config.period == 0 {
            return Err(ConfigError::new("gossip.period", "must be positive"));
        }
        self.gossip = Some(GossipRuntime {
            stores: self.nodes.iter().map(|n| CmsStore::new(n.id().into())).collect(),
            config,
            rng: rng::stream(seed, rng::STREAM_GOSSIP),
            until,
            stats: GossipStats::default(),
        });
        if until > 0 {
            self.schedule(0, EventKind::GossipTick { round: 0 });
        }
        Ok(())
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn ledger(&self) -> &CloudLedger {
        &self.ledger
    }

    pub fn audit(&self) -> &OccupancyAudit {
        &self.audit
    }

    pub fn outcome(&self, id: RequestId) -> Option<&RequestOutcome> {
        self.outcomes.get(&id)
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    /// CMS stores of the gossiping agents, if gossip is enabled.
    pub fn cms_stores(&self) -> Option<&[CmsStore]> {
        self.gossip.as_ref().map(|g| g.stores.as_slice())
    }

    /// One past the largest request id submitted so far.
    pub fn fresh_request_id(&self) -> RequestId {
        self.submitted.last().map_or(RequestId(0), |id| RequestId(id.0 + 1))
    }

    fn schedule(&mut self, time: Millis, kind: EventKind) {
        debug_assert!(time >= self.now);
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.events.push(Reverse(Event { time, sequence, kind }));
    }

    /// Queue the arrival of `request` at its `arrival_time`.
    pub fn submit(&mut self, request: RequestSpec, routing: Routing) -> Result<(), EngineError> {
        request.validate()?;
        if request.arrival_time < self.now {
            return Err(EngineError::EventInPast {
                at: request.arrival_time,
                now: self.now,
            });
        }
        if self.submitted.contains(&request.id) {
            return Err(EngineError::DuplicateRequest(request.id.0));
        }
        if let Routing::Pinned(node) = routing {
            self.node_index(node)?;
        }
        self.submitted.insert(request.id);
        self.schedule(request.arrival_time, EventKind::Arrival { request, routing });
        Ok(())
    }

    fn node_index(&self, node: NodeId) -> Result<usize, EngineError> {
        self.nodes
            .iter()
            .position(|n| n.id() == node)
            .ok_or(EngineError::UnknownNode(node.0))
    }

    /// Process one event. Returns `false` once nothing is left.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        let Some(Reverse(event)) = self.events.pop() else {
            return Ok(false);
        };
        if event.time < self.now {
            return Err(EngineError::EventInPast {
                at: event.time,
                now: self.now,
            });
        }
        self.now = event.time;
        match event.kind {
            EventKind::Arrival { request, routing } => self.on_arrival(request, routing)?,
            EventKind::EdgeServiceDone { node, request } => self.on_edge_done(node, request)?,
            EventKind::CloudServiceDone { .. } => self
                .ledger
                .complete()
                .map_err(|e| EngineError::Invariant(e.to_string()))?,
            EventKind::DeadlineExpired { request } => self.on_deadline(request),
            EventKind::GossipTick { round } => self.on_gossip(round)?,
        }
        self.check_occupancy();
        Ok(true)
    }

    pub fn run_until_idle(&mut self) -> Result<(), EngineError> {
        while self.step()? {}
        Ok(())
    }

    fn on_arrival(&mut self, request: RequestSpec, routing: Routing) -> Result<(), EngineError> {
        self.arrivals += 1;
        let decision = match routing {
            Routing::Policy => place(
                self.policy,
                &self.nodes,
                self.ledger.inflight,
                &self.pricing,
                &mut self.rng,
            )?,
            Routing::Pinned(node) => {
                let idx = self.node_index(node)?;
                if self.nodes[idx].can_admit() {
                    PlacementDecision::Edge(node)
                } else {
                    fallback(self.ledger.inflight, &self.pricing)
                }
            }
        };
        match decision {
            PlacementDecision::Edge(node) => {
                let idx = self.node_index(node)?;
                if self.nodes[idx].has_free_slot() {
                    self.start_service(idx, request);
                } else if self.nodes[idx].queue_has_room() {
                    self.nodes[idx].queue.push_back(request.id);
                    self.schedule(
                        request.arrival_time + request.deadline,
                        EventKind::DeadlineExpired { request: request.id },
                    );
                    self.in_flight.insert(
                        request.id,
                        InFlight {
                            spec: request,
                            placement: Placement::Queued(idx),
                        },
                    );
                } else {
                    return Err(EngineError::Invariant(format!("node {node} chosen but cannot admit")));
                }
            }
            PlacementDecision::Cloud => {
                let record = self
                    .ledger
                    .dispatch_cloud(&request, &self.pricing, self.now)
                    .map_err(|e| EngineError::Invariant(e.to_string()))?;
                self.schedule(record.completes_at, EventKind::CloudServiceDone { request: request.id });
                self.outcomes.insert(
                    request.id,
                    RequestOutcome {
                        request_id: request.id,
                        fate: Fate::ProcessedCloud { cost: record.cost },
                        queue_wait: 0,
                        completion_time: Some(record.completes_at),
                        cost: record.cost,
                    },
                );
            }
            PlacementDecision::Reject(reason) => self.reject(request.id, reason, 0),
        }
        Ok(())
    }

    fn start_service(&mut self, idx: usize, request: RequestSpec) {
        let done = self.now + edge_service_time(&request, &self.nodes[idx].spec);
        let node = self.nodes[idx].id();
        self.nodes[idx].active.insert(request.id);
        self.schedule(
            done,
            EventKind::EdgeServiceDone {
                node,
                request: request.id,
            },
        );
        self.in_flight.insert(
            request.id,
            InFlight {
                spec: request,
                placement: Placement::Active { started: self.now },
            },
        );
    }

    fn on_edge_done(&mut self, node: NodeId, id: RequestId) -> Result<(), EngineError> {
        let idx = self.node_index(node)?;
        let state = &mut self.nodes[idx];
        if !state.active.remove(&id) {
            return Err(EngineError::Invariant(format!(
                "request {id} finished on {node} but was not active"
            )));
        }
        let flight = self
            .in_flight
            .remove(&id)
            .ok_or_else(|| EngineError::Invariant(format!("request {id} has no in-flight record")))?;
        let Placement::Active { started } = flight.placement else {
            return Err(EngineError::Invariant(format!(
                "request {id} completed without starting"
            )));
        };
        state.served_requests += 1;
        state.served_tokens += u64::from(flight.spec.input_tokens) + u64::from(flight.spec.output_tokens);
        self.outcomes.insert(
            id,
            RequestOutcome {
                request_id: id,
                fate: Fate::ProcessedEdge { node },
                queue_wait: started - flight.spec.arrival_time,
                completion_time: Some(self.now),
                cost: Default::default(),
            },
        );
        if let Some(next) = self.nodes[idx].queue.pop_front() {
            let waiting = self
                .in_flight
                .remove(&next)
                .ok_or_else(|| EngineError::Invariant(format!("queued request {next} has no record")))?;
            self.start_service(idx, waiting.spec);
        }
        Ok(())
    }

    fn on_deadline(&mut self, id: RequestId) {
        self.audit.deadline_events += 1;
        let Some(InFlight {
            placement: Placement::Queued(idx),
            spec,
        }) = self.in_flight.get(&id).cloned()
        else {
            return;
        };
        self.nodes[idx].queue.retain(|r| *r != id);
        self.in_flight.remove(&id);
        self.reject(id, RejectReason::DeadlineExceeded, self.now - spec.arrival_time);
    }

    fn reject(&mut self, id: RequestId, reason: RejectReason, queue_wait: Millis) {
        self.outcomes.insert(
            id,
            RequestOutcome {
                request_id: id,
                fate: Fate::Rejected { reason },
                queue_wait,
                completion_time: None,
                cost: Default::default(),
            },
        );
    }

    fn on_gossip(&mut self, round: u64) -> Result<(), EngineError> {
        let Some(g) = self.gossip.as_mut() else {
            return Ok(());
        };
        for (store, node) in g.stores.iter_mut().zip(&self.nodes) {
            store
                .put_local(KEY_NODE_LOAD, node.utilization())
                .map_err(|e| EngineError::Invariant(e.to_string()))?;
        }
        let adopted = gossip_round(&mut g.stores, &g.config.topology, g.config.fanout, &mut g.rng)
            .map_err(|e| EngineError::Config(ConfigError::new("gossip", e.to_string())))?;
        g.stats.rounds += 1;
        g.stats.adoptions += adopted as u64;
        let next = self.now + g.config.period;
        if next < g.until {
            self.schedule(next, EventKind::GossipTick { round: round + 1 });
        }
        Ok(())
    }

    fn check_occupancy(&mut self) {
        self.audit.checks += 1;
        for node in &self.nodes {
            let active = node.active.len() as u32;
            let queued = node.queue.len() as u32;
            let peak = self.audit.peak_active.entry(node.id()).or_default();
            *peak = (*peak).max(active);
            if active > node.spec.concurrency_limit || queued > node.spec.queue_capacity {
                self.audit.violations.push(OccupancyViolation {
                    time: self.now,
                    node: node.id(),
                    active,
                    queued,
                });
            }
        }
    }

    /// Stop and collect results. Requests still in the system (only possible
    /// if the loop was not run to idle) are reported as an invariant error.
    pub fn finish(self, label: &str, seed: u64) -> Result<RunReport, EngineError> {
        if !self.in_flight.is_empty() || !self.events.is_empty() {
            return Err(EngineError::Invariant(format!(
                "{} requests still in flight at finish",
                self.in_flight.len()
            )));
        }
        let outcomes: Vec<RequestOutcome> = self.outcomes.into_values().collect();
        let summary = summarize(label, seed, self.arrivals, &outcomes, &self.nodes);
        Ok(RunReport {
            summary,
            outcomes,
            cloud_records: self.ledger.records,
            audit: self.audit,
            gossip: self.gossip.map(|g| g.stats),
        })
    }
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub summary: MetricsSummary,
    /// Sorted by request id.
    pub outcomes: Vec<RequestOutcome>,
    pub cloud_records: Vec<CloudCostRecord>,
    pub audit: OccupancyAudit,
    pub gossip: Option<GossipStats>,
}

/// Whether a multi-policy comparison reuses one arrival trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    #[default]
    Shared,
    Independent,
}

/// Workload of `scenario` with its seed derived from the scenario seed.
pub fn resolved_workload(scenario: &Scenario, label: &str) -> WorkloadConfig {
    WorkloadConfig {
        seed: rng::derive_seed(scenario.seed, label),
        ..scenario.workload.clone()
    }
}

/// Replay `trace` under `scenario`.
pub fn run_trace(scenario: &Scenario, trace: &[RequestSpec]) -> Result<RunReport, EngineError> {
    scenario.validate()?;
    let mut engine = Engine::new(
        scenario.fleet.clone(),
        scenario.pricing.clone(),
        scenario.policy_config(),
        scenario.seed,
    )?;
    if let Some(gossip) = &scenario.gossip {
        engine.enable_gossip(gossip.clone(), scenario.seed, scenario.workload.duration)?;
    }
    for req in trace {
        engine.submit(req.clone(), Routing::Policy)?;
    }
    engine.run_until_idle()?;
    engine.finish(scenario.policy.as_str(), scenario.seed)
}

/// Generate the scenario's workload and simulate it.
pub fn run(scenario: &Scenario) -> Result<RunReport, EngineError> {
    scenario.validate()?;
    let trace = generate(&resolved_workload(scenario, rng::STREAM_WORKLOAD))?;
    run_trace(scenario, &trace)
}

/// Simulate `scenario` once per policy.
pub fn run_comparison_reports(
    scenario: &Scenario,
    policies: &[PolicyKind],
    mode: TraceMode,
) -> Result<Vec<RunReport>, EngineError> {
    if policies.is_empty() {
        return Err(ConfigError::new("policies", "at least one policy is required").into());
    }
    scenario.validate()?;
    let shared = match mode {
        TraceMode::Shared => Some(generate(&resolved_workload(scenario, rng::STREAM_WORKLOAD))?),
        TraceMode::Independent => None,
    };
    policies
        .iter()
        .map(|&policy| {
            let variant = scenario.with_policy(policy);
            match &shared {
                Some(trace) => run_trace(&variant, trace),
                None => {
                    let label = format!("{}/{}", rng::STREAM_WORKLOAD, policy);
                    run_trace(&variant, &generate(&resolved_workload(scenario, &label))?)
                }
            }
        })
        .collect()
}

/// Summaries of [`run_comparison_reports`], one per policy in order.
pub fn run_comparison(
    scenario: &Scenario,
    policies: &[PolicyKind],
    mode: TraceMode,
) -> Result<Vec<MetricsSummary>, EngineError> {
    Ok(run_comparison_reports(scenario, policies, mode)?
        .into_iter()
        .map(|r| r.summary)
        .collect())
}
