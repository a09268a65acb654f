//! Deterministic simulation and coordination for collaborative LLM inference
//! on heterogeneous edge nodes.
//!
//! The crate covers the whole stack: workload generation, placement
//! policies, cloud fallback accounting, a discrete-event engine, a gossiped
//! key-value store for sharing agent state, semantic service discovery and
//! a task orchestrator that plans multi-agent work on top of discovery.

pub mod cloud;
pub mod cms;
pub mod config;
pub mod discovery;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod workload;

pub use cloud::{CloudCostRecord, CloudLedger};
pub use cms::{CmsEntry, CmsStore, Payload, Topology};
pub use discovery::{resolve, Candidate, SemanticName};
pub use engine::{run, run_comparison, run_trace, Engine, RunReport, TraceMode};
pub use error::{ConfigError, EngineError};
pub use metrics::MetricsSummary;
pub use model::{
    AgentId, CloudPricing, Fate, Millis, Money, NodeId, NodeSpec, RejectReason, RequestId, RequestOutcome, RequestSpec,
};
pub use orchestrator::{execute_plan, plan, RuleTable, TaskDescriptor, TaskPlan};
pub use scenario::Scenario;
pub use scheduler::{PlacementDecision, PolicyKind};
pub use workload::WorkloadConfig;
