//! Bursty request traces.
//!
//! Arrivals follow a piecewise-homogeneous Poisson process: `base_rate`
//! outside burst windows and `base_rate * burst_multiplier` inside the
//! windows `[k * burst_period, k * burst_period + burst_duration)`.
//! Inter-arrival gaps are drawn from the exponential distribution of the
//! current segment; when a gap crosses a window edge the clock jumps to the
//! edge and a fresh gap is drawn at the new rate, which is exact because the
//! exponential is memoryless.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::model::{AgentId, Millis, RequestId, RequestSpec};
use crate::rng::SimRng;

/// How many input (prompt) tokens a generated request carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputTokenRule {
    /// Same as the sampled output size.
    #[default]
    SameAsOutput,
    Fixed(u32),
    /// `round(fraction * output_tokens)`.
    FractionOfOutput(f64),
}

impl InputTokenRule {
    pub fn input_for(&self, output_tokens: u32) -> u32 {
        match *self {
            InputTokenRule::SameAsOutput => output_tokens,
            InputTokenRule::Fixed(n) => n,
            InputTokenRule::FractionOfOutput(f) => (f * f64::from(output_tokens)).round() as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub duration: Millis,
    /// Requests per second outside bursts.
    pub base_rate: f64,
    pub burst_period: Millis,
    pub burst_duration: Millis,
    pub burst_multiplier: f64,
    pub demand_set: Vec<u32>,
    pub demand_weights: Vec<f64>,
    pub input_tokens: InputTokenRule,
    pub deadline: Millis,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            duration: 3_600_000,
            base_rate: 1.0,
            burst_period: 600_000,
            burst_duration: 60_000,
            burst_multiplier: 4.0,
            demand_set: vec![50, 100, 200, 300, 500],
            demand_weights: vec![0.35, 0.30, 0.20, 0.10, 0.05],
            input_tokens: InputTokenRule::SameAsOutput,
            deadline: 30_000,
            seed: 0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |name: &str| format!("workload.{name}");
        if !(self.base_rate.is_finite() && self.base_rate >= 0.0) {
            return Err(ConfigError::new(field("base_rate"), "must be finite and non-negative"));
        }
        if self.burst_period == 0 {
            return Err(ConfigError::new(field("burst_period"), "must be positive"));
        }
        if self.burst_duration > self.burst_period {
            return Err(ConfigError::new(
                field("burst_duration"),
                "must not exceed burst_period",
            ));
        }
        if !(self.burst_multiplier.is_finite() && self.burst_multiplier >= 1.0) {
            return Err(ConfigError::new(field("burst_multiplier"), "must be at least 1"));
        }
        if self.deadline == 0 {
            return Err(ConfigError::new(field("deadline"), "must be positive"));
        }
        if let InputTokenRule::FractionOfOutput(f) = self.input_tokens {
            if !(f.is_finite() && f >= 0.0) {
                return Err(ConfigError::new(
                    field("input_tokens"),
                    "fraction must be finite and non-negative",
                ));
            }
        }
        validate_demand(&self.demand_set, &self.demand_weights)
    }

    fn in_burst(&self, t: f64) -> bool {
        let period = self.burst_period as f64;
        t - (t / period).floor() * period < self.burst_duration as f64
    }

    /// End of the constant-rate segment containing `t`.
    fn segment_end(&self, t: f64) -> f64 {
        let period = self.burst_period as f64;
        let start = (t / period).floor() * period;
        let burst_end = start + self.burst_duration as f64;
        if t < burst_end {
            burst_end
        } else {
            start + period
        }
    }
}

fn validate_demand(set: &[u32], weights: &[f64]) -> Result<(), ConfigError> {
    if set.is_empty() {
        return Err(ConfigError::new("workload.demand_set", "must not be empty"));
    }
    if set.contains(&0) {
        return Err(ConfigError::new(
            "workload.demand_set",
            "token sizes must be at least 1",
        ));
    }
    if weights.len() != set.len() {
        return Err(ConfigError::new(
            "workload.demand_weights",
            "must have the same length as demand_set",
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(ConfigError::new(
            "workload.demand_weights",
            "weights must be finite and non-negative",
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(ConfigError::new(
            "workload.demand_weights",
            format!("must sum to 1 (got {total})"),
        ));
    }
    Ok(())
}

/// Draws output-token sizes from a weighted discrete distribution.
#[derive(Debug, Clone)]
pub struct DemandSampler {
    set: Vec<u32>,
    index: WeightedIndex<f64>,
}

impl DemandSampler {
    pub fn new(set: &[u32], weights: &[f64]) -> Result<Self, ConfigError> {
        validate_demand(set, weights)?;
        let index =
            WeightedIndex::new(weights).map_err(|e| ConfigError::new("workload.demand_weights", e.to_string()))?;
        Ok(Self {
            set: set.to_vec(),
            index,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.set[self.index.sample(rng)]
    }
}

/// One draw from `set` with probabilities `weights`.
pub fn sample_demand<R: Rng + ?Sized>(weights: &[f64], set: &[u32], rng: &mut R) -> Result<u32, ConfigError> {
    Ok(DemandSampler::new(set, weights)?.sample(rng))
}

/// Generate the full arrival trace for `config`, sorted by arrival time.
pub fn generate(config: &WorkloadConfig) -> Result<Vec<RequestSpec>, ConfigError> {
    config.validate()?;
    let sampler = DemandSampler::new(&config.demand_set, &config.demand_weights)?;
    let mut rng = SimRng::seed_from_u64(config.seed);
    let duration = config.duration as f64;
    let base_per_ms = config.base_rate / 1000.0;

    let mut trace = Vec::new();
    let mut t = 0.0_f64;
    while t < duration {
        let seg_end = config.segment_end(t).min(duration);
        let rate = if config.in_burst(t) {
            base_per_ms * config.burst_multiplier
        } else {
            base_per_ms
        };
        if rate <= 0.0 {
            t = seg_end;
            continue;
        }
        let gap: f64 = Exp::new(rate).expect("positive rate").sample(&mut rng);
        if t + gap >= seg_end {
            t = seg_end;
            continue;
        }
        t += gap;
        let output_tokens = sampler.sample(&mut rng);
        trace.push(RequestSpec {
            id: RequestId(trace.len() as u64),
            arrival_time: t.floor() as Millis,
            input_tokens: config.input_tokens.input_for(output_tokens),
            output_tokens,
            deadline: config.deadline,
            origin: AgentId(0),
        });
    }
    Ok(trace)
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: ConfigError },
    #[error("line {line}: trace is not sorted by arrival_time")]
    Unsorted { line: usize },
}

/// Write one JSON object per request.
pub fn write_trace_jsonl<W: Write>(mut out: W, trace: &[RequestSpec]) -> std::io::Result<()> {
    for req in trace {
        serde_json::to_writer(&mut out, req)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a trace written by [`write_trace_jsonl`] or by an external tool.
/// Blank lines are ignored.
pub fn read_trace_jsonl<R: BufRead>(input: R) -> Result<Vec<RequestSpec>, TraceError> {
    let mut trace: Vec<RequestSpec> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: RequestSpec =
            serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
        req.validate()
            .map_err(|source| TraceError::Invalid { line: i + 1, source })?;
        if trace.last().is_some_and(|prev| prev.arrival_time > req.arrival_time) {
            return Err(TraceError::Unsorted { line: i + 1 });
        }
        trace.push(req);
    }
    Ok(trace)
}
