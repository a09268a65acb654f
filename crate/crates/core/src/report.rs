//! Machine-readable run artifacts.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::engine::{GossipStats, OccupancyAudit, RunReport};
use crate::metrics::MetricsSummary;
use crate::model::RequestOutcome;
use crate::scenario::Scenario;

/// Per-run summary with the resolved scenario, so a run can be reproduced
/// from its summary alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub seed: u64,
    pub scenario: Scenario,
    pub summary: MetricsSummary,
    pub occupancy_checks: u64,
    pub occupancy_violations: usize,
    pub gossip: Option<GossipStats>,
}

impl SummaryDocument {
    pub fn new(scenario: &Scenario, report: &RunReport) -> Self {
        let OccupancyAudit { checks, violations, .. } = &report.audit;
        Self {
            seed: scenario.seed,
            scenario: scenario.clone(),
            summary: report.summary.clone(),
            occupancy_checks: *checks,
            occupancy_violations: violations.len(),
            gossip: report.gossip.clone(),
        }
    }
}

pub fn write_summary_json<W: Write>(out: W, doc: &SummaryDocument) -> io::Result<()> {
    serde_json::to_writer_pretty(out, doc).map_err(io::Error::other)
}

/// One JSON object per line, in request-id order.
pub fn write_outcomes_jsonl<W: Write>(mut out: W, outcomes: &[RequestOutcome]) -> io::Result<()> {
    for o in outcomes {
        serde_json::to_writer(&mut out, o).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;

    #[test]
    fn summary_round_trips_and_reproduces() {
        let mut s = Scenario::reference();
        s.workload.duration = 120_000;
        let report = run(&s).unwrap();
        let doc = SummaryDocument::new(&s, &report);
        let mut buf = Vec::new();
        write_summary_json(&mut buf, &doc).unwrap();
        let back: SummaryDocument = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, doc);
        assert_eq!(run(&back.scenario).unwrap().summary, doc.summary);
    }

    #[test]
    fn outcomes_are_line_delimited() {
        let mut s = Scenario::reference();
        s.workload.duration = 60_000;
        let report = run(&s).unwrap();
        let mut buf = Vec::new();
        write_outcomes_jsonl(&mut buf, &report.outcomes).unwrap();
        let lines: Vec<RequestOutcome> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines, report.outcomes);
    }
}
