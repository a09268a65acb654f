//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use edgecollab_core::cms::{CmsStore, KEY_NODE_HEALTH, KEY_NODE_LOAD};
use edgecollab_core::discovery::advertise;
use edgecollab_core::model::NodeState;
use edgecollab_core::{AgentId, Scenario, SemanticName};

/// Reference fleet with every node half busy.
pub fn busy_fleet() -> Vec<NodeState> {
    Scenario::reference()
        .fleet
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut n = NodeState::new(spec);
            for r in 0..(n.spec.concurrency_limit / 2) {
                n.active
                    .insert(edgecollab_core::RequestId((i * 10) as u64 + u64::from(r)));
            }
            n
        })
        .collect()
}

/// One store per agent, each holding two entries of its own.
pub fn agent_stores(n: usize) -> Vec<CmsStore> {
    (0..n)
        .map(|i| {
            let mut s = CmsStore::new(AgentId(i as u32));
            s.put_local(KEY_NODE_HEALTH, "ok").expect("valid entry");
            s.put_local(KEY_NODE_LOAD, i as f64 / n as f64).expect("valid entry");
            s
        })
        .collect()
}

/// A view where `agents` agents each advertise a few services and a load.
pub fn directory(agents: u32) -> CmsStore {
    let mut view = CmsStore::new(AgentId(u32::MAX));
    for a in 0..agents {
        let mut s = CmsStore::new(AgentId(a));
        for path in ["arithmetic", "arithmetic/modular", "vision/observations"] {
            let category = if path.starts_with("vision") {
                "data"
            } else {
                "knowledge"
            };
            let name: SemanticName = format!("{category}.gpt/{path}").parse().expect("valid name");
            advertise(&mut s, &name, BTreeMap::new()).expect("valid ad");
        }
        s.put_local(KEY_NODE_LOAD, f64::from(a % 7) / 7.0).expect("valid entry");
        view.merge(s.entries());
    }
    view
}
