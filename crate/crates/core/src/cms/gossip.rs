//! Push gossip over CMS stores.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CmsEntry, CmsStore};

/// Who may gossip with whom. Agents are addressed by their index in the
/// store slice. Adjacency lists are treated as undirected.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    #[default]
    Complete,
    Ring,
    Adjacency(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GossipError {
    #[error("fanout must be at least 1")]
    ZeroFanout,
    #[error("adjacency list has {lists} entries for {agents} agents")]
    AdjacencySize { lists: usize, agents: usize },
    #[error("adjacency of agent {agent} names unknown agent {neighbor}")]
    UnknownNeighbor { agent: usize, neighbor: usize },
}

impl Topology {
    pub fn validate(&self, agents: usize) -> Result<(), GossipError> {
        if let Topology::Adjacency(lists) = self {
            if lists.len() != agents {
                return Err(GossipError::AdjacencySize {
                    lists: lists.len(),
                    agents,
                });
            }
            for (agent, list) in lists.iter().enumerate() {
                if let Some(&neighbor) = list.iter().find(|&&n| n >= agents) {
                    return Err(GossipError::UnknownNeighbor { agent, neighbor });
                }
            }
        }
        Ok(())
    }

    /// Sorted neighbors of `agent`, excluding itself.
    pub fn neighbors(&self, agent: usize, agents: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = match self {
            Topology::Complete => (0..agents).collect(),
            Topology::Ring if agents > 1 => [(agent + agents - 1) % agents, (agent + 1) % agents].into(),
            Topology::Ring => BTreeSet::new(),
            Topology::Adjacency(lists) => {
                let mut set: BTreeSet<usize> = lists.get(agent).into_iter().flatten().copied().collect();
                for (other, list) in lists.iter().enumerate() {
                    if list.contains(&agent) {
                        set.insert(other);
                    }
                }
                set
            }
        };
        set.into_iter().filter(|&n| n != agent && n < agents).collect()
    }

    pub fn is_connected(&self, agents: usize) -> bool {
        if agents <= 1 {
            return true;
        }
        let mut seen = vec![false; agents];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for n in self.neighbors(a, agents) {
                if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// One synchronous gossip round.
///
/// Every agent snapshots its store, then pushes the snapshot to `fanout`
/// distinct neighbors chosen uniformly (fewer if it has fewer neighbors).
/// Receivers merge. Finally every store's clock advances by one. Returns the
/// number of entries adopted across all agents.
pub fn gossip_round<R: Rng + ?Sized>(
    stores: &mut [CmsStore],
    topology: &Topology,
    fanout: usize,
    rng: &mut R,
) -> Result<usize, GossipError> {
    if fanout == 0 {
        return Err(GossipError::ZeroFanout);
    }
    let n = stores.len();
    topology.validate(n)?;

    let digests: Vec<Vec<CmsEntry>> = stores.iter().map(|s| s.entries().cloned().collect()).collect();
    let mut adopted = 0;
    for (sender, digest) in digests.iter().enumerate() {
        let neighbors = topology.neighbors(sender, n);
        let targets: Vec<usize> = neighbors
            .choose_multiple(rng, fanout.min(neighbors.len()))
            .copied()
            .collect();
        for target in targets {
            adopted += stores[target].merge(digest);
        }
    }
    for store in stores.iter_mut() {
        let next = store.clock() + 1;
        store.advance_clock(next);
    }
    Ok(adopted)
}

/// True when every store holds identical entries.
pub fn converged(stores: &[CmsStore]) -> bool {
    stores.windows(2).all(|w| w[0].same_contents(&w[1]))
}
