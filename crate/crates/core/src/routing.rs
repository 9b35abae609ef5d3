//! Traffic-invariant hop-count shortest-path routing that priority rules
//! are overlaid on.

use thiserror::Error;

use crate::topology::{LinkId, NodeId, Topology};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("node {dest} is unreachable from node {from}")]
    Unreachable { from: NodeId, dest: NodeId },
    #[error("invalid argument: node {0} has no route to itself")]
    SelfDestination(NodeId),
    #[error("node {0} is out of range")]
    UnknownNode(NodeId),
}

/// Single serving out-link for every `(node, destination)` pair, `n != c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextHopTable {
    node_count: usize,
    next: Vec<Option<LinkId>>,
}

impl NextHopTable {
    /// Picks, for each pair, an out-link on a minimum-hop path. Ties go to
    /// the lowest next-hop node, then the lowest link id.
    pub fn compute(topology: &Topology) -> Result<Self, RoutingError> {
        let n = topology.node_count();
        let mut next = vec![None; n * n];
        for from in topology.nodes() {
            for dest in topology.nodes() {
                if from == dest {
                    continue;
                }
                let here = topology
                    .hop_distance(from, dest)
                    .ok_or(RoutingError::Unreachable { from, dest })?;
                let best = topology
                    .out_links(from)
                    .filter(|l| topology.hop_distance(l.dest, dest) == Some(here - 1))
                    .min_by_key(|l| (l.dest, l.id))
                    .expect("a reachable pair has a next hop on a shortest path");
                next[from.0 * n + dest.0] = Some(best.id);
            }
        }
        Ok(Self {
            node_count: n,
            next,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// The baseline out-link carrying traffic from `n` towards `c`.
    pub fn route_of(&self, n: NodeId, c: NodeId) -> Result<LinkId, RoutingError> {
        if n.0 >= self.node_count {
            return Err(RoutingError::UnknownNode(n));
        }
        if c.0 >= self.node_count {
            return Err(RoutingError::UnknownNode(c));
        }
        if n == c {
            return Err(RoutingError::SelfDestination(n));
        }
        Ok(self.next[n.0 * self.node_count + c.0].expect("filled for every n != c"))
    }

    /// Unchecked lookup for hot paths; `n != c` and both in range.
    #[inline]
    pub(crate) fn next_link(&self, n: NodeId, c: NodeId) -> LinkId {
        debug_assert_ne!(n, c);
        self.next[n.0 * self.node_count + c.0].expect("filled for every n != c")
    }
}

/// Convenience wrapper matching [`NextHopTable::compute`].
pub fn compute_next_hops(topology: &Topology) -> Result<NextHopTable, RoutingError> {
    NextHopTable::compute(topology)
}
