//! Backbone graph: nodes, directed capacitated links, multi-link groups and
//! the peering policy consulted by rule derivation.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense node index in `0..N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

/// Dense link index in `0..L`. Ids follow construction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A unidirectional link. `bandwidth` is in whole batches per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub source: NodeId,
    pub dest: NodeId,
    pub bandwidth: u32,
}

/// Parallel links sharing one `(source, dest)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiLinkGroup {
    pub source: NodeId,
    pub dest: NodeId,
    pub members: Vec<LinkId>,
}

/// Pairs a rule may not offload traffic across. Baseline routing ignores it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeeringPolicy {
    denied: BTreeSet<(NodeId, NodeId)>,
}

impl PeeringPolicy {
    pub fn allow_all() -> Self {
        Self::default()
    }

    pub fn deny(&mut self, source: NodeId, dest: NodeId) {
        self.denied.insert((source, dest));
    }

    pub fn allows(&self, source: NodeId, dest: NodeId) -> bool {
        !self.denied.contains(&(source, dest))
    }

    pub fn denied_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.denied.iter().copied()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("link {index} references node {node} but the topology has {nodes} nodes")]
    UnknownNode {
        index: usize,
        node: usize,
        nodes: usize,
    },
    #[error("link {0} is a self-loop")]
    SelfLoop(usize),
    #[error("link {0} has zero bandwidth")]
    ZeroBandwidth(usize),
    #[error("multi-link group {0} is malformed: {1}")]
    BadGroup(usize, String),
}

/// Link specification used when building a topology by hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub source: usize,
    pub dest: usize,
    pub bandwidth: u32,
}

/// Immutable backbone graph with a precomputed all-pairs hop table.
#[derive(Debug, Clone)]
pub struct Topology {
    node_count: usize,
    links: Vec<Link>,
    multilinks: Vec<MultiLinkGroup>,
    policy: PeeringPolicy,
    out: Vec<Vec<LinkId>>,
    incoming: Vec<Vec<LinkId>>,
    // hops[a * n + b], u32::MAX when unreachable
    hops: Vec<u32>,
}

const UNREACHABLE: u32 = u32::MAX;

impl Topology {
    /// Builds a topology from explicit directed links. Link ids follow the
    /// order of `links`. Connectivity is not required here; routing
    /// reports unreachable pairs.
    pub fn new(
        node_count: usize,
        links: &[LinkSpec],
        groups: &[Vec<usize>],
        policy: PeeringPolicy,
    ) -> Result<Self, TopologyError> {
        if node_count == 0 {
            return Err(TopologyError::InvalidArgument(
                "topology needs at least one node".into(),
            ));
        }
        let mut built = Vec::with_capacity(links.len());
        for (i, spec) in links.iter().enumerate() {
            for node in [spec.source, spec.dest] {
                if node >= node_count {
                    return Err(TopologyError::UnknownNode {
                        index: i,
                        node,
                        nodes: node_count,
                    });
                }
            }
            if spec.source == spec.dest {
                return Err(TopologyError::SelfLoop(i));
            }
            if spec.bandwidth == 0 {
                return Err(TopologyError::ZeroBandwidth(i));
            }
            built.push(Link {
                id: LinkId(i),
                source: NodeId(spec.source),
                dest: NodeId(spec.dest),
                bandwidth: spec.bandwidth,
            });
        }

        let mut multilinks = Vec::with_capacity(groups.len());
        let mut grouped = BTreeSet::new();
        for (g, members) in groups.iter().enumerate() {
            if members.len() < 2 {
                return Err(TopologyError::BadGroup(g, "needs at least two members".into()));
            }
            let mut ids = Vec::with_capacity(members.len());
            for &m in members {
                let link = built.get(m).ok_or_else(|| {
                    TopologyError::BadGroup(g, format!("unknown link {m}"))
                })?;
                if !grouped.insert(m) {
                    return Err(TopologyError::BadGroup(
                        g,
                        format!("link {m} already belongs to a group"),
                    ));
                }
                ids.push(link.id);
            }
            let first = &built[members[0]];
            if members
                .iter()
                .any(|&m| built[m].source != first.source || built[m].dest != first.dest)
            {
                return Err(TopologyError::BadGroup(
                    g,
                    "members do not share source and destination".into(),
                ));
            }
            ids.sort();
            multilinks.push(MultiLinkGroup {
                source: first.source,
                dest: first.dest,
                members: ids,
            });
        }

        let mut out = vec![Vec::new(); node_count];
        let mut incoming = vec![Vec::new(); node_count];
        for link in &built {
            out[link.source.0].push(link.id);
            incoming[link.dest.0].push(link.id);
        }

        let mut topo = Topology {
            node_count,
            links: built,
            multilinks,
            policy,
            out,
            incoming,
            hops: Vec::new(),
        };
        topo.hops = topo.all_pairs_hops();
        Ok(topo)
    }

    fn all_pairs_hops(&self) -> Vec<u32> {
        let n = self.node_count;
        let mut hops = vec![UNREACHABLE; n * n];
        let mut queue = VecDeque::new();
        for src in 0..n {
            let row = &mut hops[src * n..(src + 1) * n];
            row[src] = 0;
            queue.clear();
            queue.push_back(src);
            while let Some(u) = queue.pop_front() {
                for &l in &self.out[u] {
                    let v = self.links[l.0].dest.0;
                    if row[v] == UNREACHABLE {
                        row[v] = row[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        hops
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count).map(NodeId)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn multilinks(&self) -> &[MultiLinkGroup] {
        &self.multilinks
    }

    pub fn policy(&self) -> &PeeringPolicy {
        &self.policy
    }

    /// Out-links of `n` in ascending link id, policy-denied ones included.
    pub fn out_links(&self, n: NodeId) -> impl Iterator<Item = &Link> + '_ {
        self.out[n.0].iter().map(move |&l| &self.links[l.0])
    }

    pub fn out_link_ids(&self, n: NodeId) -> &[LinkId] {
        &self.out[n.0]
    }

    /// Links whose destination is `n`.
    pub fn in_links(&self, n: NodeId) -> impl Iterator<Item = &Link> + '_ {
        self.incoming[n.0].iter().map(move |&l| &self.links[l.0])
    }

    /// Minimum hop count from `a` to `b`, `None` when `b` is unreachable.
    pub fn hop_distance(&self, a: NodeId, b: NodeId) -> Option<u32> {
        match self.hops[a.0 * self.node_count + b.0] {
            UNREACHABLE => None,
            h => Some(h),
        }
    }

    pub fn is_connected(&self) -> bool {
        self.hops.iter().all(|&h| h != UNREACHABLE)
    }

    /// Largest finite hop distance.
    pub fn diameter(&self) -> u32 {
        self.hops
            .iter()
            .copied()
            .filter(|&h| h != UNREACHABLE)
            .max()
            .unwrap_or(0)
    }
}

/// Whole batches a link of `bandwidth_bytes_per_sec` serves in one slot.
/// Fractional batches are discarded.
pub fn batches_per_slot(
    bandwidth_bytes_per_sec: f64,
    batch_bytes: f64,
    slot_sec: f64,
) -> Result<u32, TopologyError> {
    for (name, v) in [
        ("bandwidth", bandwidth_bytes_per_sec),
        ("batch size", batch_bytes),
        ("slot duration", slot_sec),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(TopologyError::InvalidArgument(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    // relative slack absorbs representation error such as 19.999999
    let exact = bandwidth_bytes_per_sec * slot_sec / batch_bytes;
    let batches = (exact * (1.0 + 1e-12)).floor();
    if batches < 1.0 {
        return Err(TopologyError::InvalidArgument(format!(
            "link serves {exact} batches per slot, need at least one"
        )));
    }
    if batches > u32::MAX as f64 {
        return Err(TopologyError::InvalidArgument(format!(
            "link capacity of {exact} batches per slot is too large"
        )));
    }
    Ok(batches as u32)
}

/// `rows x cols` lattice; node `(i, j)` has index `i * cols + j` and links to
/// its up, left, right and down neighbours, in that order.
pub fn build_grid(
    rows: usize,
    cols: usize,
    bandwidth_bytes_per_sec: f64,
    batch_bytes: f64,
    slot_sec: f64,
) -> Result<Topology, TopologyError> {
    if rows == 0 || cols == 0 {
        return Err(TopologyError::InvalidArgument(format!(
            "grid dimensions must be positive, got {rows}x{cols}"
        )));
    }
    if rows * cols < 2 {
        return Err(TopologyError::InvalidArgument(
            "grid needs at least two nodes".into(),
        ));
    }
    let bandwidth = batches_per_slot(bandwidth_bytes_per_sec, batch_bytes, slot_sec)?;
    let mut links = Vec::with_capacity(4 * rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let n = i * cols + j;
            let mut push = |dest: usize| {
                links.push(LinkSpec {
                    source: n,
                    dest,
                    bandwidth,
                })
            };
            if i > 0 {
                push(n - cols);
            }
            if j > 0 {
                push(n - 1);
            }
            if j + 1 < cols {
                push(n + 1);
            }
            if i + 1 < rows {
                push(n + cols);
            }
        }
    }
    Topology::new(rows * cols, &links, &[], PeeringPolicy::allow_all())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid5() -> Topology {
        build_grid(5, 5, 2e9, 1e8, 1.0).unwrap()
    }

    #[test]
    fn reference_grid_dimensions() {
        let t = grid5();
        assert_eq!(t.node_count(), 25);
        assert_eq!(t.links().len(), 80);
        assert!(t.links().iter().all(|l| l.bandwidth == 20));
        assert!(t.is_connected());
        assert!(t.multilinks().is_empty());
    }

    #[test]
    fn smallest_and_unit_capacity_grids() {
        let t = build_grid(1, 2, 2e9, 1e8, 1.0).unwrap();
        assert_eq!((t.node_count(), t.links().len()), (2, 2));
        let t = build_grid(3, 3, 1e8, 1e8, 1.0).unwrap();
        assert_eq!((t.node_count(), t.links().len()), (9, 24));
        assert!(t.links().iter().all(|l| l.bandwidth == 1));
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(matches!(
            build_grid(0, 5, 2e9, 1e8, 1.0),
            Err(TopologyError::InvalidArgument(_))
        ));
        assert!(build_grid(1, 1, 2e9, 1e8, 1.0).is_err());
        assert!(build_grid(2, 2, -1.0, 1e8, 1.0).is_err());
        // half a batch per slot
        assert!(build_grid(2, 2, 5e7, 1e8, 1.0).is_err());
    }

    #[test]
    fn fractional_capacity_is_floored() {
        assert_eq!(batches_per_slot(2.5e8, 1e8, 1.0).unwrap(), 2);
        // 0.1 * 3.0 is 0.30000000000000004 in binary
        assert_eq!(batches_per_slot(1e9, 1e8, 0.1 * 3.0).unwrap(), 3);
        assert_eq!(batches_per_slot(2e9, 1e8, 1.0).unwrap(), 20);
    }

    #[test]
    fn hop_distances_on_grid() {
        let t = grid5();
        assert_eq!(t.hop_distance(NodeId(0), NodeId(24)), Some(8));
        assert_eq!(t.hop_distance(NodeId(7), NodeId(7)), Some(0));
        assert_eq!(t.hop_distance(NodeId(0), NodeId(1)), Some(1));
        assert_eq!(t.diameter(), 8);
    }

    #[test]
    fn out_link_counts() {
        let t = grid5();
        assert_eq!(t.out_links(NodeId(12)).count(), 4);
        assert_eq!(t.out_links(NodeId(0)).count(), 2);
        assert_eq!(t.out_links(NodeId(2)).count(), 3);
        let ids: Vec<_> = t.out_links(NodeId(12)).map(|l| l.id).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        let total: usize = t.nodes().map(|n| t.out_links(n).count()).sum();
        assert_eq!(total, t.links().len());
    }

    #[test]
    fn unreachable_pair_is_distinguished() {
        let links = [LinkSpec {
            source: 0,
            dest: 1,
            bandwidth: 1,
        }];
        let t = Topology::new(2, &links, &[], PeeringPolicy::allow_all()).unwrap();
        assert_eq!(t.hop_distance(NodeId(0), NodeId(1)), Some(1));
        assert_eq!(t.hop_distance(NodeId(1), NodeId(0)), None);
        assert!(!t.is_connected());
    }

    #[test]
    fn malformed_links_and_groups() {
        let l = |s, d| LinkSpec {
            source: s,
            dest: d,
            bandwidth: 1,
        };
        assert_eq!(
            Topology::new(2, &[l(0, 0)], &[], PeeringPolicy::default()).unwrap_err(),
            TopologyError::SelfLoop(0)
        );
        assert!(matches!(
            Topology::new(2, &[l(0, 2)], &[], PeeringPolicy::default()),
            Err(TopologyError::UnknownNode { .. })
        ));
        let links = [l(0, 1), l(0, 1), l(1, 0)];
        assert!(Topology::new(2, &links, &[vec![0]], PeeringPolicy::default()).is_err());
        assert!(Topology::new(2, &links, &[vec![0, 2]], PeeringPolicy::default()).is_err());
        let t = Topology::new(2, &links, &[vec![1, 0]], PeeringPolicy::default()).unwrap();
        assert_eq!(t.multilinks()[0].members, vec![LinkId(0), LinkId(1)]);
    }

    #[test]
    fn peering_policy_defaults_to_allow() {
        let mut p = PeeringPolicy::allow_all();
        assert!(p.allows(NodeId(0), NodeId(1)));
        p.deny(NodeId(0), NodeId(1));
        assert!(!p.allows(NodeId(0), NodeId(1)));
        assert!(p.allows(NodeId(1), NodeId(0)));
    }
}
