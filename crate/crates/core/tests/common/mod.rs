//! Shared fixtures and naive reference implementations.
//!
//! Everything here is written from the definitions alone, without calling
//! into the engine's helpers, so agreement with the engine is meaningful.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use bpsim::engine::{AlarmScope, HopFilter, PriorityRule};
use bpsim::topology::{LinkSpec, PeeringPolicy};
use bpsim::{build_grid, Forecast, LinkId, NetworkSnapshot, NodeId, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grid(rows: usize, cols: usize) -> Topology {
    build_grid(rows, cols, 2e9, 1e8, 1.0).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random backlog with zero diagonal. `sparsity` is the chance an entry stays empty.
pub fn random_snapshot(rng: &mut impl Rng, n: usize, max: u32, sparsity: f64) -> NetworkSnapshot {
    let mut s = NetworkSnapshot::empty(0, n);
    for a in 0..n {
        for c in 0..n {
            if a != c && !rng.random_bool(sparsity) {
                s.set(NodeId(a), NodeId(c), rng.random_range(0..=max));
            }
        }
    }
    s
}

pub fn random_forecast(rng: &mut impl Rng, horizon: u32, n: usize, max: u32) -> Forecast {
    let mut f = Forecast::zero(horizon, n);
    for a in 0..n {
        for c in 0..n {
            if a != c {
                f.set(NodeId(a), NodeId(c), rng.random_range(0..=max));
            }
        }
    }
    f
}

/// Strongly connected random graph: a bidirectional ring plus random chords.
pub fn random_topology(rng: &mut impl Rng, n: usize) -> Topology {
    let mut links = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        links.push(LinkSpec { source: i, dest: j, bandwidth: rng.random_range(1..=5) });
        links.push(LinkSpec { source: j, dest: i, bandwidth: rng.random_range(1..=5) });
    }
    for _ in 0..n {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            links.push(LinkSpec { source: a, dest: b, bandwidth: rng.random_range(1..=5) });
        }
    }
    Topology::new(n, &links, &[], PeeringPolicy::allow_all()).unwrap()
}

/// All-pairs hop counts by breadth-first search from every source.
pub fn bfs_hops(topo: &Topology) -> Vec<Vec<Option<u32>>> {
    let n = topo.node_count();
    let mut adj = vec![Vec::new(); n];
    for l in topo.links() {
        adj[l.source.0].push(l.dest.0);
    }
    (0..n)
        .map(|s| {
            let mut dist = vec![None; n];
            dist[s] = Some(0);
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if dist[v].is_none() {
                        dist[v] = Some(dist[u].unwrap() + 1);
                        q.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

pub struct OracleConfig {
    pub alarm: u32,
    pub scope: AlarmScope,
    pub hop: HopFilter,
}

/// Literal transcription of the per-link selection loop, for topologies
/// without multi-link groups. `forecast = None` scores by raw differential.
pub fn oracle_rules(
    snap: &NetworkSnapshot,
    forecast: Option<&Forecast>,
    topo: &Topology,
    cfg: &OracleConfig,
) -> Vec<PriorityRule> {
    assert!(topo.multilinks().is_empty());
    let n_nodes = topo.node_count();
    let hops = bfs_hops(topo);
    let u = |a: usize, c: usize| snap.get(NodeId(a), NodeId(c)) as i64;
    let g = |a: usize, c: usize| forecast.map_or(0, |f| f.get(NodeId(a), NodeId(c)) as i64);
    let mut out = Vec::new();
    for n in 0..n_nodes {
        let total: i64 = (0..n_nodes).map(|c| u(n, c)).sum();
        if cfg.scope == AlarmScope::Node && cfg.alarm > 0 && total < cfg.alarm as i64 {
            continue;
        }
        let mut visited = vec![n];
        let mut mine: Vec<_> = topo.links().iter().filter(|l| l.source.0 == n).collect();
        mine.sort_by_key(|l| l.id);
        for l in mine {
            let k = l.dest.0;
            if !topo.policy().allows(NodeId(n), l.dest) {
                continue;
            }
            let mut scored: Vec<(i64, usize)> = Vec::new();
            for c in 0..n_nodes {
                if visited.contains(&c) {
                    continue;
                }
                let hop_ok = match cfg.hop {
                    HopFilter::Off => true,
                    HopFilter::StrictDecrease => matches!(
                        (hops[n][c], hops[k][c]),
                        (Some(a), Some(b)) if b + 1 == a
                    ),
                    HopFilter::NonIncrease => matches!(
                        (hops[n][c], hops[k][c]),
                        (Some(a), Some(b)) if b <= a
                    ),
                };
                if !hop_ok {
                    continue;
                }
                if cfg.scope == AlarmScope::Destination && cfg.alarm > 0 && u(n, c) < cfg.alarm as i64 {
                    continue;
                }
                scored.push((u(n, c) - u(k, c) - g(k, c), c));
            }
            // highest score, lowest destination among equals
            scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            if let Some(&(_, c)) = scored.first() {
                visited.push(c);
                let dq = (u(n, c) - u(k, c)).max(0);
                if dq > 0 {
                    out.push(PriorityRule {
                        from: NodeId(n),
                        to: NodeId(c),
                        via: l.id,
                        differential: dq as u32,
                    });
                }
            }
        }
    }
    out.sort_by_key(|r| r.via);
    out
}

/// Every permutation of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Best (objective, permutation) for slot bandwidths `bw` and candidate
/// weights `w`; the first maximal permutation in lexicographic order wins.
pub fn best_permutation(bw: &[u64], w: &[u64]) -> (u64, Vec<usize>) {
    let mut best: Option<(u64, Vec<usize>)> = None;
    for p in permutations(bw.len()) {
        let obj = p.iter().enumerate().map(|(slot, &from)| bw[slot] * w[from]).sum();
        if best.as_ref().is_none_or(|(b, _)| obj > *b) {
            best = Some((obj, p));
        }
    }
    best.unwrap()
}

/// Next-hop node of `n` towards `c` when `rules` overlay minimum-hop routing
/// with the lowest-numbered neighbour (then lowest link id) on ties.
pub fn overlay_next(topo: &Topology, rules: &[PriorityRule], c: usize) -> Vec<Option<usize>> {
    let hops = bfs_hops(topo);
    let mut next: Vec<Option<usize>> = (0..topo.node_count())
        .map(|n| {
            if n == c {
                return None;
            }
            topo.links()
                .iter()
                .filter(|l| l.source.0 == n && hops[l.dest.0][c].map(|h| h + 1) == hops[n][c])
                .min_by_key(|l| (l.dest, l.id))
                .map(|l| l.dest.0)
        })
        .collect();
    for r in rules.iter().filter(|r| r.to.0 == c) {
        next[r.from.0] = Some(topo.link(r.via).dest.0);
    }
    next
}

/// Whether following `next` from some node never reaches the destination.
pub fn has_cycle(next: &[Option<usize>]) -> bool {
    let n = next.len();
    (0..n).any(|start| {
        let mut u = start;
        for _ in 0..=n {
            match next[u] {
                Some(v) => u = v,
                None => return false,
            }
        }
        true
    })
}

pub fn any_cycle(topo: &Topology, rules: &[PriorityRule]) -> bool {
    (0..topo.node_count()).any(|c| has_cycle(&overlay_next(topo, rules, c)))
}

/// Partial acceptance by sorting: per node, the `ceil(alpha * k)` rules with
/// the largest differential (lowest link id on ties).
pub fn accept_by_sort(rules: &[PriorityRule], alpha: &BTreeMap<usize, f64>, default: f64) -> Vec<PriorityRule> {
    let mut kept = Vec::new();
    let mut by_node: BTreeMap<usize, Vec<PriorityRule>> = BTreeMap::new();
    for r in rules {
        by_node.entry(r.from.0).or_default().push(*r);
    }
    for (n, mut rs) in by_node {
        let a = alpha.get(&n).copied().unwrap_or(default);
        let keep = (a * rs.len() as f64).ceil() as usize;
        rs.sort_by_key(|r| (std::cmp::Reverse(r.differential), r.via));
        kept.extend(rs.into_iter().take(keep));
    }
    kept.sort_by_key(|r| r.via);
    kept
}

/// Parses `key=value` tokens of one event-log line.
pub fn fields(line: &str) -> BTreeMap<&str, &str> {
    line.split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .collect()
}

pub fn event_kind(line: &str) -> &str {
    line.split_whitespace().nth(1).unwrap_or("")
}

pub fn link_between(topo: &Topology, a: usize, b: usize) -> Option<LinkId> {
    topo.links().iter().find(|l| l.source.0 == a && l.dest.0 == b).map(|l| l.id)
}
