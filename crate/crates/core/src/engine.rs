//! Priority flow rule derivation.
//!
//! Two selection rules are provided. The standard backpressure step picks,
//! for every link, the destination class with the largest queue
//! differential between the link's endpoints. The foresight-enabled variant
//! additionally charges each candidate with the traffic the receiving
//! neighbour is predicted to generate for that class before the next
//! actuation, filters candidates by hop distance, and keeps a per-node
//! visited set so every destination is routed over at most one link.
//!
//! Both are pure functions of their inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routing::NextHopTable;
use crate::topology::{LinkId, MultiLinkGroup, NodeId, Topology};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("invalid argument: forecast horizon {forecast} does not match controller period {period}")]
    HorizonMismatch { forecast: u32, period: u32 },
    #[error("invalid argument: {what} covers {got} nodes, topology has {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid argument: multi-link group has {members} members but {candidates} candidates")]
    GroupSizeMismatch { members: usize, candidates: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed rule line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Per-destination backlog `U(n, c)` observed at slot `time`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub time: u64,
    node_count: usize,
    queues: Vec<u32>,
}

impl NetworkSnapshot {
    pub fn empty(time: u64, node_count: usize) -> Self {
        Self {
            time,
            node_count,
            queues: vec![0; node_count * node_count],
        }
    }

    /// Row-major `node_count x node_count` matrix; the diagonal must be zero.
    pub fn from_matrix(time: u64, node_count: usize, queues: Vec<u32>) -> Result<Self, EngineError> {
        if queues.len() != node_count * node_count {
            return Err(EngineError::InvalidArgument(format!(
                "queue matrix has {} entries, expected {}",
                queues.len(),
                node_count * node_count
            )));
        }
        if let Some(c) = (0..node_count).find(|&c| queues[c * node_count + c] != 0) {
            return Err(EngineError::InvalidArgument(format!(
                "node {c} holds traffic destined to itself"
            )));
        }
        Ok(Self {
            time,
            node_count,
            queues,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    #[inline]
    pub fn get(&self, n: NodeId, c: NodeId) -> u32 {
        self.queues[n.0 * self.node_count + c.0]
    }

    /// Panics on diagonal entries: a node never queues traffic for itself.
    pub fn set(&mut self, n: NodeId, c: NodeId, count: u32) {
        assert_ne!(n, c, "diagonal backlog must stay zero");
        self.queues[n.0 * self.node_count + c.0] = count;
    }

    pub fn node_total(&self, n: NodeId) -> u64 {
        let row = &self.queues[n.0 * self.node_count..(n.0 + 1) * self.node_count];
        row.iter().map(|&u| u as u64).sum()
    }

    pub fn total(&self) -> u64 {
        self.queues.iter().map(|&u| u as u64).sum()
    }

    pub fn entries(&self) -> &[u32] {
        &self.queues
    }
}

/// Predicted batches `G(n, c)` generated over the next `horizon` slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Forecast {
    pub horizon: u32,
    node_count: usize,
    generated: Vec<u32>,
}

impl Forecast {
    pub fn zero(horizon: u32, node_count: usize) -> Self {
        Self {
            horizon,
            node_count,
            generated: vec![0; node_count * node_count],
        }
    }

    /// The same value for every `(n, c)`, diagonal included.
    pub fn uniform(horizon: u32, node_count: usize, value: u32) -> Self {
        Self {
            horizon,
            node_count,
            generated: vec![value; node_count * node_count],
        }
    }

    pub fn from_matrix(horizon: u32, node_count: usize, generated: Vec<u32>) -> Result<Self, EngineError> {
        if generated.len() != node_count * node_count {
            return Err(EngineError::InvalidArgument(format!(
                "forecast matrix has {} entries, expected {}",
                generated.len(),
                node_count * node_count
            )));
        }
        Ok(Self {
            horizon,
            node_count,
            generated,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    #[inline]
    pub fn get(&self, n: NodeId, c: NodeId) -> u32 {
        self.generated[n.0 * self.node_count + c.0]
    }

    pub fn set(&mut self, n: NodeId, c: NodeId, value: u32) {
        self.generated[n.0 * self.node_count + c.0] = value;
    }

    pub fn row_total(&self, n: NodeId) -> u64 {
        let row = &self.generated[n.0 * self.node_count..(n.0 + 1) * self.node_count];
        row.iter().map(|&g| g as u64).sum()
    }
}

/// `{from, to, via}` overlay: traffic at `from` destined to `to` leaves over
/// `via`, ahead of anything else routed on that link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityRule {
    pub from: NodeId,
    pub to: NodeId,
    pub via: LinkId,
    pub differential: u32,
}

impl fmt::Display for PriorityRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "from={} to={} via={} dq={}",
            self.from, self.to, self.via, self.differential
        )
    }
}

impl FromStr for PriorityRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut fields = [None; 4];
        for token in s.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {token:?}"))?;
            let slot = match key {
                "from" => 0,
                "to" => 1,
                "via" => 2,
                "dq" => 3,
                _ => return Err(format!("unknown key {key:?}")),
            };
            let value: usize = value
                .parse()
                .map_err(|e| format!("bad value for {key}: {e}"))?;
            if fields[slot].replace(value).is_some() {
                return Err(format!("duplicate key {key:?}"));
            }
        }
        match fields {
            [Some(from), Some(to), Some(via), Some(dq)] => Ok(PriorityRule {
                from: NodeId(from),
                to: NodeId(to),
                via: LinkId(via),
                differential: u32::try_from(dq).map_err(|e| e.to_string())?,
            }),
            _ => Err("expected from, to, via and dq".into()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub time: u64,
    pub rules: Vec<PriorityRule>,
}

impl RuleSet {
    pub fn empty(time: u64) -> Self {
        Self {
            time,
            rules: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// One `from=<n> to=<c> via=<link> dq=<int>` line per rule.
    pub fn to_text(&self) -> String {
        self.rules.iter().map(|r| format!("{r}\n")).collect()
    }

    /// Inverse of [`RuleSet::to_text`]. Blank lines and `#` comments are skipped.
    pub fn from_text(time: u64, text: &str) -> Result<Self, EngineError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let rule = line.parse().map_err(|reason| EngineError::Parse {
                line: i + 1,
                reason,
            })?;
            rules.push(rule);
        }
        Ok(Self { time, rules })
    }

    /// Checks the structural invariants: one rule per link, distinct
    /// destinations per source node, strictly positive differentials and
    /// `via` leaving `from`.
    pub fn check_invariants(&self, topology: &Topology) -> Result<(), String> {
        let mut links = BTreeSet::new();
        let mut dests = BTreeSet::new();
        for r in &self.rules {
            if r.differential == 0 {
                return Err(format!("zero differential rule {r}"));
            }
            if topology.link(r.via).source != r.from {
                return Err(format!("rule {r} uses a link that does not leave its node"));
            }
            if !links.insert(r.via) {
                return Err(format!("link {} carries two rules", r.via));
            }
            if !dests.insert((r.from, r.to)) {
                return Err(format!("node {} routes {} twice", r.from, r.to));
            }
        }
        Ok(())
    }
}

/// Restriction applied to candidate destinations `c` on a link `n -> k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopFilter {
    /// `hop(k, c) == hop(n, c) - 1`
    #[default]
    StrictDecrease,
    /// `hop(k, c) <= hop(n, c)`
    NonIncrease,
    Off,
}

impl HopFilter {
    fn admits(self, topology: &Topology, n: NodeId, k: NodeId, c: NodeId) -> bool {
        let here = topology.hop_distance(n, c);
        let there = topology.hop_distance(k, c);
        match (self, here, there) {
            (HopFilter::Off, _, _) => true,
            (_, Some(h), Some(t)) => match self {
                HopFilter::StrictDecrease => t + 1 == h,
                HopFilter::NonIncrease => t <= h,
                HopFilter::Off => unreachable!(),
            },
            _ => false,
        }
    }
}

impl fmt::Display for HopFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HopFilter::StrictDecrease => "strict_decrease",
            HopFilter::NonIncrease => "non_increase",
            HopFilter::Off => "off",
        })
    }
}

/// Which backlog the alarm threshold is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmScope {
    /// Only destinations with `U(n, c) >= alarm_level` are candidates.
    #[default]
    Destination,
    /// A node participates only while its total backlog reaches `alarm_level`.
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub alarm_level: u32,
    pub alarm_scope: AlarmScope,
    pub hop_filter: HopFilter,
    pub loop_detection: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alarm_level: 0,
            alarm_scope: AlarmScope::default(),
            hop_filter: HopFilter::StrictDecrease,
            loop_detection: false,
        }
    }
}

impl EngineConfig {
    /// Loop detection is mandatory unless the hop filter rules cycles out.
    pub fn effective_loop_detection(&self) -> bool {
        self.loop_detection || self.hop_filter != HopFilter::StrictDecrease
    }
}

/// `U(n, c) - (U(k, c) + G(k, c))` for offloading class `c` from `n` to `k`.
pub fn delta_score(
    snapshot: &NetworkSnapshot,
    forecast: &Forecast,
    n: NodeId,
    neighbor: NodeId,
    c: NodeId,
) -> i64 {
    snapshot.get(n, c) as i64 - snapshot.get(neighbor, c) as i64 - forecast.get(neighbor, c) as i64
}

/// A destination chosen for one link together with its raw differential.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub dest: NodeId,
    pub differential: u32,
}

/// Reorders the destination assignments of a multi-link group so that
/// `sum(bandwidth * differential)` is maximal. All `k!` orderings are
/// examined; among equally good ones the lexicographically smallest
/// permutation wins, so symmetric groups come back unchanged.
pub fn assign_multilinks(
    group: &MultiLinkGroup,
    topology: &Topology,
    candidates: &[Option<Assignment>],
) -> Result<Vec<Option<Assignment>>, EngineError> {
    if group.members.len() != candidates.len() {
        return Err(EngineError::GroupSizeMismatch {
            members: group.members.len(),
            candidates: candidates.len(),
        });
    }
    let bandwidth: Vec<u64> = group
        .members
        .iter()
        .map(|&l| topology.link(l).bandwidth as u64)
        .collect();
    let weight = |a: &Option<Assignment>| a.map_or(0, |a| a.differential as u64);

    let k = candidates.len();
    let mut best: Option<(u64, Vec<usize>)> = None;
    for perm in (0..k).permutations(k) {
        let objective: u64 = perm
            .iter()
            .enumerate()
            .map(|(slot, &from)| bandwidth[slot] * weight(&candidates[from]))
            .sum();
        let better = match &best {
            None => true,
            Some((obj, p)) => objective > *obj || (objective == *obj && perm < *p),
        };
        if better {
            best = Some((objective, perm));
        }
    }
    let (_, perm) = best.expect("at least the identity permutation");
    Ok(perm.into_iter().map(|from| candidates[from]).collect())
}

fn check_dims(
    snapshot: &NetworkSnapshot,
    forecast: Option<&Forecast>,
    topology: &Topology,
    baseline: &NextHopTable,
) -> Result<(), EngineError> {
    let expected = topology.node_count();
    let mut dims = vec![("snapshot", snapshot.node_count()), ("baseline", baseline.node_count())];
    if let Some(f) = forecast {
        dims.push(("forecast", f.node_count()));
    }
    for (what, got) in dims {
        if got != expected {
            return Err(EngineError::DimensionMismatch {
                what,
                got,
                expected,
            });
        }
    }
    Ok(())
}

/// Per-link destination choice shared by both selection rules. A `None`
/// forecast scores candidates by the raw differential.
fn derive_rules(
    snapshot: &NetworkSnapshot,
    forecast: Option<&Forecast>,
    topology: &Topology,
    alarm_level: u32,
    alarm_scope: AlarmScope,
    hop_filter: HopFilter,
) -> RuleSet {
    let node_count = topology.node_count();
    let mut chosen: Vec<Option<Assignment>> = vec![None; topology.links().len()];
    let mut visited = vec![false; node_count];

    for n in topology.nodes() {
        if alarm_scope == AlarmScope::Node
            && alarm_level > 0
            && snapshot.node_total(n) < alarm_level as u64
        {
            continue;
        }
        visited.fill(false);
        visited[n.0] = true;
        for link in topology.out_links(n) {
            if !topology.policy().allows(n, link.dest) {
                continue;
            }
            let k = link.dest;
            let mut best: Option<(i64, NodeId)> = None;
            for c in topology.nodes() {
                if visited[c.0] || !hop_filter.admits(topology, n, k, c) {
                    continue;
                }
                if alarm_scope == AlarmScope::Destination
                    && alarm_level > 0
                    && snapshot.get(n, c) < alarm_level
                {
                    continue;
                }
                let score = match forecast {
                    Some(f) => delta_score(snapshot, f, n, k, c),
                    None => snapshot.get(n, c) as i64 - snapshot.get(k, c) as i64,
                };
                // strict comparison keeps the lowest destination on ties
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, c));
                }
            }
            if let Some((_, c)) = best {
                visited[c.0] = true;
                let differential = snapshot.get(n, c).saturating_sub(snapshot.get(k, c));
                chosen[link.id.0] = Some(Assignment {
                    dest: c,
                    differential,
                });
            }
        }
    }

    for group in topology.multilinks() {
        let candidates: Vec<_> = group.members.iter().map(|l| chosen[l.0]).collect();
        let reordered = assign_multilinks(group, topology, &candidates)
            .expect("candidate list is built from the group itself");
        for (l, a) in group.members.iter().zip(reordered) {
            chosen[l.0] = a;
        }
    }

    let rules = topology
        .links()
        .iter()
        .filter_map(|link| {
            chosen[link.id.0]
                .filter(|a| a.differential > 0)
                .map(|a| PriorityRule {
                    from: link.source,
                    to: a.dest,
                    via: link.id,
                    differential: a.differential,
                })
        })
        .collect();
    RuleSet {
        time: snapshot.time,
        rules,
    }
}

/// Standard backpressure selection before loop filtering: every permitted
/// link takes the destination with the largest raw differential among
/// unvisited, alarm-qualified destinations.
pub fn sbpr_rules_unfiltered(
    snapshot: &NetworkSnapshot,
    topology: &Topology,
    config: &EngineConfig,
) -> RuleSet {
    assert_eq!(snapshot.node_count(), topology.node_count(), "snapshot size");
    derive_rules(
        snapshot,
        None,
        topology,
        config.alarm_level,
        config.alarm_scope,
        HopFilter::Off,
    )
}

/// Standard backpressure rules with loop filtering. Only the alarm settings
/// of `config` apply; the hop filter is always off.
pub fn sbpr_rules(
    snapshot: &NetworkSnapshot,
    topology: &Topology,
    baseline: &NextHopTable,
    config: &EngineConfig,
) -> RuleSet {
    let rules = sbpr_rules_unfiltered(snapshot, topology, config);
    detect_and_filter_loops(&rules, baseline, topology)
}

/// Foresight-scored selection before any loop filtering.
pub fn fbpr_rules_unfiltered(
    snapshot: &NetworkSnapshot,
    forecast: &Forecast,
    topology: &Topology,
    config: &EngineConfig,
) -> RuleSet {
    assert_eq!(snapshot.node_count(), topology.node_count(), "snapshot size");
    assert_eq!(forecast.node_count(), topology.node_count(), "forecast size");
    derive_rules(
        snapshot,
        Some(forecast),
        topology,
        config.alarm_level,
        config.alarm_scope,
        config.hop_filter,
    )
}

/// Foresight-enabled backpressure rules for a controller acting every
/// `period` slots. Loop filtering runs when configured, and always when the
/// hop filter is weaker than strict decrease.
pub fn fbpr_rules(
    snapshot: &NetworkSnapshot,
    forecast: &Forecast,
    topology: &Topology,
    baseline: &NextHopTable,
    config: &EngineConfig,
    period: u32,
) -> Result<RuleSet, EngineError> {
    if forecast.horizon != period {
        return Err(EngineError::HorizonMismatch {
            forecast: forecast.horizon,
            period,
        });
    }
    check_dims(snapshot, Some(forecast), topology, baseline)?;
    let rules = fbpr_rules_unfiltered(snapshot, forecast, topology, config);
    Ok(if config.effective_loop_detection() {
        detect_and_filter_loops(&rules, baseline, topology)
    } else {
        rules
    })
}

/// Next node towards `c` for every node once `rules` overlay the baseline.
/// `None` at `c` itself.
pub fn effective_next_hops(
    rules: &[PriorityRule],
    c: NodeId,
    baseline: &NextHopTable,
    topology: &Topology,
) -> Vec<Option<NodeId>> {
    let mut next: Vec<Option<NodeId>> = topology
        .nodes()
        .map(|n| (n != c).then(|| topology.link(baseline.next_link(n, c)).dest))
        .collect();
    for r in rules.iter().filter(|r| r.to == c) {
        next[r.from.0] = Some(topology.link(r.via).dest);
    }
    next
}

/// First cycle of a functional graph, scanning start nodes in ascending order.
fn find_cycle(next: &[Option<NodeId>]) -> Option<Vec<NodeId>> {
    // 0 = unseen, 1 = on current walk, 2 = done
    let mut state = vec![0u8; next.len()];
    for start in 0..next.len() {
        if state[start] != 0 {
            continue;
        }
        let mut walk = Vec::new();
        let mut u = start;
        loop {
            match state[u] {
                0 => {
                    state[u] = 1;
                    walk.push(u);
                    match next[u] {
                        Some(v) => u = v.0,
                        None => break,
                    }
                }
                1 => {
                    let at = walk.iter().position(|&w| w == u).expect("on walk");
                    return Some(walk[at..].iter().map(|&w| NodeId(w)).collect());
                }
                _ => break,
            }
        }
        for w in walk {
            state[w] = 2;
        }
    }
    None
}

/// Removes rules until no destination's forwarding graph has a cycle. On
/// each cycle the rule with the smallest differential (then link id) goes.
pub fn detect_and_filter_loops(
    rules: &RuleSet,
    baseline: &NextHopTable,
    topology: &Topology,
) -> RuleSet {
    let mut by_dest: BTreeMap<NodeId, Vec<PriorityRule>> = BTreeMap::new();
    for r in &rules.rules {
        by_dest.entry(r.to).or_default().push(*r);
    }
    let mut removed = BTreeSet::new();
    for (&c, group) in by_dest.iter_mut() {
        while let Some(cycle) = find_cycle(&effective_next_hops(group, c, baseline, topology)) {
            let on_cycle: BTreeSet<NodeId> = cycle.into_iter().collect();
            let (idx, victim) = group
                .iter()
                .enumerate()
                .filter(|(_, r)| on_cycle.contains(&r.from))
                .min_by_key(|(_, r)| (r.differential, r.via))
                .expect("baseline routing is acyclic, so every cycle holds a rule");
            removed.insert(victim.via);
            group.remove(idx);
        }
    }
    RuleSet {
        time: rules.time,
        rules: rules
            .rules
            .iter()
            .filter(|r| !removed.contains(&r.via))
            .copied()
            .collect(),
    }
}

/// Whether transit capacity into the receiving neighbour exceeds the
/// foresight differential for every chosen rule:
/// `T * (sum of bandwidth into k + bandwidth of via) > U(n,c) - U(k,c) - G(k,c)`.
/// Purely diagnostic.
pub fn check_transit_assumption(
    snapshot: &NetworkSnapshot,
    forecast: &Forecast,
    topology: &Topology,
    chosen: &RuleSet,
) -> BTreeMap<(NodeId, NodeId), bool> {
    let horizon = forecast.horizon as i64;
    chosen
        .rules
        .iter()
        .map(|r| {
            let link = topology.link(r.via);
            let k = link.dest;
            let inbound: i64 = topology.in_links(k).map(|l| l.bandwidth as i64).sum();
            let lhs = horizon * (inbound + link.bandwidth as i64);
            let rhs = delta_score(snapshot, forecast, r.from, k, r.to);
            ((r.from, r.to), lhs > rhs)
        })
        .collect()
}
