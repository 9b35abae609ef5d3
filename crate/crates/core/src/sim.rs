//! Slotted-time store-and-forward simulation at batch granularity.
//!
//! Every slot runs, in order: controller actuation (on multiples of the
//! period), local generation with admission control, link service under
//! the active rules, and arrivals (delivery or admission at the next hop).
//! A served batch moves exactly one hop per slot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    AcceptancePolicy, Controller, ControllerConfig, ControllerError, ForecastProvider, NetworkState,
};
use crate::engine::{check_transit_assumption, NetworkSnapshot, RuleSet};
use crate::metrics::{self, MetricsError, MetricsReport, RunInfo, SlotSample, Totals, TransitSample};
use crate::routing::{NextHopTable, RoutingError};
use crate::topology::{
    build_grid, LinkId, LinkSpec, NodeId, PeeringPolicy, Topology, TopologyError,
};
use crate::traffic::{TrafficConfig, TrafficError, TrafficSchedule};

pub const DEFAULT_BATCH_BYTES: f64 = 1e8;
pub const DEFAULT_QUEUE_CAPACITY: usize = 500;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Topology description as it appears in config documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TopologyConfig {
    Grid {
        rows: usize,
        cols: usize,
        bandwidth_bytes_per_sec: f64,
    },
    Custom {
        node_count: usize,
        links: Vec<LinkSpec>,
        #[serde(default)]
        multilinks: Vec<Vec<usize>>,
        #[serde(default)]
        deny: Vec<(usize, usize)>,
    },
}

impl TopologyConfig {
    /// 5x5 grid of 2 GB/s links.
    pub fn reference_grid() -> Self {
        TopologyConfig::Grid {
            rows: 5,
            cols: 5,
            bandwidth_bytes_per_sec: 2e9,
        }
    }

    pub fn build(&self, batch_bytes: f64, slot_sec: f64) -> Result<Topology, TopologyError> {
        match self {
            TopologyConfig::Grid {
                rows,
                cols,
                bandwidth_bytes_per_sec,
            } => build_grid(*rows, *cols, *bandwidth_bytes_per_sec, batch_bytes, slot_sec),
            TopologyConfig::Custom {
                node_count,
                links,
                multilinks,
                deny,
            } => {
                let mut policy = PeeringPolicy::allow_all();
                for &(a, b) in deny {
                    policy.deny(NodeId(a), NodeId(b));
                }
                Topology::new(*node_count, links, multilinks, policy)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: TopologyConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub acceptance: AcceptancePolicy,
    #[serde(default)]
    pub forecast: ForecastProvider,
    pub traffic: TrafficConfig,
    pub slots: u64,
    pub warmup: u64,
    #[serde(default = "one")]
    pub slot_sec: f64,
    #[serde(default = "default_batch_bytes")]
    pub batch_bytes: f64,
    #[serde(default = "default_capacity")]
    pub queue_capacity: usize,
    #[serde(default)]
    pub event_log: bool,
}

fn one() -> f64 {
    1.0
}

fn default_batch_bytes() -> f64 {
    DEFAULT_BATCH_BYTES
}

fn default_capacity() -> usize {
    DEFAULT_QUEUE_CAPACITY
}

impl SimConfig {
    /// Defaults: 5x5 grid, 600 slots with a 10% warmup,
    /// 500-batch buffers.
    pub fn new(controller: ControllerConfig, traffic: TrafficConfig) -> Self {
        Self {
            topology: TopologyConfig::reference_grid(),
            controller,
            acceptance: AcceptancePolicy::full(),
            forecast: ForecastProvider::Oracle,
            traffic,
            slots: 600,
            warmup: 60,
            slot_sec: 1.0,
            batch_bytes: DEFAULT_BATCH_BYTES,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            event_log: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.slots == 0 || self.warmup >= self.slots {
            return Err(SimError::Invalid(format!(
                "need slots > warmup >= 0, got slots={} warmup={}",
                self.slots, self.warmup
            )));
        }
        if self.queue_capacity == 0 {
            return Err(SimError::Invalid("queue capacity must be positive".into()));
        }
        if !(self.slot_sec.is_finite() && self.slot_sec > 0.0) {
            return Err(SimError::Invalid(format!("slot_sec must be positive, got {}", self.slot_sec)));
        }
        self.controller.validate()?;
        self.acceptance.validate()?;
        self.traffic.validate()?;
        Ok(())
    }

    fn info(&self) -> RunInfo {
        RunInfo {
            mode: self.controller.mode.to_string(),
            base_rate: self.traffic.base_rate,
            heterogeneity: self.traffic.heterogeneity,
            period: self.controller.period,
            alarm_level: self.controller.engine.alarm_level,
            hop_filter: self.controller.effective_hop_filter().to_string(),
            seed: self.traffic.seed,
            slots: self.slots,
            warmup: self.warmup,
            slot_sec: self.slot_sec,
            batch_bytes: self.batch_bytes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Batch {
    pub id: u64,
    pub origin: NodeId,
    pub destination: NodeId,
    pub created_at: u64,
    pub hops: u32,
}

/// Single FIFO-ordered buffer; service order is decided per link.
#[derive(Debug, Clone)]
pub struct NodeQueue {
    pub holding: Vec<Batch>,
    pub capacity: usize,
}

impl NodeQueue {
    fn has_room(&self) -> bool {
        self.holding.len() < self.capacity
    }
}

pub struct Simulation {
    config: SimConfig,
    topology: Topology,
    baseline: NextHopTable,
    schedule: TrafficSchedule,
    controller: Controller,
    queues: Vec<NodeQueue>,
    backlog: NetworkSnapshot,
    // rule_link[n * N + c]
    rule_link: Vec<Option<LinkId>>,
    active: RuleSet,
    now: u64,
    next_id: u64,
    totals: Totals,
    series: Vec<SlotSample>,
    transit: Vec<TransitSample>,
    events: Option<Vec<String>>,
    // service scratch: per out-link position, (rule-governed, baseline) indices
    buckets: Vec<(Vec<usize>, Vec<usize>)>,
    in_transit: Vec<(Batch, NodeId)>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let topology = config.topology.build(config.batch_bytes, config.slot_sec)?;
        let baseline = NextHopTable::compute(&topology)?;
        let n = topology.node_count();
        // one extra period so the oracle can look past the last actuation
        let horizon = config.slots + config.controller.period as u64;
        let schedule = TrafficSchedule::generate(&config.traffic, n, horizon)?;
        let mut controller = Controller::new(config.controller, config.acceptance.clone(), config.forecast)?;
        if config.event_log {
            controller = controller.with_log();
        }
        let queues = (0..n)
            .map(|_| NodeQueue {
                holding: Vec::new(),
                capacity: config.queue_capacity,
            })
            .collect();
        let events = config.event_log.then(Vec::new);
        Ok(Self {
            topology,
            baseline,
            schedule,
            controller,
            queues,
            backlog: NetworkSnapshot::empty(0, n),
            rule_link: vec![None; n * n],
            active: RuleSet::empty(0),
            now: 0,
            next_id: 0,
            totals: Totals::default(),
            series: Vec::with_capacity(config.slots as usize),
            transit: Vec::new(),
            events,
            buckets: Vec::new(),
            in_transit: Vec::new(),
            config,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn baseline(&self) -> &NextHopTable {
        &self.baseline
    }

    pub fn schedule(&self) -> &TrafficSchedule {
        &self.schedule
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn queues(&self) -> &[NodeQueue] {
        &self.queues
    }

    pub fn active_rules(&self) -> &RuleSet {
        &self.active
    }

    pub fn totals(&self) -> Totals {
        Totals {
            in_flight: self.queues.iter().map(|q| q.holding.len() as u64).sum(),
            ..self.totals
        }
    }

    pub fn series(&self) -> &[SlotSample] {
        &self.series
    }

    /// Current per-destination backlog.
    pub fn snapshot(&self) -> NetworkSnapshot {
        let mut s = self.backlog.clone();
        s.time = self.now;
        s
    }

    pub fn events(&self) -> Option<&[String]> {
        self.events.as_deref()
    }

    pub fn controller_log(&self) -> Option<&[String]> {
        self.controller.log()
    }

    /// Places a batch directly into a queue, bypassing admission. Returns
    /// `false` if the queue is full.
    pub fn inject(&mut self, at: NodeId, destination: NodeId) -> bool {
        assert_ne!(at, destination, "a batch cannot start at its destination");
        if !self.queues[at.0].has_room() {
            return false;
        }
        let batch = Batch {
            id: self.next_id,
            origin: at,
            destination,
            created_at: self.now,
            hops: 0,
        };
        self.next_id += 1;
        self.totals.generated += 1;
        self.log(|| format!("t={} inject id={} at={} dst={}", batch.created_at, batch.id, at, destination));
        self.enqueue(at, batch);
        true
    }

    fn log(&mut self, line: impl FnOnce() -> String) {
        if let Some(events) = self.events.as_mut() {
            events.push(line());
        }
    }

    fn enqueue(&mut self, at: NodeId, batch: Batch) {
        self.queues[at.0].holding.push(batch);
        let u = self.backlog.get(at, batch.destination);
        self.backlog.set(at, batch.destination, u + 1);
    }

    fn install(&mut self, rules: RuleSet) {
        self.rule_link.fill(None);
        let n = self.topology.node_count();
        for r in &rules.rules {
            self.rule_link[r.from.0 * n + r.to.0] = Some(r.via);
        }
        self.active = rules;
    }

    fn actuate(&mut self, t: u64) -> Result<(), SimError> {
        let mut snapshot = self.backlog.clone();
        snapshot.time = t;
        let state = NetworkState {
            snapshot: &snapshot,
            topology: &self.topology,
            baseline: &self.baseline,
            schedule: &self.schedule,
        };
        let act = self.controller.actuate(&state, t)?;
        let check = check_transit_assumption(&snapshot, &act.forecast, &self.topology, &act.installed);
        self.transit.push(TransitSample {
            slot: t,
            satisfied: check.values().filter(|&&ok| ok).count(),
            checked: check.len(),
        });
        self.install(act.installed);
        Ok(())
    }

    /// Advances one slot.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.now;
        let mut sample = SlotSample {
            slot: t,
            ..SlotSample::default()
        };
        let n_nodes = self.topology.node_count();

        if self.controller.is_actuation_slot(t) {
            self.actuate(t)?;
        }

        for n in 0..n_nodes {
            let node = NodeId(n);
            for i in 0..self.schedule.at(t, node).len() {
                let destination = self.schedule.at(t, node)[i];
                let batch = Batch {
                    id: self.next_id,
                    origin: node,
                    destination,
                    created_at: t,
                    hops: 0,
                };
                self.next_id += 1;
                sample.generated += 1;
                if self.queues[n].has_room() {
                    self.log(|| format!("t={t} gen id={} at={n} dst={destination}", batch.id));
                    self.enqueue(node, batch);
                } else {
                    sample.dropped += 1;
                    self.log(|| format!("t={t} gen id={} at={n} dst={destination}", batch.id));
                    self.log(|| format!("t={t} drop id={} at={n}", batch.id));
                }
            }
        }

        self.serve();

        let mut in_transit = std::mem::take(&mut self.in_transit);
        for (mut batch, to) in in_transit.drain(..) {
            batch.hops += 1;
            self.totals.max_hops = self.totals.max_hops.max(batch.hops);
            if to == batch.destination {
                let latency = t + 1 - batch.created_at;
                sample.delivered += 1;
                sample.latency_sum += latency;
                sample.hop_sum += batch.hops as u64;
                self.log(|| format!("t={t} deliver id={} at={to} latency={latency} hops={}", batch.id, batch.hops));
            } else if self.queues[to.0].has_room() {
                self.log(|| format!("t={t} arrive id={} at={to}", batch.id));
                self.enqueue(to, batch);
            } else {
                sample.dropped += 1;
                self.log(|| format!("t={t} drop id={} at={to}", batch.id));
            }
        }
        self.in_transit = in_transit;

        self.totals.generated += sample.generated;
        self.totals.delivered += sample.delivered;
        self.totals.dropped += sample.dropped;
        sample.total_queued = self.queues.iter().map(|q| q.holding.len() as u64).sum();
        sample.lyapunov = metrics::lyapunov(&self.backlog);
        self.series.push(sample);
        self.now += 1;
        Ok(())
    }

    /// Each out-link serves up to its bandwidth: rule-matched batches
    /// youngest first, then baseline-routed batches oldest first.
    fn serve(&mut self) {
        let n_nodes = self.topology.node_count();
        let mut leaving = Vec::new();
        for n in 0..n_nodes {
            let node = NodeId(n);
            let out = self.topology.out_link_ids(node);
            if self.queues[n].holding.is_empty() || out.is_empty() {
                continue;
            }
            if self.buckets.len() < out.len() {
                self.buckets.resize_with(out.len(), Default::default);
            }
            for (rule, base) in &mut self.buckets[..out.len()] {
                rule.clear();
                base.clear();
            }
            for (i, b) in self.queues[n].holding.iter().enumerate() {
                let ruled = self.rule_link[n * n_nodes + b.destination.0];
                let link = ruled.unwrap_or_else(|| self.baseline.next_link(node, b.destination));
                let pos = out
                    .iter()
                    .position(|&l| l == link)
                    .expect("routes leave through an out-link");
                if ruled.is_some() {
                    self.buckets[pos].0.push(i);
                } else {
                    self.buckets[pos].1.push(i);
                }
            }
            let mut taken = vec![false; self.queues[n].holding.len()];
            leaving.clear();
            for (pos, &l) in out.iter().enumerate() {
                let link = self.topology.link(l);
                let budget = link.bandwidth as usize;
                let (rule, base) = &self.buckets[pos];
                let picked = rule.iter().rev().chain(base.iter()).take(budget);
                for &i in picked {
                    taken[i] = true;
                    leaving.push((i, link.dest));
                }
            }
            if leaving.is_empty() {
                continue;
            }
            let holding = &self.queues[n].holding;
            for &(i, to) in &leaving {
                let b = holding[i];
                self.in_transit.push((b, to));
                let u = self.backlog.get(node, b.destination);
                self.backlog.set(node, b.destination, u - 1);
                if let Some(events) = self.events.as_mut() {
                    events.push(format!("t={} send id={} from={n} to={to}", self.now, b.id));
                }
            }
            let mut idx = 0;
            self.queues[n].holding.retain(|_| {
                let keep = !taken[idx];
                idx += 1;
                keep
            });
        }
    }

    /// Runs the remaining slots and aggregates.
    pub fn finish(mut self) -> Result<MetricsReport, SimError> {
        while self.now < self.config.slots {
            self.step()?;
        }
        let totals = self.totals();
        Ok(metrics::aggregate(
            self.config.info(),
            self.series,
            &self.transit,
            totals,
        )?)
    }
}

/// Runs `config.slots` slots from empty queues.
pub fn run(config: &SimConfig) -> Result<MetricsReport, SimError> {
    Simulation::new(config.clone())?.finish()
}
