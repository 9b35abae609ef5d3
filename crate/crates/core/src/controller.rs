//! Central control plane: periodic snapshots, forecasts, rule derivation
//! and per-node acceptance of the proposed rule set.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    detect_and_filter_loops, fbpr_rules, sbpr_rules, EngineConfig, EngineError, Forecast,
    HopFilter, NetworkSnapshot, PriorityRule, RuleSet,
};
use crate::routing::NextHopTable;
use crate::topology::{NodeId, Topology};
use crate::traffic::{TrafficError, TrafficSchedule};

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("slot {slot} is not an actuation slot for period {period}")]
    NotActuationSlot { slot: u64, period: u32 },
    #[error("invalid controller config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("forecast unavailable: {0}")]
    Forecast(#[from] TrafficError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OspfOnly,
    Sbpr,
    Fbpr,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::OspfOnly => "ospf_only",
            Mode::Sbpr => "sbpr",
            Mode::Fbpr => "fbpr",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ospf_only" | "ospf" => Ok(Mode::OspfOnly),
            "sbpr" => Ok(Mode::Sbpr),
            "fbpr" => Ok(Mode::Fbpr),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Slots between snapshots.
    pub period: u32,
    #[serde(default)]
    pub engine: EngineConfig,
    pub mode: Mode,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.period == 0 {
            return Err(ControllerError::Invalid("period must be at least one slot".into()));
        }
        Ok(())
    }

    /// Hop filter actually used by the selected mode.
    pub fn effective_hop_filter(&self) -> HopFilter {
        match self.mode {
            Mode::Sbpr => HopFilter::Off,
            _ => self.engine.hop_filter,
        }
    }
}

/// Fraction of proposed rules each node installs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptancePolicy {
    #[serde(default = "full")]
    pub default: f64,
    #[serde(default)]
    pub per_node: BTreeMap<usize, f64>,
}

fn full() -> f64 {
    1.0
}

impl Default for AcceptancePolicy {
    fn default() -> Self {
        Self::full()
    }
}

impl AcceptancePolicy {
    pub fn full() -> Self {
        Self {
            default: 1.0,
            per_node: BTreeMap::new(),
        }
    }

    pub fn uniform(fraction: f64) -> Self {
        Self {
            default: fraction,
            per_node: BTreeMap::new(),
        }
    }

    pub fn fraction(&self, n: NodeId) -> f64 {
        self.per_node.get(&n.0).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let ok = |a: f64| (0.0..=1.0).contains(&a);
        if !ok(self.default) {
            return Err(ControllerError::Invalid(format!(
                "acceptance fraction {} outside [0, 1]",
                self.default
            )));
        }
        if let Some((n, a)) = self.per_node.iter().find(|(_, &a)| !ok(a)) {
            return Err(ControllerError::Invalid(format!(
                "acceptance fraction {a} for node {n} outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Keeps, per node, the `ceil(fraction * k)` highest-differential rules
    /// out of its `k` proposals (ties by link id).
    pub fn apply(&self, proposed: &RuleSet) -> RuleSet {
        let mut by_node: BTreeMap<NodeId, Vec<PriorityRule>> = BTreeMap::new();
        for r in &proposed.rules {
            by_node.entry(r.from).or_default().push(*r);
        }
        let mut installed = Vec::with_capacity(proposed.rules.len());
        for (n, mut rules) in by_node {
            let keep = (self.fraction(n) * rules.len() as f64).ceil() as usize;
            rules.sort_by(|a, b| b.differential.cmp(&a.differential).then(a.via.cmp(&b.via)));
            installed.extend(rules.into_iter().take(keep));
        }
        installed.sort_by_key(|r| r.via);
        RuleSet {
            time: proposed.time,
            rules: installed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ForecastProvider {
    /// Exact future generation read from the traffic schedule.
    #[default]
    Oracle,
    Zero,
    /// Past `window` slots of generation, rescaled to the horizon.
    MovingAverage { window: u32 },
}

/// Exact batch counts the schedule creates in slots `[t, t + horizon)`.
pub fn oracle_forecast(
    schedule: &TrafficSchedule,
    t: u64,
    horizon: u32,
) -> Result<Forecast, ControllerError> {
    let counts = schedule.counts(t, t + horizon as u64)?;
    Ok(Forecast::from_matrix(horizon, schedule.node_count(), counts)?)
}

fn moving_average_forecast(
    schedule: &TrafficSchedule,
    t: u64,
    horizon: u32,
    window: u32,
) -> Result<Forecast, ControllerError> {
    let n = schedule.node_count();
    let from = t.saturating_sub(window as u64);
    let observed = t - from;
    if observed == 0 {
        return Ok(Forecast::zero(horizon, n));
    }
    let counts = schedule.counts(from, t)?;
    let scale = horizon as f64 / observed as f64;
    let scaled = counts
        .into_iter()
        .map(|g| (g as f64 * scale).round() as u32)
        .collect();
    Ok(Forecast::from_matrix(horizon, n, scaled)?)
}

/// What the simulator exposes to the controller at an actuation slot.
pub struct NetworkState<'a> {
    pub snapshot: &'a NetworkSnapshot,
    pub topology: &'a Topology,
    pub baseline: &'a NextHopTable,
    pub schedule: &'a TrafficSchedule,
}

#[derive(Debug, Clone)]
pub struct Actuation {
    pub forecast: Forecast,
    pub proposed: RuleSet,
    pub installed: RuleSet,
}

#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    acceptance: AcceptancePolicy,
    provider: ForecastProvider,
    log: Option<Vec<String>>,
}

impl Controller {
    pub fn new(
        config: ControllerConfig,
        acceptance: AcceptancePolicy,
        provider: ForecastProvider,
    ) -> Result<Self, ControllerError> {
        config.validate()?;
        acceptance.validate()?;
        if let ForecastProvider::MovingAverage { window: 0 } = provider {
            return Err(ControllerError::Invalid("moving average window must be positive".into()));
        }
        Ok(Self {
            config,
            acceptance,
            provider,
            log: None,
        })
    }

    /// Records `t=<slot> mode=<m> proposed=<k> installed=<k'>` per actuation.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn log(&self) -> Option<&[String]> {
        self.log.as_deref()
    }

    pub fn is_actuation_slot(&self, t: u64) -> bool {
        t.is_multiple_of(self.config.period as u64)
    }

    pub fn forecast(&self, schedule: &TrafficSchedule, t: u64) -> Result<Forecast, ControllerError> {
        let horizon = self.config.period;
        match self.provider {
            ForecastProvider::Oracle => oracle_forecast(schedule, t, horizon),
            ForecastProvider::Zero => Ok(Forecast::zero(horizon, schedule.node_count())),
            ForecastProvider::MovingAverage { window } => {
                moving_average_forecast(schedule, t, horizon, window)
            }
        }
    }

    /// Derives and filters the rule set that replaces the active one at `t`.
    pub fn actuate(&mut self, state: &NetworkState<'_>, t: u64) -> Result<Actuation, ControllerError> {
        if !self.is_actuation_slot(t) {
            return Err(ControllerError::NotActuationSlot {
                slot: t,
                period: self.config.period,
            });
        }
        let forecast = self.forecast(state.schedule, t)?;
        let engine = &self.config.engine;
        let (proposed, loop_check) = match self.config.mode {
            Mode::OspfOnly => (RuleSet::empty(t), false),
            Mode::Sbpr => (
                sbpr_rules(state.snapshot, state.topology, state.baseline, engine),
                true,
            ),
            Mode::Fbpr => (
                fbpr_rules(
                    state.snapshot,
                    &forecast,
                    state.topology,
                    state.baseline,
                    engine,
                    self.config.period,
                )?,
                engine.effective_loop_detection(),
            ),
        };
        let mut installed = self.acceptance.apply(&proposed);
        // dropping rules can reroute a node onto another rule's path
        if loop_check && installed.len() < proposed.len() {
            installed = detect_and_filter_loops(&installed, state.baseline, state.topology);
        }
        if let Some(log) = self.log.as_mut() {
            log.push(format!(
                "t={t} mode={} proposed={} installed={}",
                self.config.mode,
                proposed.len(),
                installed.len()
            ));
        }
        Ok(Actuation {
            forecast,
            proposed,
            installed,
        })
    }
}
