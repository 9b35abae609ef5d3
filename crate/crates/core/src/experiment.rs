//! Parameter sweeps with seed fan-out and CSV/JSON result tables.
//!
//! Seed for seed offset `s` at sweep point `i` is
//! `base_seed + i * seeds_per_point + s`. Every mode and period at one
//! sweep point sees the same traffic seeds.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::Mode;
use crate::engine::{AlarmScope, EngineConfig, HopFilter};
use crate::metrics::MetricsReport;
use crate::sim::{self, SimConfig, SimError};

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Raw-row columns, in order.
pub const RAW_COLUMNS: [&str; 16] = [
    "experiment",
    "mode",
    "G",
    "v",
    "T",
    "alarm",
    "hop_filter",
    "seed",
    "slots",
    "warmup",
    "avg_delivery_slots",
    "overflow_rate_bps",
    "throughput_Bps",
    "mean_total_queue",
    "mean_lyapunov",
    "transit_fraction",
];

/// Extra columns filled on seed-averaged rows.
pub const AVERAGE_COLUMNS: [&str; 4] = [
    "n_seeds",
    "stddev_latency",
    "stddev_overflow",
    "stddev_throughput",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("run {mode} {param}={value} seed={seed} failed: {source}")]
    Run {
        mode: Mode,
        param: SweepParam,
        value: f64,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("encoding results: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "G")]
    G,
    #[serde(rename = "v")]
    V,
    #[serde(rename = "T")]
    T,
    #[serde(rename = "alarm")]
    Alarm,
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::G => "G",
            SweepParam::V => "v",
            SweepParam::T => "T",
            SweepParam::Alarm => "alarm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub template: SimConfig,
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    /// Each mode is run at every point; an empty list means the template's mode.
    #[serde(default)]
    pub modes: Vec<Mode>,
    /// Extra period axis crossed with the sweep; empty means the template's period.
    #[serde(default)]
    pub periods: Vec<u32>,
    pub seeds_per_point: u32,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.values.is_empty() {
            return Err(ExperimentError::Invalid("at least one sweep value is required".into()));
        }
        if self.seeds_per_point == 0 {
            return Err(ExperimentError::Invalid("at least one seed per point is required".into()));
        }
        if let Some(bad) = self.values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(ExperimentError::Invalid(format!("sweep value {bad} is not a non-negative number")));
        }
        if matches!(self.parameter, SweepParam::T | SweepParam::Alarm)
            && self.values.iter().any(|v| v.fract() != 0.0)
        {
            return Err(ExperimentError::Invalid(format!(
                "{} takes whole numbers",
                self.parameter
            )));
        }
        if self.parameter == SweepParam::T && !self.periods.is_empty() {
            return Err(ExperimentError::Invalid("T cannot be both swept and crossed".into()));
        }
        self.template
            .validate()
            .map_err(|e| ExperimentError::Invalid(e.to_string()))
    }

    pub fn seed(&self, point: usize, offset: u32) -> u64 {
        self.base_seed + point as u64 * self.seeds_per_point as u64 + offset as u64
    }

    fn modes(&self) -> Vec<Mode> {
        if self.modes.is_empty() {
            vec![self.template.controller.mode]
        } else {
            self.modes.clone()
        }
    }

    fn periods(&self) -> Vec<Option<u32>> {
        if self.periods.is_empty() {
            vec![None]
        } else {
            self.periods.iter().copied().map(Some).collect()
        }
    }

    /// Every run of the experiment, in output order.
    pub fn jobs(&self) -> Vec<SimConfig> {
        let mut jobs = Vec::new();
        for (point, &value) in self.values.iter().enumerate() {
            for period in self.periods() {
                for mode in self.modes() {
                    for offset in 0..self.seeds_per_point {
                        let mut c = self.template.clone();
                        match self.parameter {
                            SweepParam::G => c.traffic.base_rate = value,
                            SweepParam::V => c.traffic.heterogeneity = value,
                            SweepParam::T => c.controller.period = value as u32,
                            SweepParam::Alarm => c.controller.engine.alarm_level = value as u32,
                        }
                        if let Some(p) = period {
                            c.controller.period = p;
                        }
                        c.controller.mode = mode;
                        c.traffic.seed = self.seed(point, offset);
                        jobs.push(c);
                    }
                }
            }
        }
        jobs
    }

    fn sweep_value(&self, c: &SimConfig) -> f64 {
        match self.parameter {
            SweepParam::G => c.traffic.base_rate,
            SweepParam::V => c.traffic.heterogeneity,
            SweepParam::T => c.controller.period as f64,
            SweepParam::Alarm => c.controller.engine.alarm_level as f64,
        }
    }
}

fn fig_template(period: u32, engine: EngineConfig) -> SimConfig {
    use crate::controller::ControllerConfig;
    use crate::traffic::TrafficConfig;
    SimConfig::new(
        ControllerConfig {
            period,
            engine,
            mode: Mode::Fbpr,
        },
        TrafficConfig {
            base_rate: 10.0,
            heterogeneity: 0.0,
            seed: 0,
        },
    )
}

/// Alarm level used by both presets: 20% of a 500-batch buffer, compared
/// against each node's total backlog.
pub const PRESET_ALARM: u32 = 100;

/// Offered load per node for the heterogeneity sweep.
pub const FIG4_BASE_RATE: f64 = 15.0;

/// Load sweep G = 5..20 on the 5x5 grid, three routing modes, T = 5.
pub fn preset_fig3() -> ExperimentSpec {
    let engine = EngineConfig {
        alarm_level: PRESET_ALARM,
        alarm_scope: AlarmScope::Node,
        hop_filter: HopFilter::StrictDecrease,
        loop_detection: false,
    };
    ExperimentSpec {
        name: "fig3".into(),
        template: fig_template(5, engine),
        parameter: SweepParam::G,
        values: (5..=20).map(f64::from).collect(),
        modes: vec![Mode::OspfOnly, Mode::Sbpr, Mode::Fbpr],
        periods: Vec::new(),
        seeds_per_point: 50,
        base_seed: 0,
        output: None,
    }
}

/// Heterogeneity sweep v = 0.1..0.5 crossed with T in {5, 15}, with the
/// foresight variant's hop filter off and loop detection on.
pub fn preset_fig4() -> ExperimentSpec {
    let engine = EngineConfig {
        alarm_level: PRESET_ALARM,
        alarm_scope: AlarmScope::Node,
        hop_filter: HopFilter::Off,
        loop_detection: true,
    };
    let mut template = fig_template(5, engine);
    template.traffic.base_rate = FIG4_BASE_RATE;
    ExperimentSpec {
        name: "fig4".into(),
        template,
        parameter: SweepParam::V,
        values: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        modes: vec![Mode::Sbpr, Mode::Fbpr],
        periods: vec![5, 15],
        seeds_per_point: 50,
        base_seed: 0,
        output: None,
    }
}

/// One CSV row. `seed` is `None` on seed-averaged rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub mode: Mode,
    #[serde(rename = "G")]
    pub g: f64,
    pub v: f64,
    #[serde(rename = "T")]
    pub t: u32,
    pub alarm: u32,
    pub hop_filter: String,
    pub seed: Option<u64>,
    pub slots: u64,
    pub warmup: u64,
    pub avg_delivery_slots: f64,
    pub overflow_rate_bps: f64,
    #[serde(rename = "throughput_Bps")]
    pub throughput_bps: f64,
    pub mean_total_queue: f64,
    pub mean_lyapunov: f64,
    pub transit_fraction: f64,
    pub n_seeds: Option<u32>,
    pub stddev_latency: Option<f64>,
    pub stddev_overflow: Option<f64>,
    pub stddev_throughput: Option<f64>,
}

impl ResultRow {
    pub fn from_report(experiment: &str, mode: Mode, r: &MetricsReport) -> Self {
        Self {
            experiment: experiment.to_string(),
            mode,
            g: r.info.base_rate,
            v: r.info.heterogeneity,
            t: r.info.period,
            alarm: r.info.alarm_level,
            hop_filter: r.info.hop_filter.clone(),
            seed: Some(r.info.seed),
            slots: r.info.slots,
            warmup: r.info.warmup,
            avg_delivery_slots: r.avg_delivery_slots,
            overflow_rate_bps: r.overflow_rate,
            throughput_bps: r.throughput,
            mean_total_queue: r.mean_total_queue,
            mean_lyapunov: r.mean_lyapunov,
            transit_fraction: r.transit_fraction,
            n_seeds: None,
            stddev_latency: None,
            stddev_overflow: None,
            stddev_throughput: None,
        }
    }

    pub fn is_average(&self) -> bool {
        self.seed.is_none()
    }

    fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        vec![
            self.experiment.clone(),
            self.mode.to_string(),
            fmt_f64(self.g),
            fmt_f64(self.v),
            self.t.to_string(),
            self.alarm.to_string(),
            self.hop_filter.clone(),
            self.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
            self.slots.to_string(),
            self.warmup.to_string(),
            fmt_f64(self.avg_delivery_slots),
            fmt_f64(self.overflow_rate_bps),
            fmt_f64(self.throughput_bps),
            fmt_f64(self.mean_total_queue),
            fmt_f64(self.mean_lyapunov),
            fmt_f64(self.transit_fraction),
            self.n_seeds.map(|n| n.to_string()).unwrap_or_default(),
            opt(self.stddev_latency),
            opt(self.stddev_overflow),
            opt(self.stddev_throughput),
        ]
    }
}

fn fmt_f64(x: f64) -> String {
    // shortest round-trip representation, stable across runs
    format!("{x}")
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Raw rows followed by one seed-averaged row per (value, period, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn raw(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| !r.is_average())
    }

    pub fn averaged(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.is_average())
    }

    pub fn header() -> Vec<&'static str> {
        RAW_COLUMNS.iter().chain(AVERAGE_COLUMNS.iter()).copied().collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header())?;
        for row in &self.rows {
            w.write_record(row.fields())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn to_json_string(&self) -> Result<String, ExperimentError> {
        serde_json::to_string_pretty(&self.rows).map_err(|e| ExperimentError::Encode(e.to_string()))
    }

    /// Writes the table, creating parent directories as needed.
    pub fn save(&self, path: &Path, format: OutputFormat) -> Result<(), ExperimentError> {
        let io_err = |source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let body = match format {
            OutputFormat::Csv => self.to_csv_string(),
            OutputFormat::Json => self.to_json_string()?,
        };
        fs::write(path, body).map_err(io_err)
    }
}

/// Runs every job of `spec`, up to `parallel` at a time (0 = all cores).
/// Results are ordered by job key, never by completion order.
pub fn run_experiment(spec: &ExperimentSpec, parallel: usize) -> Result<ResultTable, ExperimentError> {
    spec.validate()?;
    let jobs = spec.jobs();
    let execute = |c: &SimConfig| {
        sim::run(c).map_err(|source| ExperimentError::Run {
            mode: c.controller.mode,
            param: spec.parameter,
            value: spec.sweep_value(c),
            seed: c.traffic.seed,
            source,
        })
    };
    let reports: Vec<MetricsReport> = if parallel == 1 {
        jobs.iter().map(execute).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(execute).collect::<Result<_, _>>())?
    };

    let mut rows: Vec<ResultRow> = jobs
        .iter()
        .zip(&reports)
        .map(|(c, r)| ResultRow::from_report(&spec.name, c.controller.mode, r))
        .collect();

    let per_point = spec.seeds_per_point as usize;
    let averaged: Vec<ResultRow> = rows
        .chunks(per_point)
        .map(|group| {
            let col = |f: fn(&ResultRow) -> f64| group.iter().map(f).collect::<Vec<_>>();
            let latency = col(|r| r.avg_delivery_slots);
            let overflow = col(|r| r.overflow_rate_bps);
            let throughput = col(|r| r.throughput_bps);
            ResultRow {
                seed: None,
                avg_delivery_slots: mean(&latency),
                overflow_rate_bps: mean(&overflow),
                throughput_bps: mean(&throughput),
                mean_total_queue: mean(&col(|r| r.mean_total_queue)),
                mean_lyapunov: mean(&col(|r| r.mean_lyapunov)),
                transit_fraction: mean(&col(|r| r.transit_fraction)),
                n_seeds: Some(group.len() as u32),
                stddev_latency: Some(stddev(&latency)),
                stddev_overflow: Some(stddev(&overflow)),
                stddev_throughput: Some(stddev(&throughput)),
                ..group[0].clone()
            }
        })
        .collect();
    rows.extend(averaged);
    Ok(ResultTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentSpec {
        let mut spec = preset_fig3();
        spec.values = vec![4.0];
        spec.modes = vec![Mode::Fbpr];
        spec.seeds_per_point = 3;
        spec.template.slots = 40;
        spec.template.warmup = 4;
        spec
    }

    #[test]
    fn presets_match_experiment_protocol() {
        let f3 = preset_fig3();
        assert!(f3.values.contains(&5.0) && f3.values.contains(&20.0));
        assert_eq!(f3.template.controller.engine.alarm_level, 100);
        assert_eq!(f3.template.controller.engine.alarm_scope, AlarmScope::Node);
        assert_eq!(f3.modes.len(), 3);
        assert_eq!(f3.template.controller.period, 5);
        assert_eq!(f3.seeds_per_point, 50);
        assert_eq!(f3.template.traffic.heterogeneity, 0.0);

        let f4 = preset_fig4();
        assert_eq!(f4.template.controller.engine.hop_filter, HopFilter::Off);
        assert!(f4.template.controller.engine.loop_detection);
        assert_eq!(f4.periods, vec![5, 15]);
        assert_eq!(f4.seeds_per_point, 50);
        assert_eq!(f4.modes, vec![Mode::Sbpr, Mode::Fbpr]);
        assert_eq!(f4.values, vec![0.1, 0.2, 0.3, 0.4, 0.5]);
    }

    #[test]
    fn seed_derivation() {
        let mut spec = tiny();
        spec.base_seed = 100;
        spec.values = vec![1.0, 2.0];
        spec.modes = vec![Mode::Sbpr, Mode::Fbpr];
        let seeds: Vec<_> = spec.jobs().iter().map(|c| c.traffic.seed).collect();
        assert_eq!(seeds, vec![100, 101, 102, 100, 101, 102, 103, 104, 105, 103, 104, 105]);
    }

    #[test]
    fn three_seeds_give_three_raw_rows_and_one_average() {
        let table = run_experiment(&tiny(), 1).unwrap();
        assert_eq!(table.raw().count(), 3);
        let avg: Vec<_> = table.averaged().collect();
        assert_eq!(avg.len(), 1);
        let raw: Vec<f64> = table.raw().map(|r| r.avg_delivery_slots).collect();
        assert!((avg[0].avg_delivery_slots - raw.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert_eq!(avg[0].n_seeds, Some(3));
    }

    #[test]
    fn parallel_and_serial_agree() {
        let spec = tiny();
        assert_eq!(
            run_experiment(&spec, 1).unwrap().to_csv_string(),
            run_experiment(&spec, 3).unwrap().to_csv_string()
        );
    }

    #[test]
    fn csv_header_is_fixed() {
        let header = ResultTable { rows: vec![] }.to_csv_string();
        assert_eq!(
            header.trim_end(),
            "experiment,mode,G,v,T,alarm,hop_filter,seed,slots,warmup,avg_delivery_slots,\
             overflow_rate_bps,throughput_Bps,mean_total_queue,mean_lyapunov,transit_fraction,\
             n_seeds,stddev_latency,stddev_overflow,stddev_throughput"
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = tiny();
        spec.values.clear();
        assert!(spec.validate().is_err());
        let mut spec = tiny();
        spec.seeds_per_point = 0;
        assert!(spec.validate().is_err());
        let mut spec = tiny();
        spec.parameter = SweepParam::T;
        spec.values = vec![2.5];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn stddev_is_sample_stddev() {
        assert_eq!(stddev(&[1.0]), 0.0);
        assert!((stddev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-12);
    }
}
