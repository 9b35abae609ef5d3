//! Per-slot series and run aggregates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::NetworkSnapshot;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("warmup of {warmup} slots leaves nothing of a {slots}-slot run")]
    WarmupTooLong { warmup: u64, slots: u64 },
}

/// Quadratic backlog `sum U(n, c)^2`, in batch².
pub fn lyapunov(snapshot: &NetworkSnapshot) -> u64 {
    snapshot.entries().iter().map(|&u| (u as u64) * (u as u64)).sum()
}

/// Counters for one slot, taken after the slot's arrivals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotSample {
    pub slot: u64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Sum of creation-to-delivery times of this slot's deliveries.
    pub latency_sum: u64,
    pub hop_sum: u64,
    pub total_queued: u64,
    pub lyapunov: u64,
}

/// Fraction of chosen rules satisfying the transit inequality at one actuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitSample {
    pub slot: u64,
    pub satisfied: usize,
    pub checked: usize,
}

/// Parameters echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub mode: String,
    pub base_rate: f64,
    pub heterogeneity: f64,
    pub period: u32,
    pub alarm_level: u32,
    pub hop_filter: String,
    pub seed: u64,
    pub slots: u64,
    pub warmup: u64,
    pub slot_sec: f64,
    pub batch_bytes: f64,
}

/// Cumulative counters over the whole run, warmup included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub max_hops: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub info: RunInfo,
    /// Mean creation-to-delivery time, in slots. NaN when nothing was delivered.
    pub avg_delivery_slots: f64,
    /// Dropped batches per second.
    pub overflow_rate: f64,
    /// Dropped bytes per second.
    pub overflow_bytes_rate: f64,
    /// Delivered bytes per second.
    pub throughput: f64,
    /// Generated bytes per second.
    pub offered_load: f64,
    pub mean_total_queue: f64,
    pub mean_lyapunov: f64,
    pub mean_hops: f64,
    pub transit_fraction: f64,
    pub totals: Totals,
    pub series: Vec<SlotSample>,
}

impl MetricsReport {
    /// Mean total backlog over the middle and final thirds of the run.
    pub fn queue_thirds(&self) -> (f64, f64) {
        let n = self.series.len();
        let third = n / 3;
        let mean = |s: &[SlotSample]| {
            s.iter().map(|x| x.total_queued as f64).sum::<f64>() / s.len().max(1) as f64
        };
        (
            mean(&self.series[third..2 * third]),
            mean(&self.series[n - third..]),
        )
    }
}

/// Reduces per-slot samples (slots at or after `warmup`) to a report.
pub fn aggregate(
    info: RunInfo,
    series: Vec<SlotSample>,
    transit: &[TransitSample],
    totals: Totals,
) -> Result<MetricsReport, MetricsError> {
    let slots = series.len() as u64;
    if info.warmup >= slots {
        return Err(MetricsError::WarmupTooLong {
            warmup: info.warmup,
            slots,
        });
    }
    let window: Vec<&SlotSample> = series.iter().filter(|s| s.slot >= info.warmup).collect();
    let span = window.len() as f64 * info.slot_sec;
    let sum = |f: fn(&SlotSample) -> u64| window.iter().map(|s| f(s)).sum::<u64>();

    let delivered = sum(|s| s.delivered);
    let dropped = sum(|s| s.dropped);
    let generated = sum(|s| s.generated);
    let avg_delivery_slots = sum(|s| s.latency_sum) as f64 / delivered as f64;
    let mean_hops = sum(|s| s.hop_sum) as f64 / delivered as f64;
    let mean_total_queue = sum(|s| s.total_queued) as f64 / window.len() as f64;
    let mean_lyapunov =
        window.iter().map(|s| s.lyapunov as f64).sum::<f64>() / window.len() as f64;

    let fractions: Vec<f64> = transit
        .iter()
        .filter(|t| t.slot >= info.warmup && t.checked > 0)
        .map(|t| t.satisfied as f64 / t.checked as f64)
        .collect();
    let transit_fraction = if fractions.is_empty() {
        1.0
    } else {
        fractions.iter().sum::<f64>() / fractions.len() as f64
    };

    let overflow_rate = dropped as f64 / span;
    Ok(MetricsReport {
        avg_delivery_slots,
        overflow_rate,
        overflow_bytes_rate: overflow_rate * info.batch_bytes,
        throughput: delivered as f64 * info.batch_bytes / span,
        offered_load: generated as f64 * info.batch_bytes / span,
        mean_total_queue,
        mean_lyapunov,
        mean_hops,
        transit_fraction,
        totals,
        series,
        info,
    })
}
