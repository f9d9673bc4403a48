//! Run reports and their on-disk forms.
//!
//! `report.json` is a pure function of the config and seed. Wall-clock
//! handle times vary between runs, so they are kept out of it and written
//! to a separate `timing.json`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::strategy::StrategyName;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub virtual_time: f64,
    pub accuracy: f64,
    pub loss: f64,
    pub global_round: u64,
}

/// Work done by one aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundWork {
    /// Global round after the step.
    pub round: u64,
    pub virtual_time: f64,
    pub pre_selection: usize,
    pub post_selection: usize,
    pub summations: usize,
    pub dropped: usize,
    pub rescued: usize,
    pub min_staleness: u64,
    pub max_staleness: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetTime {
    pub target: f64,
    /// First sampled time at which accuracy reached the target.
    pub virtual_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorkTotals {
    pub arrivals: u64,
    pub aggregations: u64,
    pub summations: u64,
    pub dropped: u64,
    pub rescued: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub k: usize,
    pub cluster_of: Vec<Option<usize>>,
    pub iterations: usize,
    /// Adjusted Rand index against the generator's ground-truth clusters.
    pub ari_vs_ground_truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub strategy: StrategyName,
    pub seed: u64,
    pub dataset_checksum: String,
    /// SHA-256 over the processed `(fire_at, client_id)` sequence.
    pub trace_digest: String,
    pub config: ExperimentConfig,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub time_to_target: Vec<TargetTime>,
    pub totals: WorkTotals,
    pub clustering: ClusteringSummary,
    pub timeline: Vec<TimelineEntry>,
    pub work: Vec<RoundWork>,
    pub final_model: ModelParams,
    /// Wall-clock nanoseconds per aggregation. Not serialized.
    #[serde(skip)]
    pub handle_time_ns: Vec<u64>,
}

impl RunReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: ExperimentConfig,
        dataset_checksum: String,
        trace_digest: String,
        arrivals: u64,
        timeline: Vec<TimelineEntry>,
        work: Vec<RoundWork>,
        final_model: ModelParams,
        assignment: &ClusterAssignment,
        ari_vs_ground_truth: f64,
        handle_time_ns: Vec<u64>,
    ) -> Self {
        let time_to_target = config
            .metrics
            .targets
            .iter()
            .map(|&target| TargetTime { target, virtual_time: time_to_target(&timeline, target) })
            .collect();
        let totals = WorkTotals {
            arrivals,
            aggregations: work.len() as u64,
            summations: work.iter().map(|w| w.summations as u64).sum(),
            dropped: work.iter().map(|w| w.dropped as u64).sum(),
            rescued: work.iter().map(|w| w.rescued as u64).sum(),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            strategy: config.strategy.name,
            seed: config.seed,
            dataset_checksum,
            trace_digest,
            best_accuracy: best_accuracy(&timeline),
            final_accuracy: timeline.last().map_or(0.0, |e| e.accuracy),
            time_to_target,
            totals,
            clustering: ClusteringSummary {
                k: assignment.k,
                cluster_of: assignment.cluster_of.clone(),
                iterations: assignment.iterations,
                ari_vs_ground_truth,
            },
            config,
            timeline,
            work,
            final_model,
            handle_time_ns,
        }
    }

    pub fn target_time(&self, target: f64) -> Option<f64> {
        time_to_target(&self.timeline, target)
    }

    pub fn median_handle_time_ns(&self) -> Option<f64> {
        median_u64(&self.handle_time_ns)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invariant(format!("serializing report: {e}")))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }

    /// Writes `virtual_time,accuracy,loss,global_round` rows.
    pub fn write_timeline_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for entry in &self.timeline {
            w.serialize(entry).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_timing_json(&self, path: &Path) -> Result<()> {
        let timing = Timing {
            strategy: self.strategy,
            aggregations: self.handle_time_ns.len(),
            median_handle_time_ns: self.median_handle_time_ns(),
            handle_time_ns: self.handle_time_ns.clone(),
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &timing)
            .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    /// Writes `report.json`, `timeline.csv` and `timing.json` into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_json(&dir.join("report.json"))?;
        self.write_timeline_csv(&dir.join("timeline.csv"))?;
        self.write_timing_json(&dir.join("timing.json"))
    }
}

#[derive(Debug, Serialize)]
struct Timing {
    strategy: StrategyName,
    aggregations: usize,
    median_handle_time_ns: Option<f64>,
    handle_time_ns: Vec<u64>,
}

/// First sampled time whose accuracy is at least `target`.
pub fn time_to_target(timeline: &[TimelineEntry], target: f64) -> Option<f64> {
    timeline.iter().find(|e| e.accuracy >= target).map(|e| e.virtual_time)
}

pub fn best_accuracy(timeline: &[TimelineEntry]) -> f64 {
    timeline.iter().map(|e| e.accuracy).fold(0.0, f64::max)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn median_u64(values: &[u64]) -> Option<f64> {
    median(&values.iter().map(|&v| v as f64).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(t: f64, acc: f64) -> TimelineEntry {
        TimelineEntry { virtual_time: t, accuracy: acc, loss: 1.0, global_round: 0 }
    }

    #[test]
    fn first_crossing_wins() {
        let tl = vec![entry(0.0, 0.1), entry(600.0, 0.8), entry(1200.0, 0.7), entry(1800.0, 0.9)];
        assert_eq!(time_to_target(&tl, 0.75), Some(600.0));
        assert_eq!(time_to_target(&tl, 0.85), Some(1800.0));
        assert_eq!(time_to_target(&tl, 0.95), None);
        assert_eq!(best_accuracy(&tl), 0.9);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median_u64(&[10, 30]), Some(20.0));
    }
}
