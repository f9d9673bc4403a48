//! Server-side aggregation strategies.
//!
//! All strategies consume client [`Update`]s one arrival at a time through
//! [`AggregationStrategy::on_arrival`] and decide when to move the global
//! model:
//!
//! | name       | fires when                         | step                                   |
//! |------------|------------------------------------|----------------------------------------|
//! | `fedavg`   | the whole dispatched cohort is back | volume-weighted mean of deltas         |
//! | `fedasync` | every arrival                      | mix client model into global model     |
//! | `fedbuff`  | buffer reaches `C`                 | staleness-decayed mean of all `C`      |
//! | `fedfa`    | every arrival once the FIFO filled | decayed mean of the last `C` arrivals  |
//! | `afbs`     | buffer reaches `C`                 | gradient selection, then decayed mean  |

mod aggregate;
mod select;
mod strategies;

use serde::{Deserialize, Serialize};

pub use aggregate::{
    afbs_aggregate, apply_decayed_mean, fedasync_step, fedavg_round, fedbuff_aggregate, AppliedStep,
};
pub use select::{
    classify, gradient_select, score, score_of, staleness_decay, Leader, Selection, Verdict,
};
pub use strategies::{build, Afbs, FedAsync, FedAvg, FedBuff, FedFa};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sim::ServerState;

/// A client's pseudo-gradient and its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Update {
    pub delta: ModelParams,
    pub client_id: usize,
    /// Global round of the model the client trained from.
    pub birth_round: u64,
    /// Number of samples behind the update.
    pub volume: usize,
    pub cluster_id: usize,
    pub arrival_time: f64,
}

impl Update {
    pub fn new(client_id: usize, delta: ModelParams, volume: usize, birth_round: u64) -> Self {
        Self { delta, client_id, birth_round, volume, cluster_id: 0, arrival_time: 0.0 }
    }

    pub fn with_cluster(mut self, cluster_id: usize) -> Self {
        self.cluster_id = cluster_id;
        self
    }

    pub fn arriving_at(mut self, time: f64) -> Self {
        self.arrival_time = time;
        self
    }
}

/// Bounded, arrival-ordered collection of updates awaiting aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    entries: Vec<Update>,
    capacity: usize,
}

impl Buffer {
    pub fn new(capacity: usize) -> Self {
        Self { entries: Vec::with_capacity(capacity), capacity }
    }

    pub fn from_entries(entries: Vec<Update>, capacity: usize) -> Result<Self> {
        if entries.len() > capacity {
            return Err(Error::Invariant(format!(
                "{} entries exceed buffer capacity {capacity}",
                entries.len()
            )));
        }
        Ok(Self { entries, capacity })
    }

    pub fn push(&mut self, update: Update) -> Result<()> {
        if self.is_full() {
            return Err(Error::Invariant(format!("buffer already holds {} updates", self.capacity)));
        }
        self.entries.push(update);
        Ok(())
    }

    pub fn entries(&self) -> &[Update] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// How the staleness decay enters the buffered mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// One factor `1/sqrt(tau_min + 1)` for the whole mean.
    UniformMinStaleness,
    /// Each delta weighted by its own `1/sqrt(tau_i + 1)`.
    PerGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    FedAvg,
    FedAsync,
    FedBuff,
    FedFa,
    Afbs,
}

impl StrategyName {
    pub const ALL: [StrategyName; 5] =
        [Self::FedAvg, Self::FedAsync, Self::FedBuff, Self::FedFa, Self::Afbs];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FedAvg => "fedavg",
            Self::FedAsync => "fedasync",
            Self::FedBuff => "fedbuff",
            Self::FedFa => "fedfa",
            Self::Afbs => "afbs",
        }
    }
}

impl std::fmt::Display for StrategyName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?}; expected one of fedavg, fedasync, fedbuff, fedfa, afbs"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    /// Global learning rate.
    pub eta_g: f64,
    /// Buffer capacity `C`.
    pub capacity: usize,
    pub decay_mode: DecayMode,
    /// Probabilistic rescue of deterministically dropped updates.
    pub rescue: bool,
    /// FedAsync mixing weight before staleness decay.
    pub async_mix_alpha: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            eta_g: 1.0,
            capacity: 10,
            decay_mode: DecayMode::UniformMinStaleness,
            rescue: true,
            async_mix_alpha: 0.6,
        }
    }
}

/// When the simulator may hand out new work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchMode {
    /// Keep the in-flight pool topped up after every arrival.
    Continuous,
    /// Dispatch a fresh cohort only once every in-flight client reported.
    Cohort,
}

/// Bookkeeping for one global step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationRecord {
    /// Updates held when the step fired.
    pub pre_selection: usize,
    /// Updates that entered the mean.
    pub post_selection: usize,
    /// Deltas summed into the aggregate.
    pub summations: usize,
    pub dropped: usize,
    pub rescued: usize,
    pub min_staleness: u64,
    pub max_staleness: u64,
}

pub trait AggregationStrategy: Send {
    fn name(&self) -> StrategyName;

    fn dispatch_mode(&self) -> DispatchMode {
        DispatchMode::Continuous
    }

    /// Called once with the initial server state before any dispatch.
    fn on_start(&mut self, _state: &ServerState) {}

    /// Handles one arrival. The arriving client is already removed from
    /// `state.in_flight`. Returns a record when the global model moved.
    fn on_arrival(
        &mut self,
        update: Update,
        state: &mut ServerState,
        assignment: &ClusterAssignment,
    ) -> Result<Option<AggregationRecord>>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_parse_and_print() {
        for name in StrategyName::ALL {
            assert_eq!(name.as_str().parse::<StrategyName>().unwrap(), name);
            let json = serde_json::to_string(&name).unwrap();
            assert_eq!(json, format!("\"{name}\""));
        }
        assert!("fedprox".parse::<StrategyName>().is_err());
    }

    #[test]
    fn buffer_is_bounded() {
        let mut buf = Buffer::new(2);
        let up = || Update::new(0, ModelParams::zeros(1), 1, 0);
        buf.push(up()).unwrap();
        assert!(!buf.is_full());
        buf.push(up()).unwrap();
        assert!(buf.is_full());
        assert!(matches!(buf.push(up()), Err(Error::Invariant(_))));
        buf.clear();
        assert!(buf.is_empty());
        assert!(Buffer::from_entries(vec![up(), up(), up()], 2).is_err());
    }

    #[test]
    fn decay_mode_wire_names() {
        assert_eq!(
            serde_json::to_string(&DecayMode::UniformMinStaleness).unwrap(),
            "\"uniform_min_staleness\""
        );
        assert_eq!(serde_json::to_string(&DecayMode::PerGradient).unwrap(), "\"per_gradient\"");
    }
}
