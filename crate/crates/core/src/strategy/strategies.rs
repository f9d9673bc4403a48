use std::collections::{BTreeMap, VecDeque};

use super::aggregate::{afbs_aggregate, apply_decayed_mean, fedasync_step, fedavg_round, fedbuff_aggregate};
use super::select::{classify, Leader, Verdict};
use super::{
    AggregationRecord, AggregationStrategy, Buffer, DispatchMode, StrategyConfig, StrategyName,
    Update,
};
use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sim::ServerState;

/// Instantiates a strategy by name.
pub fn build(name: StrategyName, cfg: StrategyConfig) -> Box<dyn AggregationStrategy> {
    match name {
        StrategyName::FedAvg => Box::new(FedAvg::new(cfg)),
        StrategyName::FedAsync => Box::new(FedAsync::new(cfg)),
        StrategyName::FedBuff => Box::new(FedBuff::new(cfg)),
        StrategyName::FedFa => Box::new(FedFa::new(cfg)),
        StrategyName::Afbs => Box::new(Afbs::new(cfg)),
    }
}

/// Synchronous federated averaging over dispatched cohorts.
#[derive(Debug)]
pub struct FedAvg {
    cfg: StrategyConfig,
    cohort: Vec<Update>,
}

impl FedAvg {
    pub fn new(cfg: StrategyConfig) -> Self {
        Self { cfg, cohort: Vec::new() }
    }
}

impl AggregationStrategy for FedAvg {
    fn name(&self) -> StrategyName {
        StrategyName::FedAvg
    }

    fn dispatch_mode(&self) -> DispatchMode {
        DispatchMode::Cohort
    }

    fn on_arrival(
        &mut self,
        update: Update,
        state: &mut ServerState,
        _assignment: &ClusterAssignment,
    ) -> Result<Option<AggregationRecord>> {
        self.cohort.push(update);
        if !state.in_flight.is_empty() {
            return Ok(None);
        }
        let step = fedavg_round(&self.cohort, state, &self.cfg)?;
        self.cohort.clear();
        Ok(Some(AggregationRecord {
            pre_selection: step.count,
            post_selection: step.count,
            summations: step.count,
            dropped: 0,
            rescued: 0,
            min_staleness: step.min_staleness,
            max_staleness: step.max_staleness,
        }))
    }
}

/// Fully asynchronous mixing on every arrival.
#[derive(Debug)]
pub struct FedAsync {
    cfg: StrategyConfig,
    /// Global model after each round still referenced by an in-flight client.
    history: BTreeMap<u64, ModelParams>,
}

impl FedAsync {
    pub fn new(cfg: StrategyConfig) -> Self {
        Self { cfg, history: BTreeMap::new() }
    }
}

impl AggregationStrategy for FedAsync {
    fn name(&self) -> StrategyName {
        StrategyName::FedAsync
    }

    fn on_start(&mut self, state: &ServerState) {
        self.history.clear();
        self.history.insert(state.global_round, state.global_model.clone());
    }

    fn on_arrival(
        &mut self,
        update: Update,
        state: &mut ServerState,
        _assignment: &ClusterAssignment,
    ) -> Result<Option<AggregationRecord>> {
        if self.history.is_empty() {
            self.on_start(state);
        }
        let dispatched = self.history.get(&update.birth_round).ok_or_else(|| {
            Error::Strategy(format!(
                "no model snapshot for round {} (client {})",
                update.birth_round, update.client_id
            ))
        })?;
        let tau = crate::sim::staleness(&update, state)?;
        fedasync_step(&update, &dispatched.clone(), state, &self.cfg)?;
        self.history.insert(state.global_round, state.global_model.clone());
        let oldest_needed =
            state.in_flight.values().copied().min().unwrap_or(state.global_round).min(state.global_round);
        self.history = self.history.split_off(&oldest_needed);
        Ok(Some(AggregationRecord {
            pre_selection: 1,
            post_selection: 1,
            summations: 1,
            dropped: 0,
            rescued: 0,
            min_staleness: tau,
            max_staleness: tau,
        }))
    }
}

/// Buffered aggregation that clears the buffer every `C` arrivals.
#[derive(Debug)]
pub struct FedBuff {
    cfg: StrategyConfig,
    buffer: Buffer,
}

impl FedBuff {
    pub fn new(cfg: StrategyConfig) -> Self {
        Self { cfg, buffer: Buffer::new(cfg.capacity) }
    }
}

impl AggregationStrategy for FedBuff {
    fn name(&self) -> StrategyName {
        StrategyName::FedBuff
    }

    fn on_arrival(
        &mut self,
        update: Update,
        state: &mut ServerState,
        _assignment: &ClusterAssignment,
    ) -> Result<Option<AggregationRecord>> {
        self.buffer.push(update)?;
        if !self.buffer.is_full() {
            return Ok(None);
        }
        let step = fedbuff_aggregate(self.buffer.entries(), state, &self.cfg)?;
        self.buffer.clear();
        Ok(Some(AggregationRecord {
            pre_selection: step.count,
            post_selection: step.count,
            summations: step.count,
            dropped: 0,
            rescued: 0,
            min_staleness: step.min_staleness,
            max_staleness: step.max_staleness,
        }))
    }
}

/// Sliding-window buffer: once `C` updates have arrived, every arrival
/// evicts the oldest and aggregates the window.
#[derive(Debug)]
pub struct FedFa {
    cfg: StrategyConfig,
    window: VecDeque<Update>,
    filled: bool,
}

impl FedFa {
    pub fn new(cfg: StrategyConfig) -> Self {
        Self { cfg, window: VecDeque::with_capacity(cfg.capacity), filled: false }
    }

    /// Client ids currently in the window, oldest first.
    pub fn window_clients(&self) -> Vec<usize> {
        self.window.iter().map(|u| u.client_id).collect()
    }
}

impl AggregationStrategy for FedFa {
    fn name(&self) -> StrategyName {
        StrategyName::FedFa
    }

    fn on_arrival(
        &mut self,
        update: Update,
        state: &mut ServerState,
        _assignment: &ClusterAssignment,
    ) -> Result<Option<AggregationRecord>> {
        if self.window.len() == self.cfg.capacity {
            self.window.pop_front();
        }
        self.window.push_back(update);
        if self.window.len() == self.cfg.capacity {
            self.filled = true;
        }
        if !self.filled {
            return Ok(None);
        }
        let refs: Vec<&Update> = self.window.iter().collect();
        let step = apply_decayed_mean(&refs, state, &self.cfg)?;
        Ok(Some(AggregationRecord {
            pre_selection: step.count,
            post_selection: step.count,
            summations: step.count,
            dropped: 0,
            rescued: 0,
            min_staleness: step.min_staleness,
            max_staleness: step.max_staleness,
        }))
    }
}

/// Buffered aggregation with cluster-wise gradient selection.
#[derive(Debug)]
pub struct Afbs {
    cfg: StrategyConfig,
    buffer: Buffer,
    leaders: Vec<Leader>,
}

impl Afbs {
    pub fn new(cfg: StrategyConfig) -> Self {
        Self { cfg, buffer: Buffer::new(cfg.capacity), leaders: Vec::new() }
    }
}

impl AggregationStrategy for Afbs {
    fn name(&self) -> StrategyName {
        StrategyName::Afbs
    }

    fn on_arrival(
        &mut self,
        update: Update,
        state: &mut ServerState,
        assignment: &ClusterAssignment,
    ) -> Result<Option<AggregationRecord>> {
        self.buffer.push(update)?;
        if !self.buffer.is_full() {
            return Ok(None);
        }
        let entries = self.buffer.entries();
        let mut selected = Vec::with_capacity(entries.len());
        let (mut dropped, mut rescued) = (0, 0);
        classify(
            entries,
            assignment.k,
            state.global_round,
            self.cfg.rescue,
            &mut state.rng,
            &mut self.leaders,
            |i, verdict| match verdict {
                Verdict::Kept => selected.push(&entries[i]),
                Verdict::Dropped => dropped += 1,
                Verdict::Rescued => {
                    selected.push(&entries[i]);
                    dropped += 1;
                    rescued += 1;
                }
            },
        )?;
        let step = afbs_aggregate(&selected, state, &self.cfg)?;
        let record = AggregationRecord {
            pre_selection: entries.len(),
            post_selection: step.count,
            summations: step.count,
            dropped,
            rescued,
            min_staleness: step.min_staleness,
            max_staleness: step.max_staleness,
        };
        self.buffer.clear();
        Ok(Some(record))
    }
}
