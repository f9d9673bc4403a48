//! Virtual-time simulation engine.
//!
//! The engine is single-threaded and fully deterministic: events are
//! ordered by `(fire_at, client_id, seq)`, every random draw comes from a
//! dedicated seeded stream, and aggregation sums follow arrival order.
//!
//! A client is trained at dispatch time against the model snapshot it
//! receives; the resulting update travels inside its finish event and is
//! delivered to the strategy when the clock reaches `now + latency`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::clustering::{adjusted_rand_index, fit_kmeans, ClusterAssignment};
use crate::config::ExperimentConfig;
use crate::data::{generate, label_distribution, FederatedDataset};
use crate::error::{Error, Result};
use crate::metrics::{RoundWork, RunReport, TimelineEntry};
use crate::model::{Architecture, ModelParams};
use crate::projection::{encrypt, EncryptedDistribution, ProjectionMatrix};
use crate::rng::{self, Stream};
use crate::strategy::{self, AggregationStrategy, DispatchMode, StrategyName, Update};
use crate::trainer::{evaluate, local_train, TrainerConfig};

/// Latencies are floored here so that a run always makes progress.
pub const MIN_LATENCY: f64 = 1e-3;

/// Simulated time in seconds. Only moves forward.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VirtualClock {
    now: f64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if !(t >= self.now) {
            return Err(Error::Invariant(format!("clock moved backwards: {} -> {t}", self.now)));
        }
        self.now = t;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    ClientFinish { client_id: usize, update: Box<Update> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub fire_at: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Event {
    pub fn client_id(&self) -> usize {
        match &self.kind {
            EventKind::ClientFinish { client_id, .. } => *client_id,
        }
    }

    fn key(&self) -> (f64, usize, u64) {
        (self.fire_at, self.client_id(), self.seq)
    }
}

struct Queued(Event);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, ca, sa) = self.0.key();
        let (tb, cb, sb) = other.0.key();
        tb.total_cmp(&ta).then(cb.cmp(&ca)).then(sb.cmp(&sa))
    }
}

/// Future-event set ordered by `(fire_at, client_id, seq)`.
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Queued>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: Event) {
        self.heap.push(Queued(event));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|q| q.0)
    }

    pub fn peek(&self) -> Option<&Event> {
        self.heap.peek().map(|q| &q.0)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Mutable server-side state shared with the strategies.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_model: ModelParams,
    /// Number of aggregations performed so far.
    pub global_round: u64,
    /// In-flight clients and the round they were dispatched at.
    pub in_flight: BTreeMap<usize, u64>,
    /// Strategy-side randomness (selection rescue draws).
    pub rng: ChaCha8Rng,
}

impl ServerState {
    pub fn new(global_model: ModelParams, seed: u64) -> Self {
        Self {
            global_model,
            global_round: 0,
            in_flight: BTreeMap::new(),
            rng: rng::stream(seed, Stream::Rescue),
        }
    }
}

/// `current - birth`; a birth round in the future is an invariant violation.
pub fn staleness_between(birth_round: u64, current_round: u64) -> Result<u64> {
    current_round.checked_sub(birth_round).ok_or_else(|| {
        Error::Invariant(format!("birth round {birth_round} is ahead of global round {current_round}"))
    })
}

/// Rounds elapsed since the update's model was dispatched.
pub fn staleness(update: &Update, state: &ServerState) -> Result<u64> {
    staleness_between(update.birth_round, state.global_round)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientProfile {
    pub client_id: usize,
    /// Base latency in virtual seconds.
    pub latency: f64,
    pub cluster_id: usize,
}

/// Everything that is fixed before training starts and shared by every
/// strategy run on the same config: data, latencies, the published
/// projection, encrypted distributions, the cluster map and the initial model.
pub struct Scenario {
    pub config: ExperimentConfig,
    pub dataset: FederatedDataset,
    pub dataset_checksum: String,
    pub profiles: Vec<ClientProfile>,
    pub projection: ProjectionMatrix,
    pub encrypted: Vec<EncryptedDistribution>,
    pub assignment: ClusterAssignment,
    pub arch: Architecture,
    pub initial_model: ModelParams,
}

impl Scenario {
    /// Generates the dataset from the config and prepares the run.
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let config = config.clone().resolved()?;
        let dataset = generate(config.num_clients, &config.data, config.seed)?;
        Self::with_dataset(&config, dataset)
    }

    /// Prepares a run on an existing dataset (for imported data).
    pub fn with_dataset(config: &ExperimentConfig, dataset: FederatedDataset) -> Result<Self> {
        let config = config.clone().resolved()?;
        dataset.validate()?;
        if dataset.num_clients() != config.num_clients
            || dataset.num_labels != config.data.d
            || dataset.feature_dim != config.data.feature_dim
        {
            return Err(Error::config(format!(
                "dataset shape (clients={}, d={}, features={}) does not match config",
                dataset.num_clients(),
                dataset.num_labels,
                dataset.feature_dim
            )));
        }
        let seed = config.seed;

        let latencies: Vec<f64> = match &config.latency.per_client {
            Some(values) => values.clone(),
            None => {
                let mut r = rng::stream(seed, Stream::Latency);
                (0..config.num_clients)
                    .map(|_| r.random_range(config.latency.uniform_min..config.latency.uniform_max))
                    .collect()
            }
        };

        let projection = ProjectionMatrix::new(config.data.d, config.projection_dim(), seed)?;
        let encrypted = dataset
            .clients
            .iter()
            .map(|shard| {
                let dist = label_distribution(shard)?;
                let mut noise = rng::derive(seed, Stream::EncryptionNoise, shard.client_id as u64);
                encrypt(shard.client_id, &dist, &projection, config.projection.sigma, &mut noise)
            })
            .collect::<Result<Vec<_>>>()?;
        let assignment = fit_kmeans(&encrypted, config.kmeans_k(), seed)?;

        let profiles = latencies
            .iter()
            .enumerate()
            .map(|(client_id, &latency)| {
                Ok(ClientProfile {
                    client_id,
                    latency: latency.max(MIN_LATENCY),
                    cluster_id: assignment.cluster_of(client_id)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let arch = config.architecture();
        let initial_model = arch.init(&mut rng::stream(seed, Stream::ModelInit));
        let dataset_checksum = dataset.checksum();
        Ok(Self {
            config,
            dataset,
            dataset_checksum,
            profiles,
            projection,
            encrypted,
            assignment,
            arch,
            initial_model,
        })
    }

    /// Agreement between the fitted clusters and the generator's clusters.
    pub fn clustering_ari(&self) -> f64 {
        adjusted_rand_index(&self.assignment.labels(), &self.dataset.cluster_of)
    }

    /// Runs the strategy named in the config.
    pub fn run(&self) -> Result<RunReport> {
        self.run_strategy(self.config.strategy.name)
    }

    /// Runs `name` with the config's strategy hyperparameters.
    pub fn run_strategy(&self, name: StrategyName) -> Result<RunReport> {
        let strategy = strategy::build(name, self.config.strategy_config());
        let mut sim = Simulation::new(self, strategy)?;
        sim.run()
    }
}

/// Builds the scenario described by `config` and runs `strategy` on it.
pub fn run_simulation(
    config: &ExperimentConfig,
    strategy: Box<dyn AggregationStrategy>,
) -> Result<RunReport> {
    let scenario = Scenario::build(config)?;
    let mut sim = Simulation::new(&scenario, strategy)?;
    sim.run()
}

/// One strategy run over a prepared scenario.
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    strategy: Box<dyn AggregationStrategy>,
    trainer: TrainerConfig,
    clock: VirtualClock,
    queue: EventQueue,
    state: ServerState,
    /// Idle client ids, sorted.
    idle: Vec<usize>,
    dispatch_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    dispatch_counts: Vec<u64>,
    next_seq: u64,
    next_sample: u64,
    trace: Vec<(f64, usize)>,
    timeline: Vec<TimelineEntry>,
    work: Vec<RoundWork>,
    handle_time_ns: Vec<u64>,
    /// Strategy time spent since the last aggregation.
    pending_ns: u64,
    arrivals: u64,
    started: bool,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario, strategy: Box<dyn AggregationStrategy>) -> Result<Self> {
        let cfg = &scenario.config;
        cfg.validate()?;
        Ok(Self {
            scenario,
            strategy,
            trainer: cfg.trainer_config(),
            clock: VirtualClock::new(),
            queue: EventQueue::new(),
            state: ServerState::new(scenario.initial_model.clone(), cfg.seed),
            idle: (0..cfg.num_clients).collect(),
            dispatch_rng: rng::stream(cfg.seed, Stream::Dispatch),
            jitter_rng: rng::stream(cfg.seed, Stream::LatencyJitter),
            dispatch_counts: vec![0; cfg.num_clients],
            next_seq: 0,
            next_sample: if cfg.metrics.include_t0 { 0 } else { 1 },
            trace: Vec::new(),
            timeline: Vec::new(),
            work: Vec::new(),
            handle_time_ns: Vec::new(),
            pending_ns: 0,
            arrivals: 0,
            started: false,
        })
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    /// `(fire_at, client_id)` of every processed event, in order.
    pub fn trace(&self) -> &[(f64, usize)] {
        &self.trace
    }

    /// Sends the current global model to an idle client and schedules its
    /// finish event at `now + latency`.
    pub fn dispatch_client(&mut self, client_id: usize) -> Result<&Event> {
        let profile = *self.scenario.profiles.get(client_id).ok_or(Error::UnknownClient(client_id))?;
        let pos = self.idle.binary_search(&client_id).map_err(|_| {
            Error::Invariant(format!("client {client_id} dispatched while in flight"))
        })?;
        self.idle.remove(pos);

        let round = self.state.global_round;
        let cfg = &self.scenario.config;
        let count = self.dispatch_counts[client_id];
        self.dispatch_counts[client_id] += 1;
        let mut train_rng =
            rng::derive(cfg.seed, Stream::LocalTraining, ((client_id as u64) << 32) | count);
        let shard = self.scenario.dataset.client(client_id)?;
        let mut latency = profile.latency;
        if cfg.latency.jitter > 0.0 {
            let j = cfg.latency.jitter;
            latency = (latency * self.jitter_rng.random_range(1.0 - j..1.0 + j)).max(MIN_LATENCY);
        }
        let fire_at = self.clock.now() + latency;
        let update = local_train(
            &self.scenario.arch,
            &self.state.global_model,
            shard,
            &self.trainer,
            round,
            &mut train_rng,
        )?
        .with_cluster(profile.cluster_id)
        .arriving_at(fire_at);

        self.state.in_flight.insert(client_id, round);
        if self.state.in_flight.len() > cfg.m_active {
            return Err(Error::Invariant(format!(
                "{} clients in flight, limit {}",
                self.state.in_flight.len(),
                cfg.m_active
            )));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_at,
            seq,
            kind: EventKind::ClientFinish { client_id, update: Box::new(update) },
        });
        log::debug!("t={:.1} dispatch client {client_id} round {round} until {fire_at:.1}", self.clock.now());
        Ok(self.queue.peek().expect("just pushed"))
    }

    fn refill(&mut self) -> Result<()> {
        let allowed = match self.strategy.dispatch_mode() {
            DispatchMode::Continuous => true,
            DispatchMode::Cohort => self.state.in_flight.is_empty(),
        };
        if !allowed {
            return Ok(());
        }
        let m_active = self.scenario.config.m_active;
        while self.state.in_flight.len() < m_active && !self.idle.is_empty() {
            let pick = self.idle[self.dispatch_rng.random_range(0..self.idle.len())];
            self.dispatch_client(pick)?;
        }
        Ok(())
    }

    fn sample_time(&self, k: u64) -> f64 {
        k as f64 * self.scenario.config.metrics.cadence
    }

    /// Evaluates at every grid point before `limit` (or up to and including
    /// it when `inclusive`).
    fn sample_until(&mut self, limit: f64, inclusive: bool) {
        let horizon = self.scenario.config.horizon_virtual_seconds;
        loop {
            let t = self.sample_time(self.next_sample);
            let due = if inclusive { t <= limit } else { t < limit };
            if !due || t > horizon {
                break;
            }
            let eval = evaluate(&self.scenario.arch, &self.state.global_model, &self.scenario.dataset);
            self.timeline.push(TimelineEntry {
                virtual_time: t,
                accuracy: eval.accuracy,
                loss: eval.loss,
                global_round: self.state.global_round,
            });
            log::info!(
                "[{}] t={t:.0} round={} acc={:.4} loss={:.4}",
                self.strategy.name(),
                self.state.global_round,
                eval.accuracy,
                eval.loss
            );
            self.next_sample += 1;
        }
    }

    fn handle(&mut self, event: Event) -> Result<()> {
        let EventKind::ClientFinish { client_id, update } = event.kind;
        if self.state.in_flight.remove(&client_id).is_none() {
            return Err(Error::Invariant(format!("finish event for idle client {client_id}")));
        }
        let pos = self.idle.binary_search(&client_id).unwrap_err();
        self.idle.insert(pos, client_id);
        staleness(&update, &self.state)?;
        self.trace.push((event.fire_at, client_id));
        self.arrivals += 1;

        let started = Instant::now();
        let record = self.strategy.on_arrival(*update, &mut self.state, &self.scenario.assignment)?;
        self.pending_ns += started.elapsed().as_nanos() as u64;

        if let Some(rec) = record {
            let capacity = self.scenario.config.strategy.c;
            let buffered = matches!(
                self.strategy.name(),
                StrategyName::FedBuff | StrategyName::Afbs | StrategyName::FedFa
            );
            if rec.post_selection == 0 || (buffered && rec.post_selection > capacity) {
                return Err(Error::Invariant(format!(
                    "aggregated {} updates with buffer capacity {capacity}",
                    rec.post_selection
                )));
            }
            self.handle_time_ns.push(std::mem::take(&mut self.pending_ns));
            self.work.push(RoundWork {
                round: self.state.global_round,
                virtual_time: self.clock.now(),
                pre_selection: rec.pre_selection,
                post_selection: rec.post_selection,
                summations: rec.summations,
                dropped: rec.dropped,
                rescued: rec.rescued,
                min_staleness: rec.min_staleness,
                max_staleness: rec.max_staleness,
            });
        }
        if self.work.len() as u64 != self.state.global_round {
            return Err(Error::Invariant(format!(
                "global round {} after {} aggregations",
                self.state.global_round,
                self.work.len()
            )));
        }
        self.refill()
    }

    fn start(&mut self) -> Result<()> {
        if !self.started {
            self.started = true;
            self.strategy.on_start(&self.state);
            self.refill()?;
        }
        Ok(())
    }

    /// Processes the next event if it fires within the horizon. Returns
    /// false once nothing is left to do.
    pub fn step(&mut self) -> Result<bool> {
        self.start()?;
        let horizon = self.scenario.config.horizon_virtual_seconds;
        match self.queue.peek().map(|e| e.fire_at) {
            Some(t) if t <= horizon => {
                self.sample_until(t, false);
                let event = self.queue.pop().expect("peeked");
                self.clock.advance_to(event.fire_at)?;
                self.handle(event)?;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// Takes the remaining samples up to the horizon and builds the report.
    /// Events not yet stepped through are left unprocessed.
    pub fn finish(&mut self) -> Result<RunReport> {
        self.start()?;
        self.sample_until(self.scenario.config.horizon_virtual_seconds, true);
        Ok(self.report())
    }

    /// Processes every event with `fire_at <= horizon` and builds the report.
    pub fn run(&mut self) -> Result<RunReport> {
        while self.step()? {}
        self.finish()
    }

    fn trace_digest(&self) -> String {
        let mut h = Sha256::new();
        for (t, c) in &self.trace {
            h.update(t.to_bits().to_le_bytes());
            h.update((*c as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn report(&self) -> RunReport {
        let mut config = self.scenario.config.clone();
        config.strategy.name = self.strategy.name();
        RunReport::new(
            config,
            self.scenario.dataset_checksum.clone(),
            self.trace_digest(),
            self.arrivals,
            self.timeline.clone(),
            self.work.clone(),
            self.state.global_model.clone(),
            &self.scenario.assignment,
            self.scenario.clustering_ari(),
            self.handle_time_ns.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use crate::strategy::StrategyName;

    fn tiny(num_clients: usize, latencies: Vec<f64>, horizon: f64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            num_clients,
            m_active: num_clients,
            horizon_virtual_seconds: horizon,
            ..ExperimentConfig::default()
        };
        cfg.data = DataConfig { k: 1, d: 3, feature_dim: 2, base_volume: 20.0, ..DataConfig::default() };
        cfg.latency.per_client = Some(latencies);
        cfg.projection.p = Some(2);
        cfg.metrics.cadence = 5.0;
        cfg
    }

    #[test]
    fn clock_is_monotone() {
        let mut c = VirtualClock::new();
        c.advance_to(3.0).unwrap();
        c.advance_to(3.0).unwrap();
        assert!(c.advance_to(2.0).is_err());
        assert!(c.advance_to(f64::NAN).is_err());
    }

    #[test]
    fn queue_orders_by_time_then_client_then_seq() {
        let ev = |t: f64, c: usize, seq: u64| Event {
            fire_at: t,
            seq,
            kind: EventKind::ClientFinish {
                client_id: c,
                update: Box::new(Update::new(c, ModelParams::zeros(1), 1, 0)),
            },
        };
        let mut q = EventQueue::new();
        q.push(ev(2.0, 0, 0));
        q.push(ev(1.0, 5, 1));
        q.push(ev(1.0, 3, 4));
        q.push(ev(1.0, 3, 2));
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| (e.fire_at, e.client_id(), e.seq)).collect();
        assert_eq!(order, vec![(1.0, 3, 2), (1.0, 3, 4), (1.0, 5, 1), (2.0, 0, 0)]);
    }

    #[test]
    fn staleness_arithmetic() {
        assert_eq!(staleness_between(7, 7).unwrap(), 0);
        assert_eq!(staleness_between(2, 9).unwrap(), 7);
        assert!(matches!(staleness_between(10, 9), Err(Error::Invariant(_))));
    }

    #[test]
    fn dispatch_stamps_round_and_time() {
        let cfg = tiny(2, vec![100.0, 100.0], 1000.0);
        let scenario = Scenario::build(&cfg).unwrap();
        let mut sim = Simulation::new(&scenario, strategy::build(StrategyName::FedBuff, cfg.strategy_config())).unwrap();
        sim.state.global_round = 5;
        sim.clock.advance_to(40.0).unwrap();
        let ev = sim.dispatch_client(1).unwrap();
        assert_eq!(ev.fire_at, 140.0);
        let EventKind::ClientFinish { client_id, update } = &ev.kind;
        assert_eq!((*client_id, update.birth_round, update.arrival_time), (1, 5, 140.0));
        assert_eq!(sim.state.in_flight.get(&1), Some(&5));
        assert!(sim.dispatch_client(1).is_err(), "already in flight");
    }

    #[test]
    fn simultaneous_dispatches_pop_by_client_id() {
        let cfg = tiny(3, vec![10.0, 10.0, 10.0], 1000.0);
        let scenario = Scenario::build(&cfg).unwrap();
        let mut sim = Simulation::new(&scenario, strategy::build(StrategyName::FedBuff, cfg.strategy_config())).unwrap();
        sim.dispatch_client(2).unwrap();
        sim.dispatch_client(0).unwrap();
        sim.dispatch_client(1).unwrap();
        let order: Vec<_> = std::iter::from_fn(|| sim.queue.pop()).map(|e| e.client_id()).collect();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn zero_horizon_leaves_model_unchanged() {
        let mut cfg = tiny(2, vec![10.0, 20.0], 0.0);
        cfg.strategy.name = StrategyName::Afbs;
        let scenario = Scenario::build(&cfg).unwrap();
        let report = scenario.run().unwrap();
        assert_eq!(report.totals.aggregations, 0);
        assert_eq!(report.final_model, scenario.initial_model);
        assert_eq!(report.timeline.len(), 1);
    }

    #[test]
    fn sync_single_client_aggregates_every_latency() {
        let cfg = tiny(1, vec![10.0], 25.0);
        let scenario = Scenario::build(&cfg).unwrap();
        let report = scenario.run_strategy(StrategyName::FedAvg).unwrap();
        let times: Vec<f64> = report.work.iter().map(|w| w.virtual_time).collect();
        assert_eq!(times, vec![10.0, 20.0]);
        assert!(report.work.iter().all(|w| w.max_staleness == 0));
    }

    #[test]
    fn staleness_counts_intervening_aggregations() {
        // Client 1 returns every 30 s and triggers an aggregation (C = 1)
        // each time; client 0 returns at 100 s after three of them.
        let mut cfg = tiny(2, vec![100.0, 30.0], 100.0);
        cfg.strategy.c = 1;
        let scenario = Scenario::build(&cfg).unwrap();
        let report = scenario.run_strategy(StrategyName::FedBuff).unwrap();
        let last = report.work.last().unwrap();
        assert_eq!(last.virtual_time, 100.0);
        assert_eq!(last.max_staleness, 3);
        assert_eq!(report.totals.aggregations, 4);
    }

    #[test]
    fn latency_floor_guarantees_progress() {
        let mut cfg = tiny(2, vec![0.0, 0.0], 0.0105);
        cfg.strategy.c = 1;
        let report = Scenario::build(&cfg).unwrap().run_strategy(StrategyName::FedBuff).unwrap();
        assert_eq!(report.totals.arrivals, 20);
    }

    #[test]
    fn in_flight_pool_is_topped_up() {
        let mut cfg = tiny(6, vec![7.0, 11.0, 13.0, 17.0, 19.0, 23.0], 200.0);
        cfg.m_active = 3;
        cfg.strategy.c = 2;
        let scenario = Scenario::build(&cfg).unwrap();
        let mut sim = Simulation::new(&scenario, strategy::build(StrategyName::Afbs, cfg.strategy_config())).unwrap();
        sim.run().unwrap();
        assert_eq!(sim.state().in_flight.len(), 3);
        assert!(sim.clock().now() <= 200.0);
        let times: Vec<f64> = sim.trace().iter().map(|e| e.0).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn stepping_matches_run() {
        let mut cfg = tiny(4, vec![3.0, 5.0, 8.0, 13.0], 60.0);
        cfg.strategy.c = 2;
        let scenario = Scenario::build(&cfg).unwrap();
        let whole = scenario.run_strategy(StrategyName::Afbs).unwrap();
        let mut sim = Simulation::new(&scenario, strategy::build(StrategyName::Afbs, cfg.strategy_config())).unwrap();
        let mut steps = 0;
        while sim.step().unwrap() {
            steps += 1;
        }
        assert!(!sim.step().unwrap());
        let stepped = sim.finish().unwrap();
        assert_eq!(steps, whole.totals.arrivals);
        assert_eq!(stepped.to_json().unwrap(), whole.to_json().unwrap());
    }
}
