//! Experiment configuration.
//!
//! Every field has a default, so `{}` is a valid config describing the
//! reference setting (600 clients, 120 in flight, 20 virtual days, latency
//! Uniform(0, 6000) s, buffer of 10, Dirichlet(0.1) label skew). Unknown keys
//! are rejected at parse time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::strategy::{DecayMode, StrategyConfig, StrategyName};
use crate::trainer::TrainerConfig;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub num_clients: usize,
    /// Number of clients kept training concurrently.
    pub m_active: usize,
    pub horizon_virtual_seconds: f64,
    pub latency: LatencyConfig,
    pub data: DataConfig,
    pub trainer: TrainerSection,
    pub strategy: StrategySection,
    pub projection: ProjectionConfig,
    pub clustering: ClusteringConfig,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_clients: 600,
            m_active: 120,
            horizon_virtual_seconds: 20.0 * SECONDS_PER_DAY,
            latency: LatencyConfig::default(),
            data: DataConfig::default(),
            trainer: TrainerSection::default(),
            strategy: StrategySection::default(),
            projection: ProjectionConfig::default(),
            clustering: ClusteringConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    pub uniform_min: f64,
    pub uniform_max: f64,
    /// Multiplicative per-dispatch jitter: latency is scaled by
    /// Uniform(1 - jitter, 1 + jitter). Zero keeps latencies fixed.
    pub jitter: f64,
    /// Explicit per-client latencies; overrides the uniform draw when set.
    pub per_client: Option<Vec<f64>>,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self { uniform_min: 0.0, uniform_max: 6000.0, jitter: 0.0, per_client: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of ground-truth client clusters.
    pub k: usize,
    /// Number of labels.
    pub d: usize,
    pub alpha: f64,
    pub volume_sigma: f64,
    pub base_volume: f64,
    pub feature_dim: usize,
    /// Standard deviation of the per-label Gaussian blob centers.
    pub center_scale: f64,
    /// Fraction of all generated samples held out as the global test split.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            k: 5,
            d: 10,
            alpha: 0.1,
            volume_sigma: 1.0,
            base_volume: 200.0,
            feature_dim: 20,
            center_scale: 2.0,
            test_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub model: ModelKind,
    pub hidden: usize,
    pub eta_c: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            model: ModelKind::Softmax,
            hidden: 32,
            eta_c: 0.01,
            decay: 0.999,
            epochs: 5,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Softmax,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub name: StrategyName,
    pub eta_g: f64,
    /// Buffer capacity.
    pub c: usize,
    pub decay_mode: DecayMode,
    pub rescue: bool,
    pub async_mix_alpha: f64,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self {
            name: StrategyName::Afbs,
            eta_g: 1.0,
            c: 10,
            decay_mode: DecayMode::UniformMinStaleness,
            rescue: true,
            async_mix_alpha: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Target dimension; `None` resolves to `ceil(0.6 * d)`.
    pub p: Option<usize>,
    pub sigma: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { p: None, sigma: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Number of K-means clusters; `None` resolves to `data.k`.
    pub kmeans_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Virtual seconds between evaluations.
    pub cadence: f64,
    /// Whether the grid includes t = 0.
    pub include_t0: bool,
    pub targets: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { cadence: 600.0, include_t0: true, targets: vec![0.5, 0.75, 0.8, 0.9] }
    }
}

/// Default projection dimension for `d` labels.
pub fn default_projection_dim(d: usize) -> usize {
    ((0.6 * d as f64).ceil() as usize).max(1)
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }

    /// Fills every optional field with its concrete value and validates.
    pub fn resolved(mut self) -> Result<Self> {
        if self.projection.p.is_none() {
            self.projection.p = Some(default_projection_dim(self.data.d));
        }
        if self.clustering.kmeans_k.is_none() {
            self.clustering.kmeans_k = Some(self.data.k);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn projection_dim(&self) -> usize {
        self.projection.p.unwrap_or_else(|| default_projection_dim(self.data.d))
    }

    pub fn kmeans_k(&self) -> usize {
        self.clustering.kmeans_k.unwrap_or(self.data.k)
    }

    pub fn architecture(&self) -> Architecture {
        match self.trainer.model {
            ModelKind::Softmax => Architecture::Softmax {
                features: self.data.feature_dim,
                classes: self.data.d,
            },
            ModelKind::Mlp => Architecture::Mlp {
                features: self.data.feature_dim,
                hidden: self.trainer.hidden,
                classes: self.data.d,
            },
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            eta_c: self.trainer.eta_c,
            decay: self.trainer.decay,
            epochs: self.trainer.epochs,
            batch_size: self.trainer.batch_size,
        }
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            eta_g: self.strategy.eta_g,
            capacity: self.strategy.c,
            decay_mode: self.strategy.decay_mode,
            rescue: self.strategy.rescue,
            async_mix_alpha: self.strategy.async_mix_alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_clients == 0 {
            return bad("num_clients must be >= 1".into());
        }
        if self.m_active == 0 || self.m_active > self.num_clients {
            return bad(format!(
                "m_active must be in [1, num_clients={}], got {}",
                self.num_clients, self.m_active
            ));
        }
        if !(self.horizon_virtual_seconds.is_finite() && self.horizon_virtual_seconds >= 0.0) {
            return bad("horizon_virtual_seconds must be finite and >= 0".into());
        }

        let lat = &self.latency;
        if !(lat.uniform_min >= 0.0 && lat.uniform_min < lat.uniform_max && lat.uniform_max.is_finite())
        {
            return bad(format!(
                "latency requires 0 <= uniform_min < uniform_max, got [{}, {}]",
                lat.uniform_min, lat.uniform_max
            ));
        }
        if !(0.0..1.0).contains(&lat.jitter) {
            return bad(format!("latency.jitter must be in [0, 1), got {}", lat.jitter));
        }
        if let Some(per_client) = &lat.per_client {
            if per_client.len() != self.num_clients {
                return bad(format!(
                    "latency.per_client has {} entries for {} clients",
                    per_client.len(),
                    self.num_clients
                ));
            }
            if per_client.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return bad("latency.per_client entries must be finite and >= 0".into());
            }
        }

        let data = &self.data;
        if data.k == 0 {
            return bad("data.k must be >= 1".into());
        }
        if data.d < 2 {
            return bad("data.d must be >= 2".into());
        }
        if self.num_clients < data.k {
            return bad(format!("num_clients ({}) must be >= data.k ({})", self.num_clients, data.k));
        }
        if !(data.alpha > 0.0 && data.alpha.is_finite()) {
            return bad("data.alpha must be > 0".into());
        }
        if !(data.volume_sigma >= 0.0 && data.volume_sigma.is_finite()) {
            return bad("data.volume_sigma must be >= 0".into());
        }
        if !(data.base_volume >= 1.0 && data.base_volume.is_finite()) {
            return bad("data.base_volume must be >= 1".into());
        }
        if data.feature_dim == 0 {
            return bad("data.feature_dim must be >= 1".into());
        }
        if !(data.center_scale >= 0.0 && data.center_scale.is_finite()) {
            return bad("data.center_scale must be >= 0".into());
        }
        if !(data.test_fraction > 0.0 && data.test_fraction < 1.0) {
            return bad("data.test_fraction must be in (0, 1)".into());
        }

        let tr = &self.trainer;
        if !(tr.eta_c >= 0.0 && tr.eta_c.is_finite()) {
            return bad("trainer.eta_c must be >= 0".into());
        }
        if !(tr.decay > 0.0 && tr.decay <= 1.0) {
            return bad("trainer.decay must be in (0, 1]".into());
        }
        if tr.epochs == 0 || tr.batch_size == 0 {
            return bad("trainer.epochs and trainer.batch_size must be >= 1".into());
        }
        if tr.model == ModelKind::Mlp && tr.hidden == 0 {
            return bad("trainer.hidden must be >= 1".into());
        }

        let st = &self.strategy;
        if !(st.eta_g > 0.0 && st.eta_g.is_finite()) {
            return bad("strategy.eta_g must be > 0".into());
        }
        if st.c == 0 {
            return bad("strategy.c (buffer size) must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&st.async_mix_alpha) {
            return bad("strategy.async_mix_alpha must be in [0, 1]".into());
        }

        let p = self.projection_dim();
        if p == 0 || p >= data.d {
            return bad(format!("projection.p must satisfy 1 <= p < d={}, got {p}", data.d));
        }
        if !(self.projection.sigma > 0.0 && self.projection.sigma.is_finite()) {
            return bad("projection.sigma must be > 0".into());
        }

        let k = self.kmeans_k();
        if k == 0 || k > self.num_clients {
            return bad(format!("clustering.kmeans_k must be in [1, num_clients], got {k}"));
        }

        let m = &self.metrics;
        if !(m.cadence > 0.0 && m.cadence.is_finite()) {
            return bad("metrics.cadence must be > 0".into());
        }
        if m.targets.iter().any(|t| !t.is_finite()) {
            return bad("metrics.targets must be finite".into());
        }
        Ok(())
    }
}
