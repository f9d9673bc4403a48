//! Synthetic federated dataset.
//!
//! Clients are assigned round-robin to `k` ground-truth clusters. Each
//! cluster owns one label distribution drawn from Dirichlet(alpha), and every
//! client in it samples labels i.i.d. from that distribution. Client volumes
//! follow a log-normal law. Features are Gaussian blobs: label `y` maps to
//! `N(center_y, I)`, which keeps the learning task convex for softmax
//! regression.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn new(feature_dim: usize) -> Self {
        Self { feature_dim, features: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn push(&mut self, features: &[f64], label: usize) {
        debug_assert_eq!(features.len(), self.feature_dim);
        self.features.extend_from_slice(features);
        self.labels.push(label);
    }

    pub fn histogram(&self, num_labels: usize) -> Vec<usize> {
        let mut hist = vec![0; num_labels];
        for &y in &self.labels {
            hist[y] += 1;
        }
        hist
    }
}

/// One client's local data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub samples: Samples,
    pub label_histogram: Vec<usize>,
}

impl ClientShard {
    pub fn new(client_id: usize, samples: Samples, num_labels: usize) -> Self {
        let label_histogram = samples.histogram(num_labels);
        Self { client_id, samples, label_histogram }
    }

    /// Number of local samples.
    pub fn volume(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedDataset {
    pub num_labels: usize,
    pub feature_dim: usize,
    pub clients: Vec<ClientShard>,
    /// Ground-truth cluster of each client, indexed by client id.
    pub cluster_of: Vec<usize>,
    /// Label distribution of each ground-truth cluster.
    pub cluster_distributions: Vec<Vec<f64>>,
    /// Global held-out split with balanced labels.
    pub test: Samples,
}

/// Normalized label histogram of a shard.
pub fn label_distribution(shard: &ClientShard) -> Result<Vec<f64>> {
    let total: usize = shard.label_histogram.iter().sum();
    if total == 0 {
        return Err(Error::EmptyShard(shard.client_id));
    }
    let v = total as f64;
    Ok(shard.label_histogram.iter().map(|&c| c as f64 / v).collect())
}

fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, d: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::config(format!("alpha: {e}")))?;
    loop {
        let draws: Vec<f64> = (0..d).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        // Every component can underflow to zero for very small alpha.
        if sum > 0.0 && sum.is_finite() {
            return Ok(draws.into_iter().map(|g| g / sum).collect());
        }
    }
}

fn sample_blob<R: Rng + ?Sized>(center: &[f64], rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    out.extend(center.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)));
}

/// Generates the federated dataset for `num_clients` clients.
pub fn generate(num_clients: usize, cfg: &DataConfig, seed: u64) -> Result<FederatedDataset> {
    let DataConfig { k, d, alpha, volume_sigma, base_volume, feature_dim, center_scale, test_fraction } =
        *cfg;
    if k == 0 || d < 2 || !(alpha > 0.0) || num_clients < k || feature_dim == 0 {
        return Err(Error::config(format!(
            "invalid data parameters: clients={num_clients} k={k} d={d} alpha={alpha}"
        )));
    }
    if !(volume_sigma >= 0.0) || !(base_volume >= 1.0) || !(test_fraction > 0.0 && test_fraction < 1.0)
    {
        return Err(Error::config("invalid volume or test split parameters"));
    }

    let mut center_rng = rng::stream(seed, Stream::Centers);
    let centers: Vec<Vec<f64>> = (0..d)
        .map(|_| {
            (0..feature_dim)
                .map(|_| center_scale * center_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let mut dist_rng = rng::stream(seed, Stream::ClusterDistributions);
    let cluster_distributions = (0..k)
        .map(|_| sample_dirichlet(alpha, d, &mut dist_rng))
        .collect::<Result<Vec<_>>>()?;
    let samplers = cluster_distributions
        .iter()
        .map(|p| WeightedIndex::new(p).map_err(|e| Error::config(format!("label weights: {e}"))))
        .collect::<Result<Vec<_>>>()?;

    let volume_law = LogNormal::new(base_volume.ln(), volume_sigma)
        .map_err(|e| Error::config(format!("volume distribution: {e}")))?;
    let mut volume_rng = rng::stream(seed, Stream::ClientVolumes);

    let mut row = Vec::with_capacity(feature_dim);
    let mut clients = Vec::with_capacity(num_clients);
    let mut cluster_of = Vec::with_capacity(num_clients);
    for client_id in 0..num_clients {
        let cluster = client_id % k;
        let volume = (volume_law.sample(&mut volume_rng).round() as usize).max(1);
        let mut label_rng = rng::derive(seed, Stream::ClientLabels, client_id as u64);
        let mut feature_rng = rng::derive(seed, Stream::Features, client_id as u64);
        let mut samples = Samples::new(feature_dim);
        samples.features.reserve(volume * feature_dim);
        for _ in 0..volume {
            let y = samplers[cluster].sample(&mut label_rng);
            sample_blob(&centers[y], &mut feature_rng, &mut row);
            samples.push(&row, y);
        }
        clients.push(ClientShard::new(client_id, samples, d));
        cluster_of.push(cluster);
    }

    let train_total: usize = clients.iter().map(ClientShard::volume).sum();
    let test_len =
        ((train_total as f64 * test_fraction / (1.0 - test_fraction)).round() as usize).max(d);
    let mut test_rng = rng::stream(seed, Stream::TestSplit);
    let mut test = Samples::new(feature_dim);
    for i in 0..test_len {
        let y = i % d;
        sample_blob(&centers[y], &mut test_rng, &mut row);
        test.push(&row, y);
    }

    Ok(FederatedDataset { num_labels: d, feature_dim, clients, cluster_of, cluster_distributions, test })
}

impl FederatedDataset {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, id: usize) -> Result<&ClientShard> {
        self.clients.get(id).ok_or(Error::UnknownClient(id))
    }

    /// All training samples pooled into one set, in client order.
    pub fn pooled(&self) -> Samples {
        let mut all = Samples::new(self.feature_dim);
        for shard in &self.clients {
            all.features.extend_from_slice(&shard.samples.features);
            all.labels.extend_from_slice(&shard.samples.labels);
        }
        all
    }

    /// SHA-256 over the raw contents, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_labels as u64).to_le_bytes());
        h.update((self.feature_dim as u64).to_le_bytes());
        let hash_samples = |h: &mut Sha256, s: &Samples| {
            h.update((s.len() as u64).to_le_bytes());
            for x in &s.features {
                h.update(x.to_le_bytes());
            }
            for &y in &s.labels {
                h.update((y as u64).to_le_bytes());
            }
        };
        for shard in &self.clients {
            h.update((shard.client_id as u64).to_le_bytes());
            hash_samples(&mut h, &shard.samples);
        }
        hash_samples(&mut h, &self.test);
        for &c in &self.cluster_of {
            h.update((c as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Checks structural invariants; used after import.
    pub fn validate(&self) -> Result<()> {
        let check = |s: &Samples, who: &str| -> Result<()> {
            if s.feature_dim != self.feature_dim || s.features.len() != s.len() * self.feature_dim {
                return Err(Error::config(format!("{who}: feature matrix has wrong shape")));
            }
            if let Some(y) = s.labels.iter().find(|&&y| y >= self.num_labels) {
                return Err(Error::config(format!("{who}: label {y} out of range")));
            }
            Ok(())
        };
        if self.num_labels < 2 {
            return Err(Error::config("dataset needs at least 2 labels"));
        }
        if self.cluster_of.len() != self.clients.len() {
            return Err(Error::config("cluster_of must have one entry per client"));
        }
        for (i, shard) in self.clients.iter().enumerate() {
            let who = format!("client {i}");
            if shard.client_id != i {
                return Err(Error::config(format!("{who}: client ids must be 0..n in order")));
            }
            check(&shard.samples, &who)?;
            if shard.volume() == 0 {
                return Err(Error::EmptyShard(i));
            }
            if shard.label_histogram != shard.samples.histogram(self.num_labels) {
                return Err(Error::config(format!("{who}: label_histogram disagrees with labels")));
            }
        }
        check(&self.test, "test split")?;
        if self.test.is_empty() {
            return Err(Error::config("test split is empty"));
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ds: Self = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(k: usize, d: usize, alpha: f64) -> DataConfig {
        DataConfig { k, d, alpha, ..DataConfig::default() }
    }

    fn total_variation(a: &[f64], b: &[f64]) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    #[test]
    fn shards_are_consistent() {
        let ds = generate(30, &cfg(3, 10, 0.1), 1).unwrap();
        ds.validate().unwrap();
        for (i, shard) in ds.clients.iter().enumerate() {
            assert!(shard.volume() >= 1);
            assert_eq!(shard.label_histogram.iter().sum::<usize>(), shard.volume());
            assert_eq!(ds.cluster_of[i], i % 3);
        }
    }

    #[test]
    fn generation_is_pure() {
        let a = generate(20, &cfg(2, 5, 0.5), 9).unwrap();
        let b = generate(20, &cfg(2, 5, 0.5), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        let c = generate(20, &cfg(2, 5, 0.5), 10).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn zero_sigma_gives_base_volume() {
        let c = DataConfig { volume_sigma: 0.0, ..DataConfig::default() };
        let ds = generate(25, &c, 3).unwrap();
        assert!(ds.clients.iter().all(|s| s.volume() == 200));
    }

    #[test]
    fn large_alpha_single_cluster_is_near_uniform() {
        // Summed chi-square over 50 clients with 9 degrees of freedom each:
        // mean 450, sd 30. Threshold at mean + 4 sd.
        let c = DataConfig { k: 1, alpha: 1e6, volume_sigma: 0.0, ..DataConfig::default() };
        let ds = generate(50, &c, 5).unwrap();
        let chi2: f64 = ds
            .clients
            .iter()
            .map(|s| {
                let e = s.volume() as f64 / 10.0;
                s.label_histogram.iter().map(|&o| (o as f64 - e).powi(2) / e).sum::<f64>()
            })
            .sum();
        assert!(chi2 < 570.0, "chi-square {chi2}");
    }

    #[test]
    fn dirichlet_point_one_concentrates_mass() {
        let ds = generate(200, &cfg(200, 10, 0.1), 11).unwrap();
        let mut top3: Vec<f64> = ds
            .cluster_distributions
            .iter()
            .map(|p| {
                let mut s = p.clone();
                s.sort_by(|a, b| b.total_cmp(a));
                s[..3].iter().sum()
            })
            .collect();
        top3.sort_by(f64::total_cmp);
        let median = top3[top3.len() / 2];
        assert!(median >= 0.8, "median top-3 mass {median}");
    }

    #[test]
    fn same_cluster_clients_are_closer() {
        let ds = generate(100, &cfg(5, 10, 0.1), 2).unwrap();
        let dists: Vec<Vec<f64>> =
            ds.clients.iter().map(|s| label_distribution(s).unwrap()).collect();
        let (mut same, mut diff) = ((0.0, 0usize), (0.0, 0usize));
        for i in 0..dists.len() {
            for j in i + 1..dists.len() {
                let tv = total_variation(&dists[i], &dists[j]);
                if ds.cluster_of[i] == ds.cluster_of[j] {
                    same = (same.0 + tv, same.1 + 1);
                } else {
                    diff = (diff.0 + tv, diff.1 + 1);
                }
            }
        }
        let (same, diff) = (same.0 / same.1 as f64, diff.0 / diff.1 as f64);
        assert!(same < diff, "within {same} vs across {diff}");
    }

    #[test]
    fn test_split_is_balanced_and_sized() {
        let ds = generate(20, &cfg(2, 4, 1.0), 4).unwrap();
        let train: usize = ds.clients.iter().map(ClientShard::volume).sum();
        let frac = ds.test.len() as f64 / (train + ds.test.len()) as f64;
        assert!((frac - 0.1).abs() < 0.01);
        let hist = ds.test.histogram(4);
        assert!(hist.iter().max().unwrap() - hist.iter().min().unwrap() <= 1);
    }

    #[test]
    fn label_distribution_examples() {
        let mut samples = Samples::new(1);
        for y in [0, 0, 0, 1] {
            samples.push(&[0.0], y);
        }
        let shard = ClientShard::new(0, samples, 4);
        assert_eq!(label_distribution(&shard).unwrap(), vec![0.75, 0.25, 0.0, 0.0]);

        let mut samples = Samples::new(1);
        samples.push(&[0.0], 2);
        let shard = ClientShard::new(1, samples, 3);
        assert_eq!(label_distribution(&shard).unwrap(), vec![0.0, 0.0, 1.0]);

        let empty = ClientShard::new(2, Samples::new(1), 3);
        assert!(matches!(label_distribution(&empty), Err(Error::EmptyShard(2))));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(generate(10, &cfg(0, 10, 0.1), 0).is_err());
        assert!(generate(10, &cfg(2, 1, 0.1), 0).is_err());
        assert!(generate(10, &cfg(2, 10, 0.0), 0).is_err());
        assert!(generate(1, &cfg(2, 10, 0.1), 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let ds = generate(6, &cfg(2, 3, 1.0), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        ds.save_json(&path).unwrap();
        let back = FederatedDataset::load_json(&path).unwrap();
        assert_eq!(back.checksum(), ds.checksum());
    }

    proptest! {
        #[test]
        fn label_distribution_sums_to_one(labels in prop::collection::vec(0usize..7, 1..300)) {
            let mut samples = Samples::new(1);
            for y in labels {
                samples.push(&[0.0], y);
            }
            let shard = ClientShard::new(0, samples, 7);
            let p = label_distribution(&shard).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
