//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream derived from the
//! experiment seed, a stream tag and an index. Streams never share state, so
//! adding draws in one component cannot shift the draws of another. This is
//! what lets a strategy sweep reuse the same dataset, latencies and dispatch
//! order while only the aggregation rule changes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent random streams used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ClusterDistributions = 1,
    ClientVolumes = 2,
    ClientLabels = 3,
    Features = 4,
    TestSplit = 5,
    Latency = 6,
    LatencyJitter = 7,
    Projection = 8,
    EncryptionNoise = 9,
    KMeans = 10,
    ModelInit = 11,
    Dispatch = 12,
    LocalTraining = 13,
    Rescue = 14,
    Centers = 15,
}

/// Derives a generator for `(seed, stream, index)`.
pub fn derive(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"afbs-rng-v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((stream as u64).to_le_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Shorthand for index 0 of a stream.
pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    derive(seed, stream, 0)
}
