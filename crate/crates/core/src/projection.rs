//! Client-side encryption of label distributions.
//!
//! A client holding a length-`d` label distribution `a` stacks `d` copies of
//! it into a `d x d` matrix, adds i.i.d. `N(0, sigma^2)` noise so the result
//! is full rank almost surely, and multiplies by the transpose of a shared
//! `p x d` Gaussian projection `R` with `p < d`. The server receives the
//! `d x p` product. Projection drops the rank to at most `p`, so the lifted
//! matrix cannot be recovered, while pairwise distances survive approximately.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Random `p x d` projection with entries drawn i.i.d. from `N(0, 1/p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    matrix: DMatrix<f64>,
    seed: u64,
}

impl ProjectionMatrix {
    pub fn new(d: usize, p: usize, seed: u64) -> Result<Self> {
        if p == 0 || p >= d {
            return Err(Error::config(format!("projection needs 1 <= p < d, got p={p} d={d}")));
        }
        let mut rng = crate::rng::stream(seed, crate::rng::Stream::Projection);
        let scale = 1.0 / (p as f64).sqrt();
        let matrix =
            DMatrix::from_fn(p, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        Ok(Self { matrix, seed })
    }

    pub fn d(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `R x` for a length-`d` vector.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(x);
        (&self.matrix * v).iter().copied().collect()
    }
}

/// The `d x p` matrix a client sends instead of its label distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedDistribution {
    pub client_id: usize,
    pub matrix: DMatrix<f64>,
}

impl EncryptedDistribution {
    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn p(&self) -> usize {
        self.matrix.ncols()
    }

    /// Row-major flattening, length `d * p`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.d() * self.p());
        for row in self.matrix.row_iter() {
            out.extend(row.iter());
        }
        out
    }

    /// Mean of the `d` rows, length `p`.
    pub fn row_mean(&self) -> Vec<f64> {
        let d = self.d() as f64;
        (0..self.p()).map(|j| self.matrix.column(j).sum() / d).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncryptedWire {
    client_id: usize,
    d: usize,
    p: usize,
    data: Vec<f64>,
}

impl Serialize for EncryptedDistribution {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EncryptedWire { client_id: self.client_id, d: self.d(), p: self.p(), data: self.flatten() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EncryptedDistribution {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let wire = EncryptedWire::deserialize(de)?;
        if wire.data.len() != wire.d * wire.p {
            return Err(serde::de::Error::custom(format!(
                "expected {}x{} = {} values, got {}",
                wire.d,
                wire.p,
                wire.d * wire.p,
                wire.data.len()
            )));
        }
        Ok(EncryptedDistribution {
            client_id: wire.client_id,
            matrix: DMatrix::from_row_slice(wire.d, wire.p, &wire.data),
        })
    }
}

fn check_distribution(a: &[f64]) -> Result<()> {
    let sum: f64 = a.iter().sum();
    if a.is_empty() || (sum - 1.0).abs() > 1e-9 || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(format!("label distribution must sum to 1, sums to {sum}")));
    }
    Ok(())
}

/// Stacks `d` copies of `a` and adds `N(0, sigma^2)` noise to every entry.
pub fn lift_with_noise<R: Rng + ?Sized>(a: &[f64], sigma: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("sigma must be > 0, got {sigma}")));
    }
    check_distribution(a)?;
    let d = a.len();
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
    // Fill row by row so the draw order is stable.
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = a[j] + noise.sample(rng);
        }
    }
    Ok(m)
}

/// Lifts `a` with noise and projects: `(stack(a) + G) R^T`, shape `d x p`.
pub fn encrypt<R: Rng + ?Sized>(
    client_id: usize,
    a: &[f64],
    projection: &ProjectionMatrix,
    sigma: f64,
    rng: &mut R,
) -> Result<EncryptedDistribution> {
    if a.len() != projection.d() {
        return Err(Error::Dimension { expected: projection.d(), got: a.len() });
    }
    let lifted = lift_with_noise(a, sigma, rng)?;
    Ok(EncryptedDistribution { client_id, matrix: lifted * projection.matrix().transpose() })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fraction of unordered point pairs whose squared distance after
/// projection stays within `[(1 - eps), (1 + eps)]` times the original.
pub fn verify_jl(points: &[Vec<f64>], projection: &ProjectionMatrix, epsilon: f64) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let projected: Vec<Vec<f64>> = points.iter().map(|p| projection.project(p)).collect();
    let mut kept = 0usize;
    let mut total = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let orig = sq_dist(&points[i], &points[j]);
            let proj = sq_dist(&projected[i], &projected[j]);
            if (1.0 - epsilon) * orig <= proj && proj <= (1.0 + epsilon) * orig {
                kept += 1;
            }
            total += 1;
        }
    }
    kept as f64 / total as f64
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Numerical rank: singular values above `max(rows, cols) * eps * s_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let Some(&top) = sv.first() else { return 0 };
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * top;
    sv.iter().filter(|&&s| s > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn simplex_point<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
        let raw: Vec<f64> = (0..d).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn projection_shape_and_scale() {
        assert!(ProjectionMatrix::new(10, 10, 0).is_err());
        assert!(ProjectionMatrix::new(10, 0, 0).is_err());
        let r = ProjectionMatrix::new(200, 150, 3).unwrap();
        assert_eq!((r.p(), r.d()), (150, 200));
        let n = (r.p() * r.d()) as f64;
        let var = r.matrix().iter().map(|v| v * v).sum::<f64>() / n;
        assert!((var - 1.0 / 150.0).abs() < 0.05 / 150.0, "var {var}");
    }

    #[test]
    fn lift_stays_close_to_stacked_rows() {
        let sigma = 1e-3;
        let mut rng = rng::stream(1, Stream::EncryptionNoise);
        let mut within = 0;
        for _ in 0..1000 {
            let m = lift_with_noise(&[1.0, 0.0], sigma, &mut rng).unwrap();
            let ok = (0..2).all(|i| (m[(i, 0)] - 1.0).abs() <= 5.0 * sigma && m[(i, 1)].abs() <= 5.0 * sigma);
            within += ok as usize;
        }
        assert!(within >= 990, "{within}/1000");
    }

    #[test]
    fn lift_is_full_rank() {
        let mut rng = rng::stream(2, Stream::EncryptionNoise);
        for _ in 0..200 {
            let a = simplex_point(10, &mut rng);
            let m = lift_with_noise(&a, 1e-3, &mut rng).unwrap();
            assert!(smallest_singular_value(&m) > 1e-12);
            assert_eq!(numerical_rank(&m), 10);
        }
    }

    #[test]
    fn stacked_rows_without_noise_have_rank_one() {
        let a = [0.2, 0.3, 0.5];
        let m = DMatrix::from_fn(3, 3, |_, j| a[j]);
        assert_eq!(numerical_rank(&m), 1);
    }

    #[test]
    fn lift_rejects_bad_input() {
        let mut rng = rng::stream(0, Stream::EncryptionNoise);
        assert!(lift_with_noise(&[0.5, 0.5], 0.0, &mut rng).is_err());
        assert!(lift_with_noise(&[0.5, 0.5], -1.0, &mut rng).is_err());
        assert!(lift_with_noise(&[0.5, 0.6], 1e-3, &mut rng).is_err());
    }

    #[test]
    fn encrypt_shape_rank_and_mismatch() {
        let r = ProjectionMatrix::new(10, 6, 4).unwrap();
        let mut rng = rng::stream(4, Stream::EncryptionNoise);
        let a = simplex_point(10, &mut rng);
        let enc = encrypt(7, &a, &r, 1e-3, &mut rng).unwrap();
        assert_eq!((enc.d(), enc.p()), (10, 6));
        assert!(numerical_rank(&enc.matrix) <= 6);
        assert!(matches!(
            encrypt(7, &a[..9], &r, 1e-3, &mut rng),
            Err(Error::Dimension { expected: 10, got: 9 })
        ));
    }

    #[test]
    fn repeated_encryption_is_stable() {
        // Row means are R a + R (mean noise row); the noise row has per-entry
        // sd sigma / sqrt(d), so two encryptions differ by O(sigma).
        let sigma = 1e-3;
        let r = ProjectionMatrix::new(10, 6, 5).unwrap();
        let mut rng = rng::stream(5, Stream::EncryptionNoise);
        let a = simplex_point(10, &mut rng);
        let e1 = encrypt(0, &a, &r, sigma, &mut rng).unwrap();
        let e2 = encrypt(0, &a, &r, sigma, &mut rng).unwrap();
        assert_ne!(e1, e2);
        let diff = sq_dist(&e1.row_mean(), &e2.row_mean()).sqrt();
        assert!(diff < 10.0 * sigma, "row-mean drift {diff}");
    }

    #[test]
    fn jl_zero_distance_pair_is_preserved() {
        let r = ProjectionMatrix::new(4, 2, 0).unwrap();
        let p = vec![0.25; 4];
        assert_eq!(verify_jl(&[p.clone(), p], &r, 0.1), 1.0);
    }

    #[test]
    fn jl_fraction_grows_with_epsilon() {
        let mut rng = rng::stream(6, Stream::EncryptionNoise);
        let points: Vec<Vec<f64>> = (0..40).map(|_| simplex_point(10, &mut rng)).collect();
        for seed in 0..5 {
            let r = ProjectionMatrix::new(10, 6, seed).unwrap();
            assert!(verify_jl(&points, &r, 0.999) >= verify_jl(&points, &r, 0.5));
        }
    }

    #[test]
    fn wire_format_round_trips() {
        let r = ProjectionMatrix::new(5, 3, 1).unwrap();
        let mut rng = rng::stream(1, Stream::EncryptionNoise);
        let enc = encrypt(11, &[0.2; 5], &r, 1e-3, &mut rng).unwrap();
        let json = serde_json::to_value(&enc).unwrap();
        assert_eq!(json["client_id"], 11);
        assert_eq!(json["d"], 5);
        assert_eq!(json["p"], 3);
        assert_eq!(json["data"].as_array().unwrap().len(), 15);
        assert_eq!(json["data"][1].as_f64().unwrap(), enc.matrix[(0, 1)]);
        let back: EncryptedDistribution = serde_json::from_value(json).unwrap();
        assert_eq!(back, enc);

        let bad = serde_json::json!({"client_id": 0, "d": 2, "p": 2, "data": [1.0]});
        assert!(serde_json::from_value::<EncryptedDistribution>(bad).is_err());
    }

    proptest! {
        #[test]
        fn encrypted_rank_never_exceeds_p(seed in 0u64..1000, d in 3usize..12) {
            let p = d - 1 - (seed as usize % (d - 1));
            let r = ProjectionMatrix::new(d, p, seed).unwrap();
            let mut rng = rng::derive(seed, Stream::EncryptionNoise, d as u64);
            let a = simplex_point(d, &mut rng);
            let enc = encrypt(0, &a, &r, 1e-3, &mut rng).unwrap();
            prop_assert!(numerical_rank(&enc.matrix) <= p);
            prop_assert!(p < d);
        }
    }
}
