//! Model parameters and the two supported architectures.
//!
//! Parameters are a flat `f64` vector. Layouts:
//! - softmax regression: `W[classes][features]`, then `b[classes]`
//! - MLP: `W1[hidden][features]`, `b1[hidden]`, `W2[classes][hidden]`, `b2[classes]`
//!
//! Loss is mean softmax cross-entropy over a batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Samples;

/// Flat vector of model weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_vec(weights: Vec<f64>) -> Self {
        Self(weights)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|w| w.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&w| w == 0.0)
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ModelParams) -> ModelParams {
        debug_assert_eq!(self.dim(), other.dim());
        ModelParams(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        debug_assert_eq!(self.dim(), other.dim());
        for (w, o) in self.0.iter_mut().zip(&other.0) {
            *w += scale * o;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.0 {
            *w *= factor;
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    Softmax { features: usize, classes: usize },
    Mlp { features: usize, hidden: usize, classes: usize },
}

/// Turns `logits` into probabilities in place and returns `-log p[label]`.
fn softmax_xent(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted_label = logits[label] - max;
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for p in logits.iter_mut() {
        *p /= sum;
    }
    sum.ln() - shifted_label
}

fn matvec(w: &[f64], x: &[f64], b: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

impl Architecture {
    pub fn features(&self) -> usize {
        match *self {
            Architecture::Softmax { features, .. } | Architecture::Mlp { features, .. } => features,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Architecture::Softmax { classes, .. } | Architecture::Mlp { classes, .. } => classes,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::Softmax { features, classes } => classes * features + classes,
            Architecture::Mlp { features, hidden, classes } => {
                hidden * features + hidden + classes * hidden + classes
            }
        }
    }

    /// Initial weights. Softmax regression starts at zero; the MLP uses
    /// Glorot-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams {
        let mut params = ModelParams::zeros(self.param_count());
        if let Architecture::Mlp { features, hidden, classes } = *self {
            let w = params.as_mut_slice();
            let a1 = (6.0 / (features + hidden) as f64).sqrt();
            for v in &mut w[..hidden * features] {
                *v = rng.random_range(-a1..a1);
            }
            let off = hidden * features + hidden;
            let a2 = (6.0 / (hidden + classes) as f64).sqrt();
            for v in &mut w[off..off + classes * hidden] {
                *v = rng.random_range(-a2..a2);
            }
        }
        params
    }

    /// Class scores for one input.
    pub fn logits(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        match *self {
            Architecture::Softmax { features, classes } => {
                let (w, b) = params.split_at(classes * features);
                matvec(w, x, b, out);
            }
            Architecture::Mlp { features, hidden, classes } => {
                let (w1, rest) = params.split_at(hidden * features);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let mut h = vec![0.0; hidden];
                matvec(w1, x, b1, &mut h);
                for v in &mut h {
                    *v = v.tanh();
                }
                matvec(w2, &h, b2, out);
            }
        }
    }

    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        let mut z = vec![0.0; self.classes()];
        self.logits(params, x, &mut z);
        let mut best = 0;
        for (i, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = i;
            }
        }
        best
    }

    /// Mean cross-entropy over `batch` (row indices into `samples`).
    pub fn loss(&self, params: &[f64], samples: &Samples, batch: &[usize]) -> f64 {
        let mut z = vec![0.0; self.classes()];
        let mut total = 0.0;
        for &i in batch {
            self.logits(params, samples.row(i), &mut z);
            total += softmax_xent(&mut z, samples.labels[i]);
        }
        total / batch.len() as f64
    }

    /// Mean cross-entropy over `batch` and its gradient, written to `grad`.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        samples: &Samples,
        batch: &[usize],
        grad: &mut [f64],
    ) -> f64 {
        debug_assert_eq!(grad.len(), self.param_count());
        grad.fill(0.0);
        let classes = self.classes();
        let mut z = vec![0.0; classes];
        let mut total = 0.0;
        match *self {
            Architecture::Softmax { features, classes } => {
                let (gw, gb) = grad.split_at_mut(classes * features);
                for &i in batch {
                    let x = samples.row(i);
                    let y = samples.labels[i];
                    self.logits(params, x, &mut z);
                    total += softmax_xent(&mut z, y);
                    z[y] -= 1.0;
                    for (c, &dz) in z.iter().enumerate() {
                        gb[c] += dz;
                        for (g, &xv) in gw[c * features..(c + 1) * features].iter_mut().zip(x) {
                            *g += dz * xv;
                        }
                    }
                }
            }
            Architecture::Mlp { features, hidden, classes } => {
                let (w1, rest) = params.split_at(hidden * features);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let (gw1, grest) = grad.split_at_mut(hidden * features);
                let (gb1, grest) = grest.split_at_mut(hidden);
                let (gw2, gb2) = grest.split_at_mut(classes * hidden);
                let mut h = vec![0.0; hidden];
                let mut dh = vec![0.0; hidden];
                for &i in batch {
                    let x = samples.row(i);
                    let y = samples.labels[i];
                    matvec(w1, x, b1, &mut h);
                    for v in &mut h {
                        *v = v.tanh();
                    }
                    matvec(w2, &h, b2, &mut z);
                    total += softmax_xent(&mut z, y);
                    z[y] -= 1.0;
                    dh.fill(0.0);
                    for (c, &dz) in z.iter().enumerate() {
                        gb2[c] += dz;
                        let row = c * hidden..(c + 1) * hidden;
                        for ((g, &hv), (d, &w)) in
                            gw2[row.clone()].iter_mut().zip(&h).zip(dh.iter_mut().zip(&w2[row]))
                        {
                            *g += dz * hv;
                            *d += dz * w;
                        }
                    }
                    for (j, (&hv, &d)) in h.iter().zip(&dh).enumerate() {
                        let da = d * (1.0 - hv * hv);
                        gb1[j] += da;
                        for (g, &xv) in gw1[j * features..(j + 1) * features].iter_mut().zip(x) {
                            *g += da * xv;
                        }
                    }
                }
            }
        }
        let n = batch.len() as f64;
        for g in grad.iter_mut() {
            *g /= n;
        }
        total / n
    }
}
