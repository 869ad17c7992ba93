//! Multinomial logistic regression trained by minibatch SGD.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Samples;

/// Weight matrix of shape `classes x (dim + 1)`, row-major, with the bias in
/// the last column of every row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    classes: usize,
    dim: usize,
    w: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        ModelParams {
            classes,
            dim,
            w: vec![0.0; classes * (dim + 1)],
        }
    }

    pub fn from_vec(classes: usize, dim: usize, w: Vec<f64>) -> Self {
        assert_eq!(w.len(), classes * (dim + 1));
        ModelParams { classes, dim, w }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ModelParams) {
        debug_assert_eq!(self.w.len(), other.w.len());
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += scale * b;
        }
    }

    pub fn sub(&self, other: &ModelParams) -> ModelParams {
        let w = self.w.iter().zip(&other.w).map(|(a, b)| a - b).collect();
        ModelParams { w, ..*self }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
    }

    fn row(&self, c: usize) -> &[f64] {
        let cols = self.dim + 1;
        &self.w[c * cols..(c + 1) * cols]
    }

    fn logits_into(&self, x: &[f32], out: &mut [f64]) {
        let d = self.dim;
        for (c, o) in out.iter_mut().enumerate() {
            let row = self.row(c);
            let mut acc = row[d];
            for (wj, &xj) in row[..d].iter().zip(x) {
                acc += wj * xj as f64;
            }
            *o = acc;
        }
    }
}

/// Softmax probabilities in place; returns `log(sum(exp(z)))`.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

fn cross_entropy(w: &ModelParams, x: &[f32], y: usize, buf: &mut [f64]) -> f64 {
    w.logits_into(x, buf);
    let zy = buf[y];
    let lse = softmax_in_place(buf);
    lse - zy
}

fn l2_penalty(w: &ModelParams, l2: f64) -> f64 {
    if l2 == 0.0 {
        0.0
    } else {
        0.5 * l2 * w.w.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Mean softmax cross-entropy over `samples` (plus the optional L2 term).
pub fn loss(w: &ModelParams, samples: &Samples, l2: f64) -> f64 {
    assert!(!samples.is_empty(), "loss of an empty sample set");
    let mut buf = vec![0.0; w.classes];
    let total: f64 = (0..samples.len())
        .map(|i| cross_entropy(w, samples.x(i), samples.y(i), &mut buf))
        .sum();
    total / samples.len() as f64 + l2_penalty(w, l2)
}

/// Sum of per-sample losses and the number of correct argmax predictions.
pub fn evaluate(w: &ModelParams, samples: &Samples) -> (f64, usize) {
    let mut buf = vec![0.0; w.classes];
    let mut total = 0.0;
    let mut correct = 0;
    for i in 0..samples.len() {
        let y = samples.y(i);
        w.logits_into(samples.x(i), &mut buf);
        let pred = argmax(&buf);
        let zy = buf[y];
        total += softmax_in_place(&mut buf) - zy;
        correct += usize::from(pred == y);
    }
    (total, correct)
}

pub fn accuracy(w: &ModelParams, samples: &Samples) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    evaluate(w, samples).1 as f64 / samples.len() as f64
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean gradient of the loss over the rows of `samples` listed in `batch`.
pub fn gradient(w: &ModelParams, samples: &Samples, batch: &[usize], l2: f64) -> ModelParams {
    let mut g = ModelParams::zeros(w.classes, w.dim);
    gradient_into(w, samples, batch, l2, &mut g, &mut vec![0.0; w.classes]);
    g
}

/// Mean gradient over the whole sample set.
pub fn full_gradient(w: &ModelParams, samples: &Samples, l2: f64) -> ModelParams {
    let all: Vec<usize> = (0..samples.len()).collect();
    gradient(w, samples, &all, l2)
}

fn gradient_into(
    w: &ModelParams,
    samples: &Samples,
    batch: &[usize],
    l2: f64,
    g: &mut ModelParams,
    buf: &mut [f64],
) {
    assert!(!batch.is_empty(), "gradient of an empty minibatch");
    let d = w.dim;
    let cols = d + 1;
    g.w.iter_mut().for_each(|v| *v = 0.0);
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        let x = samples.x(i);
        let y = samples.y(i);
        w.logits_into(x, buf);
        softmax_in_place(buf);
        buf[y] -= 1.0;
        for (c, &r) in buf.iter().enumerate() {
            let coef = r * scale;
            let row = &mut g.w[c * cols..(c + 1) * cols];
            for (gj, &xj) in row[..d].iter_mut().zip(x) {
                *gj += coef * xj as f64;
            }
            row[d] += coef;
        }
    }
    if l2 != 0.0 {
        for (gj, wj) in g.w.iter_mut().zip(&w.w) {
            *gj += l2 * wj;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub w: ModelParams,
    /// Largest minibatch-gradient norm seen across the local steps.
    pub max_grad_norm: f64,
    /// The shard was smaller than the batch size, so minibatches were drawn
    /// with replacement.
    pub resampled: bool,
}

/// Runs `e_local` SGD steps at the fixed rate `eta`, each on a fresh
/// minibatch of `batch_size` rows (without replacement when the shard is
/// large enough).
pub fn local_update<R: Rng + ?Sized>(
    w: &ModelParams,
    shard: &Samples,
    e_local: usize,
    eta: f64,
    batch_size: usize,
    l2: f64,
    rng: &mut R,
) -> LocalUpdate {
    assert!(eta > 0.0, "learning rate must be positive");
    assert!(batch_size >= 1);
    let n = shard.len();
    let resampled = n < batch_size;
    let mut w = w.clone();
    let mut g = ModelParams::zeros(w.classes, w.dim);
    let mut buf = vec![0.0; w.classes];
    let mut batch = Vec::with_capacity(batch_size);
    let mut max_norm: f64 = 0.0;
    for _ in 0..e_local {
        batch.clear();
        if resampled {
            batch.extend((0..batch_size).map(|_| rng.random_range(0..n)));
        } else if batch_size == n {
            batch.extend(0..n);
        } else {
            batch.extend(rand::seq::index::sample(rng, n, batch_size).iter());
        }
        gradient_into(&w, shard, &batch, l2, &mut g, &mut buf);
        max_norm = max_norm.max(g.norm());
        w.axpy(-eta, &g);
    }
    LocalUpdate {
        w,
        max_grad_norm: max_norm,
        resampled,
    }
}

/// Largest minibatch-gradient norm over one pass through `shard` at `w`
/// (no parameter updates). Used to seed every client's gradient bound.
pub fn max_batch_grad_norm(w: &ModelParams, shard: &Samples, batch_size: usize, l2: f64) -> f64 {
    let n = shard.len();
    let idx: Vec<usize> = (0..n).collect();
    let mut g = ModelParams::zeros(w.classes, w.dim);
    let mut buf = vec![0.0; w.classes];
    idx.chunks(batch_size.max(1))
        .map(|chunk| {
            gradient_into(w, shard, chunk, l2, &mut g, &mut buf);
            g.norm()
        })
        .fold(0.0, f64::max)
}
