//! Federated datasets: the Synthetic(alpha, beta) generator, IDX ingestion and
//! unbalanced non-i.i.d. partitioning.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;

/// Row-major feature matrix with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    dim: usize,
    features: Vec<f32>,
    labels: Vec<u32>,
}

impl Samples {
    pub fn new(dim: usize) -> Self {
        Samples {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_parts(dim: usize, features: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::InvalidParameter(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Samples {
            dim,
            features,
            labels,
        })
    }

    pub fn push(&mut self, x: &[f32], label: u32) {
        assert_eq!(x.len(), self.dim);
        self.features.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Samples {
        let mut out = Samples::new(self.dim);
        out.features.reserve(indices.len() * self.dim);
        for &i in indices {
            out.push(self.x(i), self.labels[i]);
        }
        out
    }

    pub fn extend(&mut self, other: &Samples) {
        assert_eq!(self.dim, other.dim);
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
    }
}

/// A dataset before partitioning.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatDataset {
    pub samples: Samples,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederatedDataset {
    pub shards: Vec<Samples>,
    pub num_classes: usize,
    pub dim: usize,
}

impl FederatedDataset {
    pub fn total(&self) -> usize {
        self.shards.iter().map(Samples::len).sum()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Samples::len).collect()
    }

    /// `n_i / n_total` for every shard.
    pub fn weights(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.shards.iter().map(|s| s.len() as f64 / total).collect()
    }

    /// Moves a seeded `fraction` of every shard (at most all but one sample)
    /// into a pooled test set.
    pub fn split_holdout(&mut self, fraction: f64, seed: u64) -> Samples {
        let mut rng = seed::rng(seed, &[seed::HOLDOUT]);
        let mut test = Samples::new(self.dim);
        for shard in &mut self.shards {
            let n = shard.len();
            let take = ((n as f64 * fraction).floor() as usize).min(n.saturating_sub(1));
            if take == 0 {
                continue;
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let (held, kept) = idx.split_at(take);
            let mut kept = kept.to_vec();
            kept.sort_unstable();
            test.extend(&shard.subset(held));
            *shard = shard.subset(&kept);
        }
        test
    }

    pub fn flatten(&self) -> Samples {
        let mut all = Samples::new(self.dim);
        for s in &self.shards {
            all.extend(s);
        }
        all
    }
}

/// Parameters of the Synthetic(alpha, beta) generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_clients: usize,
    pub dim: usize,
    pub total_samples: usize,
    pub alpha_skew: f64,
    pub beta_skew: f64,
    pub num_classes: usize,
    pub power_exponent: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_clients: 100,
            dim: 60,
            total_samples: 20_509,
            alpha_skew: 1.0,
            beta_skew: 1.0,
            num_classes: 10,
            power_exponent: 1.0,
        }
    }
}

/// Shard sizes `n_r ∝ r^(-exponent)` for ranks `r = 1..=n`, rounded to
/// integers by largest remainder. Sizes are nonincreasing and sum to `total`.
/// Every client receives at least one sample when `total >= n`.
pub fn power_law_sizes(n: usize, total: usize, exponent: f64) -> Vec<usize> {
    assert!(n >= 1);
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let wsum: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut sizes: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut leftover = total - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps lower ranks first on equal remainders.
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra)
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        sizes[i] += 1;
        leftover -= 1;
    }
    // Lift empty tail shards by taking from the largest ones.
    if total >= n {
        for i in (0..n).rev() {
            while sizes[i] == 0 {
                let donor = (0..n).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
                sizes[donor] -= 1;
                sizes[i] += 1;
            }
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
    }
    sizes
}

fn equal_sizes(n: usize, total: usize) -> Vec<usize> {
    (0..n)
        .map(|i| total / n + usize::from(i < total % n))
        .collect()
}

/// Generates a Synthetic(alpha, beta) federated dataset.
///
/// Client `k` draws a model `W_k = W_0 + alpha * (u_k + Z_k)` around a shared
/// base `W_0` (with `u_k ~ N(0,1)` a per-client shift and `Z_k` i.i.d.
/// standard normal entries), and a feature mean `v_k = beta * (B_k + xi_k)`
/// with `B_k ~ N(0,1)`. Features are `x ~ N(v_k, I)` and labels are the
/// argmax of `W_k x + b_k`. With `alpha = beta = 0` every client shares the
/// same generative model. Shard sizes follow [`power_law_sizes`].
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<FederatedDataset> {
    if cfg.dim == 0 {
        return Err(Error::InvalidParameter("dim must be at least 1".into()));
    }
    if cfg.n_clients < 2 {
        return Err(Error::InvalidParameter("need at least 2 clients".into()));
    }
    if cfg.num_classes < 2 {
        return Err(Error::InvalidParameter("need at least 2 classes".into()));
    }
    if cfg.total_samples < cfg.n_clients {
        return Err(Error::InvalidParameter(format!(
            "total_samples {} < n_clients {}",
            cfg.total_samples, cfg.n_clients
        )));
    }
    let (c, d) = (cfg.num_classes, cfg.dim);
    let sizes = power_law_sizes(cfg.n_clients, cfg.total_samples, cfg.power_exponent);
    let mut rng = seed::rng(seed, &[seed::DATA]);
    let std_normal = |rng: &mut seed::Rng| -> f64 { StandardNormal.sample(rng) };

    let base_w: Vec<f64> = (0..c * d).map(|_| std_normal(&mut rng)).collect();
    let base_b: Vec<f64> = (0..c).map(|_| std_normal(&mut rng)).collect();

    let mut shards = Vec::with_capacity(cfg.n_clients);
    for (k, &n_k) in sizes.iter().enumerate() {
        let mut crng = seed::rng(seed, &[seed::DATA, k as u64 + 1]);
        let u_k = std_normal(&mut crng);
        let b_shift = std_normal(&mut crng);
        let w: Vec<f64> = base_w
            .iter()
            .map(|&w0| w0 + cfg.alpha_skew * (u_k + std_normal(&mut crng)))
            .collect();
        let b: Vec<f64> = base_b
            .iter()
            .map(|&b0| b0 + cfg.alpha_skew * (u_k + std_normal(&mut crng)))
            .collect();
        let mean: Vec<f64> = (0..d)
            .map(|_| cfg.beta_skew * (b_shift + std_normal(&mut crng)))
            .collect();

        let mut shard = Samples::new(d);
        let mut x = vec![0f32; d];
        for _ in 0..n_k {
            for (xj, mj) in x.iter_mut().zip(&mean) {
                *xj = (mj + std_normal(&mut crng)) as f32;
            }
            let label = (0..c)
                .map(|class| {
                    let row = &w[class * d..(class + 1) * d];
                    row.iter().zip(&x).map(|(a, &b)| a * b as f64).sum::<f64>() + b[class]
                })
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .unwrap();
            shard.push(&x, label as u32);
        }
        shards.push(shard);
    }
    Ok(FederatedDataset {
        shards,
        num_classes: c,
        dim: d,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::UnexpectedEof {
                path: self.path.to_path_buf(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn read_magic(cur: &mut Cursor<'_>, expected: u32) -> Result<()> {
    let found = cur.u32()?;
    if found != expected {
        return Err(Error::BadMagic {
            path: cur.path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Loads an IDX image/label pair. Pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<FlatDataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let mut cur = Cursor {
        bytes: &image_bytes,
        pos: 0,
        path: images_path,
    };
    read_magic(&mut cur, IDX_IMAGE_MAGIC)?;
    let count = cur.u32()? as usize;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::InvalidParameter("IDX images have zero pixels".into()));
    }
    let pixels = cur.take(count * dim)?;
    let features: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();

    let mut lcur = Cursor {
        bytes: &label_bytes,
        pos: 0,
        path: labels_path,
    };
    read_magic(&mut lcur, IDX_LABEL_MAGIC)?;
    let n_labels = lcur.u32()? as usize;
    if n_labels != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: n_labels,
        });
    }
    let labels: Vec<u32> = lcur.take(n_labels)?.iter().map(|&b| b as u32).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    Ok(FlatDataset {
        samples: Samples::from_parts(dim, features, labels)?,
        num_classes,
    })
}

/// Seeded uniform subsample without replacement.
pub fn subsample(data: &FlatDataset, n: usize, seed: u64) -> Result<FlatDataset> {
    if n > data.samples.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot subsample {n} from {} samples",
            data.samples.len()
        )));
    }
    let mut rng = seed::rng(seed, &[seed::DATA, 0xAB]);
    let mut idx = rand::seq::index::sample(&mut rng, data.samples.len(), n).into_vec();
    idx.sort_unstable();
    Ok(FlatDataset {
        samples: data.samples.subset(&idx),
        num_classes: data.num_classes,
    })
}

/// Splits `data` across `n_clients`, each holding between `lo` and `hi`
/// distinct classes. Shard sizes are power-law (exponent 1) or equal, and
/// are matched to class counts at random. Every sample is assigned exactly
/// once. A single client receives the whole dataset.
pub fn partition_noniid(
    data: &FlatDataset,
    n_clients: usize,
    classes_per_client: (usize, usize),
    power_law: bool,
    seed: u64,
) -> Result<FederatedDataset> {
    let (lo, hi) = classes_per_client;
    let c = data.num_classes;
    let total = data.samples.len();
    let dim = data.samples.dim();
    if n_clients == 0 || lo == 0 || lo > hi || hi > c {
        return Err(Error::InvalidParameter(format!(
            "bad partition request: {n_clients} clients, classes {lo}..={hi} of {c}"
        )));
    }
    if total < n_clients {
        return Err(Error::InvalidParameter(format!(
            "{total} samples cannot cover {n_clients} clients"
        )));
    }
    if n_clients == 1 {
        return Ok(FederatedDataset {
            shards: vec![data.samples.clone()],
            num_classes: c,
            dim,
        });
    }

    let mut rng = seed::rng(seed, &[seed::DATA, 0xCD]);
    let sizes = if power_law {
        power_law_sizes(n_clients, total, 1.0)
    } else {
        equal_sizes(n_clients, total)
    };
    let mut class_counts: Vec<usize> = (0..n_clients)
        .map(|i| rng.random_range(lo..=hi).min(sizes[i]))
        .collect();
    class_counts.shuffle(&mut rng);
    for (cc, &s) in class_counts.iter_mut().zip(&sizes) {
        *cc = (*cc).min(s).max(1);
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in 0..total {
        by_class[data.samples.y(i)].push(i);
    }
    for v in &mut by_class {
        v.shuffle(&mut rng);
    }
    let supply: Vec<usize> = by_class.iter().map(Vec::len).collect();

    // Choose class sets, largest shards first, preferring classes with the
    // most unclaimed supply (random tie-breaks).
    let mut remaining: Vec<f64> = supply.iter().map(|&s| s as f64).collect();
    let mut users = vec![0usize; c];
    let mut order: Vec<usize> = (0..n_clients).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
    let mut class_sets: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for &k in &order {
        let mut candidates: Vec<usize> = (0..c).filter(|&j| supply[j] > users[j]).collect();
        candidates.shuffle(&mut rng);
        candidates.sort_by(|&a, &b| remaining[b].total_cmp(&remaining[a]));
        let want = class_counts[k].min(candidates.len());
        if want < class_counts[k].min(lo) {
            let class = (0..c).min_by_key(|&j| supply[j].saturating_sub(users[j])).unwrap();
            return Err(Error::InfeasiblePartition {
                class,
                available: supply[class],
                needed: users[class] + 1,
            });
        }
        let chosen: Vec<usize> = candidates[..want].to_vec();
        for &j in &chosen {
            users[j] += 1;
            remaining[j] -= sizes[k] as f64 / want as f64;
        }
        class_sets[k] = chosen;
    }
    // Every class with samples must be claimed by someone.
    for j in 0..c {
        if supply[j] > 0 && users[j] == 0 {
            let k = (0..n_clients)
                .filter(|&k| class_sets[k].len() < hi.min(sizes[k]))
                .max_by_key(|&k| sizes[k]);
            match k {
                Some(k) => {
                    class_sets[k].push(j);
                    users[j] += 1;
                }
                None => {
                    return Err(Error::InfeasiblePartition {
                        class: j,
                        available: supply[j],
                        needed: 0,
                    })
                }
            }
        }
    }

    // Widen class sets until the sizes can be met exactly.
    let amounts = loop {
        match transport(&sizes, &supply, &class_sets)? {
            Transport::Feasible(a) => break a,
            Transport::Short { reachable, spare } => {
                let pick = (0..n_clients)
                    .filter(|&k| reachable[k] && class_sets[k].len() < hi.min(sizes[k]))
                    .flat_map(|k| {
                        let set = &class_sets[k];
                        (0..c)
                            .filter(move |j| !set.contains(j))
                            .filter(|&j| supply[j] > users[j])
                            .map(move |j| (k, j))
                    })
                    .max_by_key(|&(k, j)| (spare[j], sizes[k], std::cmp::Reverse(k)));
                match pick {
                    Some((k, j)) => {
                        class_sets[k].push(j);
                        users[j] += 1;
                    }
                    None => {
                        let j = (0..c).max_by_key(|&j| users[j] * total / supply[j].max(1)).unwrap_or(0);
                        return Err(Error::InfeasiblePartition {
                            class: j,
                            available: supply[j],
                            needed: supply[j] + 1,
                        });
                    }
                }
            }
        }
    };

    let mut cursors = vec![0usize; c];
    let mut shards = Vec::with_capacity(n_clients);
    for k in 0..n_clients {
        let mut idx = Vec::with_capacity(sizes[k]);
        for (&j, &amt) in class_sets[k].iter().zip(&amounts[k]) {
            idx.extend_from_slice(&by_class[j][cursors[j]..cursors[j] + amt]);
            cursors[j] += amt;
        }
        idx.sort_unstable();
        shards.push(data.samples.subset(&idx));
    }
    Ok(FederatedDataset {
        shards,
        num_classes: c,
        dim,
    })
}

/// Integer transportation with a lower bound of one sample per chosen
/// (client, class) edge: client `k` needs exactly `sizes[k]`, class `j`
/// supplies exactly `supply[j]`. Solved as a max-flow after reserving the
/// lower bounds. On success the per-client amounts are aligned with
/// `class_sets`.
enum Transport {
    Feasible(Vec<Vec<usize>>),
    /// Flow fell short: clients on the source side of the minimum cut and
    /// the unused supply per class.
    Short { reachable: Vec<bool>, spare: Vec<usize> },
}

fn transport(sizes: &[usize], supply: &[usize], class_sets: &[Vec<usize>]) -> Result<Transport> {
    let n = sizes.len();
    let c = supply.len();
    let mut users = vec![0usize; c];
    for set in class_sets {
        for &j in set {
            users[j] += 1;
        }
    }
    for j in 0..c {
        if users[j] > supply[j] {
            return Err(Error::InfeasiblePartition {
                class: j,
                available: supply[j],
                needed: users[j],
            });
        }
    }
    // Nodes: source, clients, classes, sink.
    let source = 0;
    let sink = n + c + 1;
    let mut g = FlowGraph::new(n + c + 2);
    let mut edge_ids = Vec::with_capacity(n);
    let mut demand = 0;
    for k in 0..n {
        let need = sizes[k] - class_sets[k].len();
        demand += need;
        g.add_edge(source, 1 + k, need);
        edge_ids.push(
            class_sets[k]
                .iter()
                .map(|&j| g.add_edge(1 + k, 1 + n + j, usize::MAX / 4))
                .collect::<Vec<_>>(),
        );
    }
    for j in 0..c {
        g.add_edge(1 + n + j, sink, supply[j] - users[j]);
    }
    let flow = g.max_flow(source, sink);
    if flow < demand {
        let side = g.reachable(source);
        return Ok(Transport::Short {
            reachable: (0..n).map(|k| side[1 + k]).collect(),
            spare: (0..c).map(|j| g.residual_to_sink(1 + n + j, sink)).collect(),
        });
    }
    Ok(Transport::Feasible(
        edge_ids
            .iter()
            .map(|ids| ids.iter().map(|&e| 1 + g.flow_on(e)).collect())
            .collect(),
    ))
}

struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<usize>,
    orig: Vec<usize>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            adj: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
            orig: Vec::new(),
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, cap: usize) -> usize {
        let id = self.to.len();
        self.to.push(v);
        self.cap.push(cap);
        self.orig.push(cap);
        self.adj[u].push(id);
        self.to.push(u);
        self.cap.push(0);
        self.orig.push(0);
        self.adj[v].push(id + 1);
        id
    }

    fn flow_on(&self, e: usize) -> usize {
        self.orig[e] - self.cap[e]
    }

    fn residual_to_sink(&self, u: usize, sink: usize) -> usize {
        self.adj[u]
            .iter()
            .filter(|&&e| self.to[e] == sink)
            .map(|&e| self.cap[e])
            .sum()
    }

    fn reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if self.cap[e] > 0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    // Edmonds-Karp; graphs here have at most a few hundred nodes.
    fn max_flow(&mut self, s: usize, t: usize) -> usize {
        let mut total = 0;
        loop {
            let mut prev = vec![usize::MAX; self.adj.len()];
            let mut queue = VecDeque::from([s]);
            let mut seen = vec![false; self.adj.len()];
            seen[s] = true;
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if !seen[v] && self.cap[e] > 0 {
                        seen[v] = true;
                        prev[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let mut push = usize::MAX;
            let mut v = t;
            while v != s {
                let e = prev[v];
                push = push.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = t;
            while v != s {
                let e = prev[v];
                self.cap[e] -= push;
                self.cap[e ^ 1] += push;
                v = self.to[e ^ 1];
            }
            total += push;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    num_classes: usize,
    dim: usize,
    n_clients: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    client: usize,
    label: u32,
    x: Vec<f32>,
}

/// Writes a federated dataset as JSON lines: one header object, then one
/// object per sample.
pub fn save_jsonl(data: &FederatedDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(
        &mut w,
        &JsonlHeader {
            num_classes: data.num_classes,
            dim: data.dim,
            n_clients: data.shards.len(),
        },
    )?;
    writeln!(w)?;
    for (client, shard) in data.shards.iter().enumerate() {
        for i in 0..shard.len() {
            serde_json::to_writer(
                &mut w,
                &JsonlRow {
                    client,
                    label: shard.labels[i],
                    x: shard.x(i).to_vec(),
                },
            )?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<FederatedDataset> {
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let header: JsonlHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => {
            return Err(Error::UnexpectedEof {
                path: path.to_path_buf(),
            })
        }
    };
    let mut shards = vec![Samples::new(header.dim); header.n_clients];
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(&line)?;
        if row.client >= header.n_clients
            || row.x.len() != header.dim
            || row.label as usize >= header.num_classes
        {
            return Err(Error::InvalidParameter(format!(
                "malformed dataset row for client {}",
                row.client
            )));
        }
        shards[row.client].push(&row.x, row.label);
    }
    Ok(FederatedDataset {
        shards,
        num_classes: header.num_classes,
        dim: header.dim,
    })
}
