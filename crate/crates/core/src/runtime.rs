//! Federated averaging with arbitrary client-sampling probabilities.
//!
//! Each round draws `K` clients i.i.d. from `q` (with replacement), runs local
//! SGD on every distinct drawn client, and folds the updates back with
//! inverse-probability weights `p_j / (K q_j)` so that the expected aggregate
//! equals the full-participation average `sum_i p_i w_i`.

use rand::distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use crate::dataset::{FederatedDataset, Samples};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::model::{self, LocalUpdate, ModelParams};
use crate::seed;
use crate::types::{
    FleetConfig, RoundRecord, SamplingDistribution, TrainingConfig, TrainingTrace,
};
use crate::wireless::TimeModel;

/// Loss above this multiple of the initial loss aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Multiset of `K` fleet positions in draw order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledSet(pub Vec<usize>);

impl SampledSet {
    pub fn draws(&self) -> &[usize] {
        &self.0
    }

    /// Distinct positions, ascending.
    pub fn distinct(&self) -> Vec<usize> {
        let mut d = self.0.clone();
        d.sort_unstable();
        d.dedup();
        d
    }
}

pub fn sample_clients<R: rand::Rng + ?Sized>(
    q: &SamplingDistribution,
    k: usize,
    rng: &mut R,
) -> SampledSet {
    let dist = WeightedIndex::new(q.as_slice()).expect("validated distribution");
    SampledSet((0..k).map(|_| dist.sample(rng)).collect())
}

/// `w + sum_j p_j / (K q_j) (w_j - w)` over the draws in `updates` (one
/// entry per draw, repeats included).
pub fn aggregate(
    w_global: &ModelParams,
    updates: &[(usize, &ModelParams)],
    q: &SamplingDistribution,
    p: &[f64],
    k: usize,
) -> Result<ModelParams> {
    if updates.len() != k {
        return Err(Error::InvalidParameter(format!(
            "expected {k} updates, got {}",
            updates.len()
        )));
    }
    let qs = q.as_slice();
    let mut out = w_global.clone();
    for &(j, w_j) in updates {
        let qj = qs[j];
        if !(qj > 0.0) || qj < q.floor() {
            return Err(Error::ProbabilityBelowFloor {
                client: j,
                q: qj,
                floor: q.floor(),
            });
        }
        let weight = p[j] / (k as f64 * qj);
        for ((o, a), b) in out
            .as_mut_slice()
            .iter_mut()
            .zip(w_j.as_slice())
            .zip(w_global.as_slice())
        {
            *o += weight * (a - b);
        }
    }
    Ok(out)
}

/// `sum_i p_i F_i(w)`, i.e. the sample-weighted mean loss over every shard.
pub fn global_loss(w: &ModelParams, data: &FederatedDataset, l2: f64, mode: ExecMode) -> f64 {
    let parts = exec::map(mode, &data.shards, |s| model::evaluate(w, s).0);
    let total: f64 = parts.iter().sum();
    let l2_term = if l2 == 0.0 {
        0.0
    } else {
        0.5 * l2 * w.as_slice().iter().map(|v| v * v).sum::<f64>()
    };
    total / data.total() as f64 + l2_term
}

/// Largest minibatch-gradient norm each client sees in one pass over its
/// shard at `w0`, in fleet order.
pub fn initial_g_bounds(
    fleet: &FleetConfig,
    data: &FederatedDataset,
    w0: &ModelParams,
    batch_size: usize,
    l2: f64,
    mode: ExecMode,
) -> Vec<f64> {
    exec::map(mode, &fleet.clients, |c| {
        model::max_batch_grad_norm(w0, &data.shards[c.id], batch_size, l2)
    })
}

/// Everything a training run reads.
pub struct RunInputs<'a> {
    pub fleet: &'a FleetConfig,
    pub data: &'a FederatedDataset,
    /// Held-out evaluation set; training accuracy is reported when absent.
    pub test: Option<&'a Samples>,
    pub time_model: &'a TimeModel,
}

/// Runs FedAvg under `q` until `tcfg.target_loss` or `tcfg.max_rounds`.
///
/// Gradient bounds start from the fleet's `g_bound` values and are raised to
/// the running maximum reported by every sampled client.
pub fn run_training(
    inputs: &RunInputs<'_>,
    q: &SamplingDistribution,
    tcfg: &TrainingConfig,
    mode: ExecMode,
) -> Result<TrainingTrace> {
    tcfg.validate()?;
    let RunInputs {
        fleet,
        data,
        test,
        time_model,
    } = *inputs;
    if q.len() != fleet.n() {
        return Err(Error::InvalidDistribution(format!(
            "distribution has {} entries for {} clients",
            q.len(),
            fleet.n()
        )));
    }
    let p = fleet.p();
    let k = fleet.k;
    let eval_set = test.map_or_else(|| data.flatten(), Samples::clone);
    let mut w = ModelParams::zeros(data.num_classes, data.dim);
    let initial_loss = global_loss(&w, data, tcfg.l2, mode);
    let mut trace = TrainingTrace {
        rounds: Vec::new(),
        initial_loss,
        initial_accuracy: model::accuracy(&w, &eval_set),
        g_bounds_final: fleet.g_bounds(),
    };
    if tcfg.target_loss.is_some_and(|t| initial_loss <= t) {
        return Ok(trace);
    }
    let mut sampler = seed::rng(tcfg.seed, &[seed::SAMPLING]);
    let mut cumulative = 0.0;
    for r in 0..tcfg.max_rounds {
        let eta = tcfg.learning_rate(r);
        let draws = sample_clients(q, k, &mut sampler);
        let distinct = draws.distinct();
        let updates: Vec<LocalUpdate> = exec::map(mode, &distinct, |&pos| {
            let client = &fleet.clients[pos];
            let mut rng = seed::rng(tcfg.seed, &[seed::LOCAL, r as u64, client.id as u64]);
            model::local_update(
                &w,
                &data.shards[client.id],
                fleet.e_local,
                eta,
                tcfg.batch_size,
                tcfg.l2,
                &mut rng,
            )
        });
        let per_draw: Vec<(usize, &ModelParams)> = draws
            .draws()
            .iter()
            .map(|&pos| {
                let slot = distinct.binary_search(&pos).unwrap();
                (pos, &updates[slot].w)
            })
            .collect();
        w = aggregate(&w, &per_draw, q, &p, k)?;
        for (&pos, up) in distinct.iter().zip(&updates) {
            let g = &mut trace.g_bounds_final[pos];
            *g = g.max(up.max_grad_norm);
        }

        let loss = global_loss(&w, data, tcfg.l2, mode);
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial_loss {
            return Err(Error::Diverged {
                round: r + 1,
                loss,
                initial: initial_loss,
            });
        }
        let round_time = time_model.round_time(draws.draws()).t_round;
        cumulative += round_time;
        trace.rounds.push(RoundRecord {
            round_index: r + 1,
            sampled: draws.0,
            round_time_s: round_time,
            cumulative_time_s: cumulative,
            global_loss: loss,
            test_accuracy: model::accuracy(&w, &eval_set),
            small_shard: updates.iter().any(|u| u.resampled),
        });
        if tcfg.target_loss.is_some_and(|t| loss <= t) {
            break;
        }
    }
    Ok(trace)
}
