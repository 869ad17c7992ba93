//! Round-time model under shared uplink bandwidth.
//!
//! A sampled client finishing computation at `tau_i` and given bandwidth
//! `f_i` is done at `tau_i + t_i / f_i`. The round is shortest when all
//! sampled clients finish together, which pins the round time `T` as the
//! root of `sum_i t_i / (T - tau_i) = f_tot`.

use serde::{Deserialize, Serialize};

use crate::exec::{self, ExecMode};
use crate::seed;
use crate::types::{FleetConfig, RoundTimeSolution, SamplingDistribution};

const BISECTION_CAP: usize = 200;
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeParams {
    pub tau: Vec<f64>,
    pub t: Vec<f64>,
    pub f_tot: f64,
    pub k: usize,
}

impl TimeParams {
    pub fn from_fleet(fleet: &FleetConfig) -> Self {
        TimeParams {
            tau: fleet.clients.iter().map(|c| c.tau).collect(),
            t: fleet.clients.iter().map(|c| c.t).collect(),
            f_tot: fleet.f_tot,
            k: fleet.k,
        }
    }

    pub fn n(&self) -> usize {
        self.tau.len()
    }

    /// `K t_i / f_tot + tau_i` for every client.
    pub fn effective_times(&self) -> Vec<f64> {
        self.tau
            .iter()
            .zip(&self.t)
            .map(|(tau, t)| self.k as f64 * t / self.f_tot + tau)
            .collect()
    }
}

/// How repeated draws of the same client within a round are charged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UploadPolicy {
    /// A client drawn several times uploads once.
    #[default]
    Once,
    /// Every draw is a separate upload.
    PerDraw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub params: TimeParams,
    #[serde(default)]
    pub uploads: UploadPolicy,
}

impl TimeModel {
    pub fn new(params: TimeParams) -> Self {
        TimeModel {
            params,
            uploads: UploadPolicy::Once,
        }
    }

    pub fn round_time(&self, sampled: &[usize]) -> RoundTimeSolution {
        solve_round_time(sampled, &self.params, self.uploads)
    }
}

/// Realized round time and bandwidth split for one sampled multiset of fleet
/// positions.
pub fn solve_round_time(sampled: &[usize], params: &TimeParams, uploads: UploadPolicy) -> RoundTimeSolution {
    assert!(!sampled.is_empty(), "empty sampled set");
    let mut ids = sampled.to_vec();
    ids.sort_unstable();
    let mut clients: Vec<(usize, f64)> = Vec::with_capacity(ids.len());
    for id in ids {
        match clients.last_mut() {
            Some((last, mult)) if *last == id => *mult += 1.0,
            _ => clients.push((id, 1.0)),
        }
    }
    let taus: Vec<f64> = clients.iter().map(|&(i, _)| params.tau[i]).collect();
    let ts: Vec<f64> = clients
        .iter()
        .map(|&(i, m)| match uploads {
            UploadPolicy::Once => params.t[i],
            UploadPolicy::PerDraw => params.t[i] * m,
        })
        .collect();
    let (t_round, shares) = solve_bandwidth(&taus, &ts, params.f_tot);
    RoundTimeSolution {
        t_round,
        allocations: clients.iter().map(|&(i, _)| i).zip(shares).collect(),
    }
}

/// Solves `sum_i t_i / (T - tau_i) = f_tot` for `T > max tau` by bisection
/// on the gap `x = T - max tau`, which avoids cancellation near the pole.
/// Returns `T` and the shares `f_i = t_i / (T - tau_i)`.
pub fn solve_bandwidth(taus: &[f64], ts: &[f64], f_tot: f64) -> (f64, Vec<f64>) {
    assert_eq!(taus.len(), ts.len());
    assert!(!taus.is_empty() && f_tot > 0.0);
    let tau_max = taus.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gaps: Vec<f64> = taus.iter().map(|tau| tau_max - tau).collect();
    let demand = |x: f64| -> f64 { ts.iter().zip(&gaps).map(|(t, g)| t / (x + g)).sum() };

    // demand(x) -> inf as x -> 0+, and demand(sum t / f_tot) <= f_tot.
    let mut lo = 0.0;
    let mut hi = ts.iter().sum::<f64>() / f_tot;
    let mut x = hi;
    if ts.len() > 1 {
        for _ in 0..BISECTION_CAP {
            x = 0.5 * (lo + hi);
            let r = demand(x) - f_tot;
            if r.abs() <= RESIDUAL_TOL * f_tot * 1e-3 || x == lo || x == hi {
                break;
            }
            if r > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
        }
    }
    let shares = ts.iter().zip(&gaps).map(|(t, g)| t / (x + g)).collect();
    (tau_max + x, shares)
}

fn sorted_pairs(q: &[f64], tau: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(q.len(), tau.len());
    if tau.windows(2).all(|w| w[0] <= w[1]) {
        return (q.to_vec(), tau.to_vec());
    }
    let mut idx: Vec<usize> = (0..q.len()).collect();
    idx.sort_by(|&a, &b| tau[a].total_cmp(&tau[b]));
    (idx.iter().map(|&i| q[i]).collect(), idx.iter().map(|&i| tau[i]).collect())
}

/// Expected computation time of the fastest of `k` i.i.d. draws from `q`.
pub fn expected_min_comp_time(q: &[f64], tau: &[f64], k: usize) -> f64 {
    let (q, tau) = sorted_pairs(q, tau);
    let n = q.len();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + q[i];
    }
    let k = k as i32;
    (0..n)
        .map(|i| (suffix[i].powi(k) - suffix[i + 1].powi(k)) * tau[i])
        .sum()
}

/// Expected computation time of the slowest of `k` i.i.d. draws from `q`.
pub fn expected_max_comp_time(q: &[f64], tau: &[f64], k: usize) -> f64 {
    let (q, tau) = sorted_pairs(q, tau);
    let n = q.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + q[i];
    }
    let k = k as i32;
    (0..n)
        .map(|i| (prefix[i + 1].powi(k) - prefix[i].powi(k)) * tau[i])
        .sum()
}

/// Expected communication term `K sum_i q_i t_i / f_tot`.
pub fn expected_comm_time(q: &[f64], params: &TimeParams) -> f64 {
    params.k as f64 * q.iter().zip(&params.t).map(|(q, t)| q * t).sum::<f64>() / params.f_tot
}

/// Lower and upper bounds on the expected round time.
pub fn expected_round_time_bounds(q: &SamplingDistribution, params: &TimeParams) -> (f64, f64) {
    let q = q.as_slice();
    let comm = expected_comm_time(q, params);
    (
        comm + expected_min_comp_time(q, &params.tau, params.k),
        comm + expected_max_comp_time(q, &params.tau, params.k),
    )
}

/// `sum_i q_i (K t_i / f_tot + tau_i)`.
pub fn approx_expected_round_time(q: &SamplingDistribution, params: &TimeParams) -> f64 {
    q.as_slice()
        .iter()
        .zip(params.effective_times())
        .map(|(q, te)| q * te)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

impl MonteCarloEstimate {
    pub fn std_error(&self) -> f64 {
        self.std / (self.trials as f64).sqrt()
    }
}

/// Mean and standard deviation of the realized round time over `trials`
/// sampled sets. Trials are split into fixed chunks with their own seeds, so
/// the estimate does not depend on `mode`.
pub fn monte_carlo_round_time(
    q: &SamplingDistribution,
    model: &TimeModel,
    trials: usize,
    seed: u64,
    mode: ExecMode,
) -> MonteCarloEstimate {
    use rand::distr::{weighted::WeightedIndex, Distribution};
    const CHUNK: usize = 1024;
    let dist = WeightedIndex::new(q.as_slice()).expect("valid distribution");
    let chunks = trials.div_ceil(CHUNK);
    let partials = exec::map_range(mode, chunks, |c| {
        let mut rng = seed::rng(seed, &[seed::SAMPLING, c as u64]);
        let n = CHUNK.min(trials - c * CHUNK);
        let mut draws = vec![0usize; model.params.k];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            for d in draws.iter_mut() {
                *d = dist.sample(&mut rng);
            }
            let t = model.round_time(&draws).t_round;
            s += t;
            s2 += t * t;
        }
        (s, s2)
    });
    let (s, s2) = partials.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials as f64;
    let mean = s / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    MonteCarloEstimate {
        mean,
        std: var.sqrt(),
        trials,
    }
}
