//! Shared domain types and their invariants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound on every sampling probability.
pub const DEFAULT_Q_FLOOR: f64 = 1e-6;

/// Tolerance on `sum(p) == 1` and `sum(q) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Per-client system and statistical parameters.
///
/// `id` is the client's stable identifier (and the index of its data shard);
/// it survives the computation-time sort performed by [`FleetConfig::validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: usize,
    /// Data-size weight `n_i / n_total`.
    pub p: f64,
    /// Computation time of one round of local iterations, in seconds.
    pub tau: f64,
    /// Upload time under one unit of bandwidth.
    pub t: f64,
    /// Running maximum stochastic-gradient norm.
    #[serde(default)]
    pub g_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub clients: Vec<ClientProfile>,
    pub k: usize,
    pub e_local: usize,
    pub f_tot: f64,
}

impl FleetConfig {
    /// Checks every invariant and returns the fleet with clients ordered by
    /// nondecreasing computation time (stable, so ties keep their input order).
    pub fn validate(mut self) -> Result<FleetConfig> {
        let n = self.clients.len();
        if n == 0 {
            return Err(Error::InvalidParameter("fleet has no clients".into()));
        }
        for c in &self.clients {
            let bad = |reason: &str| Error::InvalidClient {
                id: c.id,
                reason: reason.to_string(),
            };
            if !(c.p > 0.0 && c.p <= 1.0) {
                return Err(bad("p must lie in (0, 1]"));
            }
            if !(c.tau >= 0.0 && c.tau.is_finite()) {
                return Err(bad("tau must be finite and nonnegative"));
            }
            if !(c.t > 0.0 && c.t.is_finite()) {
                return Err(bad("t must be finite and positive"));
            }
            if !(c.g_bound >= 0.0 && c.g_bound.is_finite()) {
                return Err(bad("g_bound must be finite and nonnegative"));
            }
        }
        let sum: f64 = self.clients.iter().map(|c| c.p).sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::WeightsNotNormalized { sum });
        }
        if self.k > n {
            return Err(Error::TooManySampled { k: self.k, n });
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if self.e_local == 0 {
            return Err(Error::InvalidParameter(
                "local iterations E must be at least 1".into(),
            ));
        }
        if !(self.f_tot > 0.0 && self.f_tot.is_finite()) {
            return Err(Error::NonPositiveBandwidth(self.f_tot));
        }
        let mut ids: Vec<usize> = self.clients.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n {
            return Err(Error::InvalidParameter("client ids must be unique".into()));
        }
        self.clients.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn p(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.p).collect()
    }

    pub fn g_bounds(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.g_bound).collect()
    }

    pub fn set_g_bounds(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.clients.len());
        for (c, &gi) in self.clients.iter_mut().zip(g) {
            c.g_bound = gi;
        }
    }
}

/// Probability vector over the fleet (in fleet order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct SamplingDistribution {
    q: Vec<f64>,
    floor: f64,
}

#[derive(Serialize, Deserialize)]
struct RawDistribution {
    q: Vec<f64>,
    #[serde(default = "default_floor")]
    floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_Q_FLOOR
}

impl TryFrom<RawDistribution> for SamplingDistribution {
    type Error = Error;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        SamplingDistribution::new(raw.q, raw.floor)
    }
}

impl From<SamplingDistribution> for RawDistribution {
    fn from(d: SamplingDistribution) -> Self {
        RawDistribution {
            q: d.q,
            floor: d.floor,
        }
    }
}

impl SamplingDistribution {
    /// Validates `q` against `floor` (use `0.0` only for degenerate test
    /// distributions; training always uses a positive floor).
    pub fn new(q: Vec<f64>, floor: f64) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidDistribution("empty distribution".into()));
        }
        if !(floor >= 0.0) || floor * q.len() as f64 > 1.0 {
            return Err(Error::InvalidDistribution(format!(
                "floor {floor} infeasible for {} clients",
                q.len()
            )));
        }
        for (i, &qi) in q.iter().enumerate() {
            if !qi.is_finite() || qi < floor {
                return Err(Error::ProbabilityBelowFloor {
                    client: i,
                    q: qi,
                    floor,
                });
            }
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(SamplingDistribution { q, floor })
    }

    pub fn uniform(n: usize) -> Self {
        SamplingDistribution {
            q: vec![1.0 / n as f64; n],
            floor: DEFAULT_Q_FLOOR.min(1.0 / n as f64),
        }
    }

    /// Normalizes nonnegative weights and lifts any entry below `floor` to
    /// the floor, rescaling the rest so the total stays one.
    pub fn from_weights(weights: &[f64], floor: f64) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidDistribution("empty distribution".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if floor * n as f64 > 1.0 {
            return Err(Error::InvalidDistribution(format!(
                "floor {floor} infeasible for {n} clients"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Ok(Self::uniform(n));
        }
        let mut q: Vec<f64> = weights.iter().map(|w| w / total).collect();
        project_with_floor(&mut q, weights, floor);
        Self::new(q, floor)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.q
    }
}

/// Water-level projection: clients whose proportional share falls below the
/// floor are pinned to it and the remaining mass is shared proportionally.
fn project_with_floor(q: &mut [f64], weights: &[f64], floor: f64) {
    let n = q.len();
    let mut pinned = vec![false; n];
    loop {
        let free_mass = 1.0 - floor * pinned.iter().filter(|&&p| p).count() as f64;
        let free_weight: f64 = (0..n).filter(|&i| !pinned[i]).map(|i| weights[i]).sum();
        let mut changed = false;
        for i in 0..n {
            if pinned[i] {
                q[i] = floor;
                continue;
            }
            q[i] = if free_weight > 0.0 {
                free_mass * weights[i] / free_weight
            } else {
                free_mass / (n - pinned.iter().filter(|&&p| p).count()) as f64
            };
        }
        for i in 0..n {
            if !pinned[i] && q[i] < floor {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub eta0: f64,
    pub batch_size: usize,
    pub max_rounds: usize,
    #[serde(default)]
    pub target_loss: Option<f64>,
    pub seed: u64,
    /// L2 penalty weight on the model parameters.
    #[serde(default)]
    pub l2: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            eta0: 0.1,
            batch_size: 24,
            max_rounds: 1000,
            target_loss: None,
            seed: 0,
            l2: 0.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::InvalidParameter("eta0 must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::InvalidParameter("l2 must be nonnegative".into()));
        }
        Ok(())
    }

    /// Learning rate used for every local step of round `round` (0-based).
    pub fn learning_rate(&self, round: usize) -> f64 {
        self.eta0 / (1.0 + round as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round counter.
    pub round_index: usize,
    /// Fleet positions drawn this round, in draw order (repeats kept).
    pub sampled: Vec<usize>,
    pub round_time_s: f64,
    pub cumulative_time_s: f64,
    pub global_loss: f64,
    pub test_accuracy: f64,
    /// Some sampled shard was smaller than the batch size and was sampled
    /// with replacement.
    #[serde(default)]
    pub small_shard: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rounds: Vec<RoundRecord>,
    /// Loss and accuracy of the initial model, before any round.
    pub initial_loss: f64,
    pub initial_accuracy: f64,
    pub g_bounds_final: Vec<f64>,
}

impl TrainingTrace {
    pub fn total_time(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cumulative_time_s)
    }

    pub fn final_loss(&self) -> f64 {
        self.rounds.last().map_or(self.initial_loss, |r| r.global_loss)
    }

    /// First round whose loss is at or below `target`.
    pub fn first_reaching(&self, target: f64) -> Option<&RoundRecord> {
        self.rounds.iter().find(|r| r.global_loss <= target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTimeSolution {
    pub t_round: f64,
    /// `(fleet position, bandwidth share)` for every distinct uploading client.
    pub allocations: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceParams {
    pub beta_over_alpha: f64,
    pub g_bounds: Vec<f64>,
}

impl ConvergenceParams {
    pub fn is_negative(&self) -> bool {
        self.beta_over_alpha < 0.0
    }

    /// The ratio as consumed by the optimizer (negative estimates clamp to 0).
    pub fn for_optimization(&self) -> f64 {
        self.beta_over_alpha.max(0.0)
    }
}
