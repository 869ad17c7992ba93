//! Pilot-based estimation of the bound ratio beta/alpha.
//!
//! Running FedAvg once with uniform sampling (`q_i = 1/N`) and once with
//! weighted sampling (`q_i = p_i`) and counting the rounds each needs to reach
//! a loss level gives, per level,
//!
//! ```text
//! R_uniform / R_weighted = (A1/K + b) / (A2/K + b),
//!     A1 = N sum p_i^2 G_i^2,  A2 = sum p_i G_i^2,  b = beta/alpha
//! ```
//!
//! The unknown optimum loss cancels in the ratio. Solving for `b` at every
//! level and averaging gives the estimate.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::runtime::{run_training, RunInputs};
use crate::seed;
use crate::types::{ConvergenceParams, SamplingDistribution, TrainingConfig, TrainingTrace};

/// 1-based index of the first round whose global loss is at or below `f_s`.
pub fn rounds_to_reach(trace: &TrainingTrace, f_s: f64) -> Result<usize> {
    trace
        .first_reaching(f_s)
        .map(|r| r.round_index)
        .ok_or(Error::LossNotReached {
            target: f_s,
            final_loss: trace.final_loss(),
        })
}

/// `(A1, A2)` for weights `p` and gradient bounds `g`.
pub fn variance_terms(p: &[f64], g: &[f64]) -> (f64, f64) {
    let n = p.len() as f64;
    let a1 = n * p.iter().zip(g).map(|(p, g)| p * p * g * g).sum::<f64>();
    let a2 = p.iter().zip(g).map(|(p, g)| p * g * g).sum::<f64>();
    (a1, a2)
}

/// beta/alpha implied by a single round ratio `rho = R_uniform / R_weighted`.
pub fn ratio_from_rho(rho: f64, a1: f64, a2: f64, k: usize) -> f64 {
    (a1 - rho * a2) / (k as f64 * (rho - 1.0))
}

/// The round ratio implied by `beta_over_alpha` (inverse of [`ratio_from_rho`]).
pub fn rho_from_ratio(beta_over_alpha: f64, a1: f64, a2: f64, k: usize) -> f64 {
    let k = k as f64;
    (a1 / k + beta_over_alpha) / (a2 / k + beta_over_alpha)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub params: ConvergenceParams,
    /// One entry per level; `None` where the two pilots tied.
    pub per_s_estimates: Vec<Option<f64>>,
}

pub fn estimate_ratio(
    r_uniform: &[usize],
    r_weighted: &[usize],
    p: &[f64],
    g: &[f64],
    k: usize,
) -> Result<RatioEstimate> {
    if r_uniform.len() != r_weighted.len() || r_uniform.is_empty() {
        return Err(Error::InvalidParameter(
            "round lists must be nonempty and of equal length".into(),
        ));
    }
    if r_uniform.iter().chain(r_weighted).any(|&r| r == 0) {
        return Err(Error::InvalidParameter("round counts must be positive".into()));
    }
    if p.len() != g.len() || k == 0 {
        return Err(Error::InvalidParameter("p and g must align; K >= 1".into()));
    }
    let (a1, a2) = variance_terms(p, g);
    let per_s: Vec<Option<f64>> = r_uniform
        .iter()
        .zip(r_weighted)
        .map(|(&ru, &rw)| {
            if ru == rw {
                None
            } else {
                Some(ratio_from_rho(ru as f64 / rw as f64, a1, a2, k))
            }
        })
        .collect();
    let kept: Vec<f64> = per_s.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::UninformativePilots);
    }
    let skipped = per_s.len() - kept.len();
    if skipped > 0 {
        warn!("{skipped} estimation level(s) skipped: equal round counts");
    }
    let beta_over_alpha = kept.iter().sum::<f64>() / kept.len() as f64;
    if beta_over_alpha < 0.0 {
        warn!("negative beta/alpha estimate {beta_over_alpha}; clamped to 0 for optimization");
    }
    Ok(RatioEstimate {
        params: ConvergenceParams {
            beta_over_alpha,
            g_bounds: g.to_vec(),
        },
        per_s_estimates: per_s,
    })
}

/// Serialized summary of one estimation phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub f_s_levels: Vec<f64>,
    pub rounds_q1: Vec<usize>,
    pub rounds_q2: Vec<usize>,
    pub per_s_estimates: Vec<Option<f64>>,
    pub beta_over_alpha: f64,
    pub g_bounds: Vec<f64>,
    /// Simulated wall-clock spent in the two pilots together.
    pub pilot_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct EstimationOutcome {
    pub params: ConvergenceParams,
    pub report: EstimationReport,
    pub uniform_trace: TrainingTrace,
    pub weighted_trace: TrainingTrace,
}

/// Runs the uniform and weighted pilots down to the deepest level, merges
/// the gradient bounds both report, and estimates beta/alpha.
///
/// `tcfg.seed` is the run seed; the pilots use streams derived from it.
pub fn run_estimation(
    inputs: &RunInputs<'_>,
    tcfg: &TrainingConfig,
    f_s_levels: &[f64],
    mode: ExecMode,
) -> Result<EstimationOutcome> {
    if f_s_levels.is_empty() {
        return Err(Error::InvalidParameter("no estimation levels".into()));
    }
    let fleet = inputs.fleet;
    let n = fleet.n();
    let deepest = f_s_levels.iter().cloned().fold(f64::INFINITY, f64::min);
    let q1 = SamplingDistribution::uniform(n);
    let floor = crate::types::DEFAULT_Q_FLOOR.min(1.0 / n as f64);
    let q2 = SamplingDistribution::from_weights(&fleet.p(), floor)?;
    let pilot_cfg = |tag: u64| TrainingConfig {
        target_loss: Some(deepest),
        seed: seed::derive(tcfg.seed, &[tag]),
        ..tcfg.clone()
    };
    let (c1, c2) = (pilot_cfg(seed::PILOT_UNIFORM), pilot_cfg(seed::PILOT_WEIGHTED));
    let (t1, t2) = exec::join(
        mode,
        || run_training(inputs, &q1, &c1, mode),
        || run_training(inputs, &q2, &c2, mode),
    );
    let (t1, t2) = (t1?, t2?);

    let rounds_q1 = f_s_levels
        .iter()
        .map(|&f| rounds_to_reach(&t1, f))
        .collect::<Result<Vec<_>>>()?;
    let rounds_q2 = f_s_levels
        .iter()
        .map(|&f| rounds_to_reach(&t2, f))
        .collect::<Result<Vec<_>>>()?;
    let g: Vec<f64> = t1
        .g_bounds_final
        .iter()
        .zip(&t2.g_bounds_final)
        .map(|(a, b)| a.max(*b))
        .collect();
    let est = estimate_ratio(&rounds_q1, &rounds_q2, &fleet.p(), &g, fleet.k)?;
    let report = EstimationReport {
        f_s_levels: f_s_levels.to_vec(),
        rounds_q1,
        rounds_q2,
        per_s_estimates: est.per_s_estimates.clone(),
        beta_over_alpha: est.params.beta_over_alpha,
        g_bounds: g,
        pilot_time_s: t1.total_time() + t2.total_time(),
    };
    Ok(EstimationOutcome {
        params: est.params,
        report,
        uniform_trace: t1,
        weighted_trace: t2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RoundRecord;

    fn trace(losses: &[f64]) -> TrainingTrace {
        TrainingTrace {
            rounds: losses
                .iter()
                .enumerate()
                .map(|(i, &l)| RoundRecord {
                    round_index: i + 1,
                    sampled: vec![0],
                    round_time_s: 1.0,
                    cumulative_time_s: (i + 1) as f64,
                    global_loss: l,
                    test_accuracy: 0.0,
                    small_shard: false,
                })
                .collect(),
            initial_loss: 2.0,
            initial_accuracy: 0.0,
            g_bounds_final: vec![],
        }
    }

    #[test]
    fn first_crossing() {
        let t = trace(&[1.8, 1.65, 1.5]);
        assert_eq!(rounds_to_reach(&t, 1.6).unwrap(), 3);
        assert_eq!(rounds_to_reach(&t, 1.9).unwrap(), 1);
        let err = rounds_to_reach(&t, 1.0).unwrap_err();
        assert!(matches!(err, Error::LossNotReached { final_loss, .. } if final_loss == 1.5));
    }

    #[test]
    fn direct_inversion_example() {
        // A1 = 2 (0.5625 + 0.0625) = 1.25, A2 = 1; rho = 1.1 -> 0.15 / 0.1
        let p = [0.75, 0.25];
        let g = [1.0, 1.0];
        let (a1, a2) = variance_terms(&p, &g);
        assert!((a1 - 1.25).abs() < 1e-15 && (a2 - 1.0).abs() < 1e-15);
        assert!((ratio_from_rho(1.1, a1, a2, 1) - 1.5).abs() < 1e-12);
        let est = estimate_ratio(&[11], &[10], &p, &g, 1).unwrap();
        assert!((est.params.beta_over_alpha - 1.5).abs() < 1e-12);
    }

    #[test]
    fn ties_are_skipped_and_all_ties_fail() {
        let p = [0.75, 0.25];
        let g = [1.0, 1.0];
        let est = estimate_ratio(&[11, 20], &[10, 20], &p, &g, 1).unwrap();
        assert_eq!(est.per_s_estimates[1], None);
        assert!((est.params.beta_over_alpha - 1.5).abs() < 1e-12);
        assert!(matches!(
            estimate_ratio(&[5, 6], &[5, 6], &p, &g, 1),
            Err(Error::UninformativePilots)
        ));
    }

    #[test]
    fn uniform_weights_give_negative_estimate() {
        // With p uniform A1 == A2, so any rho != 1 implies b = -A2/K.
        let p = [0.25; 4];
        let g = [1.0, 2.0, 3.0, 4.0];
        let (_, a2) = variance_terms(&p, &g);
        let est = estimate_ratio(&[30], &[20], &p, &g, 2).unwrap();
        assert!((est.params.beta_over_alpha + a2 / 2.0).abs() < 1e-12);
        assert!(est.params.is_negative());
        assert_eq!(est.params.for_optimization(), 0.0);
    }

    #[test]
    fn table_fixture_averages_levels() {
        let ru = [39, 47, 58, 79, 132];
        let rw = [12, 19, 27, 36, 56];
        let p = [0.4, 0.3, 0.2, 0.1];
        let g = [2.0, 1.0, 1.5, 3.0];
        let est = estimate_ratio(&ru, &rw, &p, &g, 4).unwrap();
        let (a1, a2) = variance_terms(&p, &g);
        let mean = ru
            .iter()
            .zip(&rw)
            .map(|(&a, &b)| ratio_from_rho(a as f64 / b as f64, a1, a2, 4))
            .sum::<f64>()
            / 5.0;
        assert!((est.params.beta_over_alpha - mean).abs() < 1e-12);
    }
}
