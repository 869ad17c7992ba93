use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticConfig;
use crate::error::{Error, Result};
use crate::types::{TrainingConfig, DEFAULT_Q_FLOOR};
use crate::wireless::UploadPolicy;

use super::Scheme;

/// How per-client computation and upload times are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemModel {
    /// Fixed computation time, uniform `t_i / f_tot`.
    Prototype {
        tau: f64,
        ratio_lo: f64,
        ratio_hi: f64,
    },
    /// Exponential computation time and `t_i / f_tot`.
    Simulation { tau_mean: f64, ratio_mean: f64 },
}

impl SystemModel {
    pub fn prototype() -> Self {
        SystemModel::Prototype {
            tau: 0.5,
            ratio_lo: 0.22,
            ratio_hi: 5.04,
        }
    }

    pub fn simulation() -> Self {
        SystemModel::Simulation {
            tau_mean: 1.0,
            ratio_mean: 1.0,
        }
    }

    /// Draws `(tau_i, t_i)` for `n` clients.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, f_tot: f64, rng: &mut R) -> Result<Vec<(f64, f64)>> {
        match *self {
            SystemModel::Prototype {
                tau,
                ratio_lo,
                ratio_hi,
            } => {
                if !(tau >= 0.0 && ratio_lo > 0.0 && ratio_hi >= ratio_lo) {
                    return Err(Error::InvalidParameter("bad prototype system model".into()));
                }
                Ok((0..n)
                    .map(|_| {
                        let ratio = if ratio_hi > ratio_lo {
                            rng.random_range(ratio_lo..ratio_hi)
                        } else {
                            ratio_lo
                        };
                        (tau, ratio * f_tot)
                    })
                    .collect())
            }
            SystemModel::Simulation {
                tau_mean,
                ratio_mean,
            } => {
                let tau = Exp::new(1.0 / tau_mean)
                    .map_err(|e| Error::InvalidParameter(format!("tau_mean: {e}")))?;
                let ratio = Exp::new(1.0 / ratio_mean)
                    .map_err(|e| Error::InvalidParameter(format!("ratio_mean: {e}")))?;
                Ok((0..n)
                    .map(|_| {
                        let tau_i = tau.sample(rng);
                        // Upload time must be positive; an exact zero draw is
                        // practically impossible but would fail validation.
                        let r = ratio.sample(rng).max(f64::MIN_POSITIVE);
                        (tau_i, r * f_tot)
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    /// IDX image/label pair, subsampled and split across clients by class.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        n_clients: usize,
        #[serde(default)]
        n_samples: Option<usize>,
        classes_per_client: (usize, usize),
        #[serde(default = "yes")]
        power_law: bool,
    },
    /// A dataset previously written by `gen-data`.
    Cached { path: PathBuf },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    /// Loss levels the pilots must cross; the pilots stop at the lowest.
    pub levels: Vec<f64>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            levels: vec![1.9, 1.8, 1.7, 1.6],
        }
    }
}

/// One experiment, as read from a JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub system: SystemModel,
    pub k: usize,
    pub e_local: usize,
    pub f_tot: f64,
    pub training: TrainingConfig,
    /// Fraction of every shard held out for the global test set.
    pub holdout_fraction: f64,
    pub estimation: EstimationConfig,
    pub uploads: UploadPolicy,
    pub q_floor: f64,
    /// M-grid step for the optimizer; `None` uses the default resolution.
    pub eps0: Option<f64>,
    /// First seed; run `i` uses `seed + i`.
    pub seed: u64,
    /// Fixes the dataset (and test split) across runs; by default every run
    /// draws its own from its seed.
    pub data_seed: Option<u64>,
    pub seeds: usize,
    pub schemes: Vec<Scheme>,
    pub k_values: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticConfig::default()),
            system: SystemModel::simulation(),
            k: 10,
            e_local: 50,
            f_tot: 1.0,
            training: TrainingConfig {
                target_loss: Some(1.22),
                max_rounds: 3000,
                ..TrainingConfig::default()
            },
            holdout_fraction: 0.1,
            estimation: EstimationConfig::default(),
            uploads: UploadPolicy::Once,
            q_floor: DEFAULT_Q_FLOOR,
            eps0: None,
            seed: 0,
            data_seed: None,
            seeds: 20,
            schemes: Scheme::ALL.to_vec(),
            k_values: vec![1, 4, 10, 16],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.e_local == 0 {
            return Err(Error::InvalidParameter("K and E must be at least 1".into()));
        }
        if !(self.f_tot > 0.0 && self.f_tot.is_finite()) {
            return Err(Error::NonPositiveBandwidth(self.f_tot));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidParameter("holdout_fraction must lie in [0, 1)".into()));
        }
        if self.seeds == 0 {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        if self.estimation.levels.is_empty() && self.schemes.iter().any(|s| s.needs_pilots()) {
            return Err(Error::InvalidParameter("estimation levels are empty".into()));
        }
        if self.k_values.contains(&0) {
            return Err(Error::InvalidParameter("K values must be at least 1".into()));
        }
        self.training.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }

    /// The lowest level the pilots have to reach.
    pub fn deepest_level(&self) -> Option<f64> {
        self.estimation.levels.iter().cloned().reduce(f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn simulation_draws_have_exponential_moments() {
        let mut rng = seed::rng(4, &[seed::SYSTEM]);
        let draws = SystemModel::simulation().draw(4000, 2.0, &mut rng).unwrap();
        let tau: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let ratio: Vec<f64> = draws.iter().map(|d| d.1 / 2.0).collect();
        for v in [tau, ratio] {
            let (m, s) = moments(&v);
            assert!((m - 1.0).abs() < 0.1 && (s - 1.0).abs() < 0.1, "{m} {s}");
        }
    }

    #[test]
    fn prototype_draws_are_uniform() {
        let mut rng = seed::rng(4, &[seed::SYSTEM]);
        let draws = SystemModel::prototype().draw(4000, 1.0, &mut rng).unwrap();
        assert!(draws.iter().all(|d| d.0 == 0.5 && (0.22..5.04).contains(&d.1)));
        let (m, s) = moments(&draws.iter().map(|d| d.1).collect::<Vec<_>>());
        let (em, es) = (2.63, 4.82 / 12f64.sqrt());
        assert!((m - em).abs() < 0.1 * em && (s - es).abs() < 0.1 * es);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"k": 4, "training": {"eta0": 0.05}}"#).unwrap();
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.training.eta0, 0.05);
        assert_eq!(cfg.training.batch_size, 24);
        assert_eq!(cfg.e_local, 50);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"k": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"f_tot": -1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schemes": ["bogus"]}"#).is_err());
    }
}
