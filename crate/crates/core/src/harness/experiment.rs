use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, FederatedDataset, Samples};
use crate::error::{Error, Result};
use crate::estimator::{run_estimation, EstimationOutcome, EstimationReport};
use crate::exec::{self, ExecMode};
use crate::model::ModelParams;
use crate::runtime::{initial_g_bounds, run_training, RunInputs};
use crate::sampler_opt::{optimize, OptInstance, OptimizerReport};
use crate::seed;
use crate::types::{
    ClientProfile, ConvergenceParams, FleetConfig, SamplingDistribution, TrainingConfig,
    TrainingTrace,
};
use crate::wireless::{TimeModel, TimeParams};

use super::config::{DataSource, ExperimentConfig};
use super::report::{summarize, Summary};
use super::Scheme;

pub fn load_data(source: &DataSource, seed: u64) -> Result<FederatedDataset> {
    match source {
        DataSource::Synthetic(cfg) => dataset::generate_synthetic(cfg, seed),
        DataSource::Idx {
            images,
            labels,
            n_clients,
            n_samples,
            classes_per_client,
            power_law,
        } => {
            let flat = dataset::load_idx(images, labels)?;
            let flat = match n_samples {
                Some(n) => dataset::subsample(&flat, *n, seed)?,
                None => flat,
            };
            dataset::partition_noniid(&flat, *n_clients, *classes_per_client, *power_law, seed)
        }
        DataSource::Cached { path } => dataset::load_jsonl(path),
    }
}

/// One seeded problem: data, held-out test set, fleet and time model. All
/// schemes run against the same instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub fleet: FleetConfig,
    pub data: FederatedDataset,
    pub test: Samples,
    pub time_model: TimeModel,
}

impl Instance {
    pub fn build(cfg: &ExperimentConfig, seed: u64, mode: ExecMode) -> Result<Self> {
        cfg.validate()?;
        let data_seed = cfg.data_seed.unwrap_or(seed);
        let mut data = load_data(&cfg.data, data_seed)?;
        let test = data.split_holdout(cfg.holdout_fraction, data_seed);
        let p = data.weights();
        let mut rng = seed::rng(seed, &[seed::SYSTEM]);
        let system = cfg.system.draw(p.len(), cfg.f_tot, &mut rng)?;
        let clients = p
            .iter()
            .zip(&system)
            .enumerate()
            .map(|(id, (&p, &(tau, t)))| ClientProfile {
                id,
                p,
                tau,
                t,
                g_bound: 0.0,
            })
            .collect();
        let mut fleet = FleetConfig {
            clients,
            k: cfg.k,
            e_local: cfg.e_local,
            f_tot: cfg.f_tot,
        }
        .validate()?;
        let w0 = ModelParams::zeros(data.num_classes, data.dim);
        let g0 = initial_g_bounds(
            &fleet,
            &data,
            &w0,
            cfg.training.batch_size,
            cfg.training.l2,
            mode,
        );
        fleet.set_g_bounds(&g0);
        let time_model = TimeModel {
            params: TimeParams::from_fleet(&fleet),
            uploads: cfg.uploads,
        };
        Ok(Instance {
            seed,
            fleet,
            data,
            test,
            time_model,
        })
    }

    pub fn inputs(&self) -> RunInputs<'_> {
        RunInputs {
            fleet: &self.fleet,
            data: &self.data,
            test: (!self.test.is_empty()).then_some(&self.test),
            time_model: &self.time_model,
        }
    }

    /// Changes the number of draws per round.
    pub fn set_k(&mut self, k: usize) {
        self.fleet.k = k;
        self.time_model.params = TimeParams::from_fleet(&self.fleet);
    }

    pub fn training_config(&self, cfg: &ExperimentConfig) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            ..cfg.training.clone()
        }
    }

    fn q_floor(&self, cfg: &ExperimentConfig) -> f64 {
        cfg.q_floor.min(0.5 / self.fleet.n() as f64)
    }
}

/// Runs the uniform and weighted pilots on `inst`.
pub fn estimate(inst: &Instance, cfg: &ExperimentConfig, mode: ExecMode) -> Result<EstimationOutcome> {
    run_estimation(
        &inst.inputs(),
        &inst.training_config(cfg),
        &cfg.estimation.levels,
        mode,
    )
}

/// A scheme's sampling distribution, plus the optimizer report for the
/// proposed scheme.
#[derive(Clone, Debug)]
pub struct SchemePlan {
    pub scheme: Scheme,
    pub q: SamplingDistribution,
    pub optimizer: Option<OptimizerReport>,
}

pub fn plan_scheme(
    scheme: Scheme,
    inst: &Instance,
    cfg: &ExperimentConfig,
    params: Option<&ConvergenceParams>,
    mode: ExecMode,
) -> Result<SchemePlan> {
    let n = inst.fleet.n();
    let floor = inst.q_floor(cfg);
    let pilot = || {
        params.ok_or_else(|| {
            Error::InvalidParameter(format!("scheme {scheme} needs pilot estimates"))
        })
    };
    let (q, optimizer) = match scheme {
        Scheme::Uniform => (SamplingDistribution::uniform(n), None),
        Scheme::Weighted => (SamplingDistribution::from_weights(&inst.fleet.p(), floor)?, None),
        Scheme::Statistical => {
            let g = &pilot()?.g_bounds;
            let w: Vec<f64> = inst.fleet.p().iter().zip(g).map(|(p, g)| p * g).collect();
            (SamplingDistribution::from_weights(&w, floor)?, None)
        }
        Scheme::Proposed => {
            let params = pilot()?;
            let opt = OptInstance {
                q_floor: floor,
                eps0: cfg.eps0,
                ..OptInstance::from_fleet(&inst.fleet, &params.g_bounds, params.for_optimization())
            };
            let result = optimize(&opt, mode)?;
            let report = OptimizerReport::new(&result, &opt);
            if !report.monotonicity_violations.is_empty() {
                warn!(
                    "optimized distribution has {} monotonicity violations",
                    report.monotonicity_violations.len()
                );
            }
            (result.q_star, Some(report))
        }
    };
    Ok(SchemePlan {
        scheme,
        q,
        optimizer,
    })
}

/// Result of one scheme on one seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub k: usize,
    pub reached: bool,
    /// Rounds until the target loss.
    pub rounds: Option<usize>,
    /// Simulated time until the target loss, training only.
    pub training_time_s: Option<f64>,
    /// Pilot time charged to this scheme (zero for the baselines that do
    /// not use the pilots).
    pub pilot_time_s: f64,
    pub total_time_s: Option<f64>,
    pub final_loss: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub trace: Option<TrainingTrace>,
}

impl SchemeOutcome {
    fn failed(scheme: Scheme, k: usize, err: &Error) -> Self {
        SchemeOutcome {
            scheme,
            k,
            reached: false,
            rounds: None,
            training_time_s: None,
            pilot_time_s: 0.0,
            total_time_s: None,
            final_loss: f64::NAN,
            error: Some(err.to_string()),
            trace: None,
        }
    }
}

/// Trains under `plan.q`. Training errors (divergence, for instance) are
/// recorded in the outcome rather than returned.
pub fn run_scheme(
    plan: &SchemePlan,
    inst: &Instance,
    cfg: &ExperimentConfig,
    pilot_time_s: f64,
    mode: ExecMode,
) -> SchemeOutcome {
    let k = inst.fleet.k;
    let trace = match run_training(&inst.inputs(), &plan.q, &inst.training_config(cfg), mode) {
        Ok(t) => t,
        Err(e) => {
            warn!("seed {} scheme {}: {e}", inst.seed, plan.scheme);
            return SchemeOutcome::failed(plan.scheme, k, &e);
        }
    };
    let pilot = if plan.scheme.needs_pilots() { pilot_time_s } else { 0.0 };
    let hit = match cfg.training.target_loss {
        Some(target) => trace.first_reaching(target).map(|r| (r.round_index, r.cumulative_time_s)),
        None => Some((trace.rounds.len(), trace.total_time())),
    };
    let error = match (hit, cfg.training.target_loss) {
        (None, Some(target)) => Some(
            Error::LossNotReached {
                target,
                final_loss: trace.final_loss(),
            }
            .to_string(),
        ),
        _ => None,
    };
    SchemeOutcome {
        scheme: plan.scheme,
        k,
        reached: hit.is_some(),
        rounds: hit.map(|h| h.0),
        training_time_s: hit.map(|h| h.1),
        pilot_time_s: pilot,
        total_time_s: hit.map(|h| h.1 + pilot),
        final_loss: trace.final_loss(),
        error,
        trace: Some(trace),
    }
}

/// Everything produced for one seed at one K.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub k: usize,
    pub estimation: Option<EstimationReport>,
    pub estimation_error: Option<String>,
    pub optimizer: Option<OptimizerReport>,
    pub outcomes: Vec<SchemeOutcome>,
}

fn pilots(
    inst: &Instance,
    cfg: &ExperimentConfig,
    mode: ExecMode,
) -> (Option<EstimationOutcome>, Option<String>) {
    if !cfg.schemes.iter().any(|s| s.needs_pilots()) {
        return (None, None);
    }
    match estimate(inst, cfg, mode) {
        Ok(e) => {
            info!(
                "seed {}: beta/alpha = {:.4}, pilot time {:.1}s",
                inst.seed, e.params.beta_over_alpha, e.report.pilot_time_s
            );
            (Some(e), None)
        }
        Err(e) => {
            warn!("seed {}: estimation failed: {e}", inst.seed);
            (None, Some(e.to_string()))
        }
    }
}

fn run_schemes(
    inst: &Instance,
    cfg: &ExperimentConfig,
    est: Option<&EstimationOutcome>,
    estimation_error: Option<String>,
    mode: ExecMode,
) -> SeedRun {
    let params = est.map(|e| &e.params);
    let pilot_time = est.map_or(0.0, |e| e.report.pilot_time_s);
    let mut optimizer = None;
    let outcomes = cfg
        .schemes
        .iter()
        .map(|&scheme| match plan_scheme(scheme, inst, cfg, params, mode) {
            Ok(plan) => {
                if plan.optimizer.is_some() {
                    optimizer.clone_from(&plan.optimizer);
                }
                run_scheme(&plan, inst, cfg, pilot_time, mode)
            }
            Err(e) => SchemeOutcome::failed(scheme, inst.fleet.k, &e),
        })
        .collect();
    SeedRun {
        seed: inst.seed,
        k: inst.fleet.k,
        estimation: est.map(|e| e.report.clone()),
        estimation_error,
        optimizer,
        outcomes,
    }
}

/// Builds the instance for `seed`, runs the pilots if any scheme needs them,
/// then every configured scheme in order.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, mode: ExecMode) -> Result<SeedRun> {
    let inst = Instance::build(cfg, seed, mode)?;
    let (est, err) = pilots(&inst, cfg, mode);
    Ok(run_schemes(&inst, cfg, est.as_ref(), err, mode))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareRun {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

/// Runs every configured scheme on every seed. Seeds run concurrently; the
/// schemes of one seed share its instance and run in order.
pub fn compare(cfg: &ExperimentConfig, mode: ExecMode) -> Result<CompareRun> {
    cfg.validate()?;
    let runs = exec::map(mode, &cfg.seed_list(), |&s| run_seed(cfg, s, mode))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&runs, cfg.k, &cfg.schemes);
    Ok(CompareRun {
        config: cfg.clone(),
        runs,
        summary,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRun {
    pub config: ExperimentConfig,
    /// `runs[j]` holds every seed at `k_values[j]`.
    pub runs: Vec<Vec<SeedRun>>,
    pub summaries: Vec<Summary>,
}

/// Compares the schemes at every K in `cfg.k_values`. The pilots run once
/// per seed at `cfg.k`; their estimate of beta/alpha and G does not depend
/// on K and is reused across the sweep.
pub fn sweep_k(cfg: &ExperimentConfig, mode: ExecMode) -> Result<SweepRun> {
    cfg.validate()?;
    if cfg.k_values.is_empty() {
        return Err(Error::InvalidParameter("no K values to sweep".into()));
    }
    let per_seed = exec::map(mode, &cfg.seed_list(), |&s| -> Result<Vec<SeedRun>> {
        let mut inst = Instance::build(cfg, s, mode)?;
        let (est, err) = pilots(&inst, cfg, mode);
        Ok(cfg
            .k_values
            .iter()
            .map(|&k| {
                inst.set_k(k);
                run_schemes(&inst, cfg, est.as_ref(), err.clone(), mode)
            })
            .collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let runs: Vec<Vec<SeedRun>> = (0..cfg.k_values.len())
        .map(|j| per_seed.iter().map(|s| s[j].clone()).collect())
        .collect();
    let summaries = cfg
        .k_values
        .iter()
        .zip(&runs)
        .map(|(&k, r)| summarize(r, k, &cfg.schemes))
        .collect();
    Ok(SweepRun {
        config: cfg.clone(),
        runs,
        summaries,
    })
}
