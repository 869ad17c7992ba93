use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fedsamp::dataset;
use fedsamp::estimator::EstimationReport;
use fedsamp::exec::ExecMode;
use fedsamp::harness::{
    self, CompareRun, ExperimentConfig, Instance, Scheme, SchemePlan, Summary, SweepRun,
};
use fedsamp::sampler_opt::{optimize, OptInstance, OptimizerReport};
use fedsamp::types::ConvergenceParams;
use log::info;

/// Wall-clock-aware client sampling experiments for federated learning.
#[derive(Parser, Debug)]
#[command(name = "fedsamp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (JSON). Defaults apply to any key left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds (`seed`, `seed + 1`, ...).
    #[arg(long)]
    seeds: Option<usize>,
    /// Clients drawn per round.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    target_loss: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate (or load and partition) the dataset and write it with the fleet.
    GenData(Common),
    /// Run the two pilots and estimate beta/alpha and the gradient bounds.
    Estimate(Common),
    /// Compute the proposed sampling distribution.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Reuse a previous estimation report instead of running the pilots.
        #[arg(long)]
        estimation: Option<PathBuf>,
    },
    /// Train under one sampling scheme on one seed.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proposed")]
        scheme: String,
    },
    /// Run all configured schemes over the seeds.
    Compare(Common),
    /// Compare schemes across several values of K.
    SweepK {
        #[command(flatten)]
        common: Common,
        /// Comma-separated K values, e.g. 1,4,10,16.
        #[arg(long, value_delimiter = ',')]
        k_values: Option<Vec<usize>>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            ExperimentConfig::from_json(&text)
                .with_context(|| format!("invalid config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.seeds {
        cfg.seeds = n;
    }
    if let Some(k) = c.k {
        cfg.k = k;
    }
    if let Some(t) = c.target_loss {
        cfg.training.target_loss = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `FEDSAMP_THREADS` caps the worker pool; a value of 1 runs sequentially.
fn exec_mode() -> Result<ExecMode> {
    let Ok(v) = std::env::var("FEDSAMP_THREADS") else {
        return Ok(ExecMode::default());
    };
    let n: usize = v
        .parse()
        .with_context(|| format!("FEDSAMP_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        bail!("FEDSAMP_THREADS must be at least 1");
    }
    if n == 1 {
        return Ok(ExecMode::Sequential);
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(ExecMode::Parallel)
}

fn prepare_out(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    harness::write_json(cfg, &out.join("resolved_config.json"))?;
    Ok(())
}

fn print_summary(s: &Summary) {
    println!("K = {}", s.k);
    println!(
        "{:<12} {:>8} {:>12} {:>10} {:>10} {:>10} {:>9} {:>9}",
        "scheme", "reached", "mean_time_s", "std", "min", "max", "vs_prop", "speedup"
    );
    for row in &s.schemes {
        match &row.total_time_s {
            Some(t) => println!(
                "{:<12} {:>4}/{:<3} {:>12.1} {:>10.1} {:>10.1} {:>10.1} {:>9} {:>9}",
                row.scheme.name(),
                row.reached,
                row.runs,
                t.mean,
                t.std,
                t.min,
                t.max,
                row.ratio_to_proposed.as_deref().unwrap_or("-"),
                row.speedup_vs_uniform
                    .map_or("-".to_string(), |v| format!("{v:.2}")),
            ),
            None => println!("{:<12} {:>4}/{:<3} {:>12}", row.scheme.name(), 0, row.runs, "-"),
        }
    }
}

fn gen_data(c: &Common, mode: ExecMode) -> Result<()> {
    let cfg = load_config(c)?;
    prepare_out(&cfg, &c.out)?;
    let data = harness::load_data(&cfg.data, cfg.seed)?;
    dataset::save_jsonl(&data, &c.out.join("dataset.jsonl"))?;
    let inst = Instance::build(&cfg, cfg.seed, mode)?;
    harness::write_json(&inst.fleet, &c.out.join("fleet.json"))?;
    println!(
        "{} clients, {} samples, {} classes -> {}",
        data.shards.len(),
        data.total(),
        data.num_classes,
        c.out.display()
    );
    Ok(())
}

fn estimate(c: &Common, mode: ExecMode) -> Result<()> {
    let cfg = load_config(c)?;
    prepare_out(&cfg, &c.out)?;
    let inst = Instance::build(&cfg, cfg.seed, mode)?;
    let est = harness::estimate(&inst, &cfg, mode)?;
    harness::write_json(&est.report, &c.out.join("estimation.json"))?;
    if est.params.is_negative() {
        eprintln!("warning: negative beta/alpha estimate; the optimizer will use 0");
    }
    println!(
        "beta/alpha = {:.6}  (pilot time {:.1}s)",
        est.params.beta_over_alpha, est.report.pilot_time_s
    );
    Ok(())
}

fn optimize_cmd(c: &Common, estimation: Option<&Path>, mode: ExecMode) -> Result<()> {
    let cfg = load_config(c)?;
    prepare_out(&cfg, &c.out)?;
    let inst = Instance::build(&cfg, cfg.seed, mode)?;
    let params = match estimation {
        Some(path) => {
            let report: EstimationReport = serde_json::from_str(
                &fs::read_to_string(path)
                    .with_context(|| format!("cannot read {}", path.display()))?,
            )?;
            if report.g_bounds.len() != inst.fleet.n() {
                bail!(
                    "estimation report has {} gradient bounds for {} clients",
                    report.g_bounds.len(),
                    inst.fleet.n()
                );
            }
            ConvergenceParams {
                beta_over_alpha: report.beta_over_alpha,
                g_bounds: report.g_bounds,
            }
        }
        None => harness::estimate(&inst, &cfg, mode)?.params,
    };
    let opt = OptInstance {
        q_floor: cfg.q_floor.min(0.5 / inst.fleet.n() as f64),
        eps0: cfg.eps0,
        ..OptInstance::from_fleet(&inst.fleet, &params.g_bounds, params.for_optimization())
    };
    let result = optimize(&opt, mode)?;
    let report = OptimizerReport::new(&result, &opt);
    harness::write_json(&report, &c.out.join("optimizer.json"))?;
    println!(
        "M* = {:.4}s, objective = {:.6}, grid = {}, kkt = {:.2e}, violations = {}",
        report.m_star,
        report.objective,
        report.grid_size,
        report.kkt_residual,
        report.monotonicity_violations.len()
    );
    Ok(())
}

fn simulate(c: &Common, scheme: &str, mode: ExecMode) -> Result<()> {
    let scheme: Scheme = scheme.parse()?;
    let mut cfg = load_config(c)?;
    cfg.schemes = vec![scheme];
    prepare_out(&cfg, &c.out)?;
    let inst = Instance::build(&cfg, cfg.seed, mode)?;
    let (params, pilot_time) = if scheme.needs_pilots() {
        let est = harness::estimate(&inst, &cfg, mode)?;
        harness::write_json(&est.report, &c.out.join("estimation.json"))?;
        let t = est.report.pilot_time_s;
        (Some(est.params), t)
    } else {
        (None, 0.0)
    };
    let plan: SchemePlan = harness::plan_scheme(scheme, &inst, &cfg, params.as_ref(), mode)?;
    if let Some(r) = &plan.optimizer {
        harness::write_json(r, &c.out.join("optimizer.json"))?;
    }
    let outcome = harness::run_scheme(&plan, &inst, &cfg, pilot_time, mode);
    if let Some(trace) = &outcome.trace {
        harness::write_trace_csv(trace, &c.out.join(format!("{scheme}.csv")))?;
    }
    harness::write_json(&outcome, &c.out.join("summary.json"))?;
    match (outcome.total_time_s, &outcome.error) {
        (Some(t), _) => println!(
            "{scheme}: target reached after {} rounds, {t:.1}s (pilots {:.1}s)",
            outcome.rounds.unwrap_or(0),
            outcome.pilot_time_s
        ),
        (None, Some(e)) => println!("{scheme}: {e}"),
        (None, None) => println!("{scheme}: no rounds run"),
    }
    Ok(())
}

fn compare(c: &Common, mode: ExecMode) -> Result<()> {
    let cfg = load_config(c)?;
    info!("comparing {} schemes over {} seeds", cfg.schemes.len(), cfg.seeds);
    let run: CompareRun = harness::compare(&cfg, mode)?;
    harness::emit_compare(&run, &c.out)?;
    report_failures(&run.runs);
    print_summary(&run.summary);
    Ok(())
}

fn sweep(c: &Common, k_values: Option<Vec<usize>>, mode: ExecMode) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(k) = k_values {
        cfg.k_values = k;
    }
    cfg.validate()?;
    let run: SweepRun = harness::sweep_k(&cfg, mode)?;
    harness::emit_sweep(&run, &c.out)?;
    for (runs, s) in run.runs.iter().zip(&run.summaries) {
        report_failures(runs);
        print_summary(s);
        println!();
    }
    Ok(())
}

fn report_failures(runs: &[harness::SeedRun]) {
    for r in runs {
        if let Some(e) = &r.estimation_error {
            eprintln!("seed {} (K={}): estimation failed: {e}", r.seed, r.k);
        }
        for o in &r.outcomes {
            if let Some(e) = &o.error {
                eprintln!("seed {} (K={}) {}: {e}", r.seed, r.k, o.scheme);
            }
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mode = exec_mode()?;
    match &cli.command {
        Command::GenData(c) => gen_data(c, mode),
        Command::Estimate(c) => estimate(c, mode),
        Command::Optimize { common, estimation } => optimize_cmd(common, estimation.as_deref(), mode),
        Command::Simulate { common, scheme } => simulate(common, scheme, mode),
        Command::Compare(c) => compare(c, mode),
        Command::SweepK { common, k_values } => sweep(common, k_values.clone(), mode),
    }
}
