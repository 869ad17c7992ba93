use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimator::EstimationReport;
use crate::types::TrainingTrace;

use super::experiment::{CompareRun, SeedRun, SweepRun};
use super::Scheme;

pub const CSV_HEADER: [&str; 5] = [
    "round",
    "cumulative_time_s",
    "global_loss",
    "test_accuracy",
    "round_time_s",
];

/// Sample statistics; `std` is the unbiased (n - 1) estimate, zero for a
/// single value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stats {
            n,
            mean,
            std,
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// `"2.0×"` for a ratio of 2.
pub fn format_ratio(ratio: f64) -> String {
    format!("{ratio:.1}×")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub runs: usize,
    pub reached: usize,
    /// Time to target including any pilot time charged to the scheme.
    pub total_time_s: Option<Stats>,
    pub training_time_s: Option<Stats>,
    pub pilot_time_s: Option<Stats>,
    pub rounds: Option<Stats>,
    /// Mean total time of this scheme over that of the proposed scheme.
    pub ratio_to_proposed: Option<String>,
    /// Mean total time of uniform sampling over that of this scheme.
    pub speedup_vs_uniform: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub k: usize,
    pub schemes: Vec<SchemeSummary>,
}

impl Summary {
    pub fn get(&self, scheme: Scheme) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }

    /// Mean time to target including pilots.
    pub fn mean_total(&self, scheme: Scheme) -> Option<f64> {
        self.get(scheme)?.total_time_s.as_ref().map(|s| s.mean)
    }

    pub fn mean_training(&self, scheme: Scheme) -> Option<f64> {
        self.get(scheme)?.training_time_s.as_ref().map(|s| s.mean)
    }
}

/// Per-scheme statistics over the seeds on which the scheme reached the
/// target.
pub fn summarize(runs: &[SeedRun], k: usize, schemes: &[Scheme]) -> Summary {
    let mut out: Vec<SchemeSummary> = schemes
        .iter()
        .map(|&scheme| {
            let outcomes: Vec<_> = runs
                .iter()
                .flat_map(|r| r.outcomes.iter().filter(move |o| o.scheme == scheme))
                .collect();
            let reached: Vec<_> = outcomes.iter().filter(|o| o.reached).collect();
            let collect = |f: &dyn Fn(&&&super::SchemeOutcome) -> Option<f64>| {
                Stats::of(&reached.iter().filter_map(f).collect::<Vec<_>>())
            };
            SchemeSummary {
                scheme,
                runs: outcomes.len(),
                reached: reached.len(),
                total_time_s: collect(&|o| o.total_time_s),
                training_time_s: collect(&|o| o.training_time_s),
                pilot_time_s: collect(&|o| Some(o.pilot_time_s)),
                rounds: collect(&|o| o.rounds.map(|r| r as f64)),
                ratio_to_proposed: None,
                speedup_vs_uniform: None,
            }
        })
        .collect();
    let mean = |s: Scheme, out: &[SchemeSummary]| {
        out.iter()
            .find(|x| x.scheme == s)
            .and_then(|x| x.total_time_s.as_ref())
            .map(|t| t.mean)
    };
    let proposed = mean(Scheme::Proposed, &out);
    let uniform = mean(Scheme::Uniform, &out);
    for s in &mut out {
        let Some(m) = s.total_time_s.as_ref().map(|t| t.mean) else {
            continue;
        };
        s.ratio_to_proposed = proposed.map(|p| format_ratio(m / p));
        s.speedup_vs_uniform = uniform.map(|u| u / m);
    }
    Summary { k, schemes: out }
}

/// Writes one trace as CSV. The header row is always written.
pub fn write_trace_csv(trace: &TrainingTrace, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in &trace.rounds {
        w.write_record([
            r.round_index.to_string(),
            r.cumulative_time_s.to_string(),
            r.global_loss.to_string(),
            r.test_accuracy.to_string(),
            r.round_time_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct LedgerEntry<'a> {
    seed: u64,
    report: Option<&'a EstimationReport>,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct CompareFile<'a> {
    summary: &'a Summary,
    estimation: Vec<LedgerEntry<'a>>,
    runs: &'a [SeedRun],
}

fn ledger(runs: &[SeedRun]) -> Vec<LedgerEntry<'_>> {
    runs.iter()
        .map(|r| LedgerEntry {
            seed: r.seed,
            report: r.estimation.as_ref(),
            error: r.estimation_error.as_deref(),
        })
        .collect()
}

fn emit_traces(runs: &[SeedRun], dir: &Path) -> Result<()> {
    for run in runs {
        for o in &run.outcomes {
            if let Some(trace) = &o.trace {
                let name = format!("seed_{}/k_{}/{}.csv", run.seed, run.k, o.scheme);
                write_trace_csv(trace, &dir.join(name))?;
            }
        }
    }
    Ok(())
}

/// Writes `resolved_config.json`, `summary.json` and one CSV per
/// (seed, scheme) under `dir`.
pub fn emit_compare(run: &CompareRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&run.config, &dir.join("resolved_config.json"))?;
    write_json(
        &CompareFile {
            summary: &run.summary,
            estimation: ledger(&run.runs),
            runs: &run.runs,
        },
        &dir.join("summary.json"),
    )?;
    emit_traces(&run.runs, dir)
}

#[derive(Serialize)]
struct SweepFile<'a> {
    k_values: &'a [usize],
    summaries: &'a [Summary],
    estimation: Vec<LedgerEntry<'a>>,
}

pub fn emit_sweep(run: &SweepRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&run.config, &dir.join("resolved_config.json"))?;
    write_json(
        &SweepFile {
            k_values: &run.config.k_values,
            summaries: &run.summaries,
            estimation: run.runs.first().map(|r| ledger(r)).unwrap_or_default(),
        },
        &dir.join("summary.json"),
    )?;
    for runs in &run.runs {
        emit_traces(runs, dir)?;
    }
    Ok(())
}
