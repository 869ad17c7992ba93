//! Experiment driver: builds seeded instances, runs the four sampling
//! schemes side by side and writes CSV/JSON results.

mod config;
mod experiment;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use config::{DataSource, EstimationConfig, ExperimentConfig, SystemModel};
pub use experiment::{
    compare, estimate, load_data, plan_scheme, run_scheme, run_seed, sweep_k, CompareRun, Instance,
    SchemeOutcome, SchemePlan, SeedRun, SweepRun,
};
pub use report::{
    emit_compare, emit_sweep, format_ratio, summarize, write_json, write_trace_csv, SchemeSummary,
    Stats, Summary, CSV_HEADER,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// `q_i = 1/N`.
    Uniform,
    /// `q_i = p_i`.
    Weighted,
    /// `q_i ∝ p_i G_i`, blind to system times.
    Statistical,
    /// Optimized for expected wall-clock time.
    Proposed,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Uniform,
        Scheme::Weighted,
        Scheme::Statistical,
        Scheme::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Uniform => "uniform",
            Scheme::Weighted => "weighted",
            Scheme::Statistical => "statistical",
            Scheme::Proposed => "proposed",
        }
    }

    /// Whether the scheme depends on the pilot runs (and is charged for them).
    pub fn needs_pilots(self) -> bool {
        matches!(self, Scheme::Statistical | Scheme::Proposed)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!(matches!("greedy".parse::<Scheme>(), Err(Error::UnknownScheme(n)) if n == "greedy"));
    }
}
