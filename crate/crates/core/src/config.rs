//! Experiment configuration: a flat TOML table, every key optional.
//!
//! ```toml
//! n_states = 10
//! n_actions = 4
//! d = 24
//! d_prime = 10
//! r = 2
//! tasks = 16
//! horizon = 5
//! episodes = 2000
//! bonus_scale = 0.02
//! algorithms = ["shared", "independent", "oracle"]
//! seeds = [0, 1, 2]
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{InstanceConfig, StartRule};
use crate::error::{param, Error, Result};
use crate::shared::{AllocationMethod, AlsOptions, LemmaConstants};
use crate::single::BonusForm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Shared,
    Independent,
    Oracle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Shared, Algorithm::Independent, Algorithm::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Shared => "shared",
            Algorithm::Independent => "independent",
            Algorithm::Oracle => "oracle",
        }
    }

    /// Transition-stream label, so each algorithm draws its own trajectories.
    pub fn stream_tag(self) -> u8 {
        match self {
            Algorithm::Shared => 1,
            Algorithm::Independent => 2,
            Algorithm::Oracle => 3,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Parameter(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsPreset {
    #[default]
    Statement,
    Derivation,
}

impl ConstantsPreset {
    pub fn constants(self) -> LemmaConstants {
        match self {
            ConstantsPreset::Statement => LemmaConstants::STATEMENT,
            ConstantsPreset::Derivation => LemmaConstants::derivation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub d_prime: usize,
    pub r: usize,
    pub tasks: usize,
    pub anchors_per_row: usize,
    pub start: StartRule,
    /// Instance seed; when absent each run seed also generates its own instance.
    pub instance_seed: Option<u64>,

    pub horizon: usize,
    pub episodes: usize,
    pub delta: f64,
    pub lambda: f64,
    pub bonus_scale: f64,
    pub bonus_form: BonusForm,
    pub allocation: AllocationMethod,
    pub lemma_constants: ConstantsPreset,
    pub als_tol: f64,
    pub als_max_sweeps: usize,

    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    /// Let every algorithm draw from the same transition streams.
    pub paired: bool,

    pub audit_optimism: bool,
    pub audit_membership: bool,
    pub audit_bellman: bool,
    pub audit_martingale: bool,
    pub radius_multiplier: f64,

    pub coverage_runs: usize,
    pub coverage_episodes: usize,
    pub lemma_trials: usize,
    pub quadform_probes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_states: 10,
            n_actions: 4,
            d: 24,
            d_prime: 10,
            r: 2,
            tasks: 16,
            anchors_per_row: 2,
            start: StartRule::Fixed,
            instance_seed: None,
            horizon: 5,
            episodes: 2000,
            delta: 0.1,
            lambda: 1.0,
            bonus_scale: 1.0,
            bonus_form: BonusForm::Frobenius,
            allocation: AllocationMethod::Equal,
            lemma_constants: ConstantsPreset::Statement,
            als_tol: 1e-8,
            als_max_sweeps: 100,
            algorithms: Algorithm::ALL.to_vec(),
            seeds: vec![0],
            paired: false,
            audit_optimism: false,
            audit_membership: false,
            audit_bellman: false,
            audit_martingale: false,
            radius_multiplier: 1.0,
            coverage_runs: 200,
            coverage_episodes: 30,
            lemma_trials: 1000,
            quadform_probes: 64,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn instance(&self, run_seed: u64) -> InstanceConfig {
        InstanceConfig {
            n_states: self.n_states,
            n_actions: self.n_actions,
            d: self.d,
            d_prime: self.d_prime,
            r: self.r,
            tasks: self.tasks,
            seed: self.instance_seed.unwrap_or(run_seed),
            anchors_per_row: self.anchors_per_row,
            start: self.start,
        }
    }

    pub fn als(&self) -> AlsOptions {
        AlsOptions { tol: self.als_tol, max_sweeps: self.als_max_sweeps, cap: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.instance(0).validate()?;
        if self.horizon == 0 || self.episodes == 0 {
            return param("horizon and episodes must be at least 1");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return param(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return param("lambda must be positive");
        }
        if !(self.bonus_scale >= 0.0) || !self.bonus_scale.is_finite() {
            return param("bonus_scale must be nonnegative");
        }
        if !(self.radius_multiplier > 0.0) {
            return param("radius_multiplier must be positive");
        }
        if !(self.als_tol >= 0.0) || self.als_max_sweeps == 0 {
            return param("als_tol must be nonnegative and als_max_sweeps positive");
        }
        if self.seeds.is_empty() {
            return param("at least one seed is required");
        }
        if self.algorithms.is_empty() {
            return param("at least one algorithm is required");
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return param("algorithms are listed more than once");
        }
        if self.coverage_episodes == 0 {
            return param("coverage_episodes must be at least 1");
        }
        Ok(())
    }
}

/// Parses a comma-separated list such as `1,2,3`.
pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<T>().map_err(|e| Error::Parameter(format!("bad list entry {s:?}: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str("episodes = 3\nseeds = [4, 5]\nalgorithms = [\"oracle\"]\n").unwrap();
        assert_eq!(cfg.episodes, 3);
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.algorithms, vec![Algorithm::Oracle]);
        assert_eq!(cfg.d, 24);
    }

    #[test]
    fn bad_files_are_rejected() {
        for text in [
            "episodes = 0",
            "delta = 1.0",
            "unknown_key = 1",
            "r = 30",
            "seeds = []",
            "algorithms = [\"shared\", \"shared\"]",
            "algorithms = [\"bogus\"]",
            "episodes = \"many\"",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn lists_parse() {
        assert_eq!(parse_list::<u64>("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_list::<Algorithm>("shared,oracle").unwrap(), vec![Algorithm::Shared, Algorithm::Oracle]);
        assert!(parse_list::<u64>("1,x").is_err());
    }
}
