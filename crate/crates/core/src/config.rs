//! Run configuration: a flat `key = value` file with `#` comments.
//!
//! Omitted keys take the standard defaults (population 100, mutation 0.2, crossover 0.2,
//! tournament 3, 2000 generations, perturbation rate 0.15, 500 samples per target). Unknown
//! keys, repeated keys, unparsable values and out-of-range rates are errors that carry the
//! line number.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evolution::EvolutionConfig;
use crate::experiments::{ExperimentKind, DESK_TRIALS};
use crate::modularity::{RemovalOrder, QNORM_SAMPLES};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub evolution: EvolutionConfig,
    pub output_dir: PathBuf,
    pub experiment: ExperimentKind,
    pub trials: usize,
    /// Precomputed normalization table; built on the fly when absent.
    pub qnorm_table: Option<PathBuf>,
    pub qnorm_samples: usize,
    pub qnorm_seed: u64,
    /// Sampled estimates averaged per side in the edge-removal study.
    pub repeats: usize,
    pub removal_order: RemovalOrder,
    pub library_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            evolution: EvolutionConfig::default(),
            output_dir: PathBuf::from("out"),
            experiment: ExperimentKind::Compare,
            trials: DESK_TRIALS,
            qnorm_table: None,
            qnorm_samples: QNORM_SAMPLES,
            qnorm_seed: 0,
            repeats: 1,
            removal_order: RemovalOrder::Greedy,
            library_size: 100,
        }
    }
}

const KEYS: &[&str] = &[
    "population_size",
    "mutation_rate",
    "mutation_scope",
    "crossover_rate",
    "activation_rate",
    "tournament_size",
    "generations",
    "phase2_start",
    "evaluation_mode",
    "initial_edges",
    "perturbation_rate",
    "samples_per_target",
    "recovery",
    "selection",
    "copy_policy",
    "use_cache",
    "seed",
    "output_dir",
    "experiment",
    "trials",
    "qnorm_table",
    "qnorm_samples",
    "qnorm_seed",
    "repeats",
    "removal_order",
    "library_size",
];

const RATES: &[&str] = &["mutation_rate", "crossover_rate", "activation_rate", "perturbation_rate"];

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config { line, message: format!("{key}: cannot parse {value:?}: {e}") })
}

fn parse_count(line: usize, key: &str, value: &str, min: usize) -> Result<usize> {
    let v: usize = parse_value(line, key, value)?;
    if v < min {
        return Err(Error::Config { line, message: format!("{key} must be at least {min}, got {v}") });
    }
    Ok(v)
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        Self::parse_str_with(text, |_| {})
    }

    /// Like [`RunConfig::parse_str`], with `adjust` applied before the cross-field checks so
    /// that command-line overrides are validated together with the file.
    pub fn parse_str_with(text: &str, adjust: impl FnOnce(&mut Self)) -> Result<Self> {
        let mut config = Self::default();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config { line, message: format!("expected `key = value`, got {content:?}") })?;
            if !KEYS.contains(&key) {
                return Err(Error::Config { line, message: format!("unknown key {key:?}") });
            }
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(Error::Config { line, message: format!("duplicate key {key:?} (first set on line {first})") });
            }
            if value.is_empty() {
                return Err(Error::Config { line, message: format!("{key}: missing value") });
            }
            config.set(line, key, value)?;
        }
        adjust(&mut config);
        config.validate_with(&seen)?;
        Ok(config)
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        Self::parse_file_with(path, |_| {})
    }

    pub fn parse_file_with(path: &Path, adjust: impl FnOnce(&mut Self)) -> Result<Self> {
        Self::parse_str_with(&std::fs::read_to_string(path)?, adjust)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let evo = &mut self.evolution;
        if RATES.contains(&key) {
            let v: f64 = parse_value(line, key, value)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config { line, message: format!("{key} must lie in [0, 1], got {v}") });
            }
            match key {
                "mutation_rate" => evo.mutation_rate = v,
                "crossover_rate" => evo.crossover_rate = v,
                "activation_rate" => evo.activation_rate = v,
                _ => evo.perturbation_rate = v,
            }
            return Ok(());
        }
        match key {
            "population_size" => evo.population_size = parse_count(line, key, value, 2)?,
            "tournament_size" => evo.tournament_size = parse_count(line, key, value, 1)?,
            "generations" => evo.generations = parse_count(line, key, value, 1)?,
            "phase2_start" => evo.phase2_start = parse_value(line, key, value)?,
            "evaluation_mode" => evo.evaluation_mode = parse_value(line, key, value)?,
            "initial_edges" => evo.initial_edges = parse_value(line, key, value)?,
            "samples_per_target" => evo.samples_per_target = parse_count(line, key, value, 1)?,
            "mutation_scope" => evo.mutation_scope = parse_value(line, key, value)?,
            "recovery" => evo.recovery = parse_value(line, key, value)?,
            "selection" => evo.selection = parse_value(line, key, value)?,
            "copy_policy" => evo.copy_policy = parse_value(line, key, value)?,
            "use_cache" => evo.use_cache = parse_value(line, key, value)?,
            "seed" => evo.seed = parse_value(line, key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "experiment" => self.experiment = parse_value(line, key, value)?,
            "trials" => self.trials = parse_count(line, key, value, 1)?,
            "qnorm_table" => self.qnorm_table = Some(PathBuf::from(value)),
            "qnorm_samples" => self.qnorm_samples = parse_count(line, key, value, 1)?,
            "qnorm_seed" => self.qnorm_seed = parse_value(line, key, value)?,
            "repeats" => self.repeats = parse_count(line, key, value, 1)?,
            "removal_order" => self.removal_order = parse_value(line, key, value)?,
            "library_size" => self.library_size = parse_count(line, key, value, 1)?,
            _ => unreachable!("key list and setter disagree on {key}"),
        }
        Ok(())
    }

    /// Cross-field checks, blamed on the line that set the later of the two keys.
    fn validate_with(&self, seen: &HashMap<String, usize>) -> Result<()> {
        let line_of = |key: &str| seen.get(key).copied().unwrap_or(0);
        self.evolution.validate(10).map_err(|e| {
            let line = ["phase2_start", "generations", "population_size", "initial_edges"]
                .iter()
                .map(|k| line_of(k))
                .max()
                .unwrap_or(0);
            Error::Config { line, message: e.to_string() }
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(&HashMap::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{CopyPolicy, SelectionScheme};
    use crate::fitness::EvaluationMode;
    use crate::grn::Recovery;

    fn line_of(err: Error) -> usize {
        match err {
            Error::Config { line, .. } => line,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        let e = &c.evolution;
        assert_eq!(
            (e.population_size, e.mutation_rate, e.crossover_rate, e.tournament_size, e.generations),
            (100, 0.2, 0.2, 3, 2000)
        );
        assert_eq!((e.perturbation_rate, e.samples_per_target), (0.15, 500));
        assert_eq!(RunConfig::parse_str("# only a comment\n\n   \n").unwrap(), c);
    }

    #[test]
    fn values_are_applied() {
        let text = "\
seed = 42 # trailing comment
evaluation_mode = stoch
selection = proportional
copy_policy = uniform
recovery = visit
trials = 3
generations = 50
phase2_start = 10
output_dir = runs/a
";
        let c = RunConfig::parse_str(text).unwrap();
        assert_eq!(c.evolution.seed, 42);
        assert_eq!(c.evolution.evaluation_mode, EvaluationMode::Stochastic);
        assert_eq!(c.evolution.selection, SelectionScheme::Proportional);
        assert_eq!(c.evolution.copy_policy, CopyPolicy::Uniform);
        assert_eq!(c.evolution.recovery, Recovery::Visit);
        assert_eq!(c.trials, 3);
        assert_eq!(c.output_dir, PathBuf::from("runs/a"));
    }

    #[test]
    fn rate_out_of_range_names_the_key() {
        let err = RunConfig::parse_str("seed = 1\nmutation_rate = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("mutation_rate"), "{err}");
        assert_eq!(line_of(err), 2);
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = RunConfig::parse_str("seed = 42\nseed = 42\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        assert_eq!(line_of(err), 2);
    }

    #[test]
    fn unknown_and_malformed_lines_rejected() {
        assert_eq!(line_of(RunConfig::parse_str("\npopulation = 10\n").unwrap_err()), 2);
        assert_eq!(line_of(RunConfig::parse_str("generations 10\n").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse_str("generations = ten\n").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse_str("seed =\n").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse_str("evaluation_mode = exact\n").unwrap_err()), 1);
    }

    #[test]
    fn cross_field_errors_point_at_a_line() {
        let err = RunConfig::parse_str("trials = 2\ngenerations = 100\n").unwrap_err();
        // phase2_start defaults to 500, which no longer fits
        assert_eq!(line_of(err), 2);
        let c = RunConfig::parse_str_with("generations = 100\n", |c| c.evolution.phase2_start = 0).unwrap();
        assert_eq!(c.evolution.generations, 100);
    }
}
