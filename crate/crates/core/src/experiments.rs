//! Multi-trial experiments and their outputs.
//!
//! Trials run in parallel (capped by `GRNLAB_THREADS`), each on its own RNG stream seeded with
//! [`trial_seed`]; results are always gathered in trial order, so output does not depend on the
//! worker count.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{
    neutral_drift, run_evolution, EvolutionConfig, GenerationRecord, Individual, RunOutcome,
    SelectionScheme, TargetSchedule,
};
use crate::fitness::{upper_bound_two_target, EvaluationMode, Evaluator, TargetSet};
use crate::grn::Grn;
use crate::io::{write_csv_rows, write_json};
use crate::modularity::{
    inter_module_edges, optimal_modular_grn, remove_inter_module_edges, stepwise_edge_removal_path,
    ModulePartition, QNormTable, RemovalOrder,
};
use crate::rng::{rng_from_seed, splitmix64, trial_seed};
use crate::stats::{mann_whitney_u, mean, median, std_dev, MannWhitney};

pub const THREADS_ENV: &str = "GRNLAB_THREADS";
pub const DESK_TRIALS: usize = 20;
pub const PLATEAU_TOLERANCE: f64 = 1e-6;
/// Agreement required of every optimum admitted to a library.
pub const OPTIMUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Compare,
    EdgeRemoval,
    OptimalStart,
    SelectionCompare,
    Histogram,
}

impl std::str::FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "compare" => Ok(Self::Compare),
            "edge_removal" | "edge-removal" => Ok(Self::EdgeRemoval),
            "optimal_start" | "optimal-start" => Ok(Self::OptimalStart),
            "selection_compare" | "selection-compare" => Ok(Self::SelectionCompare),
            "histogram" => Ok(Self::Histogram),
            other => Err(format!(
                "unknown experiment {other:?} (expected compare|edge_removal|optimal_start|selection_compare|histogram)"
            )),
        }
    }
}

/// A base configuration replicated over independent trials.
#[derive(Clone, Debug, PartialEq)]
pub struct TreatmentSpec {
    pub base: EvolutionConfig,
    pub trials: usize,
    pub kind: ExperimentKind,
}

impl TreatmentSpec {
    pub fn new(base: EvolutionConfig, trials: usize, kind: ExperimentKind) -> Result<Self> {
        if trials == 0 {
            return Err(Error::OutOfRange { what: "trials", value: 0.0, min: 1.0, max: f64::INFINITY });
        }
        Ok(Self { base, trials, kind })
    }

    pub fn with_mode(&self, mode: EvaluationMode) -> Self {
        Self { base: EvolutionConfig { evaluation_mode: mode, ..self.base.clone() }, ..self.clone() }
    }

    /// Configuration of trial `index`: the base with its derived seed.
    pub fn trial_config(&self, index: usize) -> EvolutionConfig {
        EvolutionConfig { seed: trial_seed(self.base.seed, index), ..self.base.clone() }
    }
}

/// One trial's per-generation records and its final-generation fittest individual.
#[derive(Clone, Debug)]
pub struct TrialRun {
    pub trial: usize,
    pub seed: u64,
    pub records: Vec<GenerationRecord>,
    pub best_genomes: Vec<Grn>,
    pub best: Individual,
    pub best_qn: f64,
    /// Mean edge count of the whole final population.
    pub population_edges: f64,
}

impl TrialRun {
    pub fn from_outcome(trial: usize, seed: u64, outcome: RunOutcome) -> Self {
        let best = outcome.best().clone();
        let last = outcome.records.last().expect("at least one generation");
        Self {
            trial,
            seed,
            best_qn: last.best_qn,
            population_edges: last.mean_edges,
            records: outcome.records,
            best_genomes: outcome.best_genomes,
            best,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TreatmentResult {
    pub mode: EvaluationMode,
    pub schedule: TargetSchedule,
    pub trials: Vec<TrialRun>,
}

/// Cross-trial statistics of one generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub mean_best_fit_dist: f64,
    pub sd_best_fit_dist: f64,
    pub mean_best_fit_sel: f64,
    pub mean_median_fit_dist: f64,
    pub mean_best_qn: f64,
    pub sd_best_qn: f64,
    pub mean_edges: f64,
    pub sd_edges: f64,
}

/// Final-generation aggregates; `fitness` is always the exact (distributional) value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSummary {
    pub trials: usize,
    pub evaluation_mode: EvaluationMode,
    pub mean_fitness: f64,
    pub sd_fitness: f64,
    pub median_fitness: f64,
    /// Fitness as seen by selection (differs from `mean_fitness` only for sampled evaluation).
    pub mean_selection_fitness: f64,
    pub sd_selection_fitness: f64,
    pub mean_qn: f64,
    pub sd_qn: f64,
    pub mean_edges: f64,
    pub sd_edges: f64,
    pub mean_population_edges: f64,
    pub sd_population_edges: f64,
}

fn finite(xs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    xs.into_iter().filter(|x| x.is_finite()).collect()
}

fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        0.0
    } else {
        std_dev(xs)
    }
}

fn mean_or_nan(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        mean(xs)
    }
}

impl TreatmentResult {
    pub fn final_fitness(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.best.report.distributional_fitness).collect()
    }

    pub fn final_selection_fitness(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.best.report.selection_fitness).collect()
    }

    pub fn final_qn(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.best_qn).collect()
    }

    pub fn final_edges(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.best.genome.edge_count() as f64).collect()
    }

    pub fn final_population_edges(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.population_edges).collect()
    }

    pub fn best_genomes(&self) -> Vec<Grn> {
        self.trials.iter().map(|t| t.best.genome.clone()).collect()
    }

    pub fn generations(&self) -> usize {
        self.trials.iter().map(|t| t.records.len()).min().unwrap_or(0)
    }

    pub fn generation_summary(&self) -> Vec<GenerationSummary> {
        (0..self.generations())
            .map(|g| {
                let column = |f: &dyn Fn(&GenerationRecord) -> f64| -> Vec<f64> {
                    self.trials.iter().map(|t| f(&t.records[g])).collect()
                };
                let best = column(&|r| r.best.distributional_fitness);
                let qn = finite(column(&|r| r.best_qn));
                let edges = column(&|r| r.mean_edges);
                GenerationSummary {
                    generation: g,
                    mean_best_fit_dist: mean(&best),
                    sd_best_fit_dist: sd(&best),
                    mean_best_fit_sel: mean(&column(&|r| r.best.selection_fitness)),
                    mean_median_fit_dist: mean(&column(&|r| r.median_distributional)),
                    mean_best_qn: mean_or_nan(&qn),
                    sd_best_qn: sd(&qn),
                    mean_edges: mean(&edges),
                    sd_edges: sd(&edges),
                }
            })
            .collect()
    }

    pub fn summary(&self) -> TreatmentSummary {
        let fit = self.final_fitness();
        let sel = self.final_selection_fitness();
        let qn = finite(self.final_qn());
        let edges = self.final_edges();
        let pop = self.final_population_edges();
        TreatmentSummary {
            trials: self.trials.len(),
            evaluation_mode: self.mode,
            mean_fitness: mean(&fit),
            sd_fitness: sd(&fit),
            median_fitness: median(&fit),
            mean_selection_fitness: mean(&sel),
            sd_selection_fitness: sd(&sel),
            mean_qn: mean_or_nan(&qn),
            sd_qn: sd(&qn),
            mean_edges: mean(&edges),
            sd_edges: sd(&edges),
            mean_population_edges: mean(&pop),
            sd_population_edges: sd(&pop),
        }
    }

    /// Re-evaluates a random `fraction` (at least one) of the reported per-generation best
    /// fitnesses and returns how many did not reproduce bit-exactly.
    pub fn audit(&self, evaluator: &Evaluator, fraction: f64, seed: u64) -> Result<usize> {
        let slots: Vec<(usize, usize)> = self
            .trials
            .iter()
            .enumerate()
            .flat_map(|(k, t)| (0..t.records.len()).map(move |g| (k, g)))
            .collect();
        if slots.is_empty() {
            return Ok(0);
        }
        let count = ((slots.len() as f64 * fraction).ceil() as usize).clamp(1, slots.len());
        let mut rng = rng_from_seed(seed);
        let mut mismatches = 0;
        for &(k, g) in slots.choose_multiple(&mut rng, count) {
            let trial = &self.trials[k];
            let exact = evaluator.distributional(&trial.best_genomes[g], self.schedule.at(g))?;
            if exact != trial.records[g].best.distributional_fitness {
                mismatches += 1;
            }
        }
        Ok(mismatches)
    }
}

/// Rayon pool honouring `GRNLAB_THREADS` (all cores when unset).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&t| t > 0).ok_or(Error::Config {
            line: 0,
            message: format!("{THREADS_ENV} must be a positive integer, got {v:?}"),
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config { line: 0, message: e.to_string() })
}

/// Runs `run(index, config)` for every trial in parallel and collects them in trial order.
pub fn run_trials<F>(spec: &TreatmentSpec, run: F) -> Result<Vec<TrialRun>>
where
    F: Fn(usize, &EvolutionConfig) -> Result<RunOutcome> + Sync,
{
    let pool = worker_pool()?;
    pool.install(|| {
        (0..spec.trials)
            .into_par_iter()
            .map(|k| {
                let config = spec.trial_config(k);
                run(k, &config).map(|outcome| TrialRun::from_outcome(k, config.seed, outcome))
            })
            .collect()
    })
}

fn standard_schedule(config: &EvolutionConfig) -> TargetSchedule {
    TargetSchedule::two_phase(config.phase2_start)
}

/// Independent two-phase runs of the spec's base configuration.
pub fn run_treatment(spec: &TreatmentSpec, qnorm: &QNormTable) -> Result<TreatmentResult> {
    let schedule = standard_schedule(&spec.base);
    let partition = ModulePartition::halves(schedule.genes())?;
    let trials = run_trials(spec, |_, config| run_evolution(config, &schedule, None, &partition, qnorm))?;
    Ok(TreatmentResult { mode: spec.base.evaluation_mode, schedule, trials })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub label: String,
    #[serde(flatten)]
    pub summary: TreatmentSummary,
}

/// Two arms compared on one per-trial metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonStats {
    pub metric: String,
    pub a: ArmSummary,
    pub b: ArmSummary,
    pub mann_whitney: MannWhitney,
}

impl ComparisonStats {
    fn new(metric: &str, a: (&str, &TreatmentResult), b: (&str, &TreatmentResult), test: MannWhitney) -> Self {
        Self {
            metric: metric.to_string(),
            a: ArmSummary { label: a.0.to_string(), summary: a.1.summary() },
            b: ArmSummary { label: b.0.to_string(), summary: b.1.summary() },
            mann_whitney: test,
        }
    }
}

/// Distributional versus sampled evaluation, compared on final best exact fitness.
#[derive(Clone, Debug)]
pub struct ModeComparison {
    pub distributional: TreatmentResult,
    pub stochastic: TreatmentResult,
    pub stats: ComparisonStats,
}

pub fn compare_modes(spec: &TreatmentSpec, qnorm: &QNormTable) -> Result<ModeComparison> {
    let distributional = run_treatment(&spec.with_mode(EvaluationMode::Distributional), qnorm)?;
    let stochastic = run_treatment(&spec.with_mode(EvaluationMode::Stochastic), qnorm)?;
    let test = mann_whitney_u(&distributional.final_fitness(), &stochastic.final_fitness())?;
    let stats = ComparisonStats::new("fitness", ("dist", &distributional), ("stoch", &stochastic), test);
    Ok(ModeComparison { distributional, stochastic, stats })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRemovalRow {
    pub trial: usize,
    pub inter_edges: usize,
    pub before_dist: f64,
    pub after_dist: f64,
    pub before_stoch: f64,
    pub after_stoch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRemovalReport {
    pub total: usize,
    pub dist_improved: usize,
    pub stoch_improved: usize,
    pub repeats: usize,
    pub rows: Vec<EdgeRemovalRow>,
}

impl EdgeRemovalReport {
    pub fn dist_fraction(&self) -> f64 {
        self.dist_improved as f64 / self.total as f64
    }

    pub fn stoch_fraction(&self) -> f64 {
        self.stoch_improved as f64 / self.total as f64
    }
}

/// Strips the inter-module edges of every network and counts fitness improvements, once by exact
/// comparison and once by comparing sampled estimates of each side (`repeats` fresh
/// estimates averaged per side; 1 mirrors a single noisy measurement). Network `k` draws its
/// samples from the stream `trial_seed(seed, k)`.
pub fn edge_removal_study(
    grns: &[Grn],
    partition: &ModulePartition,
    targets: &TargetSet,
    evaluator: &Evaluator,
    repeats: usize,
    seed: u64,
) -> Result<EdgeRemovalReport> {
    if grns.is_empty() {
        return Err(Error::Empty("network list"));
    }
    if repeats == 0 {
        return Err(Error::OutOfRange { what: "repeats", value: 0.0, min: 1.0, max: f64::INFINITY });
    }
    let rows = grns
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let stripped = remove_inter_module_edges(g, partition)?;
            let mut rng = rng_from_seed(trial_seed(seed, k));
            let mut sampled = |net: &Grn| -> Result<f64> {
                let total = (0..repeats).map(|_| evaluator.stochastic(net, targets, &mut rng)).sum::<Result<f64>>()?;
                Ok(total / repeats as f64)
            };
            let before_stoch = sampled(g)?;
            let after_stoch = sampled(&stripped)?;
            Ok(EdgeRemovalRow {
                trial: k,
                inter_edges: inter_module_edges(g, partition).len(),
                before_dist: evaluator.distributional(g, targets)?,
                after_dist: evaluator.distributional(&stripped, targets)?,
                before_stoch,
                after_stoch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EdgeRemovalReport {
        total: rows.len(),
        dist_improved: rows.iter().filter(|r| r.after_dist > r.before_dist).count(),
        stoch_improved: rows.iter().filter(|r| r.after_stoch > r.before_stoch).count(),
        repeats,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalPathRow {
    pub trial: usize,
    pub removed: usize,
    pub fitness: f64,
}

/// Exact fitness along the stepwise removal of each network's inter-module edges.
pub fn removal_paths(
    grns: &[Grn],
    partition: &ModulePartition,
    targets: &TargetSet,
    evaluator: &Evaluator,
    order: RemovalOrder,
) -> Result<Vec<RemovalPathRow>> {
    let mut rows = Vec::new();
    for (trial, g) in grns.iter().enumerate() {
        for (removed, fitness) in stepwise_edge_removal_path(g, partition, targets, evaluator, order)? {
            rows.push(RemovalPathRow { trial, removed, fitness });
        }
    }
    Ok(rows)
}

/// Gene permutations that leave every target unchanged: genes are interchangeable exactly when
/// they carry the same value in every target.
pub fn target_preserving_permutations(targets: &TargetSet) -> Vec<Vec<usize>> {
    let n = targets.n();
    let signature = |j: usize| -> Vec<i8> { targets.targets().iter().map(|t| t.states()[j]).collect() };
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for j in 0..n {
        match classes.iter_mut().find(|c| signature(c[0]) == signature(j)) {
            Some(c) => c.push(j),
            None => classes.push(vec![j]),
        }
    }
    let mut perms = vec![(0..n).collect::<Vec<usize>>()];
    for class in &classes {
        let arrangements = permutations(class);
        perms = perms
            .iter()
            .flat_map(|p| {
                arrangements.iter().map(move |arr| {
                    let mut q = p.clone();
                    for (&from, &to) in class.iter().zip(arr) {
                        q[from] = to;
                    }
                    q
                })
            })
            .collect();
    }
    perms
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Relabels genes: gene `i` becomes gene `perm[i]`.
pub fn permute_genes(g: &Grn, perm: &[usize]) -> Result<Grn> {
    let n = g.n();
    if perm.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: perm.len() });
    }
    let mut out = Grn::zeros(n)?;
    for i in 0..n {
        for j in 0..n {
            out.set(perm[i], perm[j], g.get(i, j));
        }
    }
    Ok(out)
}

/// Distinct fully modular networks at the two-target optimum: the relabellings of the canonical
/// optimum that fix both targets, extended by random neutral walks (single intra-module edits
/// that keep the optimum) until `size` networks are found or the walk budget runs out. Every
/// member is checked against the bound before admission.
pub fn optimal_library(evaluator: &Evaluator, size: usize, seed: u64) -> Result<Vec<Grn>> {
    let targets = TargetSet::standard_pair();
    let partition = ModulePartition::halves(targets.n())?;
    let bound = upper_bound_two_target(targets.n(), evaluator.table().rate())?;
    let admissible = |g: &Grn| -> Result<bool> {
        Ok(inter_module_edges(g, &partition).is_empty()
            && (evaluator.distributional(g, &targets)? - bound).abs() <= OPTIMUM_TOLERANCE)
    };
    let mut found = BTreeSet::new();
    let base = optimal_modular_grn();
    for perm in target_preserving_permutations(&targets) {
        let g = permute_genes(&base, &perm)?;
        if admissible(&g)? {
            found.insert(g);
        }
    }
    if found.is_empty() {
        return Err(Error::Empty("optimum library"));
    }
    let mut rng = rng_from_seed(seed);
    let n = targets.n();
    let budget = 200 * size.max(1);
    for _ in 0..budget {
        if found.len() >= size {
            break;
        }
        let members: Vec<&Grn> = found.iter().collect();
        let mut g = (*members[rng.random_range(0..members.len())]).clone();
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if !partition.is_intra(i, j) {
            continue;
        }
        let options: Vec<i8> = [-1, 0, 1].into_iter().filter(|&w| w != g.get(i, j)).collect();
        g.set(i, j, options[rng.random_range(0..options.len())]);
        if !found.contains(&g) && admissible(&g)? {
            found.insert(g);
        }
    }
    Ok(found.into_iter().take(size.max(1)).collect())
}

/// Settings of the optimum-maintenance experiments: both targets from the first generation and
/// every parent pair crossed over.
pub fn optimal_start_config(base: &EvolutionConfig) -> EvolutionConfig {
    EvolutionConfig { phase2_start: 0, crossover_rate: 1.0, ..base.clone() }
}

#[derive(Clone, Debug)]
pub struct OptimalStartResult {
    pub bound: f64,
    pub selection: TreatmentResult,
    pub no_selection: TreatmentResult,
    /// Final population mean edge counts, selection versus no selection.
    pub edges: ComparisonStats,
}

impl OptimalStartResult {
    /// Trials of the selection arm whose best stayed at the bound in every generation.
    pub fn trials_at_bound(&self) -> usize {
        self.selection
            .trials
            .iter()
            .filter(|t| t.records.iter().all(|r| (r.best.distributional_fitness - self.bound).abs() <= OPTIMUM_TOLERANCE))
            .count()
    }
}

/// Starts every trial from a population drawn (with replacement) from `library`, runs with and
/// without selection on identical seeds, and compares final edge counts.
pub fn optimal_start_study(spec: &TreatmentSpec, library: &[Grn], qnorm: &QNormTable) -> Result<OptimalStartResult> {
    if library.is_empty() {
        return Err(Error::Empty("optimum library"));
    }
    let base = optimal_start_config(&spec.base);
    let schedule = standard_schedule(&base);
    let partition = ModulePartition::halves(schedule.genes())?;
    let bound = upper_bound_two_target(schedule.genes(), base.perturbation_rate)?;
    let arm = |selection: SelectionScheme| -> Result<TreatmentResult> {
        let arm_spec = TreatmentSpec { base: EvolutionConfig { selection, ..base.clone() }, ..spec.clone() };
        let trials = run_trials(&arm_spec, |_, config| {
            // the starting population has its own stream so both arms start identically
            let mut rng = rng_from_seed(splitmix64(config.seed));
            let initial = (0..config.population_size).map(|_| library.choose(&mut rng).unwrap().clone()).collect();
            run_evolution(config, &schedule, Some(initial), &partition, qnorm)
        })?;
        Ok(TreatmentResult { mode: base.evaluation_mode, schedule: schedule.clone(), trials })
    };
    let selection = arm(spec.base.selection)?;
    let no_selection = arm(SelectionScheme::None)?;
    let test = mann_whitney_u(&selection.final_population_edges(), &no_selection.final_population_edges())?;
    let edges = ComparisonStats::new("population_edges", ("selection", &selection), ("no_selection", &no_selection), test);
    Ok(OptimalStartResult { bound, selection, no_selection, edges })
}

/// Per-trial mean edge counts of unselected populations over the generations.
pub fn drift_study(spec: &TreatmentSpec, genes: usize) -> Result<Vec<Vec<f64>>> {
    let pool = worker_pool()?;
    pool.install(|| (0..spec.trials).into_par_iter().map(|k| neutral_drift(&spec.trial_config(k), genes)).collect())
}

#[derive(Clone, Debug)]
pub struct SelectionComparison {
    pub tournament: TreatmentResult,
    pub proportional: TreatmentResult,
    pub stats: ComparisonStats,
}

impl SelectionComparison {
    /// Median over trials of the final population median fitness, per arm.
    pub fn median_final(&self) -> (f64, f64) {
        let last = |r: &TreatmentResult| {
            median(&r.trials.iter().map(|t| t.records.last().unwrap().median_distributional).collect::<Vec<_>>())
        };
        (last(&self.tournament), last(&self.proportional))
    }
}

/// Tournament versus proportional selection with crossover off, on identical seeds.
pub fn selection_scheme_comparison(spec: &TreatmentSpec, qnorm: &QNormTable) -> Result<SelectionComparison> {
    let arm = |selection: SelectionScheme| {
        let base = EvolutionConfig { selection, crossover_rate: 0.0, ..spec.base.clone() };
        run_treatment(&TreatmentSpec { base, ..spec.clone() }, qnorm)
    };
    let tournament = arm(SelectionScheme::Tournament)?;
    let proportional = arm(SelectionScheme::Proportional)?;
    let finals = |r: &TreatmentResult| -> Vec<f64> {
        r.trials.iter().map(|t| t.records.last().unwrap().median_distributional).collect()
    };
    let test = mann_whitney_u(&finals(&tournament), &finals(&proportional))?;
    let stats = ComparisonStats::new(
        "final_median_fitness",
        ("tournament", &tournament),
        ("proportional", &proportional),
        test,
    );
    Ok(SelectionComparison { tournament, proportional, stats })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// Fitness of the plateau's top run.
    pub fitness: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub rank: usize,
    pub trial: usize,
    pub fitness: f64,
    pub plateau: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderedHistogram {
    pub rows: Vec<HistogramRow>,
    pub plateaus: Vec<Plateau>,
}

impl OrderedHistogram {
    pub fn sorted(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.fitness).collect()
    }
}

/// Descending sort of per-trial fitness; consecutive runs within `tolerance` of their plateau's
/// top value share a plateau.
pub fn ordered_fitness_histogram(fitness: &[f64], tolerance: f64) -> OrderedHistogram {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
    let mut rows = Vec::with_capacity(order.len());
    let mut plateaus: Vec<Plateau> = Vec::new();
    for (rank, &trial) in order.iter().enumerate() {
        let f = fitness[trial];
        match plateaus.last_mut() {
            Some(p) if p.fitness - f <= tolerance => p.size += 1,
            _ => plateaus.push(Plateau { fitness: f, size: 1 }),
        }
        rows.push(HistogramRow { rank, trial, fitness: f, plateau: plateaus.len() - 1 });
    }
    OrderedHistogram { rows, plateaus }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub trial: usize,
    pub generation: usize,
    pub best_fit_dist: f64,
    pub best_fit_sel: f64,
    pub median_fit_dist: f64,
    pub best_qn: f64,
    pub mean_edges: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub trial: usize,
    pub fitness: f64,
    pub qn: f64,
    pub edges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenomeRow {
    pub trial: usize,
    pub fitness: f64,
    pub genome: String,
}

pub fn generation_rows(result: &TreatmentResult) -> Vec<GenerationRow> {
    result
        .trials
        .iter()
        .flat_map(|t| {
            t.records.iter().map(move |r| GenerationRow {
                trial: t.trial,
                generation: r.generation,
                best_fit_dist: r.best.distributional_fitness,
                best_fit_sel: r.best.selection_fitness,
                median_fit_dist: r.median_distributional,
                best_qn: r.best_qn,
                mean_edges: r.mean_edges,
            })
        })
        .collect()
}

pub fn final_rows(result: &TreatmentResult) -> Vec<FinalRow> {
    result
        .trials
        .iter()
        .map(|t| FinalRow {
            trial: t.trial,
            fitness: t.best.report.distributional_fitness,
            qn: t.best_qn,
            edges: t.best.genome.edge_count(),
        })
        .collect()
}

pub fn genome_rows(result: &TreatmentResult) -> Vec<GenomeRow> {
    result
        .trials
        .iter()
        .map(|t| GenomeRow { trial: t.trial, fitness: t.best.report.distributional_fitness, genome: t.best.genome.to_compact() })
        .collect()
}

/// Writes `generations.csv`, `final.csv`, `summary.csv` and `best.csv` into `dir`.
pub fn write_treatment_tables(dir: &Path, result: &TreatmentResult) -> Result<()> {
    write_csv_rows(&dir.join("generations.csv"), &generation_rows(result))?;
    write_csv_rows(&dir.join("final.csv"), &final_rows(result))?;
    write_csv_rows(&dir.join("summary.csv"), &result.generation_summary())?;
    write_csv_rows(&dir.join("best.csv"), &genome_rows(result))
}

/// Tables plus `stats.json` with the final-generation summary.
pub fn write_treatment(dir: &Path, result: &TreatmentResult) -> Result<()> {
    write_treatment_tables(dir, result)?;
    write_json(&dir.join("stats.json"), &result.summary())
}

/// Reads back the genomes of a `best.csv`.
pub fn read_genomes(path: &Path) -> Result<Vec<Grn>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize::<GenomeRow>().map(|row| Grn::from_compact(&row?.genome)).collect()
}

pub fn write_histogram(path: &Path, histogram: &OrderedHistogram) -> Result<()> {
    write_csv_rows(path, &histogram.rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modularity::patterned_block_diagonal;

    fn qnorm() -> QNormTable {
        QNormTable::build_full(&ModulePartition::halves(10).unwrap(), 200, 1).unwrap()
    }

    fn tiny(trials: usize) -> TreatmentSpec {
        let base = EvolutionConfig { population_size: 10, generations: 8, phase2_start: 4, seed: 5, ..Default::default() };
        TreatmentSpec::new(base, trials, ExperimentKind::Compare).unwrap()
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(TreatmentSpec::new(EvolutionConfig::default(), 0, ExperimentKind::Compare).is_err());
    }

    #[test]
    fn treatment_is_the_union_of_single_runs() {
        let q = qnorm();
        let spec = tiny(3);
        let all = run_treatment(&spec, &q).unwrap();
        assert_eq!(all.trials.len(), 3);
        for k in 0..3 {
            let single = run_evolution(
                &spec.trial_config(k),
                &TargetSchedule::two_phase(4),
                None,
                &ModulePartition::halves(10).unwrap(),
                &q,
            )
            .unwrap();
            assert_eq!(all.trials[k].records, single.records);
            assert_eq!(all.trials[k].seed, trial_seed(5, k));
        }
    }

    #[test]
    fn single_trial_aggregates_equal_the_trial() {
        let r = run_treatment(&tiny(1), &qnorm()).unwrap();
        let s = r.summary();
        assert_eq!(s.mean_fitness, r.trials[0].best.report.distributional_fitness);
        assert_eq!(s.sd_fitness, 0.0);
        let g = r.generation_summary();
        assert_eq!(g.len(), 8);
        assert_eq!(g[7].mean_best_fit_dist, r.trials[0].records[7].best.distributional_fitness);
    }

    #[test]
    fn reported_fitness_is_exact() {
        let spec = tiny(2).with_mode(EvaluationMode::Stochastic);
        let r = run_treatment(&spec, &qnorm()).unwrap();
        let ev = spec.base.evaluator(10).unwrap();
        assert_eq!(r.audit(&ev, 1.0, 9).unwrap(), 0);
    }

    #[test]
    fn modular_networks_are_unchanged_by_removal() {
        let ts = TargetSet::standard_pair();
        let ev = EvolutionConfig::default().evaluator(10).unwrap();
        let part = ModulePartition::halves(10).unwrap();
        let report = edge_removal_study(&[optimal_modular_grn(), patterned_block_diagonal()], &part, &ts, &ev, 1, 3).unwrap();
        assert!(report.rows.iter().all(|r| r.before_dist == r.after_dist && r.inter_edges == 0));
        assert_eq!(report.dist_improved, 0);
        let again = edge_removal_study(&[optimal_modular_grn()], &part, &ts, &ev, 1, 3).unwrap();
        assert_eq!(again.rows[0], report.rows[0]);
    }

    #[test]
    fn stochastic_improvement_counts_vary_with_the_seed() {
        let ts = TargetSet::standard_pair();
        let ev = EvolutionConfig::default().evaluator(10).unwrap();
        let part = ModulePartition::halves(10).unwrap();
        let grns = vec![optimal_modular_grn(); 30];
        let counts: BTreeSet<usize> =
            (0..6).map(|s| edge_removal_study(&grns, &part, &ts, &ev, 1, s).unwrap().stoch_improved).collect();
        assert!(counts.len() > 1, "{counts:?}");
    }

    #[test]
    fn permutations_fix_the_targets() {
        let ts = TargetSet::standard_pair();
        let perms = target_preserving_permutations(&ts);
        assert_eq!(perms.len(), 6 * 2 * 6 * 2);
        for p in &perms {
            for t in ts.targets() {
                let moved: Vec<i8> = (0..10).map(|i| t.states()[p[i]]).collect();
                assert_eq!(moved, t.states());
            }
        }
    }

    #[test]
    fn library_members_are_modular_optima() {
        let ev = EvolutionConfig::default().evaluator(10).unwrap();
        let lib = optimal_library(&ev, 40, 2).unwrap();
        assert_eq!(lib.len(), 40);
        let ts = TargetSet::standard_pair();
        let part = ModulePartition::halves(10).unwrap();
        let bound = upper_bound_two_target(10, 0.15).unwrap();
        for g in &lib {
            assert!((ev.distributional(g, &ts).unwrap() - bound).abs() <= OPTIMUM_TOLERANCE);
            assert!(inter_module_edges(g, &part).is_empty());
        }
        let distinct: BTreeSet<&Grn> = lib.iter().collect();
        assert_eq!(distinct.len(), lib.len());
    }

    #[test]
    fn histogram_plateaus() {
        let h = ordered_fitness_histogram(&[0.5; 4], PLATEAU_TOLERANCE);
        assert_eq!(h.plateaus, vec![Plateau { fitness: 0.5, size: 4 }]);
        let h = ordered_fitness_histogram(&[0.9, 0.94, 0.9400000001, 0.91], PLATEAU_TOLERANCE);
        let sorted = h.sorted();
        assert!(sorted.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(h.plateaus.iter().map(|p| p.size).collect::<Vec<_>>(), vec![2, 1, 1]);
        assert_eq!(h.rows[0].trial, 2);
    }

    #[test]
    fn selection_arms_replay() {
        let q = qnorm();
        let a = selection_scheme_comparison(&tiny(2), &q).unwrap();
        let b = selection_scheme_comparison(&tiny(2), &q).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.tournament.trials[0].records, b.tournament.trials[0].records);
    }

    #[test]
    fn optimal_start_keeps_optima_with_selection() {
        let ev = EvolutionConfig::default().evaluator(10).unwrap();
        let lib = optimal_library(&ev, 20, 1).unwrap();
        let spec = TreatmentSpec::new(
            EvolutionConfig { population_size: 20, generations: 10, seed: 4, ..Default::default() },
            2,
            ExperimentKind::OptimalStart,
        )
        .unwrap();
        let r = optimal_start_study(&spec, &lib, &qnorm()).unwrap();
        assert!(r.selection.trials.iter().all(|t| t.records[0].target_count == 2));
        assert_eq!(r.selection.trials[0].records[0].best.distributional_fitness, r.no_selection.trials[0].records[0].best.distributional_fitness);
        assert!(optimal_start_study(&spec, &[], &qnorm()).is_err());
    }
}
