//! Generational evolutionary loop: selection, diagonal recombination and density-biased
//! mutation against a two-phase target schedule.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitness::{
    standard_targets, BinomialTable, EvaluationMode, Evaluator, FitnessCache, FitnessReport, TargetSet,
    PERTURBATION_RATE, STOCHASTIC_SAMPLES,
};
use crate::grn::{Grn, Pattern, Recovery};
use crate::modularity::{normalized_q, ModulePartition, QNormTable};
use crate::rng::{rng_from_seed, SimRng};
use crate::stats::median;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionScheme {
    Tournament,
    Proportional,
    /// Uniform parent choice; no selection pressure.
    None,
}

impl std::str::FromStr for SelectionScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tournament" => Ok(Self::Tournament),
            "proportional" => Ok(Self::Proportional),
            "none" | "uniform" => Ok(Self::None),
            other => Err(format!("unknown selection scheme {other:?} (expected tournament|proportional|none)")),
        }
    }
}

/// How the population slots not filled by crossover offspring are copied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopyPolicy {
    /// Chosen by the configured selection scheme.
    Selected,
    /// Drawn uniformly from the population.
    Uniform,
}

impl std::str::FromStr for CopyPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "selected" => Ok(Self::Selected),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!("unknown copy policy {other:?} (expected selected|uniform)")),
        }
    }
}

/// Where the mutation rate applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutationScope {
    /// Every row mutates independently with the given probability.
    #[default]
    Node,
    /// The whole individual mutates with the given probability, at one uniformly chosen row.
    Individual,
}

impl std::str::FromStr for MutationScope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "node" => Ok(Self::Node),
            "individual" => Ok(Self::Individual),
            other => Err(format!("unknown mutation scope {other:?} (expected node|individual)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub population_size: usize,
    /// Per-node probability that a regulated gene gains or loses one regulator.
    pub mutation_rate: f64,
    pub mutation_scope: MutationScope,
    pub crossover_rate: f64,
    /// Probability that a gained interaction is an activation.
    pub activation_rate: f64,
    pub tournament_size: usize,
    /// Number of generations including the initial population.
    pub generations: usize,
    /// First generation evaluated against both targets.
    pub phase2_start: usize,
    pub evaluation_mode: EvaluationMode,
    pub initial_edges: usize,
    pub perturbation_rate: f64,
    pub samples_per_target: usize,
    pub recovery: Recovery,
    pub selection: SelectionScheme,
    pub copy_policy: CopyPolicy,
    pub use_cache: bool,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            mutation_rate: 0.2,
            mutation_scope: MutationScope::Node,
            crossover_rate: 0.2,
            activation_rate: 0.5,
            tournament_size: 3,
            generations: 2000,
            phase2_start: 500,
            evaluation_mode: EvaluationMode::Distributional,
            initial_edges: 20,
            perturbation_rate: PERTURBATION_RATE,
            samples_per_target: STOCHASTIC_SAMPLES,
            recovery: Recovery::Settle,
            selection: SelectionScheme::Tournament,
            copy_policy: CopyPolicy::Selected,
            use_cache: true,
            seed: 0,
        }
    }
}

fn rate(what: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::OutOfRange { what, value, min: 0.0, max: 1.0 });
    }
    Ok(())
}

impl EvolutionConfig {
    pub fn validate(&self, genes: usize) -> Result<()> {
        rate("mutation_rate", self.mutation_rate)?;
        rate("crossover_rate", self.crossover_rate)?;
        rate("activation_rate", self.activation_rate)?;
        rate("perturbation_rate", self.perturbation_rate)?;
        if self.population_size < 2 || !self.population_size.is_multiple_of(2) {
            return Err(Error::OutOfRange {
                what: "population_size (must be even)",
                value: self.population_size as f64,
                min: 2.0,
                max: f64::INFINITY,
            });
        }
        if self.tournament_size == 0 {
            return Err(Error::OutOfRange { what: "tournament_size", value: 0.0, min: 1.0, max: f64::INFINITY });
        }
        if self.generations == 0 {
            return Err(Error::OutOfRange { what: "generations", value: 0.0, min: 1.0, max: f64::INFINITY });
        }
        if self.phase2_start >= self.generations {
            return Err(Error::OutOfRange {
                what: "phase2_start",
                value: self.phase2_start as f64,
                min: 0.0,
                max: (self.generations - 1) as f64,
            });
        }
        if self.initial_edges > genes * genes {
            return Err(Error::OutOfRange {
                what: "initial_edges",
                value: self.initial_edges as f64,
                min: 0.0,
                max: (genes * genes) as f64,
            });
        }
        if self.samples_per_target == 0 {
            return Err(Error::Empty("perturbation sample"));
        }
        Ok(())
    }

    /// Number of crossover pairs per generation, `floor(crossover_rate * population / 2)`.
    pub fn crossover_pairs(&self) -> usize {
        (self.crossover_rate * self.population_size as f64 / 2.0).floor() as usize
    }

    pub fn evaluator(&self, genes: usize) -> Result<Evaluator> {
        Evaluator::new(BinomialTable::new(genes, self.perturbation_rate)?, self.evaluation_mode)?
            .with_samples(self.samples_per_target)
            .map(|e| e.with_recovery(self.recovery))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genome: Grn,
    pub report: FitnessReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub target_count: usize,
    /// Report of the individual with the highest selection fitness.
    pub best: FitnessReport,
    pub best_edges: usize,
    /// `NaN` when the best network has no edges.
    pub best_qn: f64,
    pub median_distributional: f64,
    pub mean_edges: f64,
}

/// Random networks with exactly `initial_edges` nonzero entries at distinct slots.
pub fn init_population<R: Rng + ?Sized>(config: &EvolutionConfig, genes: usize, rng: &mut R) -> Result<Vec<Grn>> {
    config.validate(genes)?;
    (0..config.population_size)
        .map(|_| {
            let mut g = Grn::zeros(genes)?;
            for k in sample(rng, genes * genes, config.initial_edges) {
                let sign = if rng.random_bool(config.activation_rate) { 1 } else { -1 };
                g.set(k / genes, k % genes, sign);
            }
            Ok(g)
        })
        .collect()
}

/// Best of `size` uniform draws (with replacement) by selection fitness; ties are broken
/// uniformly among the tied draws.
pub fn tournament_select<'a, R: Rng + ?Sized>(
    population: &'a [Individual],
    size: usize,
    rng: &mut R,
) -> Result<&'a Individual> {
    if population.is_empty() {
        return Err(Error::Empty("population"));
    }
    let mut best = rng.random_range(0..population.len());
    let mut tied = 1u32;
    for _ in 1..size.max(1) {
        let k = rng.random_range(0..population.len());
        let (fk, fb) = (population[k].report.selection_fitness, population[best].report.selection_fitness);
        if fk > fb {
            best = k;
            tied = 1;
        } else if fk == fb {
            tied += 1;
            if rng.random_range(0..tied) == 0 {
                best = k;
            }
        }
    }
    Ok(&population[best])
}

/// Roulette-wheel draw proportional to selection fitness; uniform when every fitness is zero.
pub fn proportional_select<'a, R: Rng + ?Sized>(population: &'a [Individual], rng: &mut R) -> Result<&'a Individual> {
    if population.is_empty() {
        return Err(Error::Empty("population"));
    }
    let total: f64 = population.iter().map(|i| i.report.selection_fitness.max(0.0)).sum();
    if total <= 0.0 {
        return Ok(&population[rng.random_range(0..population.len())]);
    }
    let mut ticket = rng.random::<f64>() * total;
    for ind in population {
        let share = ind.report.selection_fitness.max(0.0);
        if ticket < share {
            return Ok(ind);
        }
        ticket -= share;
    }
    Ok(population.iter().rev().find(|i| i.report.selection_fitness > 0.0).unwrap())
}

pub fn uniform_select<'a, R: Rng + ?Sized>(population: &'a [Individual], rng: &mut R) -> Result<&'a Individual> {
    if population.is_empty() {
        return Err(Error::Empty("population"));
    }
    Ok(&population[rng.random_range(0..population.len())])
}

fn select<'a, R: Rng + ?Sized>(
    population: &'a [Individual],
    scheme: SelectionScheme,
    tournament_size: usize,
    rng: &mut R,
) -> Result<&'a Individual> {
    match scheme {
        SelectionScheme::Tournament => tournament_select(population, tournament_size, rng),
        SelectionScheme::Proportional => proportional_select(population, rng),
        SelectionScheme::None => uniform_select(population, rng),
    }
}

/// Diagonal recombination around the 1-based `pivot`: the first child keeps `a`'s diagonal
/// blocks `[1, pivot)^2` and `[pivot, N]^2` and takes `b`'s off-diagonal blocks; the second
/// child is the complement. Pivot 1 leaves both parents unchanged.
pub fn diagonal_crossover(a: &Grn, b: &Grn, pivot: usize) -> Result<(Grn, Grn)> {
    let n = a.n();
    if b.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.n() });
    }
    if pivot == 0 || pivot > n {
        return Err(Error::OutOfRange { what: "pivot", value: pivot as f64, min: 1.0, max: n as f64 });
    }
    let split = pivot - 1;
    let (mut first, mut second) = (a.clone(), b.clone());
    for i in 0..n {
        for j in 0..n {
            if (i < split) != (j < split) {
                first.set(i, j, b.get(i, j));
                second.set(i, j, a.get(i, j));
            }
        }
    }
    Ok((first, second))
}

/// Probability that a mutating gene with `regulators` regulators loses one:
/// `4r / (4r + N - r)`, which equals 1/2 at `r = N/5`.
pub fn edge_loss_probability(regulators: usize, genes: usize) -> f64 {
    let r = regulators as f64;
    let denom = 4.0 * r + genes as f64 - r;
    if denom == 0.0 {
        return 0.0;
    }
    4.0 * r / denom
}

/// Each regulated gene (row) mutates with probability `mutation_rate`, then either loses a
/// uniformly chosen regulator or gains one at a uniformly chosen empty slot.
pub fn biased_mutation<R: Rng + ?Sized>(g: &Grn, mutation_rate: f64, activation_rate: f64, rng: &mut R) -> Grn {
    let mut out = g.clone();
    for u in 0..g.n() {
        if rng.random_bool(mutation_rate) {
            mutate_row(&mut out, u, activation_rate, rng);
        }
    }
    out
}

/// With probability `mutation_rate`, one uniformly chosen row gains or loses a regulator.
pub fn individual_mutation<R: Rng + ?Sized>(g: &Grn, mutation_rate: f64, activation_rate: f64, rng: &mut R) -> Grn {
    let mut out = g.clone();
    if rng.random_bool(mutation_rate) {
        let u = rng.random_range(0..g.n());
        mutate_row(&mut out, u, activation_rate, rng);
    }
    out
}

/// Applies the mutation configured by `config`.
pub fn mutate<R: Rng + ?Sized>(g: &Grn, config: &EvolutionConfig, rng: &mut R) -> Grn {
    match config.mutation_scope {
        MutationScope::Node => biased_mutation(g, config.mutation_rate, config.activation_rate, rng),
        MutationScope::Individual => individual_mutation(g, config.mutation_rate, config.activation_rate, rng),
    }
}

fn mutate_row<R: Rng + ?Sized>(out: &mut Grn, u: usize, activation_rate: f64, rng: &mut R) {
    let n = out.n();
    let lose = rng.random_bool(edge_loss_probability(out.regulator_count(u), n));
    let slots: Vec<usize> = (0..n).filter(|&j| (out.get(u, j) != 0) == lose).collect();
    if slots.is_empty() {
        return;
    }
    let j = slots[rng.random_range(0..slots.len())];
    let value = if lose {
        0
    } else if rng.random_bool(activation_rate) {
        1
    } else {
        -1
    };
    out.set(u, j, value);
}

/// Evaluates `genomes` in order against `targets`.
pub fn evaluate_population<R: Rng + ?Sized>(
    genomes: Vec<Grn>,
    targets: &TargetSet,
    evaluator: &Evaluator,
    mut cache: Option<&mut FitnessCache>,
    rng: &mut R,
) -> Result<Vec<Individual>> {
    genomes
        .into_iter()
        .map(|genome| {
            let report = evaluator.evaluate(&genome, targets, cache.as_deref_mut(), rng)?;
            Ok(Individual { genome, report })
        })
        .collect()
}

/// One generation: crossover offspring, copies, mutation of everyone, re-evaluation.
pub fn evolve_generation<R: Rng + ?Sized>(
    population: &[Individual],
    config: &EvolutionConfig,
    targets: &TargetSet,
    evaluator: &Evaluator,
    cache: Option<&mut FitnessCache>,
    rng: &mut R,
) -> Result<Vec<Individual>> {
    let offspring = breed(population, config, rng)?;
    evaluate_population(offspring, targets, evaluator, cache, rng)
}

/// Unevaluated offspring of `population`: crossover pairs, then copies, then mutation.
pub fn breed<R: Rng + ?Sized>(population: &[Individual], config: &EvolutionConfig, rng: &mut R) -> Result<Vec<Grn>> {
    if population.is_empty() {
        return Err(Error::Empty("population"));
    }
    let n = population[0].genome.n();
    let size = config.population_size;
    let pairs = config.crossover_pairs().min(size / 2);
    let mut next = Vec::with_capacity(size);
    for _ in 0..pairs {
        let a = select(population, config.selection, config.tournament_size, rng)?;
        let b = select(population, config.selection, config.tournament_size, rng)?;
        let pivot = rng.random_range(1..=n);
        let (c, d) = diagonal_crossover(&a.genome, &b.genome, pivot)?;
        next.push(c);
        next.push(d);
    }
    while next.len() < size {
        let copy = match config.copy_policy {
            CopyPolicy::Selected => select(population, config.selection, config.tournament_size, rng)?,
            CopyPolicy::Uniform => uniform_select(population, rng)?,
        };
        next.push(copy.genome.clone());
    }
    Ok(next
        .iter()
        .map(|g| mutate(g, config, rng))
        .collect())
}

/// Index of the individual with the highest selection fitness (first on ties).
pub fn best_index(population: &[Individual]) -> usize {
    population
        .iter()
        .enumerate()
        .fold(0, |best, (k, ind)| {
            if ind.report.selection_fitness > population[best].report.selection_fitness {
                k
            } else {
                best
            }
        })
}

pub fn record_generation(
    generation: usize,
    population: &[Individual],
    target_count: usize,
    partition: &ModulePartition,
    qnorm: &QNormTable,
) -> GenerationRecord {
    let best = &population[best_index(population)];
    let dist: Vec<f64> = population.iter().map(|i| i.report.distributional_fitness).collect();
    let mean_edges = population.iter().map(|i| i.genome.edge_count() as f64).sum::<f64>() / population.len() as f64;
    GenerationRecord {
        generation,
        target_count,
        best: best.report,
        best_edges: best.genome.edge_count(),
        best_qn: normalized_q(&best.genome, partition, qnorm).unwrap_or(f64::NAN),
        median_distributional: median(&dist),
        mean_edges,
    }
}

/// Targets in force at each generation: the first set before `switch_at`, the second after.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSchedule {
    pub first: TargetSet,
    pub second: TargetSet,
    pub switch_at: usize,
}

impl TargetSchedule {
    /// First standard target alone, then both.
    pub fn two_phase(switch_at: usize) -> Self {
        let (s1, _) = standard_targets();
        Self { first: TargetSet::single(s1), second: TargetSet::standard_pair(), switch_at }
    }

    pub fn at(&self, generation: usize) -> &TargetSet {
        if generation < self.switch_at {
            &self.first
        } else {
            &self.second
        }
    }

    pub fn genes(&self) -> usize {
        self.first.n()
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub records: Vec<GenerationRecord>,
    /// Genome behind each record's `best`.
    pub best_genomes: Vec<Grn>,
    pub final_population: Vec<Individual>,
    pub cache_hits: u64,
}

impl RunOutcome {
    pub fn best(&self) -> &Individual {
        &self.final_population[best_index(&self.final_population)]
    }
}

/// Runs `config.generations` generations starting from `initial` (or a random population),
/// evaluating generation `t` against `schedule.at(t)`. The cache is cleared when the target
/// set changes.
pub fn run_evolution(
    config: &EvolutionConfig,
    schedule: &TargetSchedule,
    initial: Option<Vec<Grn>>,
    partition: &ModulePartition,
    qnorm: &QNormTable,
) -> Result<RunOutcome> {
    let genes = schedule.genes();
    config.validate(genes)?;
    let evaluator = config.evaluator(genes)?;
    let mut rng: SimRng = rng_from_seed(config.seed);
    let genomes = match initial {
        Some(g) if g.len() != config.population_size => {
            return Err(Error::DimensionMismatch { expected: config.population_size, found: g.len() })
        }
        Some(g) => g,
        None => init_population(config, genes, &mut rng)?,
    };
    let mut cache = config.use_cache.then(FitnessCache::new);
    let mut population = evaluate_population(genomes, schedule.at(0), &evaluator, cache.as_mut(), &mut rng)?;
    let mut records = Vec::with_capacity(config.generations);
    let mut best_genomes = Vec::with_capacity(config.generations);
    records.push(record_generation(0, &population, schedule.at(0).len(), partition, qnorm));
    best_genomes.push(population[best_index(&population)].genome.clone());
    for t in 1..config.generations {
        let targets = schedule.at(t);
        if targets != schedule.at(t - 1) {
            if let Some(c) = cache.as_mut() {
                c.clear();
            }
        }
        population = evolve_generation(&population, config, targets, &evaluator, cache.as_mut(), &mut rng)?;
        records.push(record_generation(t, &population, targets.len(), partition, qnorm));
        best_genomes.push(population[best_index(&population)].genome.clone());
    }
    Ok(RunOutcome { records, best_genomes, final_population: population, cache_hits: cache.map_or(0, |c| c.hits()) })
}

/// Mean edge count per generation of a population bred without selection. Fitness plays no role
/// without selection, so nothing is evaluated; the genomes follow exactly the trajectory of
/// [`run_evolution`] with [`SelectionScheme::None`] in distributional mode.
pub fn neutral_drift(config: &EvolutionConfig, genes: usize) -> Result<Vec<f64>> {
    let config = EvolutionConfig { selection: SelectionScheme::None, ..config.clone() };
    config.validate(genes)?;
    let mut rng: SimRng = rng_from_seed(config.seed);
    let blank = FitnessReport {
        selection_fitness: 0.0,
        distributional_fitness: 0.0,
        evaluation_mode: config.evaluation_mode,
    };
    let wrap = |genomes: Vec<Grn>| -> Vec<Individual> {
        genomes.into_iter().map(|genome| Individual { genome, report: blank }).collect()
    };
    let mean_edges = |pop: &[Individual]| {
        pop.iter().map(|i| i.genome.edge_count() as f64).sum::<f64>() / pop.len() as f64
    };
    let mut population = wrap(init_population(&config, genes, &mut rng)?);
    let mut means = vec![mean_edges(&population)];
    for _ in 1..config.generations {
        population = wrap(breed(&population, &config, &mut rng)?);
        means.push(mean_edges(&population));
    }
    Ok(means)
}

/// The standard schedule: first target only before `phase2_start`, then both.
pub fn run_two_phase(config: &EvolutionConfig, qnorm: &QNormTable) -> Result<RunOutcome> {
    let schedule = TargetSchedule::two_phase(config.phase2_start);
    run_evolution(config, &schedule, None, &ModulePartition::halves(schedule.genes())?, qnorm)
}

/// Convenience for targets given as patterns.
pub fn schedule_for(first: Vec<Pattern>, second: Vec<Pattern>, switch_at: usize) -> Result<TargetSchedule> {
    Ok(TargetSchedule { first: TargetSet::new(first)?, second: TargetSet::new(second)?, switch_at })
}
