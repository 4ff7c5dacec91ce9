use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use grnlab::config::RunConfig;
use grnlab::evolution::{run_evolution, TargetSchedule};
use grnlab::experiments::{
    compare_modes, edge_removal_study, optimal_library, optimal_start_config, optimal_start_study, ordered_fitness_histogram, read_genomes,
    removal_paths, run_treatment, selection_scheme_comparison, write_histogram, write_treatment, write_treatment_tables,
    ExperimentKind, FinalRow, GenomeRow, TreatmentResult, TreatmentSpec, TrialRun, PLATEAU_TOLERANCE,
};
use grnlab::fitness::{bound_breakdown, EvaluationMode, TargetSet};
use grnlab::io::{write_csv_rows, write_json};
use grnlab::modularity::{ModulePartition, QNormTable};
use grnlab::{Error, Result};

const GENES: usize = 10;

#[derive(Parser)]
#[command(name = "grnlab", version, about = "Evolve and analyse two-target gene regulatory networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// dist | stoch
    #[arg(long)]
    mode: Option<EvaluationMode>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// One evolutionary run
    Evolve(Common),
    /// Independent trials of one configuration
    Treatment {
        #[command(flatten)]
        common: Common,
        /// Run both evaluation modes and compare their final fitness
        #[arg(long)]
        compare: bool,
    },
    /// Upper bound on two-target fitness with its per-weight breakdown
    Bound(Common),
    /// Fitness change from stripping inter-module edges off evolved networks
    EdgeRemoval {
        #[command(flatten)]
        common: Common,
        /// A treatment output directory with `best.csv`; a fresh treatment is run when absent
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Maintenance of optimal modular networks with and without selection
    OptimalStart(Common),
    /// Tournament versus proportional selection with crossover off
    SelectionCompare(Common),
    /// Random-network normalization table for modularity
    QnormTable(Common),
    /// Ordered final-fitness histogram with plateau grouping
    Histogram {
        #[command(flatten)]
        common: Common,
        /// A treatment output directory with `final.csv`; a fresh treatment is run when absent
        #[arg(long)]
        from: Option<PathBuf>,
    },
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        self.resolve_for(None)
    }

    /// Reads the config, applies the flags and any experiment-specific settings, then validates.
    fn resolve_for(&self, kind: Option<ExperimentKind>) -> Result<RunConfig> {
        let adjust = |config: &mut RunConfig| {
            if let Some(seed) = self.seed {
                config.evolution.seed = seed;
            }
            if let Some(trials) = self.trials {
                config.trials = trials;
            }
            if let Some(mode) = self.mode {
                config.evolution.evaluation_mode = mode;
            }
            if let Some(out) = &self.out {
                config.output_dir = out.clone();
            }
            if kind == Some(ExperimentKind::OptimalStart) {
                config.evolution = optimal_start_config(&config.evolution);
            }
        };
        match &self.config {
            Some(path) => RunConfig::parse_file_with(path, adjust),
            None => RunConfig::parse_str_with("", adjust),
        }
    }
}

fn partition() -> Result<ModulePartition> {
    ModulePartition::halves(GENES)
}

fn qnorm(config: &RunConfig) -> Result<QNormTable> {
    match &config.qnorm_table {
        Some(path) => QNormTable::load(GENES, path),
        None => QNormTable::build_full(&partition()?, config.qnorm_samples, config.qnorm_seed),
    }
}

fn spec(config: &RunConfig, kind: ExperimentKind) -> Result<TreatmentSpec> {
    TreatmentSpec::new(config.evolution.clone(), config.trials, kind)
}

fn report(result: &TreatmentResult, label: &str) {
    let s = result.summary();
    eprintln!(
        "{label}: {} trials, mean best fitness {:.4} (sd {:.4}), mean Q_n {:.4}, mean edges {:.2}",
        s.trials, s.mean_fitness, s.sd_fitness, s.mean_qn, s.mean_edges
    );
}

fn evolve(config: &RunConfig) -> Result<()> {
    let q = qnorm(config)?;
    let schedule = TargetSchedule::two_phase(config.evolution.phase2_start);
    let outcome = run_evolution(&config.evolution, &schedule, None, &partition()?, &q)?;
    let result = TreatmentResult {
        mode: config.evolution.evaluation_mode,
        schedule,
        trials: vec![TrialRun::from_outcome(0, config.evolution.seed, outcome)],
    };
    write_treatment(&config.output_dir, &result)?;
    report(&result, "evolve");
    Ok(())
}

fn treatment(config: &RunConfig, compare: bool) -> Result<()> {
    let q = qnorm(config)?;
    let out = &config.output_dir;
    if compare {
        let c = compare_modes(&spec(config, ExperimentKind::Compare)?, &q)?;
        write_treatment(&out.join("dist"), &c.distributional)?;
        write_treatment(&out.join("stoch"), &c.stochastic)?;
        write_json(&out.join("stats.json"), &c.stats)?;
        report(&c.distributional, "dist");
        report(&c.stochastic, "stoch");
        eprintln!("Mann-Whitney on final fitness: U = {}, p = {:.4e}", c.stats.mann_whitney.u_x, c.stats.mann_whitney.p);
    } else {
        let r = run_treatment(&spec(config, ExperimentKind::Compare)?, &q)?;
        write_treatment(out, &r)?;
        report(&r, "treatment");
    }
    Ok(())
}

fn bound(config: &RunConfig, write: bool) -> Result<()> {
    let b = bound_breakdown(GENES, config.evolution.perturbation_rate)?;
    println!("bound {:.4} ({:.10}); expected recovery {:.10}", b.bound, b.bound, b.inner);
    println!("{:>6} {:>12} {:>13} {:>15} {:>11}", "weight", "probability", "perturbations", "unrecoverable", "recoverable");
    for r in &b.rows {
        println!(
            "{:>6} {:>12.6} {:>13} {:>15} {:>11}",
            r.weight,
            r.probability,
            r.perturbations,
            r.unrecoverable,
            r.perturbations - r.unrecoverable
        );
    }
    if write {
        write_csv_rows(&config.output_dir.join("bound.csv"), &b.rows)?;
        write_json(&config.output_dir.join("bound.json"), &b)?;
    }
    Ok(())
}

/// Best genomes of an earlier treatment, or of a fresh distributional one written under `out/treatment`.
fn source_genomes(config: &RunConfig, from: Option<&Path>) -> Result<Vec<grnlab::Grn>> {
    match from {
        Some(dir) => read_genomes(&dir.join("best.csv")),
        None => {
            let dist = spec(config, ExperimentKind::EdgeRemoval)?.with_mode(EvaluationMode::Distributional);
            let r = run_treatment(&dist, &qnorm(config)?)?;
            write_treatment(&config.output_dir.join("treatment"), &r)?;
            Ok(r.best_genomes())
        }
    }
}

fn edge_removal(config: &RunConfig, from: Option<&Path>) -> Result<()> {
    let grns = source_genomes(config, from)?;
    let evaluator = config.evolution.evaluator(GENES)?;
    let targets = TargetSet::standard_pair();
    let part = partition()?;
    let r = edge_removal_study(&grns, &part, &targets, &evaluator, config.repeats, config.evolution.seed)?;
    let out = &config.output_dir;
    write_csv_rows(&out.join("edge_removal.csv"), &r.rows)?;
    write_csv_rows(&out.join("removal_path.csv"), &removal_paths(&grns, &part, &targets, &evaluator, config.removal_order)?)?;
    write_json(
        &out.join("stats.json"),
        &serde_json::json!({
            "total": r.total,
            "repeats": r.repeats,
            "dist_improved": r.dist_improved,
            "stoch_improved": r.stoch_improved,
            "dist_fraction": r.dist_fraction(),
            "stoch_fraction": r.stoch_fraction(),
        }),
    )?;
    println!(
        "improved after removal: {}/{} exact, {}/{} sampled",
        r.dist_improved, r.total, r.stoch_improved, r.total
    );
    Ok(())
}

fn optimal_start(config: &RunConfig) -> Result<()> {
    let evaluator = config.evolution.evaluator(GENES)?;
    let library = optimal_library(&evaluator, config.library_size, config.evolution.seed)?;
    let out = &config.output_dir;
    let targets = TargetSet::standard_pair();
    let rows = library
        .iter()
        .enumerate()
        .map(|(k, g)| Ok(GenomeRow { trial: k, fitness: evaluator.distributional(g, &targets)?, genome: g.to_compact() }))
        .collect::<Result<Vec<_>>>()?;
    write_csv_rows(&out.join("library.csv"), &rows)?;
    let r = optimal_start_study(&spec(config, ExperimentKind::OptimalStart)?, &library, &qnorm(config)?)?;
    write_treatment_tables(&out.join("selection"), &r.selection)?;
    write_treatment_tables(&out.join("no_selection"), &r.no_selection)?;
    write_json(
        &out.join("stats.json"),
        &serde_json::json!({
            "bound": r.bound,
            "library_size": library.len(),
            "trials_at_bound": r.trials_at_bound(),
            "comparison": r.edges,
        }),
    )?;
    report(&r.selection, "selection");
    report(&r.no_selection, "no selection");
    println!(
        "final population edges {:.2} vs {:.2}, Mann-Whitney p = {:.3e}; trials at the bound throughout: {}/{}",
        r.edges.a.summary.mean_population_edges,
        r.edges.b.summary.mean_population_edges,
        r.edges.mann_whitney.p,
        r.trials_at_bound(),
        r.selection.trials.len()
    );
    Ok(())
}

fn selection_compare(config: &RunConfig) -> Result<()> {
    let c = selection_scheme_comparison(&spec(config, ExperimentKind::SelectionCompare)?, &qnorm(config)?)?;
    let out = &config.output_dir;
    write_treatment(&out.join("tournament"), &c.tournament)?;
    write_treatment(&out.join("proportional"), &c.proportional)?;
    write_json(&out.join("stats.json"), &c.stats)?;
    let (t, p) = c.median_final();
    println!("median final population-median fitness: tournament {t:.4}, proportional {p:.4}");
    Ok(())
}

fn qnorm_table(config: &RunConfig) -> Result<()> {
    let table = QNormTable::build_full(&partition()?, config.qnorm_samples, config.qnorm_seed)?;
    let path = config.output_dir.join("qnorm.csv");
    table.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn histogram(config: &RunConfig, from: Option<&Path>) -> Result<()> {
    let fitness: Vec<f64> = match from {
        Some(dir) => {
            let mut reader = csv::Reader::from_path(dir.join("final.csv"))?;
            reader.deserialize::<FinalRow>().map(|r| Ok(r?.fitness)).collect::<Result<_>>()?
        }
        None => {
            let r = run_treatment(&spec(config, ExperimentKind::Histogram)?, &qnorm(config)?)?;
            write_treatment(&config.output_dir.join("treatment"), &r)?;
            r.final_fitness()
        }
    };
    if fitness.is_empty() {
        return Err(Error::Empty("final fitness list"));
    }
    let h = ordered_fitness_histogram(&fitness, PLATEAU_TOLERANCE);
    write_histogram(&config.output_dir.join("histogram.csv"), &h)?;
    write_json(&config.output_dir.join("plateaus.json"), &h.plateaus)?;
    println!("{} runs on {} plateaus", fitness.len(), h.plateaus.len());
    for p in &h.plateaus {
        println!("{:.6} x{}", p.fitness, p.size);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evolve(c) => evolve(&c.resolve()?),
        Command::Treatment { common, compare } => treatment(&common.resolve()?, compare),
        Command::Bound(c) => bound(&c.resolve()?, c.out.is_some()),
        Command::EdgeRemoval { common, from } => edge_removal(&common.resolve()?, from.as_deref()),
        Command::OptimalStart(c) => optimal_start(&c.resolve_for(Some(ExperimentKind::OptimalStart))?),
        Command::SelectionCompare(c) => selection_compare(&c.resolve()?),
        Command::QnormTable(c) => qnorm_table(&c.resolve()?),
        Command::Histogram { common, from } => histogram(&common.resolve()?, from.as_deref()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
