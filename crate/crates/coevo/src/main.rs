//! `coevo` command line: run, resume, and analyze co-evolution experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use coevo::bauplan::BauplanKind;
use coevo::episode::EpisodeConfig;
use coevo::es::EsConfig;
use coevo::harness::{self, checkpoint::Checkpoint, records, Condition, ExperimentConfig};
use coevo::policy::ObsStats;

/// Environment variable consulted for the worker count when `--workers`
/// is absent.
const WORKERS_ENV: &str = "COEVO_WORKERS";

#[derive(Parser)]
#[command(name = "coevo", version, about = "Body–brain co-evolution experiments on a planar simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fresh experiment (all replications) to the step budget.
    Run(RunArgs),
    /// Continue an interrupted run from its checkpoints.
    Resume(ResumeArgs),
    /// Re-evaluate a checkpointed champion with fresh episodes.
    Posteval(PostevalArgs),
    /// Write the parameter-drift table of a checkpoint.
    Drift(DriftArgs),
    /// Compare finished runs: Mann–Whitney U, Bonferroni, bootstrap CIs.
    Stats(StatsArgs),
    /// Export one episode of a checkpointed champion as frame records.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Body plan: walker2d | halfcheetah | chain7 | chain13 | chain<N>
    #[arg(long)]
    bauplan: String,
    /// Condition: fixed | coevolve | preevolved
    #[arg(long)]
    condition: String,
    /// Champion checkpoint for the preevolved condition.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Base seed; replication r uses a seed derived from (seed, r).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    replications: usize,
    /// Environment-step budget per replication.
    #[arg(long, default_value_t = 100_000_000)]
    budget: u64,
    /// Worker threads (default: COEVO_WORKERS or all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for manifests, tables, and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Optional TOML file overriding tuning defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ResumeArgs {
    /// Run directory holding manifest.json and rep*/ checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Extend (or shrink) the step budget.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct PostevalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 3)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DriftArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Two or more finished run directories to compare.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.90)]
    ci: f64,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write per-run posteval curves with bootstrap bands.
    #[arg(long, default_value_t = false)]
    curves: bool,
    /// Curve sampling interval in env steps.
    #[arg(long, default_value_t = 100_000)]
    interval: u64,
    /// Write the report as JSON here (default: stdout table only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the line-delimited frame records.
    #[arg(long)]
    out: PathBuf,
}

/// Optional TOML overrides; anything absent keeps its default.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    es: EsOverride,
    #[serde(default)]
    episode: EpisodeOverride,
    #[serde(default)]
    experiment: ExperimentOverride,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EsOverride {
    population_size: Option<usize>,
    sigma: Option<f64>,
    learning_rate: Option<f64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_eps: Option<f64>,
    weight_decay_coeff: Option<f64>,
    decay_norm: Option<coevo::es::DecayNorm>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeOverride {
    max_steps: Option<usize>,
    target_x: Option<f64>,
    initial_height: Option<f64>,
    perturbation_range: Option<f64>,
    motor_noise_std: Option<f64>,
    joint_limit_penalty: Option<f64>,
    contact_penalty: Option<f64>,
    energy_coeff: Option<f64>,
    overspeed_threshold: Option<f64>,
    overspeed_penalty: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentOverride {
    drift_interval: Option<u64>,
    posteval_episodes: Option<usize>,
    checkpoint_every: Option<u64>,
}

impl FileConfig {
    fn apply(&self, es: &mut EsConfig, episode: &mut EpisodeConfig, config: &mut ExperimentConfig) {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(es.population_size, self.es.population_size);
        set!(es.sigma, self.es.sigma);
        set!(es.learning_rate, self.es.learning_rate);
        set!(es.adam_beta1, self.es.adam_beta1);
        set!(es.adam_beta2, self.es.adam_beta2);
        set!(es.adam_eps, self.es.adam_eps);
        set!(es.weight_decay_coeff, self.es.weight_decay_coeff);
        set!(es.decay_norm, self.es.decay_norm);
        set!(episode.max_steps, self.episode.max_steps);
        set!(episode.target_x, self.episode.target_x);
        set!(episode.initial_height, self.episode.initial_height);
        set!(episode.perturbation_range, self.episode.perturbation_range);
        set!(episode.motor_noise_std, self.episode.motor_noise_std);
        set!(episode.joint_limit_penalty, self.episode.joint_limit_penalty);
        set!(episode.contact_penalty, self.episode.contact_penalty);
        set!(episode.energy_coeff, self.episode.energy_coeff);
        set!(episode.overspeed_threshold, self.episode.overspeed_threshold);
        set!(episode.overspeed_penalty, self.episode.overspeed_penalty);
        set!(config.drift_interval, self.experiment.drift_interval);
        set!(config.posteval_episodes, self.experiment.posteval_episodes);
        set!(config.checkpoint_every, self.experiment.checkpoint_every);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // machine-readable error record
            let record = serde_json::json!({ "error": e.to_string(), "kind": error_kind(&e) });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &anyhow_like::Error) -> &'static str {
    e.kind
}

/// Small local error carrier keeping a stable machine-readable kind tag.
mod anyhow_like {
    #[derive(Debug)]
    pub struct Error {
        pub kind: &'static str,
        pub message: String,
    }

    impl std::fmt::Display for Error {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.write_str(&self.message)
        }
    }

    impl Error {
        pub fn new(kind: &'static str, message: impl std::fmt::Display) -> Error {
            Error { kind, message: message.to_string() }
        }
    }
}

use anyhow_like::Error;

fn harness_err(e: harness::HarnessError) -> Error {
    let kind = match &e {
        harness::HarnessError::Io(_) => "io",
        harness::HarnessError::Format(_) => "format",
        harness::HarnessError::Bauplan(_) => "bauplan",
        harness::HarnessError::Episode(_) => "episode",
        harness::HarnessError::Es(_) => "es",
        harness::HarnessError::KindMismatch { .. } => "kind_mismatch",
        harness::HarnessError::NoMorphSlice => "kind_mismatch",
        harness::HarnessError::EmptySample => "empty_sample",
        harness::HarnessError::TooFewSamples { .. } => "too_few_samples",
        harness::HarnessError::Config(_) => "config",
    };
    Error::new(kind, e)
}

fn init_workers(explicit: Option<usize>) -> Result<(), Error> {
    let from_env = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = explicit.or(from_env) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::new("config", format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Resume(args) => cmd_resume(args),
        Command::Posteval(args) => cmd_posteval(args),
        Command::Drift(args) => cmd_drift(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Export(args) => cmd_export(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    init_workers(args.workers)?;
    let bauplan = BauplanKind::parse(&args.bauplan).map_err(|e| Error::new("bauplan", e))?;
    let condition = Condition::parse(&args.condition).map_err(|e| Error::new("config", e))?;

    let mut config = ExperimentConfig::new(bauplan, condition, args.seed, args.out);
    config.replications = args.replications;
    config.budget = args.budget;
    config.preevolved_source = args.source;
    if condition == Condition::Preevolved && config.preevolved_source.is_none() {
        return Err(Error::new("config", "--condition preevolved requires --source <checkpoint>"));
    }

    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::new("io", format!("{}: {e}", path.display())))?;
        let overrides: FileConfig = toml::from_str(&text).map_err(|e| Error::new("config", e))?;
        let (mut es, mut episode) = (config.es.clone(), config.episode.clone());
        overrides.apply(&mut es, &mut episode, &mut config);
        config.es = es;
        config.episode = episode;
    }
    config.es.max_total_steps = config.budget;

    let record = harness::run_experiment(&config).map_err(harness_err)?;
    for rep in &record.replications {
        let last = rep.records.last();
        println!(
            "rep {:02}: generations {}, env steps {}, final posteval {}",
            rep.replication,
            rep.records.len(),
            last.map(|r| r.cumulative_env_steps).unwrap_or(0),
            last.map(|r| format!("{:.3}", r.posteval_fitness)).unwrap_or_else(|| "-".into()),
        );
    }
    println!("run complete: {}", record.config.out_dir.display());
    Ok(())
}

fn cmd_resume(args: ResumeArgs) -> Result<(), Error> {
    init_workers(args.workers)?;
    let mut config = harness::read_manifest(&args.out).map_err(harness_err)?;
    if let Some(budget) = args.budget {
        config.budget = budget;
        config.es.max_total_steps = budget;
    }
    let record = harness::run_experiment(&config).map_err(harness_err)?;
    println!(
        "resumed to budget {}: {} replications complete",
        config.budget,
        record.replications.len()
    );
    Ok(())
}

fn cmd_posteval(args: PostevalArgs) -> Result<(), Error> {
    let results =
        harness::posteval_checkpoint(&args.checkpoint, None, args.episodes, args.seed).map_err(harness_err)?;
    for (i, r) in results.iter().enumerate() {
        println!(
            "episode {}: fitness {:.4}, progress {:.4}, steps {}, end {:?}",
            i + 1,
            r.fitness,
            r.progress_total,
            r.steps_executed,
            r.termination_reason
        );
    }
    let mean = results.iter().map(|r| r.fitness).sum::<f64>() / results.len().max(1) as f64;
    println!("mean fitness over {} episodes: {mean:.4}", results.len());
    Ok(())
}

fn cmd_drift(args: DriftArgs) -> Result<(), Error> {
    let ck = Checkpoint::load(&args.checkpoint).map_err(harness_err)?;
    let series = ck.drift.series();
    match args.out {
        Some(path) => {
            records::write_drift_csv(&path, &series).map_err(harness_err)?;
            println!("wrote {} drift points to {}", series.points.len(), path.display());
        }
        None => {
            println!("env_steps,morph_mean_abs_delta,ctrl_mean_abs_delta");
            for p in &series.points {
                let morph = p.morph_mean_abs_delta.map(|v| format!("{v:?}")).unwrap_or_default();
                println!("{},{},{:?}", p.env_steps, morph, p.ctrl_mean_abs_delta);
            }
        }
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), Error> {
    let mut groups = Vec::new();
    for dir in &args.runs {
        groups.push(harness::collect_final_posteval(dir).map_err(harness_err)?);
    }
    let report = harness::stat_report(&groups, args.ci, args.resamples, args.seed).map_err(harness_err)?;

    println!("group summaries ({}% bootstrap CI of the mean):", (report.ci_level * 100.0).round());
    for g in &report.groups {
        println!("  {:<28} n={:<3} mean {:>9.3}  [{:.3}, {:.3}]", g.label, g.n, g.mean, g.ci_low, g.ci_high);
    }
    if !report.pairwise.is_empty() {
        println!("pairwise Mann-Whitney U (two-sided, Bonferroni-adjusted):");
        for t in &report.pairwise {
            println!(
                "  {} vs {}: U = {:.1}, p = {:.4}, adjusted p = {:.4}{}",
                t.a,
                t.b,
                t.u,
                t.p,
                t.p_adjusted,
                if t.p_adjusted < 0.05 { "  (significant at 0.05)" } else { "" }
            );
        }
    }

    if args.curves {
        for dir in &args.runs {
            let points =
                harness::posteval_curve(dir, args.interval, args.ci, args.resamples, args.seed).map_err(harness_err)?;
            let path = dir.join("curve.csv");
            let mut out = String::from("env_steps,mean,ci_low,ci_high,n\n");
            for p in &points {
                out.push_str(&format!("{},{:?},{:?},{:?},{}\n", p.env_steps, p.mean, p.ci_low, p.ci_high, p.n));
            }
            std::fs::write(&path, out).map_err(|e| Error::new("io", format!("{}: {e}", path.display())))?;
            println!("wrote {} curve points to {}", points.len(), path.display());
        }
    }

    if let Some(path) = args.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::new("format", e))?;
        std::fs::write(&path, json).map_err(|e| Error::new("io", format!("{}: {e}", path.display())))?;
        println!("wrote report to {}", path.display());
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), Error> {
    let ck = Checkpoint::load(&args.checkpoint).map_err(harness_err)?;
    let template = coevo::bauplan::BauplanTemplate::get(ck.kind).map_err(|e| Error::new("bauplan", e))?;
    let genotype = harness::search_vector_to_genotype(&ck.es.center, &template, ck.condition)
        .map_err(|e| Error::new("bauplan", e))?;
    let config = EpisodeConfig::for_bauplan(ck.kind);
    let stats: ObsStats = ck.obs_stats;
    let result = harness::trajectory::export_trajectory(&genotype, &template, &config, args.seed, &stats, &args.out)
        .map_err(harness_err)?;
    println!(
        "wrote {} frames to {} (fitness {:.4}, end {:?})",
        result.steps_executed,
        args.out.display(),
        result.fitness,
        result.termination_reason
    );
    Ok(())
}
