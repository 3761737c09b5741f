//! Experiment orchestration: the fixed / co-evolving / pre-evolved
//! conditions over independent replications, with per-generation
//! post-evaluation, drift tracking, checkpoint/resume, and statistics.

pub mod checkpoint;
pub mod drift;
pub mod records;
pub mod stats;
pub mod trajectory;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bauplan::{BauplanError, BauplanKind, BauplanTemplate, Genotype};
use crate::episode::{run_episode, EpisodeConfig, EpisodeError, EpisodeResult};
use crate::es::{derive_seed, EsConfig, EsError, EsState, FitnessBatch};
use crate::policy::ObsStats;
use checkpoint::Checkpoint;
use drift::{DriftSampler, DriftSeries};
use records::GenerationRecord;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Bauplan(#[from] BauplanError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Es(#[from] EsError),
    #[error("bauplan kind mismatch: run is {expected}, source is {got}")]
    KindMismatch { expected: String, got: String },
    #[error("source checkpoint has no morphological slice to freeze")]
    NoMorphSlice,
    #[error("empty sample")]
    EmptySample,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Experimental condition: what part of the genotype evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Condition {
    /// Hand-designed morphology; only control parameters evolve.
    Fixed = 0,
    /// Morphological and control parameters evolve together.
    Coevolve = 1,
    /// Morphology copied from a co-evolved champion and frozen.
    Preevolved = 2,
}

impl Condition {
    pub fn from_u8(v: u8) -> Option<Condition> {
        match v {
            0 => Some(Condition::Fixed),
            1 => Some(Condition::Coevolve),
            2 => Some(Condition::Preevolved),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Condition::Fixed => "fixed",
            Condition::Coevolve => "coevolve",
            Condition::Preevolved => "preevolved",
        }
    }

    pub fn parse(s: &str) -> Result<Condition, HarnessError> {
        match s {
            "fixed" => Ok(Condition::Fixed),
            "coevolve" => Ok(Condition::Coevolve),
            "preevolved" => Ok(Condition::Preevolved),
            _ => Err(HarnessError::Config(format!("unknown condition `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub bauplan: BauplanKind,
    pub condition: Condition,
    pub preevolved_source: Option<PathBuf>,
    pub replications: usize,
    pub base_seed: u64,
    pub es: EsConfig,
    pub episode: EpisodeConfig,
    /// Environment-step budget per replication.
    pub budget: u64,
    pub drift_interval: u64,
    pub posteval_episodes: usize,
    /// Checkpoint cadence in generations (a final checkpoint always lands).
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
    /// Initial search center (set by [`freeze_morphology`] for the
    /// pre-evolved condition).
    pub warm_start: Option<Vec<f64>>,
    /// Per-dimension freeze mask (pre-evolved condition).
    pub freeze_mask: Option<Vec<bool>>,
}

impl ExperimentConfig {
    pub fn new(bauplan: BauplanKind, condition: Condition, base_seed: u64, out_dir: PathBuf) -> ExperimentConfig {
        ExperimentConfig {
            bauplan,
            condition,
            preevolved_source: None,
            replications: 20,
            base_seed,
            es: EsConfig::default(),
            episode: EpisodeConfig::for_bauplan(bauplan),
            budget: 100_000_000,
            drift_interval: 100_000,
            posteval_episodes: 3,
            checkpoint_every: 50,
            out_dir,
            warm_start: None,
            freeze_mask: None,
        }
    }

    /// Search-space dimension: control-only for the fixed condition, the
    /// full genotype otherwise.
    pub fn search_dim(&self, template: &BauplanTemplate) -> usize {
        let (n_morph, n_ctrl) = template.genotype_layout();
        match self.condition {
            Condition::Fixed => n_ctrl,
            _ => n_morph + n_ctrl,
        }
    }

    /// Morphological slice length of the search vector.
    pub fn search_n_morph(&self, template: &BauplanTemplate) -> usize {
        match self.condition {
            Condition::Fixed => 0,
            _ => template.genotype_layout().0,
        }
    }
}

/// Wrap a search vector into the full genotype an episode consumes. The
/// fixed condition pads the morphological slice with zeros (tanh(0) = 0
/// decodes every property to its hand-designed default).
pub fn search_vector_to_genotype(
    vector: &[f64],
    template: &BauplanTemplate,
    condition: Condition,
) -> Result<Genotype, BauplanError> {
    let (n_morph, n_ctrl) = template.genotype_layout();
    match condition {
        Condition::Fixed => {
            if vector.len() != n_ctrl {
                return Err(BauplanError::GenotypeLength { expected: n_ctrl, got: vector.len() });
            }
            Ok(Genotype::from_parts(&vec![0.0; n_morph], vector))
        }
        _ => Genotype::new(vector.to_vec(), n_morph, n_ctrl),
    }
}

/// Inject a champion's morphology into a pre-evolved-condition config: the
/// morphological slice of the source checkpoint becomes a frozen warm start
/// and the control slice restarts at zero.
pub fn freeze_morphology(config: &ExperimentConfig, source: &Path) -> Result<ExperimentConfig, HarnessError> {
    let ck = Checkpoint::load(source)?;
    if ck.kind != config.bauplan {
        return Err(HarnessError::KindMismatch { expected: config.bauplan.name(), got: ck.kind.name() });
    }
    let template = BauplanTemplate::get(config.bauplan)?;
    let (n_morph, n_ctrl) = template.genotype_layout();
    if ck.n_morph != n_morph || ck.es.center.len() < n_morph {
        return Err(HarnessError::NoMorphSlice);
    }
    let mut warm = Vec::with_capacity(n_morph + n_ctrl);
    warm.extend_from_slice(&ck.es.center[..n_morph]);
    warm.extend(std::iter::repeat(0.0).take(n_ctrl));
    let mut mask = vec![false; n_morph + n_ctrl];
    for m in mask.iter_mut().take(n_morph) {
        *m = true;
    }
    let mut out = config.clone();
    out.condition = Condition::Preevolved;
    out.preevolved_source = Some(source.to_path_buf());
    out.warm_start = Some(warm);
    out.freeze_mask = Some(mask);
    Ok(out)
}

/// Outcome of one replication.
#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub master_seed: u64,
    pub records: Vec<GenerationRecord>,
    pub drift: DriftSeries,
    pub checkpoint_path: PathBuf,
    pub records_path: PathBuf,
}

/// Full run output: one outcome per replication, in replication order.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub replications: Vec<ReplicationOutcome>,
}

const STREAM_REP: u64 = 0x01;
const STREAM_EVAL: u64 = 0x02;
const STREAM_POSTEVAL: u64 = 0x03;

pub fn replication_dir(out_dir: &Path, rep: usize) -> PathBuf {
    out_dir.join(format!("rep{rep:02}"))
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.json")
}

pub fn write_manifest(config: &ExperimentConfig) -> Result<(), HarnessError> {
    std::fs::create_dir_all(&config.out_dir)?;
    let json = serde_json::to_string_pretty(config).map_err(|e| HarnessError::Format(e.to_string()))?;
    std::fs::write(manifest_path(&config.out_dir), json)?;
    Ok(())
}

pub fn read_manifest(out_dir: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(manifest_path(out_dir))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format(e.to_string()))
}

/// Run (or resume) a complete experiment. Replications are independent and
/// run in parallel; each one writes `rep.ck`, `records.csv`, and `drift.csv`
/// under its own directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let mut config = config.clone();
    if config.condition == Condition::Preevolved {
        if config.warm_start.is_none() {
            let source = config
                .preevolved_source
                .clone()
                .ok_or_else(|| HarnessError::Config("pre-evolved condition needs a source checkpoint".into()))?;
            config = freeze_morphology(&config, &source)?;
        }
    } else if config.freeze_mask.is_some() {
        return Err(HarnessError::Config("freeze mask is only valid in the pre-evolved condition".into()));
    }

    let template = BauplanTemplate::get(config.bauplan)?;
    write_manifest(&config)?;

    let mut outcomes: Vec<ReplicationOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(&config, &template, rep))
        .collect::<Result<Vec<_>, _>>()?;
    outcomes.sort_by_key(|o| o.replication);
    Ok(RunRecord { config, replications: outcomes })
}

/// One replication: ask / parallel evaluate / tell until the step budget is
/// spent, post-evaluating the center after every update. Resumes from the
/// replication checkpoint when one exists, reproducing the uninterrupted
/// run bit-exactly.
pub fn run_replication(
    config: &ExperimentConfig,
    template: &BauplanTemplate,
    rep: usize,
) -> Result<ReplicationOutcome, HarnessError> {
    let rep_dir = replication_dir(&config.out_dir, rep);
    std::fs::create_dir_all(&rep_dir)?;
    let ck_path = rep_dir.join("rep.ck");
    let records_path = rep_dir.join("records.csv");
    let drift_path = rep_dir.join("drift.csv");

    let dim = config.search_dim(template);
    let n_morph = config.search_n_morph(template);
    let shape = template.policy_shape();
    let master_seed = derive_seed(config.base_seed, rep as u64, 0, STREAM_REP);

    let (mut es, mut obs_stats, mut records, mut drift) = if ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        if ck.kind != config.bauplan {
            return Err(HarnessError::KindMismatch { expected: config.bauplan.name(), got: ck.kind.name() });
        }
        if ck.es.center.len() != dim {
            return Err(HarnessError::Config(format!(
                "checkpoint dimension {} does not match configuration {dim}",
                ck.es.center.len()
            )));
        }
        (ck.es, ck.obs_stats, ck.records, ck.drift)
    } else {
        (
            EsState::init(dim, config.warm_start.clone(), config.freeze_mask.clone(), master_seed),
            ObsStats::new(shape.n_inputs),
            Vec::new(),
            DriftSampler::new(config.drift_interval, n_morph),
        )
    };

    let save = |es: &EsState, obs: &ObsStats, records: &Vec<GenerationRecord>, drift: &DriftSampler| -> Result<(), HarnessError> {
        Checkpoint {
            kind: config.bauplan,
            condition: config.condition,
            n_morph,
            es: es.clone(),
            obs_stats: obs.clone(),
            posteval_episodes: config.posteval_episodes,
            records: records.clone(),
            drift: drift.clone(),
        }
        .save(&ck_path)
    };

    while es.cumulative_env_steps < config.budget {
        let batch = es.ask(&config.es)?;
        let lambda = batch.n_candidates();
        let generation = es.generation;

        // parallel candidate evaluation; results land in candidate order so
        // worker count cannot affect anything downstream
        let evals: Vec<(EpisodeResult, ObsStats)> = (0..lambda)
            .into_par_iter()
            .map(|k| -> Result<(EpisodeResult, ObsStats), HarnessError> {
                let vector = batch.candidate(&es.center, config.es.sigma, k);
                let genotype = search_vector_to_genotype(&vector, template, config.condition)?;
                let seed = derive_seed(master_seed, generation, k as u64, STREAM_EVAL);
                Ok(run_episode(&genotype, template, &config.episode, seed, &obs_stats, false)?)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let fitness_batch = FitnessBatch {
            fitness: evals.iter().map(|(r, _)| r.fitness).collect(),
            env_steps: evals.iter().map(|(r, _)| r.steps_executed as u64).collect(),
        };
        es.tell(&batch, &fitness_batch, &config.es)?;
        for (_, delta) in &evals {
            obs_stats.merge(delta);
        }

        // post-evaluate the updated center with fresh seeds; statistics stay frozen
        let center_genotype = search_vector_to_genotype(&es.center, template, config.condition)?;
        let posteval: Vec<EpisodeResult> = (0..config.posteval_episodes)
            .into_par_iter()
            .map(|k| -> Result<EpisodeResult, HarnessError> {
                let seed = derive_seed(master_seed, es.generation, k as u64, STREAM_POSTEVAL);
                let (result, _) = run_episode(&center_genotype, template, &config.episode, seed, &obs_stats, false)?;
                Ok(result)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let episode_fitness: Vec<f64> = posteval.iter().map(|r| r.fitness).collect();
        let episode_progress: Vec<f64> = posteval.iter().map(|r| r.progress_total).collect();
        records.push(GenerationRecord {
            generation: es.generation,
            cumulative_env_steps: es.cumulative_env_steps,
            posteval_fitness: episode_fitness.iter().sum::<f64>() / episode_fitness.len().max(1) as f64,
            episode_fitness,
            episode_progress,
        });
        drift.observe(es.cumulative_env_steps, &es.center);

        if config.checkpoint_every > 0 && es.generation % config.checkpoint_every == 0 {
            save(&es, &obs_stats, &records, &drift)?;
        }
    }

    save(&es, &obs_stats, &records, &drift)?;
    records::write_records_csv(&records_path, &records)?;
    records::write_drift_csv(&drift_path, &drift.series())?;

    Ok(ReplicationOutcome {
        replication: rep,
        master_seed,
        records,
        drift: drift.series(),
        checkpoint_path: ck_path,
        records_path,
    })
}

/// Post-evaluate a checkpointed center for `episodes` fresh episodes, using
/// the bauplan's standard episode settings unless overridden.
pub fn posteval_checkpoint(
    ck_path: &Path,
    episode_config: Option<EpisodeConfig>,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeResult>, HarnessError> {
    let ck = Checkpoint::load(ck_path)?;
    let template = BauplanTemplate::get(ck.kind)?;
    let config = episode_config.unwrap_or_else(|| EpisodeConfig::for_bauplan(ck.kind));
    let genotype = search_vector_to_genotype(&ck.es.center, &template, ck.condition)?;
    (0..episodes)
        .map(|k| {
            let s = derive_seed(seed, k as u64, 0, STREAM_POSTEVAL);
            let (result, _) = run_episode(&genotype, &template, &config, s, &ck.obs_stats, false)?;
            Ok(result)
        })
        .collect()
}

/// One point of a learning curve aggregated across replications.
#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub env_steps: u64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Posteval fitness across replications at regular env-step boundaries:
/// each replication contributes its latest record at or before the
/// boundary; the mean carries a bootstrap confidence interval.
pub fn posteval_curve(
    out_dir: &Path,
    interval: u64,
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, HarnessError> {
    let config = read_manifest(out_dir)?;
    if interval == 0 {
        return Err(HarnessError::Config("curve interval must be positive".into()));
    }
    let mut tables = Vec::with_capacity(config.replications);
    for rep in 0..config.replications {
        tables.push(records::read_records_csv(&replication_dir(out_dir, rep).join("records.csv"))?);
    }
    let max_steps = tables
        .iter()
        .filter_map(|t| t.last().map(|r| r.cumulative_env_steps))
        .max()
        .unwrap_or(0);

    let mut points = Vec::new();
    let mut boundary = interval;
    while boundary <= max_steps {
        let samples: Vec<f64> = tables
            .iter()
            .filter_map(|t| {
                t.iter()
                    .take_while(|r| r.cumulative_env_steps <= boundary)
                    .last()
                    .map(|r| r.posteval_fitness)
            })
            .collect();
        if samples.len() >= 2 {
            let (lo, hi) = stats::bootstrap_ci(&samples, level, resamples, seed)?;
            points.push(CurvePoint {
                env_steps: boundary,
                mean: samples.iter().sum::<f64>() / samples.len() as f64,
                ci_low: lo,
                ci_high: hi,
                n: samples.len(),
            });
        }
        boundary += interval;
    }
    Ok(points)
}

/// Named sample group for the statistics report (one value per replication).
#[derive(Debug, Clone, Serialize)]
pub struct ConditionSamples {
    pub label: String,
    pub samples: Vec<f64>,
}

/// Final post-evaluation fitness of every replication in a run directory.
pub fn collect_final_posteval(out_dir: &Path) -> Result<ConditionSamples, HarnessError> {
    let config = read_manifest(out_dir)?;
    let mut samples = Vec::with_capacity(config.replications);
    for rep in 0..config.replications {
        let path = replication_dir(out_dir, rep).join("records.csv");
        let records = records::read_records_csv(&path)?;
        let last = records
            .last()
            .ok_or_else(|| HarnessError::Format(format!("{}: no generations recorded", path.display())))?;
        samples.push(last.posteval_fitness);
    }
    Ok(ConditionSamples {
        label: format!("{}/{}", config.bauplan.name(), config.condition.name()),
        samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub u: f64,
    pub p: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Pairwise Mann–Whitney U tests with Bonferroni adjustment plus a
/// bootstrap confidence interval per group.
#[derive(Debug, Clone, Serialize)]
pub struct StatReport {
    pub groups: Vec<GroupSummary>,
    pub pairwise: Vec<PairwiseTest>,
    pub ci_level: f64,
}

pub fn stat_report(groups: &[ConditionSamples], ci_level: f64, resamples: usize, seed: u64) -> Result<StatReport, HarnessError> {
    let mut summaries = Vec::with_capacity(groups.len());
    for g in groups {
        let (lo, hi) = stats::bootstrap_ci(&g.samples, ci_level, resamples, seed)?;
        summaries.push(GroupSummary {
            label: g.label.clone(),
            n: g.samples.len(),
            mean: g.samples.iter().sum::<f64>() / g.samples.len().max(1) as f64,
            ci_low: lo,
            ci_high: hi,
        });
    }
    let mut pairwise = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (u, p) = stats::mann_whitney_u(&groups[i].samples, &groups[j].samples)?;
            pairwise.push(PairwiseTest {
                a: groups[i].label.clone(),
                b: groups[j].label.clone(),
                u,
                p,
                p_adjusted: 0.0,
            });
        }
    }
    let adjusted = stats::bonferroni(&pairwise.iter().map(|t| t.p).collect::<Vec<_>>());
    for (t, adj) in pairwise.iter_mut().zip(adjusted) {
        t.p_adjusted = adj;
    }
    Ok(StatReport { groups: summaries, pairwise, ci_level })
}

#[cfg(test)]
mod tests;
