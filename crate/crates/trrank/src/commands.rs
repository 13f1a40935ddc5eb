//! The subcommands, as library functions so that tests can drive them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use trrank_core::evolve::{
    run_evolution, EvalRecord, Evaluator, GAConfig, Mode, Objectives, PhaseContext,
};
use trrank_core::progressive::{
    best_record, run_pstrn, CheckpointStore, InheritedStackProblem, PstrnResult,
    RankProblem, SyntheticRingProblem,
};
use trrank_core::tr_models::{gen_synthetic_with, SyntheticConfig, SyntheticDataset};
use trrank_core::{Error, RankVector, Result};

use crate::analysis::{analyze, observed_range, write_cooccurrence_csv, AnalysisReport};
use crate::config::{Manifest, RunConfig};
use crate::records::{read_jsonl, sorted, write_json, write_jsonl, RankTable};

pub const ENUMERATION_FILE: &str = "enumeration.jsonl";
pub const RANKING_FILE: &str = "ranking.jsonl";
pub const EVALUATIONS_FILE: &str = "evaluations.jsonl";
pub const PHASES_FILE: &str = "phases.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ABLATION_FILE: &str = "ablation.jsonl";

/// 0 on success, 2 for configuration problems, 3 for aborted runs.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Argument(_)
        | Error::Shape(_)
        | Error::Bounds { .. }
        | Error::Overflow(_)
        | Error::Format(_) => 2,
        Error::Divergence { .. } | Error::State(_) | Error::Io { .. } => 3,
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })
}

pub fn dataset(cfg: &RunConfig) -> Result<SyntheticDataset> {
    gen_synthetic_with(&cfg.dataset)
}

pub fn cmd_synthetic_data(seed: u64, true_rank: usize, out: &Path) -> Result<SyntheticDataset> {
    let data = gen_synthetic_with(&SyntheticConfig {
        seed,
        true_rank,
        ..SyntheticConfig::default()
    })?;
    data.dump(out)?;
    Ok(data)
}

#[derive(Clone, Debug)]
pub struct EnumerationOutcome {
    /// One record per genome in lexicographic genome order.
    pub records: Vec<EvalRecord>,
    pub wall_clock_s: f64,
    pub training_seconds: Vec<f64>,
}

/// Trains every genome of the enumeration space once.
pub fn run_enumeration(cfg: &RunConfig, data: &SyntheticDataset) -> Result<EnumerationOutcome> {
    let space = cfg.enumeration_space()?;
    let size = space.size();
    if size > cfg.enumeration.cap as u128 {
        return Err(Error::Config(format!(
            "enumeration needs {size} trainings, above the cap of {}",
            cfg.enumeration.cap
        )));
    }
    let problem = SyntheticRingProblem {
        data,
        layer: cfg.model.layer()?,
        train: cfg.train.clone(),
        seed: cfg.training_seed,
    };
    let genomes = space.enumerate();
    info!("enumerating {} genomes", genomes.len());
    let start = Instant::now();
    let results: Vec<(Objectives, f64)> = with_threads(cfg.threads, || {
        genomes
            .par_iter()
            .map(|g| {
                let t = Instant::now();
                let obj = problem.evaluate(g)?;
                Ok((obj, t.elapsed().as_secs_f64()))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let wall_clock_s = start.elapsed().as_secs_f64();
    let records = genomes
        .into_iter()
        .zip(&results)
        .map(|(genome, (obj, secs))| EvalRecord {
            phase: 0,
            generation: 0,
            genome,
            loss: obj.loss,
            params: obj.params,
            seconds: cfg.record_wall_clock.then_some(*secs),
        })
        .collect();
    Ok(EnumerationOutcome {
        records,
        wall_clock_s,
        training_seconds: results.into_iter().map(|r| r.1).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedRecord {
    pub rank: usize,
    pub genome: RankVector,
    #[serde(with = "trrank_core::evolve::loss_serde")]
    pub loss: f64,
    pub params: u64,
}

pub fn cmd_enumerate(cfg: &RunConfig, out: &Path) -> Result<EnumerationOutcome> {
    cfg.validate()?;
    prepare_out(out)?;
    write_json(&out.join(MANIFEST_FILE), &Manifest::new("enumerate", false, cfg))?;
    let data = dataset(cfg)?;
    let outcome = run_enumeration(cfg, &data)?;
    write_jsonl(&out.join(ENUMERATION_FILE), &outcome.records)?;
    let ranking: Vec<RankedRecord> = sorted(&outcome.records)
        .into_iter()
        .enumerate()
        .map(|(i, r)| RankedRecord {
            rank: i + 1,
            genome: r.genome,
            loss: r.loss,
            params: r.params,
        })
        .collect();
    write_jsonl(&out.join(RANKING_FILE), &ranking)?;
    info!(
        "enumerated {} genomes in {:.1}s",
        outcome.records.len(),
        outcome.wall_clock_s
    );
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenomeScore {
    pub genome: RankVector,
    #[serde(with = "trrank_core::evolve::loss_serde")]
    pub loss: f64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub mode: Mode,
    pub inheritance: bool,
    pub evaluations: usize,
    pub requested: usize,
    pub best_overall: GenomeScore,
    /// Final Pareto front (multi-objective) or the loss-sorted final
    /// population (single-objective).
    pub best: Vec<GenomeScore>,
    pub best_per_phase: Vec<GenomeScore>,
}

fn summarize(result: &PstrnResult, mode: Mode, inheritance: bool) -> SearchSummary {
    let score = |g: &RankVector, o: Objectives| GenomeScore {
        genome: g.clone(),
        loss: o.loss,
        params: o.params,
    };
    SearchSummary {
        mode,
        inheritance,
        evaluations: result.log.len(),
        requested: result.requested,
        best_overall: score(
            &result.best_overall.genome,
            Objectives::new(result.best_overall.loss, result.best_overall.params),
        ),
        best: result
            .best
            .iter()
            .map(|i| score(&i.genome, i.objectives.expect("evaluated")))
            .collect(),
        best_per_phase: result
            .phases
            .iter()
            .map(|p| score(&p.best_genome, Objectives::new(p.best_loss, p.best_params)))
            .collect(),
    }
}

/// Runs the progressive search with `problem`, then writes the outputs.
fn search_with(
    cfg: &RunConfig,
    out: &Path,
    problem: &dyn RankProblem,
    inheritance: bool,
) -> Result<(PstrnResult, SearchSummary)> {
    let phase_cfg = trrank_core::progressive::PhaseConfig {
        record_timing: cfg.record_wall_clock,
        ..cfg.search.clone()
    };
    let result = with_threads(cfg.threads, || run_pstrn(&phase_cfg, cfg.bounds, problem))?;
    write_jsonl(&out.join(EVALUATIONS_FILE), &result.log)?;
    write_jsonl(&out.join(PHASES_FILE), &result.phases)?;
    let summary = summarize(&result, cfg.search.ga.mode, inheritance);
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok((result, summary))
}

/// Progressive search over one TR-linear layer, or, when `checkpoints` is
/// given, over a stack of layers with weight inheritance.
pub fn cmd_search(
    cfg: &RunConfig,
    out: &Path,
    checkpoints: Option<&Path>,
) -> Result<(PstrnResult, SearchSummary)> {
    cfg.validate()?;
    prepare_out(out)?;
    write_json(
        &out.join(MANIFEST_FILE),
        &Manifest::new("search", checkpoints.is_some(), cfg),
    )?;
    let data = dataset(cfg)?;
    match checkpoints {
        None => {
            let problem = SyntheticRingProblem {
                data: &data,
                layer: cfg.model.layer()?,
                train: cfg.train.clone(),
                seed: cfg.training_seed,
            };
            search_with(cfg, out, &problem, false)
        }
        Some(dir) => {
            let store = CheckpointStore::open(dir)?;
            let inh = &cfg.inheritance;
            let problem = InheritedStackProblem {
                data: &data,
                layers: vec![cfg.model.layer()?; inh.layers],
                store: &store,
                warmup: cfg.training_for(inh.warmup_epochs),
                finetune: cfg.training_for(inh.finetune_epochs),
                seed: cfg.training_seed,
            };
            search_with(cfg, out, &problem, true)
        }
    }
}

/// `out` defaults to the directory holding `results`.
pub fn cmd_analyze(
    results: &Path,
    top: usize,
    range: Option<(usize, usize)>,
    out: Option<&Path>,
) -> Result<AnalysisReport> {
    let records: Vec<EvalRecord> = read_jsonl(results)?;
    let range = match range {
        Some(r) => r,
        None => observed_range(&records)?,
    };
    let report = analyze(&records, top, range)?;
    let dir: PathBuf = match out {
        Some(o) => o.to_path_buf(),
        None => results.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    prepare_out(&dir)?;
    write_json(&dir.join(format!("analysis_top{top}.json")), &report)?;
    write_cooccurrence_csv(&dir.join(format!("cooccurrence_top{top}.csv")), &report.cooccurrence)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pstrn,
    Nsga2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub method: Method,
    /// 1-based phase, or the matching block of generations for NSGA-II.
    pub checkpoint: usize,
    /// Generations consumed so far.
    pub generation: usize,
    /// Fresh evaluations so far.
    pub evaluations: usize,
    pub best_genome: RankVector,
    #[serde(with = "trrank_core::evolve::loss_serde")]
    pub best_loss: f64,
    pub rank_of: usize,
}

/// A search problem answered from enumeration results.
pub struct TableProblem<'a> {
    pub table: &'a RankTable,
    pub genome_len: usize,
}

impl Evaluator for TableProblem<'_> {
    fn evaluate(&self, genome: &RankVector) -> Result<Objectives> {
        self.table.evaluate(genome)
    }
}

impl RankProblem for TableProblem<'_> {
    fn genome_len(&self) -> usize {
        self.genome_len
    }
}

fn checkpoint_row(
    seed: u64,
    method: Method,
    checkpoint: usize,
    generation: usize,
    seen: &[EvalRecord],
    table: &RankTable,
) -> Result<AblationRow> {
    let best = best_record(seen).ok_or_else(|| Error::State("no evaluations before checkpoint".into()))?;
    Ok(AblationRow {
        seed,
        method,
        checkpoint,
        generation,
        evaluations: seen.len(),
        best_genome: best.genome.clone(),
        best_loss: best.loss,
        rank_of: table.rank_of(&best.genome)?,
    })
}

/// PSTRN against plain NSGA-II with `P · G` generations over the full
/// candidate space, both scored by the enumeration. Returns `2 · P` rows per
/// seed.
pub fn run_ablation(cfg: &RunConfig, table: &RankTable) -> Result<Vec<AblationRow>> {
    let d = cfg.model.mode_dims.len();
    let phases = cfg.search.phases;
    let gens = cfg.search.ga.generations;
    let full = cfg.enumeration_space()?;
    let problem = TableProblem { table, genome_len: d };
    let mut rows = Vec::new();
    for &seed in &cfg.ablation.seeds {
        let ga = GAConfig {
            seed,
            ..cfg.search.ga.clone()
        };
        let phase_cfg = trrank_core::progressive::PhaseConfig {
            ga: ga.clone(),
            ..cfg.search.clone()
        };
        let pstrn = run_pstrn(&phase_cfg, cfg.bounds, &problem)?;
        for p in 1..=phases {
            let upto: Vec<EvalRecord> = pstrn.log.iter().filter(|r| r.phase <= p).cloned().collect();
            rows.push(checkpoint_row(seed, Method::Pstrn, p, p * gens, &upto, table)?);
        }
        let plain_cfg = GAConfig {
            generations: phases * gens,
            ..ga
        };
        let plain = run_evolution(&PhaseContext::plain(&full), &problem, &plain_cfg)?;
        for p in 1..=phases {
            let upto: Vec<EvalRecord> = plain
                .log
                .iter()
                .filter(|r| r.generation <= p * gens)
                .cloned()
                .collect();
            rows.push(checkpoint_row(seed, Method::Nsga2, p, p * gens, &upto, table)?);
        }
    }
    Ok(rows)
}

pub fn load_enumeration(dir: &Path) -> Result<Vec<EvalRecord>> {
    read_jsonl(&dir.join(ENUMERATION_FILE))
}

/// `out` defaults to `<enum_dir>/ablation`.
pub fn cmd_ablation(cfg: &RunConfig, enum_dir: &Path, out: Option<&Path>) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let records = load_enumeration(enum_dir)?;
    let table = RankTable::new(&records)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| enum_dir.join("ablation"));
    prepare_out(&dir)?;
    write_json(&dir.join(MANIFEST_FILE), &Manifest::new("ablation", false, cfg))?;
    let rows = with_threads(cfg.threads, || run_ablation(cfg, &table))?;
    write_jsonl(&dir.join(ABLATION_FILE), &rows)?;
    Ok(rows)
}
