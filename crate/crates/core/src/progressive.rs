//! Progressive search-space refinement around promising ranks, and weight
//! inheritance through a directory-backed checkpoint store.
//!
//! Phase 1 samples every rank element at equal intervals `b_1` above
//! `R_min`. After each evolutionary phase the element-wise floor-mean of the
//! top-k individuals becomes the centre of the next space,
//! `{R̂ − s_j + m·b_j : m = 1..n}`, clamped into `[R_min, R_max]`. The schedule
//! ends with interval 1.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{
    loss_compare, rank_population, run_evolution, top_k, EvalRecord, Evaluator, GAConfig,
    Individual, Mode, Objectives, PhaseContext,
};
use crate::tensor::Shape;
use crate::tr_format::{RankVector, TensorRingFormat, TrfMeta};
use crate::tr_models::{
    evaluate, train, RegressionData, TrLinearModel, TrLinearStack, TrainConfig, TrainReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankBounds {
    pub min: usize,
    pub max: usize,
}

impl RankBounds {
    pub fn new(min: usize, max: usize) -> Result<Self> {
        if min == 0 || min > max {
            return Err(Error::Config(format!(
                "rank bounds must satisfy 1 <= min <= max, got [{min}, {max}]"
            )));
        }
        Ok(RankBounds { min, max })
    }

    fn clamp(&self, v: i64) -> usize {
        v.clamp(self.min as i64, self.max as i64) as usize
    }

    pub fn width(&self) -> usize {
        self.max - self.min
    }
}

/// Per-element candidate sets, each strictly increasing inside the bounds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    candidates: Vec<Vec<usize>>,
    bounds: RankBounds,
}

impl SearchSpace {
    pub fn new(candidates: Vec<Vec<usize>>, bounds: RankBounds) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config("search space has no elements".into()));
        }
        for (i, c) in candidates.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::Config(format!("element {i} has no candidates")));
            }
            if c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "candidates of element {i} are not strictly increasing: {c:?}"
                )));
            }
            if c[0] < bounds.min || c[c.len() - 1] > bounds.max {
                return Err(Error::Config(format!(
                    "candidates of element {i} leave [{}, {}]: {c:?}",
                    bounds.min, bounds.max
                )));
            }
        }
        Ok(SearchSpace { candidates, bounds })
    }

    /// Every integer in the bounds for each of `d` elements.
    pub fn full(d: usize, bounds: RankBounds) -> Result<Self> {
        Self::new(vec![(bounds.min..=bounds.max).collect(); d], bounds)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self, element: usize) -> &[usize] {
        &self.candidates[element]
    }

    pub fn all_candidates(&self) -> &[Vec<usize>] {
        &self.candidates
    }

    pub fn bounds(&self) -> RankBounds {
        self.bounds
    }

    pub fn contains(&self, genome: &[usize]) -> bool {
        genome.len() == self.candidates.len()
            && genome
                .iter()
                .zip(&self.candidates)
                .all(|(g, c)| c.binary_search(g).is_ok())
    }

    /// Number of genomes, `Π n_i`.
    pub fn size(&self) -> u128 {
        self.candidates.iter().map(|c| c.len() as u128).product()
    }

    /// Every genome in lexicographic order.
    pub fn enumerate(&self) -> Vec<RankVector> {
        let mut out = vec![Vec::new()];
        for c in &self.candidates {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    c.iter().map(move |&v| {
                        let mut g = prefix.clone();
                        g.push(v);
                        g
                    })
                })
                .collect();
        }
        out.into_iter()
            .map(|g| RankVector::new(g).expect("candidates are positive"))
            .collect()
    }
}

fn dedup_candidates(mut values: Vec<usize>, element: usize) -> Result<Vec<usize>> {
    values.sort_unstable();
    values.dedup();
    if values.is_empty() {
        return Err(Error::Config(format!("element {element} has no candidates")));
    }
    Ok(values)
}

/// `{R_min + b_1, …, R_min + n·b_1}` clamped into the bounds, for each of
/// `d` elements.
pub fn init_space(d: usize, bounds: RankBounds, interval: usize, n: usize) -> Result<SearchSpace> {
    if n < 2 || interval == 0 {
        return Err(Error::Config(format!(
            "initial sampling needs n >= 2 and interval >= 1 (n = {n}, interval = {interval})"
        )));
    }
    if bounds.min + n * interval > bounds.max + interval {
        return Err(Error::Config(format!(
            "R_min + n·b_1 = {} exceeds R_max + b_1 = {}",
            bounds.min + n * interval,
            bounds.max + interval
        )));
    }
    let values: Vec<usize> = (1..=n)
        .map(|m| bounds.clamp((bounds.min + m * interval) as i64))
        .collect();
    let set = dedup_candidates(values, 0)?;
    SearchSpace::new(vec![set; d], bounds)
}

/// Element-wise floor of the mean genome.
pub fn promising_rank(top: &[Individual]) -> Result<RankVector> {
    let first = top
        .first()
        .ok_or_else(|| Error::Argument("promising rank of an empty set".into()))?;
    let d = first.genome.len();
    if top.iter().any(|i| i.genome.len() != d) {
        return Err(Error::Argument("genomes differ in length".into()));
    }
    let k = top.len();
    let means: Vec<usize> = (0..d)
        .map(|e| top.iter().map(|i| i.genome.as_slice()[e]).sum::<usize>() / k)
        .collect();
    RankVector::new(means)
}

/// `{R̂_i − s + m·b : m = 1..n}` for each element, clamped and deduplicated.
pub fn next_space(
    promising: &RankVector,
    offset: usize,
    interval: usize,
    n: usize,
    bounds: RankBounds,
) -> Result<SearchSpace> {
    if n == 0 || interval == 0 {
        return Err(Error::Config("next space needs n >= 1 and interval >= 1".into()));
    }
    let candidates = promising
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &centre)| {
            let values = (1..=n)
                .map(|m| bounds.clamp(centre as i64 - offset as i64 + (m * interval) as i64))
                .collect();
            dedup_candidates(values, i)
        })
        .collect::<Result<Vec<_>>>()?;
    SearchSpace::new(candidates, bounds)
}

/// Draws a genome uniformly from `space`, or, with probability
/// `explore_prob` and only when a previous space exists, from `previous`
/// (reported as explored).
pub fn sample_genome<R: Rng + ?Sized>(
    space: &SearchSpace,
    previous: Option<&SearchSpace>,
    explore_prob: f64,
    rng: &mut R,
) -> (RankVector, bool) {
    let (source, explored) = match previous {
        Some(prev) if explore_prob > 0.0 && rng.random_bool(explore_prob.min(1.0)) => (prev, true),
        _ => (space, false),
    };
    let genes: Vec<usize> = source
        .all_candidates()
        .iter()
        .map(|c| *c.choose(rng).expect("non-empty candidates"))
        .collect();
    (RankVector::new(genes).expect("positive candidates"), explored)
}

/// Deterministic per-genome seed, so every evaluation of a genome (search or
/// enumeration) sees the same initialisation and batch order.
pub fn genome_seed(base: u64, genome: &[usize]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    genome
        .iter()
        .fold(mix(base), |acc, &g| mix(acc ^ g as u64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub phases: usize,
    /// `b_1 … b_P`, non-increasing and ending at 1.
    pub intervals: Vec<usize>,
    /// `s_2 … s_P`; `None` means `s_j = b_{j-1}`.
    pub offsets: Option<Vec<usize>>,
    /// Candidates per element, `n`.
    pub candidates_per_element: usize,
    pub ga: GAConfig,
    pub top_k: usize,
    pub explore_prob: f64,
    /// Record wall-clock seconds per evaluation. Not part of the persisted
    /// configuration.
    #[serde(skip)]
    pub record_timing: bool,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            phases: 3,
            intervals: vec![4, 2, 1],
            offsets: None,
            candidates_per_element: 3,
            ga: GAConfig::default(),
            top_k: 5,
            explore_prob: 0.1,
            record_timing: false,
        }
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phases == 0 {
            return Err(Error::Config("at least one phase is required".into()));
        }
        if self.intervals.len() != self.phases {
            return Err(Error::Config(format!(
                "{} intervals for {} phases",
                self.intervals.len(),
                self.phases
            )));
        }
        if self.intervals.windows(2).any(|w| w[1] > w[0]) || self.intervals.contains(&0) {
            return Err(Error::Config(format!(
                "intervals must be positive and non-increasing: {:?}",
                self.intervals
            )));
        }
        if self.intervals.last() != Some(&1) {
            return Err(Error::Config("the final interval must be 1".into()));
        }
        if let Some(off) = &self.offsets {
            if off.len() + 1 != self.phases {
                return Err(Error::Config(format!(
                    "{} offsets for {} phases (expected phases - 1)",
                    off.len(),
                    self.phases
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.explore_prob) {
            return Err(Error::Config("explore_prob must lie in [0, 1]".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        self.ga.validate()
    }

    /// `s_j` for 1-based phase `j >= 2`.
    pub fn offset(&self, phase: usize) -> usize {
        match &self.offsets {
            Some(off) => off[phase - 2],
            None => self.intervals[phase - 2],
        }
    }
}

/// A rank-search problem: evaluation plus an optional per-phase hook.
pub trait RankProblem: Evaluator {
    fn genome_len(&self) -> usize;

    /// Called at the start of every phase with that phase's space.
    fn prepare_phase(&self, _space: &SearchSpace) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: usize,
    pub space: Vec<Vec<usize>>,
    pub promising_rank: RankVector,
    pub best_genome: RankVector,
    #[serde(with = "crate::evolve::loss_serde")]
    pub best_loss: f64,
    pub best_params: u64,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct PstrnResult {
    pub phases: Vec<PhaseSummary>,
    /// Final front 0 (multi-objective) or the loss-sorted final population.
    pub best: Vec<Individual>,
    /// Lowest-loss evaluation of the whole run.
    pub best_overall: EvalRecord,
    pub log: Vec<EvalRecord>,
    pub requested: usize,
}

fn phase_seed(base: u64, phase: usize) -> u64 {
    genome_seed(base, &[phase])
}

pub fn best_record(log: &[EvalRecord]) -> Option<&EvalRecord> {
    log.iter().min_by(|a, b| {
        a.loss
            .total_cmp(&b.loss)
            .then(a.params.cmp(&b.params))
            .then_with(|| a.genome.cmp(&b.genome))
    })
}

/// The full progressive search: one evolutionary phase per interval, each
/// followed by a shrink around the promising rank.
pub fn run_pstrn(
    cfg: &PhaseConfig,
    bounds: RankBounds,
    problem: &dyn RankProblem,
) -> Result<PstrnResult> {
    cfg.validate()?;
    let d = problem.genome_len();
    let mut space = init_space(d, bounds, cfg.intervals[0], cfg.candidates_per_element)?;
    let mut previous: Option<SearchSpace> = None;
    let mut summaries = Vec::with_capacity(cfg.phases);
    let mut log = Vec::new();
    let mut requested = 0;
    let mut last_population = Vec::new();

    for phase in 1..=cfg.phases {
        problem.prepare_phase(&space)?;
        let ga = GAConfig {
            seed: phase_seed(cfg.ga.seed, phase),
            ..cfg.ga.clone()
        };
        let ctx = PhaseContext {
            phase,
            space: &space,
            previous: previous.as_ref(),
            explore_prob: cfg.explore_prob,
            record_timing: cfg.record_timing,
        };
        let outcome = run_evolution(&ctx, problem, &ga)?;
        if outcome.log.iter().all(|r| !r.loss.is_finite()) {
            return Err(Error::State(format!(
                "phase {phase} produced no successful evaluation ({} attempted)",
                outcome.log.len()
            )));
        }
        let top = top_k(&outcome.population, cfg.top_k, ga.mode)?;
        let promising = promising_rank(&top)?;
        let best = outcome
            .population
            .iter()
            .min_by(|a, b| loss_compare(a, b))
            .expect("non-empty population");
        let obj = best.objectives.expect("evaluated");
        summaries.push(PhaseSummary {
            phase,
            space: space.all_candidates().to_vec(),
            promising_rank: promising.clone(),
            best_genome: best.genome.clone(),
            best_loss: obj.loss,
            best_params: obj.params,
            evaluations: outcome.log.len(),
        });
        requested += outcome.requested;
        log.extend(outcome.log);
        last_population = outcome.population;

        if phase < cfg.phases {
            let next = next_space(
                &promising,
                cfg.offset(phase + 1),
                cfg.intervals[phase],
                cfg.candidates_per_element,
                bounds,
            )?;
            previous = Some(std::mem::replace(&mut space, next));
        }
    }

    let best = match cfg.ga.mode {
        Mode::MultiObjective => {
            rank_population(&mut last_population)?;
            let mut front: Vec<Individual> = last_population
                .into_iter()
                .filter(|i| i.front == Some(0))
                .collect();
            front.sort_by(loss_compare);
            front
        }
        Mode::SingleObjective => {
            last_population.sort_by(loss_compare);
            last_population
        }
    };
    let best_overall = best_record(&log).expect("non-empty log").clone();
    Ok(PstrnResult {
        phases: summaries,
        best,
        best_overall,
        log,
        requested,
    })
}

/// Input/output factorisation of one TR-linear layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub in_factors: Shape,
    pub out_factors: Shape,
}

impl LayerSpec {
    pub fn order(&self) -> usize {
        self.in_factors.ndim() + self.out_factors.ndim()
    }

    pub fn mode_dims(&self) -> Shape {
        Shape::new([self.in_factors.dims(), self.out_factors.dims()].concat())
            .expect("valid factors")
    }

    pub fn build(&self, ranks: &RankVector, seed: u64) -> Result<TrLinearModel> {
        TrLinearModel::new(&self.in_factors, &self.out_factors, ranks, seed)
    }
}

/// Builds a stack with every layer at uniform rank `values[k]`.
pub fn uniform_stack(layers: &[LayerSpec], values: &[usize], seed: u64) -> Result<TrLinearStack> {
    if layers.len() != values.len() {
        return Err(Error::Argument(format!(
            "{} uniform ranks for {} layers",
            values.len(),
            layers.len()
        )));
    }
    let built = layers
        .iter()
        .zip(values)
        .enumerate()
        .map(|(k, (spec, &v))| {
            spec.build(
                &RankVector::uniform(v, spec.order())?,
                genome_seed(seed, &[k, v]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    TrLinearStack::new(built)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub layer_id: usize,
    pub rank: usize,
    pub trf: TrfMeta,
    pub train_epochs: usize,
}

/// Directory-backed map `(layer, V) → trained cores`, stored as
/// `layer_<id>/V_<k>/{meta.json, cores.bin}`.
#[derive(Clone, Debug)]
pub struct CheckpointStore {
    root: PathBuf,
}

impl CheckpointStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(CheckpointStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_dir(&self, layer: usize, rank: usize) -> PathBuf {
        self.root.join(format!("layer_{layer}")).join(format!("V_{rank}"))
    }

    pub fn contains(&self, layer: usize, rank: usize) -> bool {
        let dir = self.entry_dir(layer, rank);
        dir.join("meta.json").is_file() && dir.join("cores.bin").is_file()
    }

    /// Writes into a scratch directory and renames it into place.
    pub fn save(
        &self,
        layer: usize,
        trf: &TensorRingFormat,
        seed: u64,
        train_epochs: usize,
    ) -> Result<()> {
        let rank = trf.ranks().uniform_value().ok_or_else(|| {
            Error::Argument(format!(
                "checkpoint ranks must be uniform, got {}",
                trf.ranks()
            ))
        })?;
        let layer_dir = self.root.join(format!("layer_{layer}"));
        fs::create_dir_all(&layer_dir).map_err(|e| Error::io(&layer_dir, e))?;
        let scratch = tempfile::Builder::new()
            .prefix(&format!(".V_{rank}-"))
            .tempdir_in(&layer_dir)
            .map_err(|e| Error::io(&layer_dir, e))?;
        let meta = CheckpointMeta {
            layer_id: layer,
            rank,
            trf: TrfMeta {
                mode_dims: trf.mode_dims().dims().to_vec(),
                ranks: trf.ranks().as_slice().to_vec(),
                seed,
            },
            train_epochs,
        };
        let meta_path = scratch.path().join("meta.json");
        let json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
        let cores_path = scratch.path().join("cores.bin");
        fs::write(&cores_path, trf.core_bytes()).map_err(|e| Error::io(&cores_path, e))?;
        let target = self.entry_dir(layer, rank);
        let scratch = scratch.keep();
        if let Err(e) = fs::rename(&scratch, &target) {
            let _ = fs::remove_dir_all(&scratch);
            if !self.contains(layer, rank) {
                return Err(Error::io(&target, e));
            }
        }
        Ok(())
    }

    /// `Ok(None)` when the entry is absent.
    pub fn load(&self, layer: usize, rank: usize) -> Result<Option<(CheckpointMeta, TensorRingFormat)>> {
        if !self.contains(layer, rank) {
            return Ok(None);
        }
        let dir = self.entry_dir(layer, rank);
        let meta_path = dir.join("meta.json");
        let raw = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&raw).map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
        if meta.layer_id != layer || meta.rank != rank || meta.trf.ranks.iter().any(|&r| r != rank) {
            return Err(Error::Format(format!(
                "{} does not describe layer {layer} at uniform rank {rank}",
                meta_path.display()
            )));
        }
        let cores_path = dir.join("cores.bin");
        let bytes = fs::read(&cores_path).map_err(|e| Error::io(&cores_path, e))?;
        let trf = TensorRingFormat::from_bytes(&meta.trf, &bytes)?;
        Ok(Some((meta, trf)))
    }
}

/// Trains a uniform-rank stack for every value `V` that some layer lists as
/// a candidate and whose `(layer, V)` entry is missing, then stores each
/// such layer. Returns the number of trainings performed.
pub fn warm_up<D: RegressionData + Sync + ?Sized>(
    layers: &[LayerSpec],
    candidate_values: &[Vec<usize>],
    data: &D,
    cfg: &TrainConfig,
    seed: u64,
    store: &CheckpointStore,
) -> Result<usize> {
    if candidate_values.len() != layers.len() {
        return Err(Error::Argument(format!(
            "{} candidate sets for {} layers",
            candidate_values.len(),
            layers.len()
        )));
    }
    let mut values: Vec<usize> = candidate_values.iter().flatten().copied().collect();
    values.sort_unstable();
    values.dedup();
    let jobs: Vec<(usize, Vec<usize>)> = values
        .into_iter()
        .filter_map(|v| {
            let missing: Vec<usize> = (0..layers.len())
                .filter(|&k| candidate_values[k].contains(&v) && !store.contains(k, v))
                .collect();
            (!missing.is_empty()).then_some((v, missing))
        })
        .collect();
    jobs.par_iter().try_for_each(|(v, missing)| -> Result<()> {
        let uniform = vec![*v; layers.len()];
        let run_seed = genome_seed(seed, &uniform);
        let stack = uniform_stack(layers, &uniform, run_seed)?;
        let (trained, _) = train(
            &stack,
            data,
            &TrainConfig {
                seed: run_seed,
                ..cfg.clone()
            },
        )?;
        for &k in missing {
            store.save(k, trained.layers()[k].trf(), run_seed, cfg.epochs)?;
        }
        Ok(())
    })?;
    Ok(jobs.len())
}

/// Replaces the cores of every layer whose `(layer, V_k)` entry exists.
/// Unreadable entries count as misses.
pub fn inherit_weights(
    stack: &TrLinearStack,
    store: &CheckpointStore,
) -> Result<(TrLinearStack, Vec<bool>)> {
    let mut out = stack.clone();
    let mut flags = Vec::with_capacity(stack.layers().len());
    for (k, layer) in out.layers_mut().iter_mut().enumerate() {
        let Some(v) = layer.trf().ranks().uniform_value() else {
            flags.push(false);
            continue;
        };
        let inherited = match store.load(k, v) {
            Ok(Some((_, trf))) if trf.mode_dims() == layer.trf().mode_dims() => {
                layer.trf_mut().set_cores(trf.cores().to_vec())?;
                true
            }
            Ok(Some(_)) => {
                warn!("checkpoint layer {k} V {v} has mismatched mode dims; ignoring");
                false
            }
            Ok(None) => false,
            Err(e) => {
                warn!("unreadable checkpoint for layer {k} V {v}: {e}");
                false
            }
        };
        flags.push(inherited);
    }
    Ok((out, flags))
}

/// Rank search over one TR-linear layer; each genome is trained from
/// scratch with seeds derived from the genome.
pub struct SyntheticRingProblem<'a, D: ?Sized> {
    pub data: &'a D,
    pub layer: LayerSpec,
    pub train: TrainConfig,
    pub seed: u64,
}

impl<D: RegressionData + Sync + ?Sized> SyntheticRingProblem<'_, D> {
    pub fn train_genome(&self, genome: &RankVector) -> Result<(TrLinearModel, TrainReport)> {
        let run_seed = genome_seed(self.seed, genome.as_slice());
        let model = self.layer.build(genome, run_seed)?;
        train(
            &model,
            self.data,
            &TrainConfig {
                seed: run_seed,
                ..self.train.clone()
            },
        )
    }
}

impl<D: RegressionData + Sync + ?Sized> Evaluator for SyntheticRingProblem<'_, D> {
    fn evaluate(&self, genome: &RankVector) -> Result<Objectives> {
        let params = crate::tr_format::param_count(&self.layer.mode_dims(), genome)?;
        match self.train_genome(genome) {
            Ok((_, report)) => Ok(Objectives::new(report.final_test_mse, params)),
            Err(Error::Divergence { .. }) => Ok(Objectives::diverged(params)),
            Err(e) => Err(e),
        }
    }
}

impl<D: RegressionData + Sync + ?Sized> RankProblem for SyntheticRingProblem<'_, D> {
    fn genome_len(&self) -> usize {
        self.layer.order()
    }
}

/// Rank search over a stack of TR-linear layers with one uniform rank per
/// layer. Each phase warms up checkpoints for its candidate values, and each
/// genome inherits them and is only fine-tuned.
pub struct InheritedStackProblem<'a, D: ?Sized> {
    pub data: &'a D,
    pub layers: Vec<LayerSpec>,
    pub store: &'a CheckpointStore,
    pub warmup: TrainConfig,
    pub finetune: TrainConfig,
    pub seed: u64,
}

impl<D: RegressionData + Sync + ?Sized> InheritedStackProblem<'_, D> {
    /// Inherited-and-fine-tuned model, the inheritance flags, and the report.
    pub fn fine_tune(&self, genome: &RankVector) -> Result<(TrLinearStack, Vec<bool>, TrainReport)> {
        let run_seed = genome_seed(self.seed, genome.as_slice());
        let fresh = uniform_stack(&self.layers, genome.as_slice(), run_seed)?;
        let (inherited, flags) = inherit_weights(&fresh, self.store)?;
        let (tuned, report) = train(
            &inherited,
            self.data,
            &TrainConfig {
                seed: run_seed,
                ..self.finetune.clone()
            },
        )?;
        Ok((tuned, flags, report))
    }

    pub fn epochs_per_evaluation(&self) -> usize {
        self.finetune.epochs
    }
}

impl<D: RegressionData + Sync + ?Sized> Evaluator for InheritedStackProblem<'_, D> {
    fn evaluate(&self, genome: &RankVector) -> Result<Objectives> {
        let params = self
            .layers
            .iter()
            .zip(genome.as_slice())
            .map(|(l, &v)| crate::tr_format::param_count(&l.mode_dims(), &RankVector::uniform(v, l.order())?))
            .sum::<Result<u64>>()?;
        match self.fine_tune(genome) {
            Ok((model, _, _)) => Ok(Objectives::new(evaluate(&model, self.data)?, params)),
            Err(Error::Divergence { .. }) => Ok(Objectives::diverged(params)),
            Err(e) => Err(e),
        }
    }
}

impl<D: RegressionData + Sync + ?Sized> RankProblem for InheritedStackProblem<'_, D> {
    fn genome_len(&self) -> usize {
        self.layers.len()
    }

    fn prepare_phase(&self, space: &SearchSpace) -> Result<()> {
        warm_up(
            &self.layers,
            space.all_candidates(),
            self.data,
            &self.warmup,
            self.seed,
            self.store,
        )
        .map(|_| ())
    }
}
