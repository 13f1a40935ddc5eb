//! NSGA-II over rank-vector genomes.
//!
//! Objectives are `(loss, params)`, both minimised. The generational loop
//! combines parents and children and truncates by non-dominated front and
//! crowding distance; in single-objective mode the truncation is a plain sort
//! by `(loss, params, genome)`.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::progressive::{sample_genome, SearchSpace};
use crate::tr_format::RankVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    /// `+∞` marks a diverged evaluation.
    #[serde(with = "loss_serde")]
    pub loss: f64,
    pub params: u64,
}

impl Objectives {
    pub fn new(loss: f64, params: u64) -> Self {
        Objectives { loss, params }
    }

    pub fn diverged(params: u64) -> Self {
        Objectives {
            loss: f64::INFINITY,
            params,
        }
    }

    /// No worse in both objectives and strictly better in one.
    pub fn dominates(&self, other: &Objectives) -> bool {
        let no_worse = self.loss <= other.loss && self.params <= other.params;
        let better = self.loss < other.loss || self.params < other.params;
        no_worse && better
    }
}

/// JSON has no infinity; non-finite losses travel as `null`.
pub mod loss_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub phase: usize,
    pub generation: usize,
    pub explored: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genome: RankVector,
    pub objectives: Option<Objectives>,
    pub provenance: Provenance,
    pub front: Option<usize>,
    pub crowding: Option<f64>,
}

impl Individual {
    pub fn new(genome: RankVector, provenance: Provenance) -> Self {
        Individual {
            genome,
            objectives: None,
            provenance,
            front: None,
            crowding: None,
        }
    }

    pub fn evaluated(genome: RankVector, objectives: Objectives) -> Self {
        Individual {
            objectives: Some(objectives),
            ..Individual::new(genome, Provenance::default())
        }
    }

    fn objectives_or_err(&self) -> Result<&Objectives> {
        self.objectives
            .as_ref()
            .ok_or_else(|| Error::State(format!("individual {} is not evaluated", self.genome)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    MultiObjective,
    SingleObjective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GAConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    /// `None` means `1 / genome length`.
    pub mutation_prob_per_gene: Option<f64>,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for GAConfig {
    fn default() -> Self {
        GAConfig {
            pop_size: 20,
            generations: 10,
            crossover_prob: 0.9,
            mutation_prob_per_gene: None,
            mode: Mode::MultiObjective,
            seed: 233,
        }
    }
}

impl GAConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 4 || self.pop_size % 2 != 0 {
            return Err(Error::Config(format!(
                "pop_size must be even and at least 4, got {}",
                self.pop_size
            )));
        }
        if self.generations == 0 {
            return Err(Error::Config("generations must be at least 1".into()));
        }
        let probs = [Some(self.crossover_prob), self.mutation_prob_per_gene];
        if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn mutation_prob(&self, genome_len: usize) -> f64 {
        self.mutation_prob_per_gene
            .unwrap_or(1.0 / genome_len.max(1) as f64)
    }
}

/// Deb's fast non-dominated sort. Each front lists population indices in
/// ascending order.
pub fn fast_non_dominated_sort(pop: &[Individual]) -> Result<Vec<Vec<usize>>> {
    let objs: Vec<&Objectives> = pop
        .iter()
        .map(Individual::objectives_or_err)
        .collect::<Result<_>>()?;
    let n = objs.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for p in 0..n {
        for q in p + 1..n {
            if objs[p].dominates(objs[q]) {
                dominated_by[p].push(q);
                counts[q] += 1;
            } else if objs[q].dominates(objs[p]) {
                dominated_by[q].push(p);
                counts[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                counts[q] -= 1;
                if counts[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    Ok(fronts)
}

/// Crowding distance of each member of `front`, aligned with `front`.
///
/// Members are ordered per objective by `(value, genome)`, so the result does
/// not depend on the order of `pop`. A zero or non-finite objective range
/// contributes nothing for that objective; boundary members are always `+∞`.
pub fn crowding_distance(front: &[usize], pop: &[Individual]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut dist = vec![0.0; n];
    let value = |i: usize, m: usize| -> f64 {
        let o = pop[front[i]].objectives.as_ref().expect("evaluated front");
        if m == 0 {
            o.loss
        } else {
            o.params as f64
        }
    };
    for m in 0..2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            value(a, m)
                .total_cmp(&value(b, m))
                .then_with(|| pop[front[a]].genome.cmp(&pop[front[b]].genome))
        });
        let lo = value(order[0], m);
        let hi = value(order[n - 1], m);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if !(range.is_finite() && range > 0.0) {
            continue;
        }
        for w in 1..n - 1 {
            let gap = value(order[w + 1], m) - value(order[w - 1], m);
            if gap.is_finite() {
                dist[order[w]] += gap / range;
            }
        }
    }
    dist
}

/// Assigns front index and crowding distance to every member of `pop`.
pub fn rank_population(pop: &mut [Individual]) -> Result<()> {
    let fronts = fast_non_dominated_sort(pop)?;
    for (f, front) in fronts.iter().enumerate() {
        let dist = crowding_distance(front, pop);
        for (&i, d) in front.iter().zip(dist) {
            pop[i].front = Some(f);
            pop[i].crowding = Some(d);
        }
    }
    Ok(())
}

/// `Less` when `a` is preferred: lower front, then larger crowding distance,
/// then the lexicographically smaller genome.
pub fn crowded_compare(a: &Individual, b: &Individual) -> Ordering {
    let fa = a.front.unwrap_or(usize::MAX);
    let fb = b.front.unwrap_or(usize::MAX);
    fa.cmp(&fb)
        .then_with(|| {
            let ca = a.crowding.unwrap_or(f64::NEG_INFINITY);
            let cb = b.crowding.unwrap_or(f64::NEG_INFINITY);
            cb.total_cmp(&ca)
        })
        .then_with(|| a.genome.cmp(&b.genome))
}

/// Loss, then params, then genome. The global tie order for loss rankings.
pub fn loss_compare(a: &Individual, b: &Individual) -> Ordering {
    let oa = a.objectives.as_ref();
    let ob = b.objectives.as_ref();
    let la = oa.map_or(f64::INFINITY, |o| o.loss);
    let lb = ob.map_or(f64::INFINITY, |o| o.loss);
    let pa = oa.map_or(u64::MAX, |o| o.params);
    let pb = ob.map_or(u64::MAX, |o| o.params);
    la.total_cmp(&lb)
        .then(pa.cmp(&pb))
        .then_with(|| a.genome.cmp(&b.genome))
}

fn mode_compare(mode: Mode) -> fn(&Individual, &Individual) -> Ordering {
    match mode {
        Mode::MultiObjective => crowded_compare,
        Mode::SingleObjective => loss_compare,
    }
}

/// Best `k` individuals under the mode's ordering. Fronts and crowding are
/// recomputed over `pop` first, so the result is independent of input order.
pub fn top_k(pop: &[Individual], k: usize, mode: Mode) -> Result<Vec<Individual>> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let mut ranked = pop.to_vec();
    if mode == Mode::MultiObjective {
        rank_population(&mut ranked)?;
    } else {
        ranked.iter().try_for_each(|i| i.objectives_or_err().map(|_| ()))?;
    }
    ranked.sort_by(mode_compare(mode));
    ranked.truncate(k);
    Ok(ranked)
}

fn tournament<'a, R: Rng>(parents: &'a [Individual], mode: Mode, rng: &mut R) -> &'a Individual {
    let a = &parents[rng.random_range(0..parents.len())];
    let b = &parents[rng.random_range(0..parents.len())];
    if mode_compare(mode)(a, b) == Ordering::Greater {
        b
    } else {
        a
    }
}

fn mutate<R: Rng>(genes: &mut [usize], space: &SearchSpace, prob: f64, rng: &mut R) {
    for (i, gene) in genes.iter_mut().enumerate() {
        if !rng.random_bool(prob) {
            continue;
        }
        let cands = space.candidates(i);
        if cands.len() >= 2 {
            let others: Vec<usize> = cands.iter().copied().filter(|&c| c != *gene).collect();
            *gene = *others.choose(rng).expect("at least one alternative");
        } else {
            *gene = cands[0];
        }
    }
}

/// `pop_size` children by binary crowded tournaments, uniform crossover and
/// per-gene mutation. Mutation resamples within `space`.
pub fn make_children<R: Rng>(
    parents: &[Individual],
    space: &SearchSpace,
    cfg: &GAConfig,
    provenance: Provenance,
    rng: &mut R,
) -> Result<Vec<Individual>> {
    if parents.is_empty() {
        return Err(Error::Argument("no parents to breed from".into()));
    }
    if (0..space.len()).any(|i| space.candidates(i).is_empty()) {
        return Err(Error::Config("empty candidate set".into()));
    }
    let d = space.len();
    let pm = cfg.mutation_prob(d);
    let mut children = Vec::with_capacity(cfg.pop_size);
    while children.len() < cfg.pop_size {
        let p1 = tournament(parents, cfg.mode, rng).genome.as_slice().to_vec();
        let p2 = tournament(parents, cfg.mode, rng).genome.as_slice().to_vec();
        let (mut c1, mut c2) = (p1.clone(), p2.clone());
        if rng.random_bool(cfg.crossover_prob) {
            for i in 0..d {
                if rng.random_bool(0.5) {
                    c1[i] = p2[i];
                    c2[i] = p1[i];
                }
            }
        }
        for mut genes in [c1, c2] {
            if children.len() == cfg.pop_size {
                break;
            }
            mutate(&mut genes, space, pm, rng);
            let explored = !space.contains(&genes);
            let genome = RankVector::new(genes)?;
            children.push(Individual::new(
                genome,
                Provenance {
                    explored,
                    ..provenance
                },
            ));
        }
    }
    Ok(children)
}

/// Fitness oracle for rank genomes. Must be deterministic per genome.
pub trait Evaluator: Sync {
    fn evaluate(&self, genome: &RankVector) -> Result<Objectives>;
}

impl<F> Evaluator for F
where
    F: Fn(&RankVector) -> Result<Objectives> + Sync,
{
    fn evaluate(&self, genome: &RankVector) -> Result<Objectives> {
        self(genome)
    }
}

/// One fresh evaluation, as appended to the evaluation log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub phase: usize,
    pub generation: usize,
    pub genome: RankVector,
    #[serde(with = "loss_serde")]
    pub loss: f64,
    pub params: u64,
    /// Wall-clock seconds; `None` when timing is disabled.
    pub seconds: Option<f64>,
}

/// Where an evolutionary run samples its initial population from.
#[derive(Clone, Debug)]
pub struct PhaseContext<'a> {
    pub phase: usize,
    pub space: &'a SearchSpace,
    pub previous: Option<&'a SearchSpace>,
    pub explore_prob: f64,
    pub record_timing: bool,
}

impl<'a> PhaseContext<'a> {
    pub fn plain(space: &'a SearchSpace) -> Self {
        PhaseContext {
            phase: 1,
            space,
            previous: None,
            explore_prob: 0.0,
            record_timing: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionOutcome {
    pub population: Vec<Individual>,
    pub log: Vec<EvalRecord>,
    /// Evaluations requested by the loop, memo hits included.
    pub requested: usize,
    /// Lowest-loss individual after each generation.
    pub best_per_generation: Vec<Individual>,
}

struct Memo<'e> {
    evaluator: &'e dyn Evaluator,
    cache: HashMap<RankVector, Objectives>,
    log: Vec<EvalRecord>,
    requested: usize,
    phase: usize,
    record_timing: bool,
}

impl Memo<'_> {
    /// Evaluates every member lacking objectives; fresh genomes run in
    /// parallel and are logged in order of first appearance.
    fn fill(&mut self, pop: &mut [Individual], generation: usize) -> Result<()> {
        let mut fresh: Vec<RankVector> = Vec::new();
        let mut queued = HashSet::new();
        for ind in pop.iter().filter(|i| i.objectives.is_none()) {
            self.requested += 1;
            if !self.cache.contains_key(&ind.genome) && queued.insert(ind.genome.clone()) {
                fresh.push(ind.genome.clone());
            }
        }
        let evaluator = self.evaluator;
        let results: Vec<(Result<Objectives>, f64)> = fresh
            .par_iter()
            .map(|g| {
                let t = Instant::now();
                let r = evaluator.evaluate(g);
                (r, t.elapsed().as_secs_f64())
            })
            .collect();
        for (genome, (result, secs)) in fresh.into_iter().zip(results) {
            let obj = match result {
                Ok(o) => o,
                Err(Error::Divergence { .. }) => Objectives::diverged(u64::MAX),
                Err(e) => return Err(e),
            };
            self.log.push(EvalRecord {
                phase: self.phase,
                generation,
                genome: genome.clone(),
                loss: obj.loss,
                params: obj.params,
                seconds: self.record_timing.then_some(secs),
            });
            self.cache.insert(genome, obj);
        }
        for ind in pop.iter_mut().filter(|i| i.objectives.is_none()) {
            ind.objectives = Some(self.cache[&ind.genome]);
        }
        Ok(())
    }
}

/// Keeps `pop_size` of `combined`: distinct genomes first, then NSGA-II
/// front/crowding truncation (or a loss sort in single-objective mode).
fn survive(combined: Vec<Individual>, cfg: &GAConfig) -> Result<Vec<Individual>> {
    let mut seen = HashSet::new();
    let (mut pool, dupes): (Vec<Individual>, Vec<Individual>) =
        combined.into_iter().partition(|i| seen.insert(i.genome.clone()));
    if pool.len() < cfg.pop_size {
        pool.extend(dupes.into_iter().take(cfg.pop_size - pool.len()));
    }
    let mut survivors = match cfg.mode {
        Mode::SingleObjective => {
            pool.sort_by(loss_compare);
            pool.truncate(cfg.pop_size);
            pool
        }
        Mode::MultiObjective => {
            let fronts = fast_non_dominated_sort(&pool)?;
            let mut keep: Vec<usize> = Vec::with_capacity(cfg.pop_size);
            for front in fronts {
                if keep.len() + front.len() <= cfg.pop_size {
                    keep.extend(front);
                    continue;
                }
                let dist = crowding_distance(&front, &pool);
                let mut order: Vec<usize> = (0..front.len()).collect();
                order.sort_by(|&a, &b| {
                    dist[b]
                        .total_cmp(&dist[a])
                        .then_with(|| pool[front[a]].genome.cmp(&pool[front[b]].genome))
                });
                keep.extend(order.into_iter().take(cfg.pop_size - keep.len()).map(|i| front[i]));
                break;
            }
            keep.into_iter().map(|i| pool[i].clone()).collect()
        }
    };
    rank_population(&mut survivors)?;
    Ok(survivors)
}

fn best_of(pop: &[Individual]) -> Individual {
    pop.iter()
        .min_by(|a, b| loss_compare(a, b))
        .expect("non-empty population")
        .clone()
}

/// The generational loop. Generation 1 evaluates the initial population
/// sampled from `ctx`; each later generation evaluates `pop_size` children.
pub fn run_evolution(
    ctx: &PhaseContext<'_>,
    evaluator: &dyn Evaluator,
    cfg: &GAConfig,
) -> Result<EvolutionOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut memo = Memo {
        evaluator,
        cache: HashMap::new(),
        log: Vec::new(),
        requested: 0,
        phase: ctx.phase,
        record_timing: ctx.record_timing,
    };

    let mut pop: Vec<Individual> = (0..cfg.pop_size)
        .map(|_| {
            let (genome, explored) =
                sample_genome(ctx.space, ctx.previous, ctx.explore_prob, &mut rng);
            Individual::new(
                genome,
                Provenance {
                    phase: ctx.phase,
                    generation: 1,
                    explored,
                },
            )
        })
        .collect();
    memo.fill(&mut pop, 1)?;
    // the initial population passes through the same survival step so that
    // duplicate genomes are thinned out before the first tournament
    pop = survive(pop, cfg)?;
    let mut best = vec![best_of(&pop)];

    for generation in 2..=cfg.generations {
        let provenance = Provenance {
            phase: ctx.phase,
            generation,
            explored: false,
        };
        let mut children = make_children(&pop, ctx.space, cfg, provenance, &mut rng)?;
        memo.fill(&mut children, generation)?;
        let mut combined = pop;
        combined.extend(children);
        pop = survive(combined, cfg)?;
        best.push(best_of(&pop));
    }

    Ok(EvolutionOutcome {
        population: pop,
        log: memo.log,
        requested: memo.requested,
        best_per_generation: best,
    })
}
