//! The optimization loop: initial design, then alternating global (GA with
//! ranking-surrogate preselection) and local (EDA with RBF screening) phases
//! switched by fitness diversity, under a hard evaluation budget.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalCounter, ObjectiveValue};
use crate::ga::{ga_offspring, GaConfig};
use crate::genome::{EvaluatedSolution, Solution, PAN_MIN, PAN_RANGE, TILT_MIN, TILT_RANGE};
use crate::local::{fit_eda, fit_rbfn, local_preselect, sample_eda, RbfKernel};
use crate::ranker::{build_initial_pairs, pairwise_accuracy, vote_preselect, FitReport, RankModel, RankerConfig};
use crate::sampling::{latin_hypercube, sobol_points, top_k_mask};
use crate::scenario::ScenarioInstance;

pub const RESULT_FORMAT: &str = "rishm-result";
pub const RESULT_VERSION: u32 = 1;

/// Solutions sent to true evaluation per local iteration.
pub const LOCAL_PRESELECT: usize = 2;

// independent RNG streams per component
const STREAM_INIT: u64 = 1;
const STREAM_GA: u64 = 2;
const STREAM_RANKER: u64 = 3;
const STREAM_LOCAL: u64 = 4;
const STREAM_RANDOM: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Rishm,
    RishmWoGlobal,
    RishmWoLocal,
    GaOnly,
    RandomSearch,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Rishm,
        Variant::RishmWoGlobal,
        Variant::RishmWoLocal,
        Variant::GaOnly,
        Variant::RandomSearch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Rishm => "rishm",
            Variant::RishmWoGlobal => "rishm_wo_global",
            Variant::RishmWoLocal => "rishm_wo_local",
            Variant::GaOnly => "ga_only",
            Variant::RandomSearch => "random_search",
        }
    }

    fn uses_ranker(self) -> bool {
        matches!(self, Variant::Rishm | Variant::RishmWoLocal)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                Error::Config(format!("unknown variant `{s}`, expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    /// Population size `N`: the best `N` archive entries form the population.
    pub pop_size: usize,
    /// Total true evaluations, the initial design included.
    pub max_fes: u64,
    /// Fitness-diversity threshold below which the phase toggles.
    pub delta: f64,
    /// Size of the initial design; `None` means twice the dimension.
    pub initial_samples: Option<usize>,
    pub ga: GaConfig,
    pub ranker: RankerConfig,
    /// Fraction of `N` used as EDA elites.
    pub eda_elite_frac: f64,
    /// EDA candidates drawn per local iteration, as a multiple of `N`.
    pub eda_sample_factor: usize,
    /// RBF centers as a multiple of the dimension.
    pub rbfn_center_factor: usize,
    pub rbfn_lambda: f64,
    pub rbfn_kernel: RbfKernel,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::Rishm,
            seed: 0,
            pop_size: 100,
            max_fes: 2000,
            delta: 0.2,
            initial_samples: None,
            ga: GaConfig::default(),
            ranker: RankerConfig::default(),
            eda_elite_frac: 0.45,
            eda_sample_factor: 2,
            rbfn_center_factor: 5,
            rbfn_lambda: 1e-6,
            rbfn_kernel: RbfKernel::default(),
        }
    }
}

impl RunConfig {
    pub fn initial_count(&self, inst: &ScenarioInstance) -> usize {
        self.initial_samples.unwrap_or(2 * inst.dimension())
    }

    fn ga_config(&self) -> GaConfig {
        GaConfig {
            pop_size: self.pop_size,
            ..self.ga
        }
    }

    fn elite_count(&self) -> usize {
        ((self.eda_elite_frac * self.pop_size as f64).floor() as usize).max(1)
    }

    pub fn validate(&self, inst: &ScenarioInstance) -> Result<()> {
        self.ga_config().validate()?;
        self.ranker.validate()?;
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} outside [0, 1]", self.delta)));
        }
        if self.pop_size < self.ranker.preselect_count.max(LOCAL_PRESELECT) {
            return Err(Error::Config("population smaller than the preselection count".into()));
        }
        if !(self.eda_elite_frac > 0.0 && self.eda_elite_frac <= 1.0) {
            return Err(Error::Config("EDA elite fraction must be in (0, 1]".into()));
        }
        if self.eda_sample_factor == 0 || self.rbfn_center_factor == 0 {
            return Err(Error::Config("EDA sample and RBF center factors must be positive".into()));
        }
        if !(self.rbfn_lambda >= 0.0 && self.rbfn_lambda.is_finite()) {
            return Err(Error::Config("RBF ridge must be non-negative".into()));
        }
        if self.variant != Variant::RandomSearch {
            let init = self.initial_count(inst);
            if init < 2 {
                return Err(Error::Config("initial design needs at least 2 samples".into()));
            }
            if self.max_fes <= init as u64 {
                return Err(Error::Config(format!(
                    "budget of {} evaluations does not exceed the {init}-sample initial design",
                    self.max_fes
                )));
            }
        } else if self.max_fes == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        Ok(())
    }
}

/// Append-only record of every true evaluation.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    entries: Vec<EvaluatedSolution>,
    best: Option<usize>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry; returns whether it became the new best.
    pub fn push(&mut self, entry: EvaluatedSolution) -> bool {
        if let Some(last) = self.entries.last() {
            debug_assert!(entry.eval_index > last.eval_index);
        }
        let improved = self.best().map_or(true, |b| entry.fitness < b.fitness);
        self.entries.push(entry);
        if improved {
            self.best = Some(self.entries.len() - 1);
        }
        improved
    }

    pub fn entries(&self) -> &[EvaluatedSolution] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&EvaluatedSolution> {
        self.best.map(|i| &self.entries[i])
    }

    /// The `n` best entries, ties in insertion order.
    pub fn top_n(&self, n: usize) -> Vec<EvaluatedSolution> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by(|&a, &b| self.entries[a].fitness.total_cmp(&self.entries[b].fitness).then(a.cmp(&b)));
        idx.into_iter().take(n).map(|i| self.entries[i].clone()).collect()
    }
}

/// `1 - |(f_avg - f_best) / (f_worst - f_best)|`, or 0 when all values are equal.
pub fn fitness_diversity_of(fitness: &[f64]) -> f64 {
    if fitness.is_empty() {
        return 0.0;
    }
    let best = fitness.iter().copied().fold(f64::INFINITY, f64::min);
    let worst = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if worst == best {
        return 0.0;
    }
    let avg = fitness.iter().sum::<f64>() / fitness.len() as f64;
    (1.0 - ((avg - best) / (worst - best)).abs()).clamp(0.0, 1.0)
}

/// Fitness diversity of the best `n` archive entries.
pub fn fitness_diversity(archive: &Archive, n: usize) -> f64 {
    let top: Vec<f64> = archive.top_n(n).iter().map(|e| e.fitness).collect();
    fitness_diversity_of(&top)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Global,
    Local,
}

impl Phase {
    fn toggled(self) -> Self {
        match self {
            Phase::Global => Phase::Local,
            Phase::Local => Phase::Global,
        }
    }
}

/// Which step proposed an evaluated solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Init,
    Global,
    Local,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Evaluations used so far, this one included.
    pub fe: u64,
    pub fitness: f64,
    pub best_fitness: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSwitch {
    pub fe: u64,
    pub iteration: u64,
    pub fitness_diversity: f64,
    pub to: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateUpdate {
    pub fe: u64,
    pub initial: bool,
    pub report: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub eval_index: u64,
    pub objective: ObjectiveValue,
    pub solution: Solution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub format: String,
    pub version: u32,
    pub code_version: String,
    pub instance_id: String,
    pub config: RunConfig,
    pub evaluations: u64,
    pub iterations: u64,
    pub best: BestRecord,
    pub trace: Vec<TracePoint>,
    pub phase_log: Vec<PhaseSwitch>,
    pub surrogate_log: Vec<SurrogateUpdate>,
}

impl RunResult {
    pub fn final_best(&self) -> f64 {
        self.best.objective.fitness
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let r: RunResult =
            serde_json::from_str(text).map_err(|e| Error::parse(source_name, e.line(), e.to_string()))?;
        if r.format != RESULT_FORMAT || r.version != RESULT_VERSION {
            return Err(Error::parse(source_name, 1, "not a version 1 result file"));
        }
        Ok(r)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn sobol_seed(seed: u64) -> u32 {
    let h = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    (h >> 32) as u32 ^ h as u32
}

/// The initial design: Sobol points mapped to `k`-hot selections and a Latin
/// hypercube over the angles. Nothing is evaluated here.
pub fn initial_design(inst: &ScenarioInstance, n: usize, seed: u64) -> Result<Vec<Solution>> {
    let z = inst.num_sites();
    let bits = sobol_points(n, z, sobol_seed(seed))?;
    let angles = latin_hypercube(n, 2 * z, &mut stream(seed, STREAM_INIT));
    Ok(bits
        .iter()
        .zip(&angles)
        .map(|(b, a)| Solution {
            select: top_k_mask(b, inst.k()),
            pan: a[..z].iter().map(|u| PAN_MIN + u * PAN_RANGE).collect(),
            tilt: a[z..].iter().map(|u| TILT_MIN + u * TILT_RANGE).collect(),
        })
        .collect())
}

struct Runner<'a> {
    inst: &'a ScenarioInstance,
    counter: &'a EvalCounter,
    archive: Archive,
    trace: Vec<TracePoint>,
    fresh: Vec<EvaluatedSolution>,
}

impl Runner<'_> {
    /// Evaluates `sol` if budget remains; returns `false` once it is spent.
    fn eval(&mut self, sol: Solution, source: Source) -> Result<bool> {
        if self.counter.is_exhausted() {
            return Ok(false);
        }
        let obj = evaluate(&sol, self.inst, self.counter)?;
        let entry = EvaluatedSolution {
            solution: sol,
            fitness: obj.fitness,
            eval_index: self.counter.used() - 1,
        };
        self.fresh.push(entry.clone());
        self.archive.push(entry);
        let best = self.archive.best().expect("just pushed").fitness;
        self.trace.push(TracePoint {
            fe: self.counter.used(),
            fitness: obj.fitness,
            best_fitness: best,
            source,
        });
        Ok(true)
    }
}

/// Runs one optimization with a fresh counter of `cfg.max_fes`.
pub fn run(inst: &ScenarioInstance, cfg: &RunConfig) -> Result<RunResult> {
    let counter = EvalCounter::new(cfg.max_fes);
    run_with_counter(inst, cfg, &counter)
}

/// Runs one optimization charging evaluations to `counter`, whose budget
/// bounds the run (use [`run`] unless the counter is inspected afterwards).
pub fn run_with_counter(inst: &ScenarioInstance, cfg: &RunConfig, counter: &EvalCounter) -> Result<RunResult> {
    cfg.validate(inst)?;
    let mut r = Runner {
        inst,
        counter,
        archive: Archive::new(),
        trace: Vec::new(),
        fresh: Vec::new(),
    };
    let mut phase_log = Vec::new();
    let mut surrogate_log = Vec::new();
    let mut iterations = 0u64;

    let z = inst.num_sites();
    let k = inst.k();
    let n = cfg.pop_size;

    if cfg.variant == Variant::RandomSearch {
        let mut rng = stream(cfg.seed, STREAM_RANDOM);
        while r.eval(Solution::random(z, k, &mut rng)?, Source::Random)? {
            iterations += 1;
        }
    } else {
        for sol in initial_design(inst, cfg.initial_count(inst), cfg.seed)? {
            r.eval(sol, Source::Init)?;
        }
        r.fresh.clear();

        let mut ga_rng = stream(cfg.seed, STREAM_GA);
        let mut ranker_rng = stream(cfg.seed, STREAM_RANKER);
        let mut local_rng = stream(cfg.seed, STREAM_LOCAL);
        let mut ranker: Option<RankModel> = None;
        let mut best_at_update = f64::INFINITY;
        let mut phase = Phase::Global;
        let ga_cfg = cfg.ga_config();

        while !counter.is_exhausted() {
            iterations += 1;
            let pop = r.archive.top_n(n);
            let parents: Vec<&Solution> = pop.iter().map(|e| &e.solution).collect();

            if matches!(cfg.variant, Variant::Rishm | Variant::RishmWoGlobal) {
                let fd = fitness_diversity_of(&pop.iter().map(|e| e.fitness).collect::<Vec<_>>());
                if fd < cfg.delta {
                    phase = phase.toggled();
                    phase_log.push(PhaseSwitch {
                        fe: counter.used(),
                        iteration: iterations,
                        fitness_diversity: fd,
                        to: phase,
                    });
                }
            }

            if cfg.variant == Variant::GaOnly {
                for child in ga_offspring(&pop, &ga_cfg, k, &mut ga_rng)? {
                    if !r.eval(child, Source::Global)? {
                        break;
                    }
                }
                continue;
            }

            match phase {
                Phase::Global => {
                    let offspring = ga_offspring(&pop, &ga_cfg, k, &mut ga_rng)?;
                    let tau = cfg.ranker.preselect_count;
                    let chosen: Vec<usize> = if cfg.variant.uses_ranker() {
                        if ranker.is_none() {
                            let mut model = RankModel::new(cfg.ranker, &mut ranker_rng)?;
                            let pairs = build_initial_pairs(
                                r.archive.entries(),
                                cfg.ranker.augmentation_factor,
                                &mut ranker_rng,
                            )?;
                            let report = model.fit(&pairs, &mut ranker_rng)?;
                            surrogate_log.push(SurrogateUpdate {
                                fe: counter.used(),
                                initial: true,
                                report,
                            });
                            best_at_update = r.archive.best().map_or(f64::INFINITY, |b| b.fitness);
                            r.fresh.clear();
                            ranker = Some(model);
                        }
                        vote_preselect(ranker.as_ref().expect("fitted above"), &parents, &offspring, tau)?
                    } else {
                        let all: Vec<usize> = (0..offspring.len()).collect();
                        all.choose_multiple(&mut ga_rng, tau).copied().collect()
                    };
                    let mut offspring: Vec<Option<Solution>> = offspring.into_iter().map(Some).collect();
                    for i in chosen {
                        let child = offspring[i].take().expect("distinct indices");
                        if !r.eval(child, Source::Global)? {
                            break;
                        }
                    }
                    if let Some(model) = ranker.as_mut() {
                        let best = r.archive.best().map_or(f64::INFINITY, |b| b.fitness);
                        let improved = best < best_at_update;
                        if let Some(report) =
                            model.maybe_update(r.archive.entries(), &r.fresh, improved, &mut ranker_rng)?
                        {
                            surrogate_log.push(SurrogateUpdate {
                                fe: counter.used(),
                                initial: false,
                                report,
                            });
                            best_at_update = best;
                            r.fresh.clear();
                        }
                    }
                }
                Phase::Local => {
                    let eda = fit_eda(&pop, cfg.elite_count().min(pop.len()))?;
                    let candidates = sample_eda(&eda, cfg.eda_sample_factor * n, k, &mut local_rng)?;
                    let rbfn = fit_rbfn(
                        r.archive.entries(),
                        cfg.rbfn_center_factor * inst.dimension(),
                        cfg.rbfn_lambda,
                        cfg.rbfn_kernel,
                    )?;
                    let picks = local_preselect(&rbfn, &candidates, &parents)?;
                    let mut candidates: Vec<Option<Solution>> = candidates.into_iter().map(Some).collect();
                    for i in picks {
                        let cand = candidates[i].take().expect("distinct indices");
                        if !r.eval(cand, Source::Local)? {
                            break;
                        }
                    }
                }
            }
        }
    }

    let best = r
        .archive
        .best()
        .ok_or_else(|| Error::State("run finished without any evaluation".into()))?;
    Ok(RunResult {
        format: RESULT_FORMAT.into(),
        version: RESULT_VERSION,
        code_version: env!("CARGO_PKG_VERSION").into(),
        instance_id: inst.id().into(),
        config: cfg.clone(),
        evaluations: counter.used(),
        iterations,
        best: BestRecord {
            eval_index: best.eval_index,
            objective: ObjectiveValue::from_fitness(best.fitness, inst.total_weight()),
            solution: best.solution.clone(),
        },
        trace: r.trace,
        phase_log,
        surrogate_log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub format: String,
    pub code_version: String,
    pub instance_id: String,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub fit: FitReport,
    pub train_accuracy: f64,
    /// Pairwise accuracy on one batch of GA offspring never seen in training.
    pub test_accuracy: f64,
}

/// Trains the ranker on the initial design only, breeds one GA batch from
/// its best `N` entries, evaluates that batch outside any budget and
/// reports how often the ranker orders offspring pairs correctly.
pub fn surrogate_accuracy(inst: &ScenarioInstance, cfg: &RunConfig) -> Result<AccuracyReport> {
    let counter = EvalCounter::unlimited();
    let score = |sols: Vec<Solution>| -> Result<Vec<EvaluatedSolution>> {
        sols.into_iter()
            .enumerate()
            .map(|(i, solution)| {
                let fitness = evaluate(&solution, inst, &counter)?.fitness;
                Ok(EvaluatedSolution {
                    solution,
                    fitness,
                    eval_index: i as u64,
                })
            })
            .collect()
    };
    let train = score(initial_design(inst, cfg.initial_count(inst), cfg.seed)?)?;
    let mut ranker_rng = stream(cfg.seed, STREAM_RANKER);
    let mut model = RankModel::new(cfg.ranker, &mut ranker_rng)?;
    let pairs = build_initial_pairs(&train, cfg.ranker.augmentation_factor, &mut ranker_rng)?;
    let fit = model.fit(&pairs, &mut ranker_rng)?;

    let mut archive = Archive::new();
    train.iter().cloned().for_each(|e| {
        archive.push(e);
    });
    let parents = archive.top_n(cfg.pop_size);
    let offspring = ga_offspring(&parents, &cfg.ga_config(), inst.k(), &mut stream(cfg.seed, STREAM_GA))?;
    let test = score(offspring)?;
    Ok(AccuracyReport {
        format: "rishm-accuracy".into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        instance_id: inst.id().into(),
        seed: cfg.seed,
        train_size: train.len(),
        test_size: test.len(),
        fit,
        train_accuracy: pairwise_accuracy(&model, &train)?,
        test_accuracy: pairwise_accuracy(&model, &test)?,
    })
}

#[cfg(test)]
mod tests;
