//! Pairwise global surrogate.
//!
//! A shared scoring network `s(x)` ranks solutions; the preference
//! probability that `a` beats `b` is read as `P(b better) = sigmoid(s(a) - s(b))`,
//! so lower scores mean better (smaller) fitness. Training minimises binary
//! cross-entropy on archive pairs labelled by true fitness.

pub mod network;

use std::collections::HashSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{random_permutation, EvaluatedSolution, Solution};
pub use network::{Adam, Batch, NetDims, ScoreNet};

pub const CHECKPOINT_FORMAT: &str = "rishm-ranker";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub embed_size: usize,
    pub d_model: usize,
    pub feedforward_dim: usize,
    pub n_heads: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub epochs_per_fit: usize,
    /// Minimum number of new archive entries before an online update (`T`).
    pub update_threshold: usize,
    /// Old entries are sampled only from this many most recent ones (`T_max`).
    pub recent_window: usize,
    pub augmentation_factor: usize,
    /// Offspring chosen for true evaluation per global iteration.
    pub preselect_count: usize,
    pub bn_momentum: f32,
    pub bn_eps: f32,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            embed_size: 5,
            d_model: 64,
            feedforward_dim: 512,
            n_heads: 8,
            batch_size: 512,
            learning_rate: 1e-3,
            epochs_per_fit: 10,
            update_threshold: 10,
            recent_window: 1000,
            augmentation_factor: 10,
            preselect_count: 3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl RankerConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("embed_size", self.embed_size),
            ("d_model", self.d_model),
            ("feedforward_dim", self.feedforward_dim),
            ("n_heads", self.n_heads),
            ("batch_size", self.batch_size),
            ("epochs_per_fit", self.epochs_per_fit),
            ("update_threshold", self.update_threshold),
            ("recent_window", self.recent_window),
            ("augmentation_factor", self.augmentation_factor),
            ("preselect_count", self.preselect_count),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("ranker `{name}` must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> NetDims {
        NetDims {
            embed: self.embed_size,
            model: self.d_model,
            heads: self.n_heads,
            hidden: self.feedforward_dim,
        }
    }
}

/// Anything that assigns a scalar score to solutions, lower meaning better.
pub trait PairScorer {
    fn scores(&self, sols: &[&Solution]) -> Result<Vec<f64>>;
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `sigmoid(s(a) - s(b))`; below 0.5 means `a` is predicted better.
pub fn predict_pair_with<S: PairScorer + ?Sized>(scorer: &S, a: &Solution, b: &Solution) -> Result<f64> {
    let s = scorer.scores(&[a, b])?;
    Ok(sigmoid(s[0] - s[1]))
}

/// Training label for an ordered pair; `None` on a fitness tie.
pub fn pair_label(first: f64, second: f64) -> Option<u8> {
    if first < second {
        Some(0)
    } else if first > second {
        Some(1)
    } else {
        None
    }
}

/// A labelled training pair; `label == 0` means `first` has the smaller fitness.
#[derive(Debug, Clone, Copy)]
pub struct PairSample<'a> {
    pub first: &'a Solution,
    pub second: &'a Solution,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexedPair {
    pub first: u32,
    pub second: u32,
    pub label: u8,
}

/// Pair samples stored as indices into a pool of solutions.
///
/// The pool is split into groups; every pair lives inside one group. An
/// augmentation copy of a pair set is a new group holding the site-permuted
/// members, with the same index structure and labels.
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    pool: Vec<Solution>,
    groups: Vec<std::ops::Range<u32>>,
    pairs: Vec<IndexedPair>,
    base_pairs: usize,
}

impl PairSet {
    /// Single group with explicit pairs.
    pub fn from_pool(pool: Vec<Solution>, pairs: Vec<IndexedPair>) -> Result<Self> {
        let n = pool.len() as u32;
        if pairs.iter().any(|p| p.first >= n || p.second >= n || p.label > 1) {
            return Err(Error::domain("pair index or label out of range"));
        }
        let base_pairs = pairs.len();
        #[allow(clippy::single_range_in_vec_init)]
        Ok(PairSet {
            pool,
            groups: vec![0..n],
            pairs,
            base_pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of pairs before augmentation.
    pub fn base_len(&self) -> usize {
        self.base_pairs
    }

    pub fn pool(&self) -> &[Solution] {
        &self.pool
    }

    pub fn indexed(&self) -> &[IndexedPair] {
        &self.pairs
    }

    pub fn iter(&self) -> impl Iterator<Item = PairSample<'_>> {
        self.pairs.iter().map(|p| PairSample {
            first: &self.pool[p.first as usize],
            second: &self.pool[p.second as usize],
            label: p.label,
        })
    }

    /// Replaces the set by `factor` copies of itself: the original plus
    /// `factor - 1` copies whose members are all re-ordered by one fresh
    /// random site permutation per copy. Labels carry over unchanged.
    pub fn augment<R: Rng + ?Sized>(&mut self, factor: usize, rng: &mut R) {
        if factor <= 1 || self.pool.is_empty() {
            return;
        }
        let base_pool = self.pool.len();
        let base_groups = self.groups.clone();
        let base_pairs = self.pairs.clone();
        let z = self.pool[0].num_sites();
        for copy in 1..factor {
            let perm = random_permutation(z, rng);
            let offset = (copy * base_pool) as u32;
            for i in 0..base_pool {
                let permuted = self.pool[i].permuted_unchecked(&perm);
                self.pool.push(permuted);
            }
            self.groups
                .extend(base_groups.iter().map(|g| g.start + offset..g.end + offset));
            self.pairs.extend(base_pairs.iter().map(|p| IndexedPair {
                first: p.first + offset,
                second: p.second + offset,
                label: p.label,
            }));
        }
    }

    /// Mini-batches of pair indices for one epoch.
    ///
    /// Each group's members are shuffled into blocks of about
    /// `sqrt(batch_size / 2)`, pairs are bucketed by their two blocks, and the
    /// shuffled buckets are packed into batches of at most `batch_size` pairs.
    /// A batch then touches few distinct solutions, which keeps the scoring
    /// cost per step low without changing which pairs an epoch visits.
    fn plan_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<u32>> {
        let block = ((batch_size as f64 / 2.0).sqrt().floor() as usize).max(1);
        let mut block_of = vec![0u32; self.pool.len()];
        let mut next_block = 0u32;
        for g in &self.groups {
            let mut members: Vec<u32> = g.clone().collect();
            members.shuffle(rng);
            let len = members.len();
            let nb = len.div_ceil(block).max(1);
            for (i, &m) in members.iter().enumerate() {
                block_of[m as usize] = next_block + (i * nb / len) as u32;
            }
            next_block += nb as u32;
        }
        let mut keyed: Vec<(u64, u32)> = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (a, b) = (block_of[p.first as usize], block_of[p.second as usize]);
                let key = (u64::from(a.min(b)) << 32) | u64::from(a.max(b));
                (key, i as u32)
            })
            .collect();
        keyed.sort_unstable();
        let mut buckets: Vec<&[(u64, u32)]> = keyed.chunk_by(|x, y| x.0 == y.0).collect();
        buckets.shuffle(rng);

        let mut batches = Vec::new();
        let mut current: Vec<u32> = Vec::with_capacity(batch_size);
        for bucket in buckets {
            for chunk in bucket.chunks(batch_size) {
                if !current.is_empty() && current.len() + chunk.len() > batch_size {
                    batches.push(std::mem::replace(&mut current, Vec::with_capacity(batch_size)));
                }
                current.extend(chunk.iter().map(|&(_, i)| i));
            }
        }
        if !current.is_empty() {
            batches.push(current);
        }
        batches
    }
}

/// All ordered pairs of distinct-fitness archive entries, augmented
/// `factor` times by site permutation.
pub fn build_initial_pairs<R: Rng + ?Sized>(
    archive: &[EvaluatedSolution],
    factor: usize,
    rng: &mut R,
) -> Result<PairSet> {
    if archive.len() < 2 {
        return Err(Error::domain(format!(
            "need at least 2 archive entries to form pairs, got {}",
            archive.len()
        )));
    }
    let mut pairs = Vec::with_capacity(archive.len() * (archive.len() - 1));
    for (i, a) in archive.iter().enumerate() {
        for (j, b) in archive.iter().enumerate() {
            if i == j {
                continue;
            }
            if let Some(label) = pair_label(a.fitness, b.fitness) {
                pairs.push(IndexedPair {
                    first: i as u32,
                    second: j as u32,
                    label,
                });
            }
        }
    }
    let pool = archive.iter().map(|e| e.solution.clone()).collect();
    let mut set = PairSet::from_pool(pool, pairs)?;
    set.augment(factor, rng);
    Ok(set)
}

/// Cross pairs `(old_i, new_j)` labelled by true fitness, augmented.
pub fn build_update_pairs<R: Rng + ?Sized>(
    old: &[&EvaluatedSolution],
    new: &[&EvaluatedSolution],
    factor: usize,
    rng: &mut R,
) -> Result<PairSet> {
    let mut pool: Vec<Solution> = old.iter().map(|e| e.solution.clone()).collect();
    pool.extend(new.iter().map(|e| e.solution.clone()));
    let mut pairs = Vec::with_capacity(old.len() * new.len());
    for (i, o) in old.iter().enumerate() {
        for (j, n) in new.iter().enumerate() {
            if let Some(label) = pair_label(o.fitness, n.fitness) {
                pairs.push(IndexedPair {
                    first: i as u32,
                    second: (old.len() + j) as u32,
                    label,
                });
            }
        }
    }
    let mut set = PairSet::from_pool(pool, pairs)?;
    set.augment(factor, rng);
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub base_pairs: usize,
    pub pairs: usize,
    pub batches: usize,
    /// Mean binary cross-entropy over each epoch's pairs.
    pub epoch_losses: Vec<f64>,
}

impl FitReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// The trained scoring network plus its optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    config: RankerConfig,
    net: ScoreNet,
    optimizer: Adam,
    fitted: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: RankModel,
}

impl RankModel {
    pub fn new<R: Rng + ?Sized>(config: RankerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let net = ScoreNet::new(config.dims(), config.bn_eps, rng);
        let optimizer = Adam::new(net.num_params(), config.learning_rate);
        Ok(RankModel {
            config,
            net,
            optimizer,
            fitted: false,
        })
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn network(&self) -> &ScoreNet {
        &self.net
    }

    /// Trains for `epochs_per_fit` epochs of mini-batch Adam on the pair set.
    pub fn fit<R: Rng + ?Sized>(&mut self, pairs: &PairSet, rng: &mut R) -> Result<FitReport> {
        if pairs.is_empty() {
            return Err(Error::domain("cannot fit the ranker on an empty pair set"));
        }
        let pool = pairs.pool();
        let mut local = vec![u32::MAX; pool.len()];
        let mut epoch_losses = Vec::with_capacity(self.config.epochs_per_fit);
        let mut batches_run = 0;
        for _ in 0..self.config.epochs_per_fit {
            let plan = pairs.plan_batches(self.config.batch_size, rng);
            let mut loss_sum = 0.0;
            for batch in &plan {
                let mut members_idx: Vec<u32> = Vec::new();
                let mut index_pairs = Vec::with_capacity(batch.len());
                for &pi in batch {
                    let p = pairs.pairs[pi as usize];
                    let mut slot = |idx: u32| {
                        let l = &mut local[idx as usize];
                        if *l == u32::MAX {
                            *l = members_idx.len() as u32;
                            members_idx.push(idx);
                        }
                        *l as usize
                    };
                    let a = slot(p.first);
                    let b = slot(p.second);
                    index_pairs.push((a, b, f64::from(p.label)));
                }
                for &idx in &members_idx {
                    local[idx as usize] = u32::MAX;
                }
                let members: Vec<&Solution> = members_idx.iter().map(|&i| &pool[i as usize]).collect();

                let input = Batch::from_solutions(&members);
                let (scores, cache) = self.net.forward(&input, true);
                let n = index_pairs.len() as f64;
                let mut d_scores = ndarray::Array1::<f32>::zeros(members.len());
                for &(a, b, y) in &index_pairs {
                    let d = f64::from(scores[a]) - f64::from(scores[b]);
                    // softplus(d) - y d, written to avoid overflow
                    loss_sum += d.max(0.0) + (-d.abs()).exp().ln_1p() - y * d;
                    let g = ((sigmoid(d) - y) / n) as f32;
                    d_scores[a] += g;
                    d_scores[b] -= g;
                }
                let grad = self.net.backward(&input, &cache, &d_scores);
                self.optimizer.apply(self.net.params_mut(), &grad);
                self.net
                    .update_running_stats(&cache, self.config.bn_momentum, members.len());
            }
            batches_run += plan.len();
            epoch_losses.push(loss_sum / pairs.len() as f64);
        }
        self.fitted = true;
        Ok(FitReport {
            base_pairs: pairs.base_len(),
            pairs: pairs.len(),
            batches: batches_run,
            epoch_losses,
        })
    }

    fn raw_scores(&self, sols: &[&Solution]) -> Vec<f64> {
        let mut out = Vec::with_capacity(sols.len());
        for chunk in sols.chunks(256) {
            let (s, _) = self.net.forward(&Batch::from_solutions(chunk), false);
            out.extend(s.iter().map(|&v| f64::from(v)));
        }
        out
    }

    pub fn predict_pair(&self, a: &Solution, b: &Solution) -> Result<f64> {
        predict_pair_with(self, a, b)
    }

    /// Online update: runs only with at least `update_threshold` new entries
    /// and an improved best. Pairs `T` old entries, drawn uniformly from the
    /// most recent `recent_window` non-new archive entries, with the latest
    /// `T` new ones.
    pub fn maybe_update<R: Rng + ?Sized>(
        &mut self,
        archive: &[EvaluatedSolution],
        new: &[EvaluatedSolution],
        best_improved: bool,
        rng: &mut R,
    ) -> Result<Option<FitReport>> {
        let t = self.config.update_threshold;
        if new.len() < t || !best_improved {
            return Ok(None);
        }
        if !self.fitted {
            return Err(Error::State("ranker must be fitted before it can be updated".into()));
        }
        let fresh: Vec<&EvaluatedSolution> = new[new.len() - t..].iter().collect();
        let new_ids: HashSet<u64> = new.iter().map(|e| e.eval_index).collect();
        let older: Vec<&EvaluatedSolution> = archive.iter().filter(|e| !new_ids.contains(&e.eval_index)).collect();
        let window = &older[older.len().saturating_sub(self.config.recent_window)..];
        let old: Vec<&EvaluatedSolution> = window.choose_multiple(rng, t.min(window.len())).copied().collect();
        let pairs = build_update_pairs(&old, &fresh, self.config.augmentation_factor, rng)?;
        if pairs.is_empty() {
            return Ok(None);
        }
        self.fit(&pairs, rng).map(Some)
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::parse(source_name, e.line(), e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::parse(source_name, 1, "not a version 1 ranker checkpoint"));
        }
        let expected = ScoreNet::new(ck.model.config.dims(), ck.model.config.bn_eps, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0));
        if ck.model.net.num_params() != expected.num_params() {
            return Err(Error::parse(source_name, 1, "parameter count does not match the configuration"));
        }
        Ok(ck.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

impl PairScorer for RankModel {
    fn scores(&self, sols: &[&Solution]) -> Result<Vec<f64>> {
        if !self.fitted {
            return Err(Error::State("ranker has not been fitted".into()));
        }
        Ok(self.raw_scores(sols))
    }
}

/// Voting preselection: each offspring's votes `sum_p P(offspring vs parent)`
/// are summed over all parents, and the `tau` offspring with the smallest
/// sums win. Ties keep generation order. Returns offspring indices.
pub fn vote_preselect<S: PairScorer + ?Sized>(
    scorer: &S,
    parents: &[&Solution],
    offspring: &[Solution],
    tau: usize,
) -> Result<Vec<usize>> {
    if offspring.len() < tau {
        return Err(Error::domain(format!(
            "cannot preselect {tau} of {} offspring",
            offspring.len()
        )));
    }
    let off_refs: Vec<&Solution> = offspring.iter().collect();
    let off_scores = scorer.scores(&off_refs)?;
    let par_scores = scorer.scores(parents)?;
    let sums: Vec<f64> = off_scores
        .iter()
        .map(|&so| par_scores.iter().map(|&sp| sigmoid(so - sp)).sum())
        .collect();
    let mut order: Vec<usize> = (0..offspring.len()).collect();
    order.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(a.cmp(&b)));
    order.truncate(tau);
    Ok(order)
}

/// Fraction of distinct-fitness pairs whose order the scorer predicts
/// correctly. Equal scores count as half a hit.
pub fn pairwise_accuracy<S: PairScorer + ?Sized>(scorer: &S, evaluated: &[EvaluatedSolution]) -> Result<f64> {
    let refs: Vec<&Solution> = evaluated.iter().map(|e| &e.solution).collect();
    let scores = scorer.scores(&refs)?;
    let mut hits = 0.0;
    let mut total = 0usize;
    for i in 0..evaluated.len() {
        for j in i + 1..evaluated.len() {
            let (fi, fj) = (evaluated[i].fitness, evaluated[j].fitness);
            if fi == fj {
                continue;
            }
            total += 1;
            let (si, sj) = (scores[i], scores[j]);
            if si == sj {
                hits += 0.5;
            } else if (si < sj) == (fi < fj) {
                hits += 1.0;
            }
        }
    }
    if total == 0 {
        return Err(Error::domain("no distinct-fitness pairs to score"));
    }
    Ok(hits / total as f64)
}
