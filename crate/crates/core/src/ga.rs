//! Correlation-aware genetic algorithm used as the global optimizer.
//!
//! Each site's `(select, pan, tilt)` triple is treated as one unit: crossover
//! copies whole triples from a parent, so a selected site keeps the
//! orientation it was evaluated with.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{repair, EvaluatedSolution, Solution, PAN_MAX, PAN_MIN, PAN_RANGE, TILT_MAX, TILT_MIN, TILT_RANGE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub pop_size: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub tournament_size: usize,
    /// Standard deviation of angle mutation as a fraction of the angle range.
    pub angle_sigma_frac: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            pop_size: 100,
            crossover_prob: 1.0,
            mutation_prob: 0.1,
            tournament_size: 2,
            angle_sigma_frac: 0.05,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 {
            return Err(Error::Config("GA population must hold at least 2 individuals".into()));
        }
        if self.tournament_size < 2 {
            return Err(Error::Config("tournament size must be at least 2".into()));
        }
        for (name, p) in [("crossover", self.crossover_prob), ("mutation", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        if !(self.angle_sigma_frac.is_finite() && self.angle_sigma_frac >= 0.0) {
            return Err(Error::Config("angle mutation sigma must be non-negative".into()));
        }
        Ok(())
    }
}

fn tournament<'a, R: Rng + ?Sized>(
    parents: &'a [EvaluatedSolution],
    size: usize,
    rng: &mut R,
) -> &'a EvaluatedSolution {
    let mut best = rng.random_range(0..parents.len());
    for _ in 1..size {
        let c = rng.random_range(0..parents.len());
        let (fb, fc) = (parents[best].fitness, parents[c].fitness);
        if fc < fb || (fc == fb && c < best) {
            best = c;
        }
    }
    &parents[best]
}

/// Site-wise crossover that keeps the selected count at `k`.
///
/// Sites on which the parents agree about selection take their triple from a
/// random parent. On disagreeing sites, `m ~ Bin(u, 1/2)` of `a`'s exclusive
/// sites are inherited from `a` (selected) and `u - m` of `b`'s exclusive
/// sites from `b`; every other disagreeing site takes the unselected triple.
/// The second child receives the complementary choices.
pub fn site_crossover<R: Rng + ?Sized>(a: &Solution, b: &Solution, rng: &mut R) -> (Solution, Solution) {
    let z = a.num_sites();
    // from_a[j]: child 1 takes site j from parent a
    let mut from_a = vec![false; z];
    let only_a: Vec<usize> = (0..z).filter(|&j| a.select[j] && !b.select[j]).collect();
    let only_b: Vec<usize> = (0..z).filter(|&j| b.select[j] && !a.select[j]).collect();
    for (j, take_a) in from_a.iter_mut().enumerate() {
        if a.select[j] == b.select[j] {
            *take_a = rng.random_bool(0.5);
        }
    }
    let u = only_a.len().min(only_b.len());
    if u > 0 {
        let m = Binomial::new(u as u64, 0.5).expect("valid binomial").sample(rng) as usize;
        for &j in only_a.choose_multiple(rng, m) {
            from_a[j] = true;
        }
        // of b's exclusive sites, u - m stay selected (inherited from b); the rest come from a
        let keep_b: Vec<usize> = only_b.choose_multiple(rng, u - m).copied().collect();
        for &j in &only_b {
            from_a[j] = !keep_b.contains(&j);
        }
    }
    let build = |take_a: &dyn Fn(usize) -> bool| {
        let mut s = Solution {
            select: Vec::with_capacity(z),
            pan: Vec::with_capacity(z),
            tilt: Vec::with_capacity(z),
        };
        for j in 0..z {
            let src = if take_a(j) { a } else { b };
            s.select.push(src.select[j]);
            s.pan.push(src.pan[j]);
            s.tilt.push(src.tilt[j]);
        }
        s
    };
    (build(&|j| from_a[j]), build(&|j| !from_a[j]))
}

/// Swap mutation on the selection plus Gaussian angle noise, each gene
/// mutating independently with probability `cfg.mutation_prob`.
pub fn mutate<R: Rng + ?Sized>(sol: &mut Solution, cfg: &GaConfig, rng: &mut R) {
    let p = cfg.mutation_prob;
    if p <= 0.0 {
        return;
    }
    let z = sol.num_sites();
    for j in 0..z {
        if rng.random_bool(p) {
            let state = sol.select[j];
            let others: Vec<usize> = (0..z).filter(|&i| sol.select[i] != state).collect();
            if let Some(&i) = others.choose(rng) {
                sol.select.swap(i, j);
            }
        }
    }
    let pan_noise = Normal::new(0.0, cfg.angle_sigma_frac * PAN_RANGE).expect("finite sigma");
    let tilt_noise = Normal::new(0.0, cfg.angle_sigma_frac * TILT_RANGE).expect("finite sigma");
    for v in &mut sol.pan {
        if rng.random_bool(p) {
            *v = (*v + pan_noise.sample(rng)).clamp(PAN_MIN, PAN_MAX);
        }
    }
    for v in &mut sol.tilt {
        if rng.random_bool(p) {
            *v = (*v + tilt_noise.sample(rng)).clamp(TILT_MIN, TILT_MAX);
        }
    }
}

/// Produces `cfg.pop_size` offspring from `parents` (minimization).
pub fn ga_offspring<R: Rng + ?Sized>(
    parents: &[EvaluatedSolution],
    cfg: &GaConfig,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Solution>> {
    cfg.validate()?;
    if parents.len() < 2 {
        return Err(Error::domain("GA needs at least two parents"));
    }
    let z = parents[0].solution.num_sites();
    for p in parents {
        p.solution.validate(z, k)?;
    }
    let mut out = Vec::with_capacity(cfg.pop_size);
    while out.len() < cfg.pop_size {
        let a = &tournament(parents, cfg.tournament_size, rng).solution;
        let b = &tournament(parents, cfg.tournament_size, rng).solution;
        let (mut c1, mut c2) = if rng.random_bool(cfg.crossover_prob) {
            site_crossover(a, b, rng)
        } else {
            (a.clone(), b.clone())
        };
        for child in [&mut c1, &mut c2] {
            child.select = repair(&child.select, k, rng)?;
            mutate(child, cfg, rng);
        }
        out.push(c1);
        if out.len() < cfg.pop_size {
            out.push(c2);
        }
    }
    Ok(out)
}
