//! Local search: a fitness-weighted estimation-of-distribution sampler whose
//! candidates are screened by a Gaussian RBF network over Gower distance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{gower_distance, normalized_euclidean, EvaluatedSolution, Solution, PAN_MAX, PAN_MIN, TILT_MAX, TILT_MIN};

/// Added to reversed fitness so the worst individual keeps a tiny weight and
/// an all-equal population still has well-defined weights.
pub const REVERSE_EPS: f64 = 1e-12;

/// Ridge used when the unregularised system cannot be solved.
pub const FALLBACK_LAMBDA: f64 = 1e-8;

/// Kernel width used when the median center distance is zero.
pub const FALLBACK_GAMMA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaModel {
    pub weights: Vec<f64>,
    pub pan_mean: Vec<f64>,
    pub pan_std: Vec<f64>,
    pub tilt_mean: Vec<f64>,
    pub tilt_std: Vec<f64>,
    pub prob: Vec<f64>,
}

impl EdaModel {
    pub fn num_sites(&self) -> usize {
        self.prob.len()
    }
}

/// Entries sorted by fitness, ties keeping archive order.
fn best_entries(archive: &[EvaluatedSolution], n: usize) -> Vec<&EvaluatedSolution> {
    let mut sorted: Vec<&EvaluatedSolution> = archive.iter().collect();
    sorted.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
    sorted.truncate(n);
    sorted
}

/// Fits the sampling model on the `n_best` best archive entries.
///
/// Means and selection probabilities are fitness-weighted; the standard
/// deviations use plain division by `n_best`.
pub fn fit_eda(archive: &[EvaluatedSolution], n_best: usize) -> Result<EdaModel> {
    if n_best == 0 || n_best > archive.len() {
        return Err(Error::domain(format!(
            "EDA needs 1..={} elite individuals, got {n_best}",
            archive.len()
        )));
    }
    let pop = best_entries(archive, n_best);
    let worst = pop.iter().map(|e| e.fitness).fold(f64::NEG_INFINITY, f64::max);
    let fit: Vec<f64> = pop.iter().map(|e| worst - e.fitness + REVERSE_EPS).collect();
    let total: f64 = fit.iter().sum();
    let weights: Vec<f64> = fit.iter().map(|f| f / total).collect();

    let z = pop[0].solution.num_sites();
    let nb = n_best as f64;
    let moments = |gene: &dyn Fn(&Solution) -> &[f64]| -> (Vec<f64>, Vec<f64>) {
        // offset from the first elite so identical genes give exactly that value
        let mean: Vec<f64> = (0..z)
            .map(|j| {
                let x0 = gene(&pop[0].solution)[j];
                x0 + pop
                    .iter()
                    .zip(&weights)
                    .map(|(e, w)| w * (gene(&e.solution)[j] - x0))
                    .sum::<f64>()
            })
            .collect();
        let std = (0..z)
            .map(|j| {
                let ss: f64 = pop.iter().map(|e| (gene(&e.solution)[j] - mean[j]).powi(2)).sum();
                (ss / nb).sqrt()
            })
            .collect();
        (mean, std)
    };
    let (pan_mean, pan_std) = moments(&|s| &s.pan);
    let (tilt_mean, tilt_std) = moments(&|s| &s.tilt);
    let prob = (0..z)
        .map(|j| {
            pop.iter()
                .zip(&weights)
                .filter(|(e, _)| e.solution.select[j])
                .map(|(_, w)| w)
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect();
    Ok(EdaModel {
        weights,
        pan_mean,
        pan_std,
        tilt_mean,
        tilt_std,
        prob,
    })
}

fn sample_gene<R: Rng + ?Sized>(mean: f64, std: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let v = if std > 0.0 {
        Normal::new(mean, std).expect("finite std").sample(rng)
    } else {
        mean
    };
    v.clamp(lo, hi)
}

/// Draws `n` solutions with exactly `k` selected sites each.
///
/// Sites are visited in order of decreasing probability and switched on
/// with their own probability, pass after pass, until `k` are on. A pass
/// that switches nothing on ends the walk and the remaining slots go to the
/// most probable unselected sites.
pub fn sample_eda<R: Rng + ?Sized>(model: &EdaModel, n: usize, k: usize, rng: &mut R) -> Result<Vec<Solution>> {
    let z = model.num_sites();
    if k > z {
        return Err(Error::domain(format!("cannot select {k} of {z} sites")));
    }
    let mut order: Vec<usize> = (0..z).collect();
    order.sort_by(|&a, &b| model.prob[b].total_cmp(&model.prob[a]).then(a.cmp(&b)));

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut select = vec![false; z];
        let mut placed = 0;
        while placed < k {
            let mut this_pass = 0;
            for &j in &order {
                if placed == k {
                    break;
                }
                if !select[j] && rng.random_bool(model.prob[j]) {
                    select[j] = true;
                    placed += 1;
                    this_pass += 1;
                }
            }
            if this_pass == 0 {
                for &j in &order {
                    if placed == k {
                        break;
                    }
                    if !select[j] {
                        select[j] = true;
                        placed += 1;
                    }
                }
            }
        }
        let pan = (0..z)
            .map(|j| sample_gene(model.pan_mean[j], model.pan_std[j], PAN_MIN, PAN_MAX, rng))
            .collect();
        let tilt = (0..z)
            .map(|j| sample_gene(model.tilt_mean[j], model.tilt_std[j], TILT_MIN, TILT_MAX, rng))
            .collect();
        out.push(Solution { select, pan, tilt });
    }
    Ok(out)
}

/// Radial profile applied to the Gower distance between solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbfKernel {
    /// `exp(-d^2 / (2 gamma^2))`.
    Gaussian,
    /// `exp(-d / gamma)`. Gower distance is a sum of per-gene absolute
    /// differences, so this kernel is a product of one-dimensional positive
    /// definite kernels and the interpolation matrix stays positive definite.
    /// The Gaussian profile has no such guarantee under Gower distance and
    /// its matrices routinely have negative eigenvalues.
    #[default]
    Exponential,
}

impl RbfKernel {
    pub fn eval(self, d: f64, gamma: f64) -> f64 {
        match self {
            RbfKernel::Gaussian => (-d * d / (2.0 * gamma * gamma)).exp(),
            RbfKernel::Exponential => (-d / gamma).exp(),
        }
    }
}

/// Cheap fitness estimate used to screen candidates.
pub trait FitnessPredictor {
    fn predict(&self, sol: &Solution) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfnModel {
    centers: Vec<Solution>,
    kernel: RbfKernel,
    gamma: f64,
    weights: Vec<f64>,
    lambda: f64,
    fell_back: bool,
}

impl RbfnModel {
    pub fn centers(&self) -> &[Solution] {
        &self.centers
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Ridge actually used for the solve.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// True when the requested system was singular and the fallback ridge
    /// was applied.
    pub fn used_fallback(&self) -> bool {
        self.fell_back
    }

    pub fn kernel(&self) -> RbfKernel {
        self.kernel
    }
}

impl FitnessPredictor for RbfnModel {
    fn predict(&self, sol: &Solution) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * self.kernel.eval(gower_distance(c, sol), self.gamma))
            .sum()
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn solve_ridge(k: &DMatrix<f64>, f: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = k.nrows();
    let a = k + DMatrix::identity(n, n) * lambda;
    let w = a.clone().lu().solve(f)?;
    let residual = (&a * &w - f).norm();
    (w.iter().all(|v| v.is_finite()) && residual <= 1e-8 * (1.0 + f.norm())).then_some(w)
}

/// Fits the network on the `count` best archive entries (fewer if the
/// archive is smaller).
pub fn fit_rbfn(archive: &[EvaluatedSolution], count: usize, lambda: f64, kernel: RbfKernel) -> Result<RbfnModel> {
    if archive.len() < 2 {
        return Err(Error::domain("RBF network needs at least 2 archive entries"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("ridge must be a non-negative number, got {lambda}")));
    }
    let chosen = best_entries(archive, count.max(1));
    let n = chosen.len();
    let centers: Vec<Solution> = chosen.iter().map(|e| e.solution.clone()).collect();
    let mut dist = DMatrix::zeros(n, n);
    let mut pairwise = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = gower_distance(&centers[i], &centers[j]);
            dist[(i, j)] = d;
            dist[(j, i)] = d;
            pairwise.push(d);
        }
    }
    let gamma = median(pairwise).filter(|&m| m > 0.0).unwrap_or(FALLBACK_GAMMA);
    let kmat = dist.map(|d: f64| kernel.eval(d, gamma));
    let f = DVector::from_iterator(n, chosen.iter().map(|e| e.fitness));

    let (w, used, fell_back) = match solve_ridge(&kmat, &f, lambda) {
        Some(w) => (w, lambda, false),
        None => {
            let fallback = lambda.max(FALLBACK_LAMBDA);
            let w = solve_ridge(&kmat, &f, fallback)
                .or_else(|| {
                    let a = &kmat + DMatrix::identity(n, n) * fallback;
                    a.lu().solve(&f)
                })
                .filter(|w| w.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::domain("RBF system is singular even with the fallback ridge"))?;
            (w, fallback, true)
        }
    };
    Ok(RbfnModel {
        centers,
        kernel,
        gamma,
        weights: w.iter().copied().collect(),
        lambda: used,
        fell_back,
    })
}

/// Picks one candidate to exploit (lowest prediction) and one to explore
/// (farthest from its nearest population member). Returns two distinct
/// candidate indices; ties go to the lower index.
pub fn local_preselect<P: FitnessPredictor + ?Sized>(
    model: &P,
    candidates: &[Solution],
    population: &[&Solution],
) -> Result<Vec<usize>> {
    if candidates.len() < 2 {
        return Err(Error::domain("local preselection needs at least 2 candidates"));
    }
    let predicted: Vec<f64> = candidates.iter().map(|c| model.predict(c)).collect();
    let exploit = (0..candidates.len())
        .min_by(|&a, &b| predicted[a].total_cmp(&predicted[b]).then(a.cmp(&b)))
        .expect("non-empty");
    let uncertainty: Vec<f64> = candidates
        .iter()
        .map(|c| {
            population
                .iter()
                .map(|p| normalized_euclidean(c, p))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut by_uncertainty: Vec<usize> = (0..candidates.len()).collect();
    by_uncertainty.sort_by(|&a, &b| uncertainty[b].total_cmp(&uncertainty[a]).then(a.cmp(&b)));
    let explore = by_uncertainty
        .into_iter()
        .find(|&i| i != exploit)
        .expect("at least two candidates");
    Ok(vec![exploit, explore])
}
