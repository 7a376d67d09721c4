//! Space-filling designs for the initial archive.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Highest dimension supported by the Sobol generator.
pub const SOBOL_MAX_DIMS: usize = sobol_burley::NUM_DIMENSIONS as usize;

/// First `n` points of an Owen-scrambled Sobol sequence in `[0, 1)^dims`.
pub fn sobol_points(n: usize, dims: usize, seed: u32) -> Result<Vec<Vec<f64>>> {
    if dims > SOBOL_MAX_DIMS {
        return Err(Error::Config(format!(
            "Sobol design limited to {SOBOL_MAX_DIMS} dimensions, requested {dims}"
        )));
    }
    Ok((0..n as u32)
        .map(|i| {
            (0..dims as u32)
                .map(|d| f64::from(sobol_burley::sample(i, d, seed)))
                .collect()
        })
        .collect())
}

/// Latin hypercube design: each column has exactly one point in every
/// `1/n`-wide stratum of `[0, 1)`.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dims]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        strata.shuffle(rng);
        for (i, row) in out.iter_mut().enumerate() {
            let u: f64 = rng.random();
            row[d] = ((strata[i] as f64 + u) / n as f64).min(1.0 - f64::EPSILON);
        }
    }
    out
}

/// Indices of the `k` largest coordinates, ties going to the lower index.
pub fn top_k_mask(point: &[f64], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..point.len()).collect();
    idx.sort_by(|&a, &b| point[b].total_cmp(&point[a]).then(a.cmp(&b)));
    let mut mask = vec![false; point.len()];
    for &j in idx.iter().take(k) {
        mask[j] = true;
    }
    mask
}
