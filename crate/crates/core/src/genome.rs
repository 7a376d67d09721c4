//! Mixed-variable solution encoding.
//!
//! A solution holds, for every candidate site `j`, a selection bit `b_j`, a pan
//! angle in `[-180, 180]` and a tilt angle in `[-90, 90]` (degrees). A valid
//! solution selects exactly `k` sites.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAN_MIN: f64 = -180.0;
pub const PAN_MAX: f64 = 180.0;
pub const TILT_MIN: f64 = -90.0;
pub const TILT_MAX: f64 = 90.0;
pub const PAN_RANGE: f64 = PAN_MAX - PAN_MIN;
pub const TILT_RANGE: f64 = TILT_MAX - TILT_MIN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub select: Vec<bool>,
    pub pan: Vec<f64>,
    pub tilt: Vec<f64>,
}

impl Solution {
    pub fn new(select: Vec<bool>, pan: Vec<f64>, tilt: Vec<f64>) -> Result<Self> {
        if select.len() != pan.len() || select.len() != tilt.len() {
            return Err(Error::domain(format!(
                "gene vectors differ in length: {} / {} / {}",
                select.len(),
                pan.len(),
                tilt.len()
            )));
        }
        Ok(Solution { select, pan, tilt })
    }

    /// Uniformly random valid solution.
    pub fn random<R: Rng + ?Sized>(num_sites: usize, k: usize, rng: &mut R) -> Result<Self> {
        if k > num_sites {
            return Err(Error::domain(format!("k={k} exceeds the {num_sites} sites")));
        }
        let mut select = vec![false; num_sites];
        for j in rand::seq::index::sample(rng, num_sites, k) {
            select[j] = true;
        }
        let pan = (0..num_sites).map(|_| rng.random_range(PAN_MIN..=PAN_MAX)).collect();
        let tilt = (0..num_sites).map(|_| rng.random_range(TILT_MIN..=TILT_MAX)).collect();
        Ok(Solution { select, pan, tilt })
    }

    pub fn num_sites(&self) -> usize {
        self.select.len()
    }

    pub fn count_selected(&self) -> usize {
        self.select.iter().filter(|&&b| b).count()
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.select.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    pub fn angles_in_bounds(&self) -> bool {
        self.pan.iter().all(|p| (PAN_MIN..=PAN_MAX).contains(p))
            && self.tilt.iter().all(|t| (TILT_MIN..=TILT_MAX).contains(t))
    }

    pub fn is_valid(&self, k: usize) -> bool {
        self.pan.len() == self.select.len()
            && self.tilt.len() == self.select.len()
            && self.count_selected() == k
            && self.angles_in_bounds()
    }

    pub fn validate(&self, num_sites: usize, k: usize) -> Result<()> {
        if self.num_sites() != num_sites {
            return Err(Error::domain(format!(
                "solution has {} sites, instance has {num_sites}",
                self.num_sites()
            )));
        }
        if self.count_selected() != k {
            return Err(Error::domain(format!(
                "solution selects {} sites, budget is {k}",
                self.count_selected()
            )));
        }
        if !self.angles_in_bounds() {
            return Err(Error::domain("angle gene out of range"));
        }
        Ok(())
    }

    /// Flat numeric record `b_1..b_Z, pan_1..pan_Z, tilt_1..tilt_Z`.
    pub fn to_record(&self) -> Vec<f64> {
        let mut rec = Vec::with_capacity(3 * self.num_sites());
        rec.extend(self.select.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        rec.extend_from_slice(&self.pan);
        rec.extend_from_slice(&self.tilt);
        rec
    }

    pub fn from_record(rec: &[f64]) -> Result<Self> {
        if rec.len() % 3 != 0 {
            return Err(Error::domain("record length is not a multiple of 3"));
        }
        let z = rec.len() / 3;
        let mut select = Vec::with_capacity(z);
        for &b in &rec[..z] {
            select.push(match b {
                0.0 => false,
                1.0 => true,
                other => return Err(Error::domain(format!("selection gene must be 0 or 1, got {other}"))),
            });
        }
        Solution::new(select, rec[z..2 * z].to_vec(), rec[2 * z..].to_vec())
    }

    /// Reorders sites so that new site `j` carries old site `perm[j]`'s genes.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_sites())?;
        Ok(self.permuted_unchecked(perm))
    }

    pub(crate) fn permuted_unchecked(&self, perm: &[usize]) -> Self {
        Solution {
            select: perm.iter().map(|&j| self.select[j]).collect(),
            pan: perm.iter().map(|&j| self.pan[j]).collect(),
            tilt: perm.iter().map(|&j| self.tilt[j]).collect(),
        }
    }

    /// Per-variable values scaled to `[0, 1]`.
    pub fn unit_scaled(&self) -> impl Iterator<Item = f64> + '_ {
        let b = self.select.iter().map(|&b| if b { 1.0 } else { 0.0 });
        let p = self.pan.iter().map(|p| (p - PAN_MIN) / PAN_RANGE);
        let t = self.tilt.iter().map(|t| (t - TILT_MIN) / TILT_RANGE);
        b.chain(p).chain(t)
    }
}

/// A solution together with its true objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedSolution {
    pub solution: Solution,
    pub fitness: f64,
    pub eval_index: u64,
}

pub fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::domain(format!(
            "permutation has length {}, expected {n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &j in perm {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(Error::domain("not a permutation"));
        }
    }
    Ok(())
}

pub fn inverse_permutation(perm: &[usize]) -> Result<Vec<usize>> {
    check_permutation(perm, perm.len())?;
    let mut inv = vec![0; perm.len()];
    for (i, &j) in perm.iter().enumerate() {
        inv[j] = i;
    }
    Ok(inv)
}

/// Applies the same site permutation to both members of a pair.
pub fn permute_pair(a: &Solution, b: &Solution, perm: &[usize]) -> Result<(Solution, Solution)> {
    if a.num_sites() != b.num_sites() {
        return Err(Error::domain("pair members differ in site count"));
    }
    Ok((a.permuted(perm)?, b.permuted(perm)?))
}

/// Forces exactly `k` selected sites, flipping as few bits as possible.
///
/// Surplus ones are demoted and missing ones promoted at random positions.
pub fn repair<R: Rng + ?Sized>(select: &[bool], k: usize, rng: &mut R) -> Result<Vec<bool>> {
    if k > select.len() {
        return Err(Error::domain(format!(
            "cannot select {k} of {} sites",
            select.len()
        )));
    }
    let mut out = select.to_vec();
    let ones: Vec<usize> = (0..out.len()).filter(|&j| out[j]).collect();
    if ones.len() > k {
        let surplus = ones.len() - k;
        for &j in ones.choose_multiple(rng, surplus) {
            out[j] = false;
        }
    } else if ones.len() < k {
        let zeros: Vec<usize> = (0..out.len()).filter(|&j| !out[j]).collect();
        for &j in zeros.choose_multiple(rng, k - ones.len()) {
            out[j] = true;
        }
    }
    Ok(out)
}

/// Mean per-variable dissimilarity: bit mismatch for selections and
/// range-normalised absolute difference for angles.
pub fn gower_distance(a: &Solution, b: &Solution) -> f64 {
    debug_assert_eq!(a.num_sites(), b.num_sites());
    let z = a.num_sites();
    if z == 0 {
        return 0.0;
    }
    let bits = a.select.iter().zip(&b.select).filter(|(x, y)| x != y).count() as f64;
    let pan: f64 = a.pan.iter().zip(&b.pan).map(|(x, y)| (x - y).abs()).sum::<f64>() / PAN_RANGE;
    let tilt: f64 = a.tilt.iter().zip(&b.tilt).map(|(x, y)| (x - y).abs()).sum::<f64>() / TILT_RANGE;
    (bits + pan + tilt) / (3 * z) as f64
}

/// Euclidean distance between unit-scaled gene vectors.
pub fn normalized_euclidean(a: &Solution, b: &Solution) -> f64 {
    debug_assert_eq!(a.num_sites(), b.num_sites());
    a.unit_scaled()
        .zip(b.unit_scaled())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Uniform random permutation of `0..n`.
pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sol(select: &[u8], pan: &[f64], tilt: &[f64]) -> Solution {
        Solution::new(select.iter().map(|&b| b == 1).collect(), pan.to_vec(), tilt.to_vec()).unwrap()
    }

    #[test]
    fn repair_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = vec![true, false, true, false, false];
        assert_eq!(repair(&s, 2, &mut rng).unwrap(), s);
    }

    #[test]
    fn repair_promotes_from_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = repair(&[false; 5], 3, &mut rng).unwrap();
        assert_eq!(out.iter().filter(|&&b| b).count(), 3);
    }

    #[test]
    fn repair_only_touches_surplus() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = vec![true, true, true, false, true, false];
        let out = repair(&s, 2, &mut rng).unwrap();
        assert_eq!(out.iter().filter(|&&b| b).count(), 2);
        // nothing was promoted
        for j in 0..s.len() {
            assert!(!out[j] || s[j]);
        }
    }

    #[test]
    fn repair_rejects_impossible_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(repair(&[false; 3], 4, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn gower_hand_example() {
        let a = sol(&[1, 0], &[0.0, 0.0], &[10.0, -5.0]);
        let b = sol(&[0, 0], &[90.0, 0.0], &[10.0, -5.0]);
        assert_abs_diff_eq!(gower_distance(&a, &b), 0.208333333333, epsilon = 1e-9);
        assert_eq!(gower_distance(&a, &a), 0.0);
    }

    #[test]
    fn euclidean_single_full_range_pan() {
        let a = sol(&[1, 0], &[-180.0, 3.0], &[1.0, 2.0]);
        let b = sol(&[1, 0], &[180.0, 3.0], &[1.0, 2.0]);
        assert_abs_diff_eq!(normalized_euclidean(&a, &b), 1.0, epsilon = 1e-15);
        assert_eq!(normalized_euclidean(&a, &a), 0.0);
    }

    #[test]
    fn permutation_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Solution::random(6, 2, &mut rng).unwrap();
        let b = Solution::random(6, 2, &mut rng).unwrap();
        let id: Vec<usize> = (0..6).collect();
        assert_eq!(permute_pair(&a, &b, &id).unwrap(), (a.clone(), b.clone()));
        let p = random_permutation(6, &mut rng);
        let inv = inverse_permutation(&p).unwrap();
        let (pa, pb) = permute_pair(&a, &b, &p).unwrap();
        assert_eq!(permute_pair(&pa, &pb, &inv).unwrap(), (a, b));
    }

    #[test]
    fn invalid_permutations_rejected() {
        let a = sol(&[1, 0, 0], &[0.0; 3], &[0.0; 3]);
        assert!(a.permuted(&[0, 0, 1]).is_err());
        assert!(a.permuted(&[0, 1]).is_err());
        assert!(a.permuted(&[0, 1, 3]).is_err());
    }

    #[test]
    fn record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Solution::random(7, 3, &mut rng).unwrap();
        assert_eq!(Solution::from_record(&a.to_record()).unwrap(), a);
        assert!(Solution::from_record(&[0.5, 1.0, 2.0]).is_err());
    }

    fn arb_solution(z: usize) -> impl Strategy<Value = Solution> {
        (
            proptest::collection::vec(any::<bool>(), z),
            proptest::collection::vec(PAN_MIN..=PAN_MAX, z),
            proptest::collection::vec(TILT_MIN..=TILT_MAX, z),
        )
            .prop_map(|(s, p, t)| Solution::new(s, p, t).unwrap())
    }

    proptest! {
        #[test]
        fn repair_always_hits_k(bits in proptest::collection::vec(any::<bool>(), 1..40), seed in any::<u64>(), kf in 0.0f64..1.0) {
            let k = ((bits.len() as f64) * kf) as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = repair(&bits, k, &mut rng).unwrap();
            prop_assert_eq!(out.iter().filter(|&&b| b).count(), k);
        }

        #[test]
        fn distances_are_symmetric_metrics(a in arb_solution(5), b in arb_solution(5), c in arb_solution(5)) {
            let g = gower_distance(&a, &b);
            prop_assert!((0.0..=1.0).contains(&g));
            prop_assert_eq!(g, gower_distance(&b, &a));
            let e = normalized_euclidean(&a, &b);
            prop_assert_eq!(e, normalized_euclidean(&b, &a));
            let via = normalized_euclidean(&a, &c) + normalized_euclidean(&c, &b);
            prop_assert!(e <= via + 1e-12);
            if a != b {
                prop_assert!(g > 0.0 && e > 0.0);
            }
        }
    }
}
