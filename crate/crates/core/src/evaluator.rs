//! The expensive objective: weighted probability that targets escape every
//! deployed directional sensor, with terrain occlusion.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{Solution, PAN_MAX, PAN_MIN, TILT_MAX, TILT_MIN};
use crate::scenario::{ScenarioInstance, SensorParams, Target};
use crate::terrain::{DemGrid, Point3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// Weighted residual blind-spot mass (minimized).
    pub fitness: f64,
    /// `1 - fitness / total_weight`.
    pub coverage_fraction: f64,
    /// `fitness / total_weight`.
    pub residual_fraction: f64,
}

impl ObjectiveValue {
    pub fn from_fitness(fitness: f64, total_weight: f64) -> Self {
        let residual = fitness / total_weight;
        ObjectiveValue {
            fitness,
            coverage_fraction: 1.0 - residual,
            residual_fraction: residual,
        }
    }
}

/// Counts true objective evaluations against a fixed budget.
///
/// Increments are atomic so one counter can be shared by concurrent callers.
#[derive(Debug)]
pub struct EvalCounter {
    used: AtomicU64,
    budget: u64,
}

impl EvalCounter {
    pub fn new(budget: u64) -> Self {
        EvalCounter {
            used: AtomicU64::new(0),
            budget,
        }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX)
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.used()
    }

    pub fn is_exhausted(&self) -> bool {
        self.used() >= self.budget
    }

    /// Reserves one evaluation and returns its zero-based sequence number.
    pub fn try_consume(&self) -> Result<u64> {
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| (u < self.budget).then_some(u + 1))
            .map_err(|used| Error::BudgetExhausted {
                used,
                budget: self.budget,
            })
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Distance membership, decreasing from 1 to 0 around `t_d`.
pub fn mu_distance(d: f64, p: &SensorParams) -> f64 {
    logistic(-p.beta_d * (d - p.t_d))
}

// Even in `alpha`; evaluated at |alpha| so the symmetry is exact in floating point.
fn window(alpha: f64, beta: f64, t: f64) -> f64 {
    let a = alpha.abs();
    logistic(beta * (a + t)) - logistic(beta * (a - t))
}

/// Horizontal-deviation membership; `alpha_p` in degrees.
pub fn mu_pan(alpha_p: f64, p: &SensorParams) -> f64 {
    window(alpha_p, p.beta_p, p.t_p)
}

/// Vertical-deviation membership; `alpha_t` in degrees.
pub fn mu_tilt(alpha_t: f64, p: &SensorParams) -> f64 {
    window(alpha_t, p.beta_t, p.t_t)
}

/// Pan and tilt deviation (degrees) of the direction sensor -> target from
/// the sensor heading.
fn deviations(sensor: &Point3, pan: f64, tilt: f64, target: &Point3) -> (f64, f64) {
    let dx = target.x - sensor.x;
    let dy = target.y - sensor.y;
    let dz = target.z - sensor.z;
    let horiz = (dx * dx + dy * dy).sqrt();
    if horiz == 0.0 {
        // straight up or down: no meaningful pan deviation
        return (0.0, dz.signum() * 90.0 * f64::from(dz != 0.0) - tilt);
    }
    let theta = pan.to_radians();
    let cos_dev = ((theta.cos() * dx + theta.sin() * dy) / horiz).clamp(-1.0, 1.0);
    let alpha_p = cos_dev.acos().to_degrees();
    let alpha_t = (dz / horiz).atan().to_degrees() - tilt;
    (alpha_p, alpha_t)
}

/// Probability that a sensor at `sensor`, oriented `(pan, tilt)`, detects `target`.
pub fn sense_probability(
    sensor: &Point3,
    pan: f64,
    tilt: f64,
    target: &Target,
    grid: &DemGrid,
    p: &SensorParams,
) -> Result<f64> {
    if !(PAN_MIN..=PAN_MAX).contains(&pan) || !(TILT_MIN..=TILT_MAX).contains(&tilt) {
        return Err(Error::domain(format!("sensor orientation ({pan}, {tilt}) out of range")));
    }
    let q = &target.position;
    let (alpha_p, alpha_t) = deviations(sensor, pan, tilt, q);
    let membership = mu_distance(sensor.distance(q), p) * mu_pan(alpha_p, p) * mu_tilt(alpha_t, p);
    if grid.line_of_sight(sensor, q)? {
        Ok(membership)
    } else {
        Ok(0.0)
    }
}

/// One deployed sensor: site index plus orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub site: usize,
    pub pan: f64,
    pub tilt: f64,
}

/// Sum of a slice by fixed pairwise halving, independent of thread count.
fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (l, r) = xs.split_at(n / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}

/// Weighted blind-spot mass of an arbitrary set of placements. No budget or
/// cardinality checks; [`evaluate`] is the counted entry point.
pub fn deployment_fitness(inst: &ScenarioInstance, placements: &[Placement]) -> Result<f64> {
    for pl in placements {
        if pl.site >= inst.num_sites() {
            return Err(Error::domain(format!("site index {} out of range", pl.site)));
        }
    }
    let grid = inst.grid();
    let params = inst.params();
    let terms: Vec<f64> = inst
        .targets()
        .par_iter()
        .with_min_len(32)
        .map(|target| {
            let mut miss = 1.0;
            for pl in placements {
                let sensor = &inst.sites()[pl.site];
                miss *= 1.0 - sense_probability(sensor, pl.pan, pl.tilt, target, grid, params)?;
            }
            Ok(target.weight * miss)
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&terms))
}

pub fn placements(sol: &Solution) -> Vec<Placement> {
    sol.selected()
        .map(|j| Placement {
            site: j,
            pan: sol.pan[j],
            tilt: sol.tilt[j],
        })
        .collect()
}

/// True objective of a valid solution. Consumes one evaluation from `counter`.
pub fn evaluate(sol: &Solution, inst: &ScenarioInstance, counter: &EvalCounter) -> Result<ObjectiveValue> {
    sol.validate(inst.num_sites(), inst.k())?;
    counter.try_consume()?;
    let fitness = deployment_fitness(inst, &placements(sol))?;
    Ok(ObjectiveValue::from_fitness(fitness, inst.total_weight()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn reference_params() -> SensorParams {
        SensorParams::default()
    }

    #[test]
    fn distance_membership_values() {
        let p = reference_params();
        assert_abs_diff_eq!(mu_distance(25.0, &p), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(mu_distance(30.0, &p), 0.0066928509242848554, epsilon = 1e-12);
        assert_abs_diff_eq!(mu_distance(0.0, &p), 1.0, epsilon = 1e-9);
        let mut last = 1.1;
        for i in 0..200 {
            let v = mu_distance(i as f64 * 0.5, &p);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn angular_membership_values() {
        let p = reference_params();
        assert_abs_diff_eq!(mu_pan(0.0, &p), 0.9950547536867305, epsilon = 1e-12);
        assert_abs_diff_eq!(mu_pan(40.0, &p), 0.4999938558253978, epsilon = 1e-12);
        assert_abs_diff_eq!(mu_tilt(0.0, &p), 0.9950547536867305, epsilon = 1e-12);
        assert_abs_diff_eq!(mu_tilt(40.0, &p), 0.4999938558253978, epsilon = 1e-12);
        for i in 0..=180 {
            let a = i as f64;
            assert_eq!(mu_pan(a, &p), mu_pan(-a, &p));
            assert_eq!(mu_tilt(a / 2.0, &p), mu_tilt(-a / 2.0, &p));
        }
    }

    fn flat() -> DemGrid {
        DemGrid::constant((0.0, 0.0), 0.5, 100, 100, 0.0).unwrap()
    }

    fn target(x: f64, y: f64, z: f64) -> Target {
        Target {
            position: Point3::new(x, y, z),
            weight: 1.0,
        }
    }

    #[test]
    fn dead_ahead_at_threshold_distance() {
        let g = flat();
        let p = reference_params();
        let s = Point3::new(5.0, 10.0, 0.01);
        // 25 km along +x, same height: alpha_p = 0, alpha_t = -tilt
        let q = target(30.0, 10.0, 0.01);
        let got = sense_probability(&s, 0.0, 10.0, &q, &g, &p).unwrap();
        let want = 0.5 * mu_pan(0.0, &p) * mu_tilt(-10.0, &p);
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn vertical_target_has_zero_pan_deviation() {
        let g = flat();
        let p = reference_params();
        let s = Point3::new(5.0, 5.0, 0.01);
        let q = target(5.0, 5.0, 3.0);
        let got = sense_probability(&s, 137.0, 60.0, &q, &g, &p).unwrap();
        let want = mu_distance(2.99, &p) * mu_pan(0.0, &p) * mu_tilt(30.0, &p);
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn occluded_target_gets_zero() {
        let mut z = vec![0.0; 20 * 20];
        for r in 0..20 {
            z[r * 20 + 10] = 8.0;
        }
        let g = DemGrid::new((0.0, 0.0), 1.0, 20, 20, z).unwrap();
        let s = Point3::new(2.5, 2.5, 0.01);
        let q = target(17.5, 2.5, 3.0);
        for pan in [-90.0, 0.0, 45.0] {
            assert_eq!(sense_probability(&s, pan, 10.0, &q, &g, &reference_params()).unwrap(), 0.0);
        }
    }

    #[test]
    fn bad_orientation_rejected() {
        let g = flat();
        let s = Point3::new(5.0, 5.0, 0.01);
        let q = target(6.0, 5.0, 3.0);
        assert!(sense_probability(&s, 181.0, 0.0, &q, &g, &reference_params()).is_err());
        assert!(sense_probability(&s, 0.0, -91.0, &q, &g, &reference_params()).is_err());
    }

    #[test]
    fn counter_stops_at_budget() {
        let c = EvalCounter::new(2);
        assert_eq!(c.try_consume().unwrap(), 0);
        assert_eq!(c.try_consume().unwrap(), 1);
        assert!(matches!(c.try_consume(), Err(Error::BudgetExhausted { used: 2, budget: 2 })));
        assert_eq!(c.used(), 2);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1001).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn two_half_sensors_leave_a_quarter() {
        // Very steep angular windows make mu_pan(0) = mu_tilt(0) = 1 in double
        // precision, and both sensors sit exactly t_d away, so P = 1/2 each.
        let g = DemGrid::constant((0.0, 0.0), 1.0, 20, 60, 0.0).unwrap();
        let params = SensorParams {
            beta_p: 10.0,
            beta_t: 10.0,
            ..reference_params()
        };
        let sites = vec![Point3::new(5.0, 10.0, 1.0), Point3::new(55.0, 10.0, 1.0)];
        let inst = ScenarioInstance::new("pair", g, sites, vec![target(30.0, 10.0, 1.0)], 2, params).unwrap();
        let sol = Solution::new(vec![true, true], vec![0.0, 180.0], vec![0.0, 0.0]).unwrap();
        let counter = EvalCounter::new(10);
        let obj = evaluate(&sol, &inst, &counter).unwrap();
        assert_eq!(obj.fitness, 0.25);
        assert_eq!(obj.coverage_fraction, 0.75);
        assert_eq!(counter.used(), 1);
    }

    #[test]
    fn evaluate_rejects_wrong_cardinality_without_charging() {
        let g = flat();
        let sites = vec![Point3::new(5.0, 10.0, 0.01), Point3::new(15.0, 10.0, 0.01)];
        let inst = ScenarioInstance::new("x", g, sites, vec![target(30.0, 10.0, 3.0)], 1, reference_params()).unwrap();
        let sol = Solution::new(vec![true, true], vec![0.0; 2], vec![0.0; 2]).unwrap();
        let counter = EvalCounter::new(10);
        assert!(matches!(evaluate(&sol, &inst, &counter), Err(Error::Domain(_))));
        assert_eq!(counter.used(), 0);
    }
}
