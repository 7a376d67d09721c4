//! Shared fixtures: random toy instances and a brute-force objective written
//! independently of the library evaluator.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rishm_core::genome::Solution;
use rishm_core::scenario::{ScenarioInstance, SensorParams, Target};
use rishm_core::terrain::{generate_terrain, Point3, TerrainParams};

/// Hilly 20 km x 20 km instance with up to 4 sites and 5 targets.
pub fn toy_instance(seed: u64) -> ScenarioInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = generate_terrain(
        seed,
        &TerrainParams {
            rows: 20,
            cols: 20,
            cell_size: 1.0,
            roughness: 0.6,
            max_height: 3.0,
        },
    )
    .unwrap();
    let z = rng.random_range(1..=4);
    let q = rng.random_range(1..=5);
    let k = rng.random_range(1..=z.min(2));
    let mut point = |lift: (f64, f64)| {
        let x = rng.random_range(0.0..20.0);
        let y = rng.random_range(0.0..20.0);
        let ground = grid.elevation_at(x, y).unwrap();
        Point3::new(x, y, ground + rng.random_range(lift.0..lift.1))
    };
    let sites: Vec<Point3> = (0..z).map(|_| point((0.01, 0.02))).collect();
    let positions: Vec<Point3> = (0..q).map(|_| point((0.2, 4.0))).collect();
    let targets: Vec<Target> = positions
        .into_iter()
        .map(|position| Target {
            position,
            weight: rng.random_range(1.0..5.0),
        })
        .collect();
    let params = SensorParams {
        beta_d: 1.0,
        beta_p: 0.15,
        beta_t: 0.15,
        t_d: 12.0,
        t_p: 40.0,
        t_t: 40.0,
    };
    ScenarioInstance::new(format!("toy-{seed}"), grid, sites, targets, k, params).unwrap()
}

fn logistic(x: f64) -> f64 {
    0.5 * (1.0 + (0.5 * x).tanh())
}

/// Objective from first principles. Pan deviation comes from `atan2`
/// headings rather than the arccos of a dot product, and the logistic is
/// evaluated through `tanh`. Visibility reuses the raster's line-of-sight
/// test, which has its own property checks.
pub fn brute_force_fitness(inst: &ScenarioInstance, sol: &Solution) -> f64 {
    let p = inst.params();
    let mut total = 0.0;
    for t in inst.targets() {
        let q = t.position;
        let mut miss = 1.0;
        for j in 0..sol.num_sites() {
            if !sol.select[j] {
                continue;
            }
            let s = inst.sites()[j];
            let (dx, dy, dz) = (q.x - s.x, q.y - s.y, q.z - s.z);
            let h = dx.hypot(dy);
            let dist = (dx * dx + dy * dy + dz * dz).sqrt();
            let mu_d = 1.0 - logistic(p.beta_d * (dist - p.t_d));
            let (a_p, a_t) = if h == 0.0 {
                (0.0, if dz > 0.0 { 90.0 } else if dz < 0.0 { -90.0 } else { 0.0 } - sol.tilt[j])
            } else {
                let heading = dy.atan2(dx).to_degrees();
                let mut diff = heading - sol.pan[j];
                while diff > 180.0 {
                    diff -= 360.0;
                }
                while diff < -180.0 {
                    diff += 360.0;
                }
                (diff.abs(), dz.atan2(h).to_degrees() - sol.tilt[j])
            };
            let win = |a: f64, beta: f64, th: f64| logistic(beta * (a + th)) - logistic(beta * (a - th));
            let visible = inst.grid().line_of_sight(&s, &q).unwrap();
            let prob = mu_d * win(a_p, p.beta_p, p.t_p) * win(a_t, p.beta_t, p.t_t) * if visible { 1.0 } else { 0.0 };
            miss *= 1.0 - prob;
        }
        total += t.weight * miss;
    }
    total
}
