//! Acceptance suite. Runs the ten acceptance criteria in order and prints one
//! PASS or FAIL line for each, with the measured numbers.
//!
//! By default the process exits 0 even if a criterion fails, so that an
//! honest red result stays visible without hiding the rest of the workspace
//! tests. Set `ACCEPTANCE_STRICT=1` to turn any failure into a non-zero exit.
//! Positional arguments select criteria by number or by a name fragment.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rishm_cli::median;
use rishm_core::controller::{
    initial_design, run_with_counter, surrogate_accuracy, RunConfig, RunResult, Source, Variant,
};
use rishm_core::evaluator::{evaluate, mu_distance, mu_pan, EvalCounter};
use rishm_core::ga::{ga_offspring, GaConfig};
use rishm_core::genome::{repair, EvaluatedSolution, Solution};
use rishm_core::local::{fit_eda, fit_rbfn, sample_eda, FitnessPredictor, RbfKernel};
use rishm_core::ranker::{build_initial_pairs, pairwise_accuracy, RankModel, RankerConfig};
use rishm_core::scenario::{generate_instance, Scale, ScenarioInstance, SensorParams};
use rishm_core::terrain::{generate_terrain, DemGrid, Point3, TerrainParams};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small_instance() -> &'static ScenarioInstance {
    static INST: OnceLock<ScenarioInstance> = OnceLock::new();
    INST.get_or_init(|| {
        let grid = generate_terrain(1, &TerrainParams::default()).unwrap();
        generate_instance(1, Scale::Small, &grid).unwrap()
    })
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn c1_membership() -> Outcome {
    let p = SensorParams::default();
    let closed_pan = |a: f64| logistic(0.15 * (a + 40.0)) - logistic(0.15 * (a - 40.0));
    let cases = [
        ("mu_distance(25)", mu_distance(25.0, &p), 0.5, logistic(-p.beta_d * (25.0 - p.t_d))),
        ("mu_pan(0)", mu_pan(0.0, &p), 0.9950548, closed_pan(0.0)),
        ("mu_pan(40)", mu_pan(40.0, &p), 0.4999939, closed_pan(40.0)),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, got, quoted, closed) in cases {
        worst = worst.max((got - closed).abs()).max((got - quoted).abs());
        parts.push(format!("{name}={got:.7}"));
    }
    check(worst <= 1e-7, format!("{}; max deviation {worst:.1e}", parts.join(", ")))
}

fn c2_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for seed in 1000..1020 {
        let inst = common::toy_instance(seed);
        for _ in 0..10 {
            let sol = Solution::random(inst.num_sites(), inst.k(), &mut rng).unwrap();
            let got = evaluate(&sol, &inst, &EvalCounter::unlimited()).unwrap().fitness;
            worst = worst.max((got - common::brute_force_fitness(&inst, &sol)).abs());
            n += 1;
        }
    }
    check(worst <= 1e-9, format!("{n} solutions on 20 toy instances; max |diff| {worst:.1e}"))
}

fn c3_line_of_sight() -> Outcome {
    let hills = generate_terrain(
        5,
        &TerrainParams {
            rows: 64,
            cols: 64,
            cell_size: 0.5,
            roughness: 0.6,
            max_height: 4.0,
        },
    )
    .unwrap();
    let flat = DemGrid::constant((0.0, 0.0), 0.5, 64, 64, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (hills.width(), hills.height());
    let mut asym = 0;
    let mut hidden = 0;
    let mut flat_blocked = 0;
    for _ in 0..1000 {
        let mut pt = |g: &DemGrid| {
            let (x, y) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            Point3::new(x, y, g.elevation_at(x, y).unwrap() + rng.random_range(0.01..3.0))
        };
        let (a, b) = (pt(&hills), pt(&hills));
        let ab = hills.line_of_sight(&a, &b).unwrap();
        asym += usize::from(ab != hills.line_of_sight(&b, &a).unwrap());
        hidden += usize::from(!ab);
        let (a, b) = (pt(&flat), pt(&flat));
        flat_blocked += usize::from(!flat.line_of_sight(&a, &b).unwrap());
    }
    let mut ridge = vec![0.0; 12 * 12];
    for r in 0..12 {
        ridge[r * 12 + 5] = 5.0;
    }
    let ridge = DemGrid::new((0.0, 0.0), 1.0, 12, 12, ridge).unwrap();
    let ridge_visible = ridge
        .line_of_sight(&Point3::new(1.0, 1.0, 1.0), &Point3::new(10.0, 1.0, 1.0))
        .unwrap();
    check(
        asym == 0 && flat_blocked == 0 && !ridge_visible && hidden > 0,
        format!(
            "asymmetric {asym}/1000 ({hidden} occluded), flat blocked {flat_blocked}/1000, ridge visible {ridge_visible}"
        ),
    )
}

fn c4_validity() -> Outcome {
    const N: usize = 10_000;
    let inst = small_instance();
    let (z, k) = (inst.num_sites(), inst.k());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = [0usize; 4];

    for _ in 0..N {
        let density: f64 = rng.random_range(0.0..1.0);
        let raw: Vec<bool> = (0..z).map(|_| rng.random_bool(density)).collect();
        let fixed = repair(&raw, k, &mut rng).unwrap();
        bad[0] += usize::from(fixed.len() != z || fixed.iter().filter(|&&b| b).count() != k);
    }

    let archive: Vec<EvaluatedSolution> = (0..200)
        .map(|i| EvaluatedSolution {
            solution: Solution::random(z, k, &mut rng).unwrap(),
            fitness: rng.random_range(0.0..500.0),
            eval_index: i,
        })
        .collect();
    let cfg = GaConfig {
        mutation_prob: 0.5,
        ..GaConfig::default()
    };
    let mut count = 0;
    while count < N {
        for child in ga_offspring(&archive[..100], &cfg, k, &mut rng).unwrap() {
            bad[1] += usize::from(!child.is_valid(k));
            count += 1;
        }
    }

    let model = fit_eda(&archive, 45).unwrap();
    let samples = sample_eda(&model, N, k, &mut rng).unwrap();
    bad[2] += samples.iter().filter(|s| !s.is_valid(k)).count() + N - samples.len();

    let mut count = 0;
    for seed in 0..40 {
        for s in initial_design(inst, 250, seed).unwrap() {
            bad[3] += usize::from(!s.is_valid(k));
            count += 1;
        }
    }
    check(
        bad == [0; 4] && count == N,
        format!(
            "violations over 10^4 each: repair {}, ga_offspring {}, sample_eda {}, initialize {}",
            bad[0], bad[1], bad[2], bad[3]
        ),
    )
}

fn c5_rbfn() -> Outcome {
    let inst = small_instance();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let archive: Vec<EvaluatedSolution> = (0..30)
        .map(|i| {
            let solution = Solution::random(inst.num_sites(), inst.k(), &mut rng).unwrap();
            let fitness = evaluate(&solution, inst, &EvalCounter::unlimited()).unwrap().fitness;
            EvaluatedSolution {
                solution,
                fitness,
                eval_index: i,
            }
        })
        .collect();
    let mut parts = Vec::new();
    let mut ok = true;
    for kernel in [RbfKernel::Gaussian, RbfKernel::Exponential] {
        let model = fit_rbfn(&archive, 30, 0.0, kernel).unwrap();
        let worst = archive
            .iter()
            .map(|e| (model.predict(&e.solution) - e.fitness).abs())
            .fold(0.0, f64::max);
        ok &= worst <= 1e-6 && model.centers().len() == 30;
        parts.push(format!("{kernel:?} max |err| {worst:.1e} (fallback {})", model.used_fallback()));
    }
    check(ok, parts.join(", "))
}

fn separable_archive(n: usize, seed: u64) -> Vec<EvaluatedSolution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let solution = Solution::random(8, 3, &mut rng).unwrap();
            let fitness = solution.select.iter().map(|&b| f64::from(u8::from(b))).sum::<f64>()
                + solution.pan.iter().sum::<f64>() / 180.0
                + solution.tilt.iter().sum::<f64>() / 90.0;
            EvaluatedSolution {
                solution,
                fitness,
                eval_index: i as u64,
            }
        })
        .collect()
}

fn c6_ranker() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = RankerConfig {
        embed_size: 4,
        d_model: 16,
        feedforward_dim: 32,
        n_heads: 2,
        batch_size: 128,
        learning_rate: 3e-3,
        epochs_per_fit: 20,
        augmentation_factor: 2,
        ..RankerConfig::default()
    };
    let train = separable_archive(60, 60);
    let pairs = build_initial_pairs(&train, cfg.augmentation_factor, &mut rng).unwrap();
    let mut model = RankModel::new(cfg, &mut rng).unwrap();
    model.fit(&pairs, &mut rng).unwrap();
    let train_acc = pairwise_accuracy(&model, &train).unwrap();

    let mut anti: f64 = 0.0;
    let mut self_dev: f64 = 0.0;
    for _ in 0..1000 {
        let a = Solution::random(8, 3, &mut rng).unwrap();
        let b = Solution::random(8, 3, &mut rng).unwrap();
        let ab = model.predict_pair(&a, &b).unwrap();
        let ba = model.predict_pair(&b, &a).unwrap();
        anti = anti.max((ab + ba - 1.0).abs());
        self_dev = self_dev.max((model.predict_pair(&a, &a).unwrap() - 0.5).abs());
    }

    let inst = small_instance();
    let held_out: Vec<f64> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = RunConfig {
                seed,
                ..RunConfig::default()
            };
            surrogate_accuracy(inst, &cfg).unwrap().test_accuracy
        })
        .collect();
    let med = median(&held_out);
    let list: Vec<String> = held_out.iter().map(|a| format!("{:.1}", 100.0 * a)).collect();
    check(
        anti <= 1e-6 && self_dev == 0.0 && train_acc >= 0.95 && med >= 0.55,
        format!(
            "antisymmetry {anti:.1e}, self-pair |p-0.5| {self_dev:.1e}, separable train accuracy {:.1}%, held-out [{}] median {:.1}%",
            100.0 * train_acc,
            list.join(", "),
            100.0 * med
        ),
    )
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const E2E_VARIANTS: [Variant; 4] = [Variant::Rishm, Variant::RishmWoLocal, Variant::RishmWoGlobal, Variant::GaOnly];
const E2E_FES: u64 = 600;

struct Instrumented {
    result: RunResult,
    used: u64,
}

/// The paired runs shared by criteria 7 to 9.
fn e2e_runs() -> &'static Vec<(Variant, u64, Instrumented)> {
    static RUNS: OnceLock<Vec<(Variant, u64, Instrumented)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let inst = small_instance();
        let jobs: Vec<(Variant, u64)> = E2E_VARIANTS
            .iter()
            .flat_map(|&v| SEEDS.iter().map(move |&s| (v, s)))
            .collect();
        jobs.into_par_iter()
            .map(|(variant, seed)| {
                let cfg = RunConfig {
                    variant,
                    seed,
                    max_fes: E2E_FES,
                    ..RunConfig::default()
                };
                let counter = EvalCounter::new(cfg.max_fes);
                let result = run_with_counter(inst, &cfg, &counter).unwrap();
                (variant, seed, Instrumented { result, used: counter.used() })
            })
            .collect()
    })
}

fn finals(variant: Variant) -> Vec<f64> {
    SEEDS
        .iter()
        .map(|&s| {
            e2e_runs()
                .iter()
                .find(|(v, seed, _)| *v == variant && *seed == s)
                .map(|(_, _, r)| r.result.final_best())
                .unwrap()
        })
        .collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(", ")
}

fn c7_relative_performance() -> Outcome {
    let rishm = finals(Variant::Rishm);
    let ga = finals(Variant::GaOnly);
    let ratios: Vec<f64> = rishm.iter().zip(&ga).map(|(r, g)| r / g).collect();
    let med = median(&ratios);
    check(
        med <= 0.85,
        format!(
            "rishm [{}] vs ga_only [{}] at {E2E_FES} FEs; paired ratio median {med:.3} (needs <= 0.850)",
            fmt_list(&rishm),
            fmt_list(&ga)
        ),
    )
}

fn c8_ablation() -> Outcome {
    let m = |v| median(&finals(v));
    let (full, wo_l, wo_g) = (m(Variant::Rishm), m(Variant::RishmWoLocal), m(Variant::RishmWoGlobal));
    check(
        full <= wo_l && wo_l <= wo_g,
        format!("medians rishm {full:.2} <= rishm_wo_local {wo_l:.2} <= rishm_wo_global {wo_g:.2}"),
    )
}

fn c9_budget() -> Outcome {
    let mut problems = Vec::new();
    let mut surrogate_fits = 0;
    for (v, seed, r) in e2e_runs() {
        let res = &r.result;
        let true_evals = res.trace.len() as u64;
        if r.used != E2E_FES.min(true_evals) || r.used != res.evaluations || true_evals != E2E_FES {
            problems.push(format!("{v}/{seed}: counter {} trace {true_evals}", r.used));
        }
        if res.trace.windows(2).any(|w| w[1].best_fitness > w[0].best_fitness) {
            problems.push(format!("{v}/{seed}: trace not monotone"));
        }
        if res.trace.iter().enumerate().any(|(i, t)| t.fe != i as u64 + 1) {
            problems.push(format!("{v}/{seed}: trace has gaps"));
        }
        surrogate_fits += res.surrogate_log.len();
        let local = res.trace.iter().filter(|t| t.source == Source::Local).count();
        if matches!(v, Variant::RishmWoLocal | Variant::GaOnly) && local > 0 {
            problems.push(format!("{v}/{seed}: {local} local evaluations"));
        }
    }
    check(
        problems.is_empty() && surrogate_fits > 0,
        if problems.is_empty() {
            format!(
                "{} instrumented runs: counter = trace length = {E2E_FES}, traces monotone, {surrogate_fits} surrogate fits charged nothing",
                e2e_runs().len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn rishm(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rishm"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove(rishm_cli::OUT_DIR_ENV)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn c10_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dirs = [root.path().join("a"), root.path().join("b")];
    for dir in &dirs {
        rishm(dir, &["gen", "--scale", "small", "--seed", "7"])?;
        let inst = dir.join("instance-small-7.json");
        let inst = inst.to_str().unwrap();
        rishm(dir, &["run", "--instance", inst, "--variant", "rishm,ga_only,rishm_wo_global,random_search", "--seed", "3", "--max-fes", "170"])?;
        rishm(dir, &["accuracy", "--instance", inst, "--seed", "2"])?;
        let results: Vec<String> = ["rishm", "ga_only", "rishm_wo_global", "random_search"]
            .iter()
            .map(|v| dir.join(format!("result-small-7-{v}-3.json")).to_string_lossy().into_owned())
            .collect();
        let mut args = vec!["report"];
        args.extend(results.iter().map(String::as_str));
        rishm(dir, &args)?;
    }
    let mut names: Vec<String> = std::fs::read_dir(&dirs[0])
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let a = std::fs::read(dirs[0].join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].join(name)).map_err(|e| e.to_string())?;
        if a != b {
            differing.push(name.clone());
        }
    }
    check(
        differing.is_empty() && names.len() == 8,
        format!(
            "gen, run, accuracy and report twice: {} files compared, {} differ {:?}",
            names.len(),
            differing.len(),
            differing
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("membership functions", c1_membership),
        ("evaluator oracle", c2_oracle),
        ("line-of-sight properties", c3_line_of_sight),
        ("solution validity under fuzzing", c4_validity),
        ("RBFN interpolation", c5_rbfn),
        ("ranker sanity", c6_ranker),
        ("end-to-end relative performance", c7_relative_performance),
        ("ablation ordering", c8_ablation),
        ("budget integrity", c9_budget),
        ("determinism", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut lines = Vec::new();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("criterion {} ({name})", i + 1);
        let selected = filter
            .iter()
            .any(|p| p.parse::<usize>().map_or_else(|_| label.contains(p.as_str()), |n| n == i + 1));
        if !filter.is_empty() && !selected {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let line = match outcome {
            Ok(d) => format!("PASS {label}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                format!("FAIL {label}: {d} [{secs:.1}s]")
            }
        };
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary: {} passed, {failed} failed", lines.len() - failed);
    for line in &lines {
        println!("{}", line.split(':').next().unwrap());
    }
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
