use super::*;
use crate::scenario::{generate_instance, Scale};
use crate::terrain::{generate_terrain, TerrainParams};

fn instance() -> ScenarioInstance {
    let grid = generate_terrain(
        3,
        &TerrainParams {
            rows: 64,
            cols: 64,
            ..TerrainParams::default()
        },
    )
    .unwrap();
    generate_instance(3, Scale::Small, &grid).unwrap()
}

fn quick(variant: Variant, seed: u64, max_fes: u64) -> RunConfig {
    RunConfig {
        variant,
        seed,
        max_fes,
        pop_size: 20,
        initial_samples: Some(30),
        ranker: RankerConfig {
            d_model: 16,
            n_heads: 2,
            feedforward_dim: 32,
            epochs_per_fit: 2,
            augmentation_factor: 2,
            ..RankerConfig::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn fitness_diversity_examples() {
    assert!((fitness_diversity_of(&[10.0, 20.0, 30.0]) - 0.5).abs() < 1e-15);
    assert_eq!(fitness_diversity_of(&[4.0, 4.0, 4.0]), 0.0);
    // mean close to best with a single outlier pushes diversity towards 1
    let mut v = vec![1.0; 999];
    v.push(1000.0);
    assert!(fitness_diversity_of(&v) > 0.99);
    let mut a = Archive::new();
    for (i, f) in [30.0, 10.0, 20.0, 99.0].into_iter().enumerate() {
        a.push(EvaluatedSolution {
            solution: Solution::new(vec![true], vec![0.0], vec![0.0]).unwrap(),
            fitness: f,
            eval_index: i as u64,
        });
    }
    assert!((fitness_diversity(&a, 3) - 0.5).abs() < 1e-15);
    assert_eq!(a.best().unwrap().fitness, 10.0);
}

#[test]
fn initial_design_is_valid_and_stratified() {
    let inst = instance();
    let n = 2 * inst.dimension();
    let design = initial_design(&inst, n, 5).unwrap();
    assert_eq!(design.len(), n);
    assert!(design.iter().all(|s| s.is_valid(inst.k())));
    for j in 0..inst.num_sites() {
        let mut hit = vec![0; n];
        for s in &design {
            let u = (s.pan[j] - PAN_MIN) / PAN_RANGE;
            hit[((u * n as f64) as usize).min(n - 1)] += 1;
        }
        assert!(hit.iter().all(|&h| h == 1), "pan stratum counts for site {j}");
    }
}

#[test]
fn budget_just_past_init_allows_one_global_iteration() {
    let inst = instance();
    let mut cfg = quick(Variant::Rishm, 1, 0);
    cfg.initial_samples = None;
    cfg.max_fes = 2 * inst.dimension() as u64 + 3;
    let counter = EvalCounter::new(cfg.max_fes);
    let res = run_with_counter(&inst, &cfg, &counter).unwrap();
    assert_eq!(counter.used(), cfg.max_fes);
    assert_eq!(res.iterations, 1);
    let init = res.trace.iter().filter(|t| t.source == Source::Init).count();
    assert_eq!(init, 2 * inst.dimension());
    assert_eq!(res.trace.len() - init, 3);
    assert_eq!(res.surrogate_log.len(), 1);
}

#[test]
fn every_variant_respects_budget_and_monotone_trace() {
    let inst = instance();
    for variant in Variant::ALL {
        let cfg = quick(variant, 2, 70);
        let counter = EvalCounter::new(cfg.max_fes);
        let res = run_with_counter(&inst, &cfg, &counter).unwrap();
        assert_eq!(counter.used(), 70, "{variant}");
        assert_eq!(res.evaluations, 70);
        assert_eq!(res.trace.len(), 70);
        for (i, w) in res.trace.windows(2).enumerate() {
            assert!(w[1].best_fitness <= w[0].best_fitness, "{variant} step {i}");
            assert_eq!(w[1].fe, w[0].fe + 1);
        }
        assert_eq!(res.trace.last().unwrap().best_fitness, res.final_best());
        let local = res.trace.iter().filter(|t| t.source == Source::Local).count();
        if matches!(variant, Variant::RishmWoLocal | Variant::GaOnly) {
            assert_eq!(local, 0, "{variant}");
            assert!(res.phase_log.is_empty());
        }
        if !matches!(variant, Variant::Rishm | Variant::RishmWoLocal) {
            assert!(res.surrogate_log.is_empty(), "{variant}");
        }
        assert!(res.best.solution.is_valid(inst.k()));
    }
}

#[test]
fn runs_are_deterministic_per_seed() {
    let inst = instance();
    let a = run(&inst, &quick(Variant::Rishm, 7, 80)).unwrap();
    let b = run(&inst, &quick(Variant::Rishm, 7, 80)).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let c = run(&inst, &quick(Variant::Rishm, 8, 80)).unwrap();
    assert_ne!(
        a.trace.iter().map(|t| t.fitness).collect::<Vec<_>>(),
        c.trace.iter().map(|t| t.fitness).collect::<Vec<_>>()
    );
    let back = RunResult::from_json(&a.to_json(), "mem").unwrap();
    assert_eq!(back, a);
}

#[test]
fn rejects_budget_not_exceeding_init() {
    let inst = instance();
    let mut cfg = quick(Variant::Rishm, 0, 30);
    assert!(matches!(run(&inst, &cfg), Err(Error::Config(_))));
    cfg.delta = 1.5;
    cfg.max_fes = 100;
    assert!(matches!(run(&inst, &cfg), Err(Error::Config(_))));
    assert!("nonsense".parse::<Variant>().is_err());
    assert_eq!("ga_only".parse::<Variant>().unwrap(), Variant::GaOnly);
}

#[test]
fn accuracy_experiment_reports_both_sets() {
    let inst = instance();
    let cfg = quick(Variant::Rishm, 3, 100);
    let rep = surrogate_accuracy(&inst, &cfg).unwrap();
    assert_eq!(rep.train_size, 30);
    assert_eq!(rep.test_size, 20);
    assert!((0.0..=1.0).contains(&rep.test_accuracy));
    assert!(rep.train_accuracy > 0.5);
    assert_eq!(rep, surrogate_accuracy(&inst, &cfg).unwrap());
}

#[test]
fn local_phase_runs_when_diversity_threshold_forces_it() {
    let inst = instance();
    // with delta = 1 every iteration toggles, so phases alternate
    let cfg = RunConfig {
        delta: 1.0,
        ..quick(Variant::Rishm, 4, 60)
    };
    let res = run(&inst, &cfg).unwrap();
    let local = res.trace.iter().filter(|t| t.source == Source::Local).count();
    let global = res.trace.iter().filter(|t| t.source == Source::Global).count();
    assert!(local > 0 && global > 0, "local {local} global {global}");
    assert!(res.phase_log.len() as u64 >= res.iterations - 1);
    assert_eq!(res.phase_log[0].to, Phase::Local);
}
