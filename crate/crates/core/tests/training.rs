use oneshot_motion::motion::{to_feature_tensor, MotionTensor};
use oneshot_motion::network::{save_checkpoint, PyramidModel};
use oneshot_motion::synthetic;
use oneshot_motion::training::{prepare_model, time_training_steps, train_all, train_level, transfer_init, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn clip() -> MotionTensor {
    to_feature_tensor(&synthetic::walk_cycle(&synthetic::GaitParams::default(), 96)).unwrap()
}

fn tiny(iters: usize) -> TrainConfig {
    let mut cfg = TrainConfig::preset("abl9-smoke").unwrap();
    cfg.batch_size = 2;
    cfg.level_iterations = vec![iters; 4];
    cfg.iteration_multiplier = 1.0;
    cfg
}

fn weights_equal(a: &PyramidModel, b: &PyramidModel, stage: usize) -> bool {
    a.stages[stage].generator == b.stages[stage].generator && a.stages[stage].discriminator == b.stages[stage].discriminator
}

#[test]
fn zero_iterations_leave_weights_untouched() {
    let cfg = tiny(0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut model, targets) = prepare_model(&clip(), &cfg, &mut rng).unwrap();
    let before = model.clone();
    let summary = train_level(&mut model, 0, &targets, &cfg, &mut rng, &mut Vec::new(), 0).unwrap();
    assert_eq!(summary.iterations, 0);
    for s in 0..model.num_stages() {
        assert!(weights_equal(&model, &before, s), "stage {s} changed");
    }
}

#[test]
fn higher_levels_do_not_touch_frozen_stages() {
    let cfg = tiny(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut model, targets) = prepare_model(&clip(), &cfg, &mut rng).unwrap();
    let untrained = model.clone();
    train_level(&mut model, 0, &targets, &cfg, &mut rng, &mut Vec::new(), 0).unwrap();
    assert!(!weights_equal(&model, &untrained, 0));
    let after_first = model.clone();
    train_level(&mut model, 1, &targets, &cfg, &mut rng, &mut Vec::new(), 0).unwrap();
    for s in model.pyramid.stages_in_level(0) {
        assert!(weights_equal(&model, &after_first, s), "frozen stage {s} moved");
    }
    for s in model.pyramid.stages_in_level(1) {
        assert!(!weights_equal(&model, &after_first, s), "live stage {s} did not train");
    }
    assert!(train_level(&mut model, 3, &targets, &cfg, &mut rng, &mut Vec::new(), 0).is_err());
}

#[test]
fn transfer_copies_early_layers_and_critic() {
    let cfg = tiny(0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut model, _) = prepare_model(&clip(), &cfg, &mut rng).unwrap();
    let before = model.clone();
    transfer_init(&mut model, 2, &mut rng).unwrap();
    let g = &model.stages[2].generator.layers;
    let donor = &before.stages[0].generator.layers;
    for l in 0..2 {
        assert_eq!(g[l].weight.as_slice().unwrap(), donor[l].weight.as_slice().unwrap());
        assert_eq!(g[l].bias, donor[l].bias);
    }
    for l in 2..g.len() {
        assert_ne!(g[l].weight, donor[l].weight);
        assert_ne!(g[l].weight, before.stages[2].generator.layers[l].weight);
    }
    assert_eq!(model.stages[2].discriminator, before.stages[1].discriminator);
    assert!(transfer_init(&mut model, 1, &mut rng).is_err());
}

#[test]
fn identical_runs_give_identical_checkpoints() {
    let cfg = tiny(2);
    let (a, ra) = train_all(&clip(), &cfg).unwrap();
    let (b, rb) = train_all(&clip(), &cfg).unwrap();
    assert_eq!(save_checkpoint(&a).unwrap(), save_checkpoint(&b).unwrap());
    assert_eq!(ra.trace.len(), rb.trace.len());
    assert_eq!(ra.total_iterations, 8);
    let mut other = cfg.clone();
    other.seed = 1;
    let (c, _) = train_all(&clip(), &other).unwrap();
    assert_ne!(save_checkpoint(&a).unwrap(), save_checkpoint(&c).unwrap());
}

#[test]
fn preset_budgets() {
    let abl9 = TrainConfig::preset("abl9").unwrap();
    assert_eq!(abl9.batch_size, 16);
    assert!(abl9.transfer_learning);
    assert_eq!((0..4).map(|l| abl9.iterations_for_level(l)).collect::<Vec<_>>(), vec![21000, 21000, 10500, 7000]);
    let base = TrainConfig::preset("baseline").unwrap();
    assert_eq!(base.batch_size, 1);
    assert!(!base.transfer_learning);
    let smoke = TrainConfig::preset("abl9-smoke").unwrap();
    assert_eq!(smoke.batch_size, 16);
    assert!(smoke.total_iterations() <= 3000);
    assert!(TrainConfig::preset("nope").is_err());
}

#[test]
fn a_batch_step_costs_less_than_its_samples_run_one_by_one() {
    let cfg = TrainConfig::preset("abl9-smoke").unwrap();
    let x = clip();
    let best = |batch: usize| (0..3).map(|_| time_training_steps(&x, &cfg, batch, 4).unwrap()).fold(f64::INFINITY, f64::min);
    let one = best(1);
    let sixteen = best(16);
    assert!(sixteen < 16.0 * one, "batch 16 step {sixteen:.1} ms vs batch 1 step {one:.1} ms");
}
