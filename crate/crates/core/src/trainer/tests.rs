use super::*;
use crate::augment::make_shuffled;
use crate::model::ModelConfig;
use crate::synth::generate_corpus;
use crate::teacher::HashOracle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(n: usize) -> (Vocab, Vec<SegmentedDocument>, ModelConfig) {
    let docs = generate_corpus(n, 3);
    let vocab = Vocab::build(&docs, 1).unwrap();
    let corpus = prepare_corpus(&docs, &vocab, 48).unwrap();
    let cfg = ModelConfig {
        d_model: 8,
        n_layers_enc: 1,
        n_layers_dec: 1,
        n_heads: 2,
        d_ff: 16,
        vocab_size: vocab.len(),
        max_len: 48,
        dropout_rate: 0.0,
    };
    (vocab, corpus, cfg)
}

fn train_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        max_steps: steps,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn adam_first_step_moves_by_lr() {
    let cfg = TrainConfig {
        learning_rate: 0.1,
        adam_eps: 1e-12,
        ..Default::default()
    };
    let mut p = vec![1.0, -2.0];
    let mut st = OptimizerState::zeros(2);
    adam_update(&mut p, &[0.5, -3.0], &mut st, &cfg);
    assert!((p[0] - 0.9).abs() < 1e-9);
    assert!((p[1] + 1.9).abs() < 1e-9);
    assert_eq!(st.step, 1);
}

#[test]
fn batches_cover_epochs_and_hold_humans() {
    let (_, corpus, _) = setup(10);
    let cfg = train_cfg(0);
    let mut seen = Vec::new();
    for step in 0..3 {
        let b = make_batch(&corpus, &cfg, step, 48).unwrap();
        let humans: Vec<_> = b.iter().filter(|s| s.kind.trains_lm()).map(|s| s.source_id.clone()).collect();
        assert!(!humans.is_empty());
        assert_eq!(b.len(), 2 * humans.len());
        seen.extend(humans);
    }
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 10);
    assert_eq!(make_batch(&corpus, &cfg, 5, 48).unwrap(), make_batch(&corpus, &cfg, 5, 48).unwrap());
    let ft = TrainConfig {
        mode: TrainMode::Finetune,
        ..cfg
    };
    assert!(make_batch(&corpus, &ft, 0, 48).unwrap().iter().all(|s| s.kind.trains_lm()));
}

#[test]
fn runs_are_deterministic_and_resumable() {
    let (_, corpus, mcfg) = setup(12);
    let oracle = HashOracle::default();
    let run = |steps| {
        let mut t = Trainer::new(Model::new(mcfg.clone(), 1).unwrap(), train_cfg(steps), &corpus, &oracle).unwrap();
        let log = t.run(|_| {}).unwrap();
        (log, t.into_parts())
    };
    let (log_a, (model_a, _)) = run(6);
    let (log_b, _) = run(6);
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.last().unwrap().step, 6);

    let (_, (half, opt)) = run(3);
    let mut resumed = Trainer::resume(half, opt, train_cfg(6), &corpus, &oracle).unwrap();
    let tail = resumed.run(|_| {}).unwrap();
    assert_eq!(tail, log_a[3..]);
    assert_eq!(resumed.model().params(), model_a.params());
}

#[test]
fn zero_lambdas_reproduce_lm_only_training() {
    let (_, corpus, mcfg) = setup(12);
    let oracle = HashOracle::default();
    let mut pre = train_cfg(4);
    pre.objective.lambda1 = 0.0;
    pre.objective.lambda2 = 0.0;
    let ft = TrainConfig {
        mode: TrainMode::Finetune,
        ..train_cfg(4)
    };
    let mut a = Trainer::new(Model::new(mcfg.clone(), 2).unwrap(), pre, &corpus, &oracle).unwrap();
    let mut b = Trainer::new(Model::new(mcfg, 2).unwrap(), ft, &corpus, &oracle).unwrap();
    let la = a.run(|_| {}).unwrap();
    let lb = b.run(|_| {}).unwrap();
    assert_eq!(a.model().params(), b.model().params());
    for (x, y) in la.iter().zip(&lb) {
        assert_eq!(x.l_lm, y.l_lm);
        assert_eq!(x.l_total, y.l_total);
    }
}

#[test]
fn finetune_leaves_aux_heads_untouched() {
    let (_, corpus, mcfg) = setup(8);
    let oracle = HashOracle::default();
    let model = Model::new(mcfg, 5).unwrap();
    let before = model.clone();
    let cfg = TrainConfig {
        mode: TrainMode::Finetune,
        ..train_cfg(3)
    };
    let mut t = Trainer::new(model, cfg, &corpus, &oracle).unwrap();
    t.run(|_| {}).unwrap();
    for name in ["similarity.w", "order.w"] {
        let r = before.tensor(name).unwrap().range();
        assert_eq!(&t.model().params()[r.clone()], &before.params()[r]);
    }
}

#[test]
fn divergence_guard_fires() {
    let (_, corpus, mcfg) = setup(8);
    let oracle = HashOracle::default();
    let mut model = Model::new(mcfg, 5).unwrap();
    let r = model.tensor("lm_head.b").unwrap().range();
    model.params_mut()[r.start] = f64::NAN;
    let mut t = Trainer::new(model, train_cfg(3), &corpus, &oracle).unwrap();
    assert!(matches!(t.step(), Err(Error::NonFiniteLoss { step: 1 })));
    assert_eq!(t.step_count(), 0);
}

#[test]
fn gradient_checks_pass_on_small_batches() {
    let (_, corpus, mcfg) = setup(6);
    let oracle = HashOracle::default();
    let model = Model::new(mcfg, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let human = TrainingSample::human(&corpus[0]);
    let shuffled = make_shuffled(&corpus[1], &mut rng).unwrap();
    let cfg = GradCheckConfig::default();
    let obj = ObjectiveConfig::default();

    let r = gradient_check(&model, &[human.clone()], &oracle, &obj, LossTerm::Lm, &cfg).unwrap();
    assert!(r.passed && r.coords_checked >= 200, "{r:?}");
    let r = gradient_check(&model, &[human.clone(), shuffled], &oracle, &obj, LossTerm::Dis, &cfg).unwrap();
    assert!(r.passed, "{r:?}");

    // A huge margin puts every pair inside it: analytic gradient is exactly 0.
    let wide = ObjectiveConfig {
        delta: 1.0,
        ..Default::default()
    };
    let r = gradient_check(&model, &[human.clone()], &oracle, &wide, LossTerm::Sen, &cfg).unwrap();
    assert!(r.passed);
    assert!(r.failures.is_empty());
    assert_eq!(r.max_abs_err, 0.0);
    assert_eq!(r.within_abs_floor, r.coords_checked);
    assert!(r.worst.is_none());
}

#[test]
fn long_negatives_are_clipped() {
    let (_, corpus, _) = setup(30);
    let cfg = train_cfg(0);
    for step in 0..8 {
        for s in make_batch(&corpus, &cfg, step, 40).unwrap() {
            assert!(s.seq.len() <= 40 || s.kind.trains_lm());
            assert_eq!(s.original_order.len(), s.num_sentences());
        }
    }
}
