use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setloss::autodiff::{Matrix, Tape};
use setloss::datasets::sample_states;
use setloss::experiments::{run, ExperimentConfig, Task};
use setloss::gradcheck::{check_model, Tolerance};
use setloss::losses::{loss_node, set_cross_entropy, LossKind, ObjectSet, DEFAULT_EPSILON};
use setloss::nets::{
    predict, Adam, AdamConfig, AutoencoderConfig, Forward, LatentMode, Mode, ParamStore, SegmentPlan, SetAutoencoder,
    SetModel,
};

fn puzzle_model(latent_mode: LatentMode, seed: u64) -> SetAutoencoder {
    let mut cfg = AutoencoderConfig::new(9, 15, SegmentPlan::softmax_blocks(&[9, 3, 3]).unwrap());
    cfg.width = 24;
    cfg.latent = 10;
    cfg.latent_mode = latent_mode;
    cfg.seed = seed;
    SetAutoencoder::new(cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encoding_ignores_row_order(
        seed in any::<u64>(),
        perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let model = puzzle_model(LatentMode::GumbelBinary, seed);
        let x = sample_states(1, seed, false).unwrap()[0].encode().into_matrix();
        let code = |m: &Matrix| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut tape = Tape::new();
            let bind = model.params().bind(&mut tape);
            let xin = tape.constant(m.clone());
            let mut ctx = Forward::new(Mode::Eval, 0.7, &mut rng);
            let c = model.encode(&mut tape, &bind, xin, &mut ctx).unwrap();
            tape.value(c).clone()
        };
        prop_assert_eq!(code(&x), code(&x.permute_rows(&perm)));
        let out = predict(&model, &[x], 0.7).unwrap();
        for row in out[0].row_iter() {
            for block in [&row[..9], &row[9..12], &row[12..]] {
                prop_assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn one_adam_step_lowers_sce_on_the_misplaced_example() {
    let x = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
    let y2 = Matrix::from_rows(&[[0.1, 0.5], [0.9, 0.5]]).unwrap();
    let mut store = ParamStore::new();
    let id = store.add("y", y2.clone());
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let root = loss_node(&mut tape, LossKind::Sce, &x, bind.node(id), DEFAULT_EPSILON).unwrap();
    let grads = tape.backward(root).unwrap();
    let grads = bind.gradients(&store, &grads);
    assert!(grads[0].1.get(1, 0) > 0.0, "the 0.9 entry should be pushed down");

    let before = tape.value(root).item();
    Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() }).update(&mut store, &grads).unwrap();
    let x = ObjectSet::new(x).unwrap();
    let after = set_cross_entropy(&x, &ObjectSet::new(store.get(id).clone()).unwrap(), DEFAULT_EPSILON).unwrap();
    assert!(after < before, "{after} >= {before}");
    assert!(store.get(id).get(1, 0) < 0.9);
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let mut cfg = AutoencoderConfig::new(9, 15, SegmentPlan::softmax_blocks(&[9, 3, 3]).unwrap());
    cfg.width = 16;
    cfg.latent = 8;
    cfg.batchnorm = false;
    cfg.dropout = 0.0;
    let model = SetAutoencoder::new(cfg).unwrap();
    let sets: Vec<Matrix> = sample_states(3, 2, false).unwrap().iter().map(|s| s.encode().into_matrix()).collect();
    let x = Matrix::vstack(&sets.iter().collect::<Vec<_>>()).unwrap();
    let tol = Tolerance { rel: 1e-3, ..Tolerance::default() };
    let r = check_model("puzzle autoencoder", &model, &x, &x, 10, 3, tol).unwrap();
    assert!(r.passed(), "{r}");
}

fn small_run(loss: LossKind, scenario: u8, seed: u64) -> setloss::experiments::Outcome {
    let mut cfg = ExperimentConfig::desk(Task::Puzzle, loss, scenario, seed);
    cfg.count = 80;
    cfg.width = 48;
    cfg.latent = 24;
    cfg.epochs = 20;
    cfg.batch_size = 20;
    cfg.val_fraction = 0.0;
    run(&cfg).unwrap().1
}

#[test]
fn shuffled_targets_leave_sce_with_the_lower_training_loss() {
    let sce = small_run(LossKind::Sce, 3, 0).report.final_train_loss();
    let ce = small_run(LossKind::FlattenedCe, 3, 0).report.final_train_loss();
    assert!(sce < ce, "sce {sce} vs ce {ce}");
}

#[test]
fn identical_seeds_reproduce_runs() {
    let a = small_run(LossKind::Sce, 2, 4);
    let b = small_run(LossKind::Sce, 2, 4);
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    assert_eq!(a.success_all, b.success_all);
}
