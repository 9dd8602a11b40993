use morf::data::{generate_synthetic, split, Dataset, Sample, SplitConfig, SyntheticSpec};
use morf::metatrain::{
    fixed_weight_loss, g_similarity, meta_phi_gradient, pseudo_update, train, tree_gradients, weighted_gradient,
    weighted_train_loss, Batch, Checkpoint, Hyperparams, TrainError, Trainer, TreeGradients, Variant,
};
use morf::twwnet::{TwwNet, Weighting};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stored(losses: Vec<f64>, grads: Vec<Vec<f64>>, samples: usize, trees: usize) -> TreeGradients<f64> {
    TreeGradients {
        samples,
        trees,
        losses,
        grads,
    }
}

fn small_data(n: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        n,
        ..SyntheticSpec::preset("ord3-std", seed).unwrap()
    };
    generate_synthetic(&spec).unwrap().dataset
}

fn quick_hp(seed: u64) -> Hyperparams {
    Hyperparams {
        epochs: 2,
        tww_hidden: 8,
        seed,
        ..Hyperparams::default()
    }
}

#[test]
fn pseudo_update_scalar_example() {
    // theta = 1, R = theta^2 so grad R = 2, w = 0.5, alpha = 0.1.
    let s = stored(vec![1.0], vec![vec![2.0]], 1, 1);
    let hat = pseudo_update(&[1.0], &s, &[0.5], 0.1).unwrap();
    assert!((hat[0] - 0.9).abs() < 1e-15);
    assert_eq!(pseudo_update(&[1.0], &s, &[0.5], 0.0).unwrap(), vec![1.0]);
    assert_eq!(pseudo_update(&[1.0], &s, &[0.0], 0.1).unwrap(), vec![1.0]);
}

#[test]
fn constant_weight_scales_like_the_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grads: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let s = stored(vec![0.3; 6], grads, 3, 2);
    let theta: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
    let half = pseudo_update(&theta, &s, &[0.5; 6], 0.01).unwrap();
    let unit = pseudo_update(&theta, &s, &[1.0; 6], 0.005).unwrap();
    assert_eq!(half, unit);
}

#[test]
fn weighted_loss_is_linear_in_weights() {
    let data = small_data(32, 1);
    let trainer = Trainer::<f64>::new(quick_hp(1), Variant::Corf, data.dim).unwrap();
    let batch = Batch::from_indices(&data, &(0..8).collect::<Vec<_>>()).unwrap();
    let unit = weighted_train_loss(&trainer.model, &Weighting::Constant(1.0), &batch, &trainer.fixed).unwrap();
    assert!((unit.loss - unit.mean_loss).abs() < 1e-15);
    let double = weighted_train_loss(&trainer.model, &Weighting::Constant(2.0), &batch, &trainer.fixed).unwrap();
    assert!((double.loss - 2.0 * unit.loss).abs() < 1e-14);
    for (a, b) in double.grad.iter().zip(&unit.grad) {
        assert!((a - 2.0 * b).abs() < 1e-14);
    }
}

#[test]
fn single_sample_single_tree_weighted_loss() {
    let data = small_data(8, 2);
    let hp = Hyperparams {
        trees: 1,
        ..quick_hp(2)
    };
    let trainer = Trainer::<f64>::new(hp, Variant::Corf, data.dim).unwrap();
    let batch = Batch::from_indices(&data, &[0]).unwrap();
    let lg = fixed_weight_loss(&trainer.model, &[0.5], &batch, &trainer.fixed).unwrap();
    assert!((lg.loss - 0.5 * lg.tree_losses[0]).abs() < 1e-15);
}

#[test]
fn stored_gradients_sum_to_batched_gradient() {
    let data = small_data(32, 4);
    let trainer = Trainer::<f64>::new(quick_hp(4), Variant::Corf, data.dim).unwrap();
    let batch = Batch::from_indices(&data, &(0..6).collect::<Vec<_>>()).unwrap();
    let s = tree_gradients(&trainer.model, &batch, &trainer.fixed).unwrap();
    let lg = weighted_train_loss(&trainer.model, &Weighting::Constant(1.0), &batch, &trainer.fixed).unwrap();
    let mean = weighted_gradient(&s, &vec![1.0; s.grads.len()]).unwrap();
    for (a, b) in mean.iter().zip(&lg.grad) {
        assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
    }
    for (a, b) in s.losses.iter().zip(&lg.tree_losses) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn hypergradient_vanishes_without_step_or_alignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = TwwNet::<f64>::init(2, 4, &mut rng);
    let grads = vec![vec![1.0, 0.0], vec![0.5, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]];
    let s = stored(vec![0.7, 0.2, 1.1, 0.4], grads, 2, 2);
    let meta = [0.3, -0.8];
    let zero = meta_phi_gradient(&net, &s, &meta, 0.0).unwrap();
    assert!(zero.iter().all(|&v| v == 0.0));

    // Sample 0's training gradients are orthogonal to the meta gradient.
    let orth = [0.0, 1.0];
    let full = meta_phi_gradient(&net, &s, &orth, 0.1).unwrap();
    let only_one = stored(
        vec![0.7, 0.2, 1.1, 0.4],
        vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]],
        2,
        2,
    );
    let without = meta_phi_gradient(&net, &only_one, &orth, 0.1).unwrap();
    assert_eq!(full, without);

    let empty = stored(Vec::new(), Vec::new(), 0, 2);
    assert!(matches!(
        meta_phi_gradient(&net, &empty, &meta, 0.1),
        Err(TrainError::MissingGradients)
    ));
}

#[test]
fn g_similarity_matches_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut draw = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect() };
    let train = stored(vec![0.0; 6], draw(6), 3, 2);
    let meta = stored(vec![0.0; 6], draw(6), 3, 2);
    let g = g_similarity(&train, &meta);
    for i in 0..3 {
        for j in 0..3 {
            let mut expect = 0.0;
            for k in 0..4 {
                let a = (train.grads[2 * i][k] + train.grads[2 * i + 1][k]) / 2.0;
                let b = (meta.grads[2 * j][k] + meta.grads[2 * j + 1][k]) / 2.0;
                expect += a * b;
            }
            assert!((g[i][j] - expect).abs() < 1e-15);
        }
    }
    // The mean of G is the product of the two batch-mean gradients.
    let mean_g: f64 = g.iter().flatten().sum::<f64>() / 9.0;
    let ones = vec![1.0; 6];
    let a = weighted_gradient(&train, &ones).unwrap();
    let b = weighted_gradient(&meta, &ones).unwrap();
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    assert!((mean_g - dot).abs() < 1e-14);

    let same = g_similarity(&train, &train);
    for (i, row) in same.iter().enumerate() {
        assert!(row[i] >= 0.0);
    }
}

#[test]
fn one_epoch_smoke_on_sixteen_samples() {
    let data = small_data(40, 7);
    let train_idx: Vec<usize> = (0..16).collect();
    let test_idx: Vec<usize> = (16..40).collect();
    for variant in Variant::ALL {
        let hp = Hyperparams {
            epochs: 1,
            ..quick_hp(7)
        };
        let trainer = Trainer::<f64>::new(hp, variant, data.dim).unwrap();
        let out = train(trainer, &data, &train_idx, &test_idx, |_, _| Ok(())).unwrap();
        assert_eq!(out.history.len(), 1);
        let rec = &out.history[0];
        assert_eq!(rec.train.iterations, 1, "{variant}");
        assert!(rec.train.train_loss.is_finite());
        assert_eq!(rec.test.samples, 24);
        assert_eq!(out.trainer.iteration, 1);
    }
}

#[test]
fn partial_last_batch_is_kept() {
    let data = small_data(60, 8);
    let hp = Hyperparams {
        epochs: 1,
        ..quick_hp(8)
    };
    let trainer = Trainer::<f64>::new(hp, Variant::Corf, data.dim).unwrap();
    let out = train(trainer, &data, &(0..40).collect::<Vec<_>>(), &(40..60).collect::<Vec<_>>(), |_, _| Ok(())).unwrap();
    assert_eq!(out.history[0].train.iterations, 3);
}

#[test]
fn runs_are_deterministic() {
    let data = small_data(120, 9);
    let sp = split(&data, &SplitConfig::full(3, 0.8, 9)).unwrap();
    let run = |variant| {
        let t = Trainer::<f64>::new(quick_hp(11), variant, data.dim).unwrap();
        let out = train(t, &data, &sp.train, &sp.test, |_, _| Ok(())).unwrap();
        (out.history, out.trainer.model.theta())
    };
    for variant in [Variant::Morf, Variant::CorfGfs] {
        assert_eq!(run(variant), run(variant));
    }
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let data = small_data(96, 10);
    let sp = split(&data, &SplitConfig::full(3, 0.75, 10)).unwrap();
    let hp = Hyperparams {
        epochs: 3,
        ..quick_hp(12)
    };
    let straight = train(
        Trainer::<f64>::new(hp.clone(), Variant::Morf, data.dim).unwrap(),
        &data,
        &sp.train,
        &sp.test,
        |_, _| Ok(()),
    )
    .unwrap();

    let first = train(
        Trainer::<f64>::new(
            Hyperparams {
                epochs: 2,
                ..hp.clone()
            },
            Variant::Morf,
            data.dim,
        )
        .unwrap(),
        &data,
        &sp.train,
        &sp.test,
        |_, _| Ok(()),
    )
    .unwrap();
    let json = serde_json::to_string(&first.trainer.checkpoint("abc")).unwrap();
    let cp: Checkpoint<f64> = serde_json::from_str(&json).unwrap();
    assert!(Trainer::from_checkpoint(cp.clone(), "other").is_err());
    let mut resumed = Trainer::from_checkpoint(cp, "abc").unwrap();
    resumed.hp.epochs = 3;
    let rest = train(resumed, &data, &sp.train, &sp.test, |_, _| Ok(())).unwrap();
    assert_eq!(rest.history.len(), 1);
    assert_eq!(rest.history[0], straight.history[2]);
    assert_eq!(rest.trainer.model.theta(), straight.trainer.model.theta());
}

#[test]
fn inconsistent_configs_are_rejected_before_training() {
    let odd = Hyperparams {
        fc_dim: Some(27),
        ..quick_hp(0)
    };
    assert!(Trainer::<f64>::new(odd.clone(), Variant::Morf, 4).is_err());
    assert!(Trainer::<f64>::new(odd.clone(), Variant::CorfGfs, 4).is_err());
    assert!(Trainer::<f64>::new(odd, Variant::Corf, 4).is_ok());
    let narrow = Hyperparams {
        fc_dim: Some(14),
        ..quick_hp(0)
    };
    assert!(Trainer::<f64>::new(narrow, Variant::Morf, 4).is_err());
    for bad in [
        Hyperparams {
            alpha: 0.0,
            ..quick_hp(0)
        },
        Hyperparams {
            beta: -1.0,
            ..quick_hp(0)
        },
        Hyperparams {
            batch_size: 0,
            ..quick_hp(0)
        },
    ] {
        assert!(matches!(
            Trainer::<f64>::new(bad, Variant::Corf, 4),
            Err(TrainError::Config(_))
        ));
    }
}

#[test]
fn non_finite_input_aborts_with_iteration() {
    let mut samples: Vec<Sample> = small_data(32, 13).samples;
    samples[20].features[0] = f64::NAN;
    let data = Dataset::new(samples, 3).unwrap();
    let hp = Hyperparams {
        epochs: 1,
        batch_size: 8,
        ..quick_hp(13)
    };
    for variant in [Variant::Corf, Variant::Morf] {
        let trainer = Trainer::<f64>::new(hp.clone(), variant, data.dim).unwrap();
        let err = train(trainer, &data, &(0..24).collect::<Vec<_>>(), &(24..32).collect::<Vec<_>>(), |_, _| Ok(()))
            .unwrap_err();
        match err {
            TrainError::NonFinite { iteration: Some(i), .. } => assert!(i < 3),
            other => panic!("unexpected {other}"),
        }
    }
}

#[test]
fn learning_rate_schedule() {
    let hp = Hyperparams::default();
    assert_eq!(hp.lr_at(0), 1e-3);
    assert_eq!(hp.lr_at(119), 1e-3);
    assert!((hp.lr_at(120) - 1e-4).abs() < 1e-18);
    assert!((hp.lr_at(149) - 1e-4).abs() < 1e-18);
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
    }
    assert!("forest".parse::<Variant>().is_err());
}
