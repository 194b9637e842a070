//! Training loop semantics: schedules, augmentation, determinism.

use dham_net::model::{
    ActivationMode, Architecture, ForwardMode, Model, ModelConfig, ReplacePolicy,
};
use dham_net::train::{
    augment, augment_one, evaluate, lr_at_epoch, prepare_batch, sgd_step, sgd_update, train,
    LabeledDataset, SgdState, TrainConfig,
};
use dham_net::util::rng_from;
use dham_net::wta::GroupSpec;
use rand::Rng;

fn blobby_dataset(n: usize, classes: usize, seed: u64) -> LabeledDataset {
    // one bright quadrant per class plus noise, on 3×16×16 images
    let (c, h, w) = (3usize, 16usize, 16usize);
    let mut rng = rng_from(seed, &[0xda7a]);
    let mut images = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % classes) as u16;
        labels.push(class);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let quadrant = (y / (h / 2)) * 2 + x / (w / 2);
                    let base = if quadrant == (class as usize + ch) % 4 {
                        190
                    } else {
                        60
                    };
                    let noise: i16 = rng.random_range(-35..=35);
                    images.push((base + noise).clamp(0, 255) as u8);
                }
            }
        }
    }
    LabeledDataset::new(images, labels, (c, h, w), classes).unwrap()
}

fn toy_model(mode: ActivationMode, group: GroupSpec, seed: u64) -> Model {
    Model::build(
        ModelConfig {
            arch: Architecture::ToyCnn {
                widths: vec![8, 8],
                blocks: 1,
            },
            input: (3, 16, 16),
            classes: 4,
            group,
            mode,
            policy: ReplacePolicy::All,
        },
        seed,
    )
    .unwrap()
}

#[test]
fn lr_follows_the_drop_rule() {
    let cfg = TrainConfig {
        lr: 0.1,
        lr_drop_epochs: vec![7, 13],
        ..Default::default()
    };
    for e in 1..=20 {
        let want = 0.1 * 0.1f64.powi((e >= 7) as i32 + (e >= 13) as i32);
        assert!((lr_at_epoch(&cfg, e) - want).abs() < 1e-15, "epoch {e}");
    }
}

#[test]
fn sgd_update_matches_hand_rolled_recurrence() {
    // quadratic loss f(w) = w², gradient 2w, momentum 0.9, no decay
    let (lr, mom) = (0.1, 0.9);
    let mut w = vec![1.0f32];
    let mut v = vec![0.0f32];
    sgd_update(&mut w, &[2.0], &mut v, lr, mom, 0.0);
    // v1 = 2.0; w1 = 1 - 0.1·2 = 0.8
    assert!((v[0] - 2.0).abs() < 1e-7);
    assert!((w[0] - 0.8).abs() < 1e-7);
    sgd_update(&mut w, &[1.6], &mut v, lr, mom, 0.0);
    // v2 = 0.9·2 + 1.6 = 3.4; w2 = 0.8 - 0.34 = 0.46
    assert!((v[0] - 3.4).abs() < 1e-6);
    assert!((w[0] - 0.46).abs() < 1e-6);

    // weight decay enters the velocity
    let mut w = vec![1.0f32];
    let mut v = vec![0.0f32];
    sgd_update(&mut w, &[0.0], &mut v, 0.5, 0.0, 0.1);
    assert!((w[0] - 0.95).abs() < 1e-7);
}

#[test]
fn zero_lr_leaves_parameters_unchanged() {
    let mut model = toy_model(ActivationMode::Baseline, GroupSpec::FixedL(1), 3);
    let before: Vec<Vec<f32>> = model
        .named_tensors()
        .map(|(_, t, _)| t.data().to_vec())
        .collect();
    let data = blobby_dataset(8, 4, 1);
    let batch = prepare_batch(
        &data.images,
        data.n,
        (3, 16, 16),
        &[0.0, 0.0, 0.0],
        &[1.0, 1.0, 1.0],
    );
    let labels: Vec<usize> = data.labels.iter().map(|&l| l as usize).collect();
    let mut state = SgdState::new(&model);
    sgd_step(
        &mut model,
        &mut state,
        &batch,
        &labels,
        ForwardMode::Baseline,
        0.0,
        0.9,
        0.0,
    )
    .unwrap();
    // batchnorm running stats move, trainable parameters must not
    for ((name, t, trainable), old) in model.named_tensors().zip(&before) {
        if trainable {
            assert_eq!(t.data(), &old[..], "{name} changed under lr=0");
        }
    }
}

#[test]
fn one_step_descends_on_a_separable_problem() {
    let mut model = toy_model(ActivationMode::Baseline, GroupSpec::FixedL(1), 5);
    let data = blobby_dataset(32, 4, 2);
    let batch = prepare_batch(
        &data.images,
        data.n,
        (3, 16, 16),
        &[0.5, 0.5, 0.5],
        &[0.25, 0.25, 0.25],
    );
    let labels: Vec<usize> = data.labels.iter().map(|&l| l as usize).collect();
    let mut state = SgdState::new(&model);
    let first = sgd_step(
        &mut model,
        &mut state,
        &batch,
        &labels,
        ForwardMode::Baseline,
        0.05,
        0.9,
        0.0,
    )
    .unwrap();
    let mut last = first;
    for _ in 0..5 {
        last = sgd_step(
            &mut model,
            &mut state,
            &batch,
            &labels,
            ForwardMode::Baseline,
            0.05,
            0.9,
            0.0,
        )
        .unwrap();
    }
    assert!(last < first, "loss did not descend: {first} -> {last}");
}

#[test]
fn augment_identity_and_flip_multiset() {
    let (c, h, w) = (3usize, 16usize, 16usize);
    let mut rng = rng_from(1, &[2]);
    let src: Vec<u8> = (0..c * h * w).map(|_| rng.random_range(0..=255)).collect();
    let mut dst = vec![0u8; src.len()];

    // centered crop, no flip, is the identity
    augment_one(&src, &mut dst, (c, h, w), (4, 4, false));
    assert_eq!(dst, src);

    // centered crop with flip preserves the pixel multiset
    augment_one(&src, &mut dst, (c, h, w), (4, 4, true));
    let mut a = src.clone();
    let mut b = dst.clone();
    a.sort_unstable();
    b.sort_unstable();
    assert_eq!(a, b);
    assert_ne!(dst, src);

    // flip twice is the identity
    let mut back = vec![0u8; src.len()];
    augment_one(&dst, &mut back, (c, h, w), (4, 4, true));
    assert_eq!(back, src);
}

#[test]
fn augment_is_deterministic_per_seed() {
    let data = blobby_dataset(6, 3, 9);
    let a = augment(&data.images, data.n, (3, 16, 16), 42).unwrap();
    let b = augment(&data.images, data.n, (3, 16, 16), 42).unwrap();
    assert_eq!(a, b);
    let c = augment(&data.images, data.n, (3, 16, 16), 43).unwrap();
    assert_ne!(a, c);
    // non-square images are rejected
    let bad = LabeledDataset::new(vec![0; 3 * 4 * 8], vec![0], (3, 4, 8), 2).unwrap();
    assert!(augment(&bad.images, 1, (3, 4, 8), 0).is_err());
}

#[test]
fn training_is_bit_reproducible() {
    let data = blobby_dataset(48, 4, 7);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        lr: 0.05,
        lr_drop_epochs: vec![],
        momentum: 0.9,
        weight_decay: 5e-4,
        augment: true,
        seed: 123,
    };
    let run = || {
        let mut model = toy_model(
            ActivationMode::Anneal {
                t_init: 1.0,
                t_final: 100.0,
            },
            GroupSpec::FixedL(2),
            77,
        );
        let report = train(&mut model, &data, Some(&data), &cfg).unwrap();
        let params: Vec<Vec<f32>> = model
            .named_tensors()
            .map(|(_, t, _)| t.data().to_vec())
            .collect();
        (report, params)
    };
    let (ra, pa) = run();
    let (rb, pb) = run();
    assert_eq!(pa, pb, "parameters diverged between identical runs");
    assert_eq!(ra.rows.len(), rb.rows.len());
    for (x, y) in ra.rows.iter().zip(&rb.rows) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.train_acc, y.train_acc);
        assert_eq!(x.val_acc, y.val_acc);
    }
}

#[test]
fn temperature_trace_spans_the_schedule() {
    let data = blobby_dataset(64, 4, 3);
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 1, // 64 steps/epoch -> 512 total, well past the 1% regime
        lr: 0.01,
        lr_drop_epochs: vec![],
        momentum: 0.9,
        weight_decay: 0.0,
        augment: false,
        seed: 5,
    };
    let mut model = toy_model(
        ActivationMode::Anneal {
            t_init: 10.0,
            t_final: 1000.0,
        },
        GroupSpec::FixedL(2),
        11,
    );
    let report = train(&mut model, &data, None, &cfg).unwrap();
    assert_eq!(report.rows.len(), 8);
    assert_eq!(report.temperature_first, Some(10.0));
    let t_end = report.temperature_last.unwrap();
    assert!(
        (t_end - 1000.0).abs() / 1000.0 < 0.01,
        "last-step temperature {t_end} not within 1% of t_final"
    );
    // per-epoch temperatures are non-decreasing along the anneal
    let temps: Vec<f64> = report.rows.iter().map(|r| r.temperature.unwrap()).collect();
    assert!(temps.windows(2).all(|p| p[1] >= p[0]));
    assert_eq!(temps[0], 10.0);
}

#[test]
fn evaluate_is_deterministic_and_chance_level_with_zero_classifier() {
    let data = blobby_dataset(40, 4, 13);
    let mut model = toy_model(
        ActivationMode::Wta { binary: false },
        GroupSpec::FixedL(2),
        19,
    );
    for name in ["fc.weight", "fc.bias"] {
        model.tensor_mut(name).unwrap().data_mut().fill(0.0);
    }
    // all logits tie, argmax picks class 0, accuracy = frequency of label 0
    let freq0 = data.labels.iter().filter(|&&l| l == 0).count() as f64 / data.n as f64;
    let acc = evaluate(&mut model, &data, ForwardMode::Wta { binary: false }).unwrap();
    assert_eq!(acc, freq0);
    let again = evaluate(&mut model, &data, ForwardMode::Wta { binary: false }).unwrap();
    assert_eq!(acc, again);
}

#[test]
fn baseline_and_cold_anneal_evaluate_identically() {
    let data = blobby_dataset(32, 4, 21);
    let mut model = toy_model(ActivationMode::Baseline, GroupSpec::FixedL(2), 23);
    let base = evaluate(&mut model, &data, ForwardMode::Baseline).unwrap();
    let cold = evaluate(&mut model, &data, ForwardMode::Anneal { t: 1e-6 }).unwrap();
    assert_eq!(base, cold);
}

#[test]
fn report_shape_and_lr_column() {
    let data = blobby_dataset(32, 4, 31);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 16,
        lr: 0.08,
        lr_drop_epochs: vec![2, 4],
        momentum: 0.9,
        weight_decay: 0.0,
        augment: false,
        seed: 1,
    };
    let mut model = toy_model(ActivationMode::Baseline, GroupSpec::FixedL(1), 2);
    let report = train(&mut model, &data, None, &cfg).unwrap();
    assert_eq!(report.rows.len(), 4);
    let lrs: Vec<f64> = report.rows.iter().map(|r| r.lr).collect();
    for (got, want) in lrs.iter().zip([0.08, 0.008, 0.008, 0.0008]) {
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
    assert!(report.rows.iter().all(|r| r.temperature.is_none()));
    assert!(report.rows.iter().all(|r| r.val_acc.is_none()));
}

#[test]
fn non_finite_loss_aborts_with_a_diagnostic() {
    use dham_net::NetError;
    let data = blobby_dataset(16, 4, 17);
    let mut model = toy_model(ActivationMode::Baseline, GroupSpec::FixedL(1), 4);
    model
        .tensor_mut("fc.bias")
        .unwrap()
        .data_mut()
        .fill(f32::NAN);
    let batch = prepare_batch(
        &data.images,
        data.n,
        (3, 16, 16),
        &[0.5, 0.5, 0.5],
        &[0.25, 0.25, 0.25],
    );
    let labels: Vec<usize> = data.labels.iter().map(|&l| l as usize).collect();
    let mut state = SgdState::new(&model);
    let err = sgd_step(
        &mut model,
        &mut state,
        &batch,
        &labels,
        ForwardMode::Baseline,
        0.05,
        0.9,
        0.0,
    )
    .unwrap_err();
    assert!(matches!(err, NetError::NonFiniteLoss { .. }), "got {err}");
}

#[test]
fn class_win_profiles_diverge_more_in_deeper_layers_after_training() {
    use dham_net::analysis::win_statistics;
    // train a small model so late layers become class-specific, then compare
    // per-class win-proportion profiles at the first and last grouped layer
    let data = blobby_dataset(256, 4, 23);
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 64,
        lr: 0.05,
        lr_drop_epochs: vec![],
        momentum: 0.9,
        weight_decay: 5e-4,
        augment: false,
        seed: 3,
    };
    let mut model = toy_model(
        ActivationMode::Anneal {
            t_init: 1.0,
            t_final: 1000.0,
        },
        GroupSpec::FixedL(2),
        9,
    );
    train(&mut model, &data, None, &cfg).unwrap();

    let profile = |model: &mut dham_net::model::Model, class: u16| -> Vec<Vec<f64>> {
        let stats = win_statistics(model, &data, Some(class), false).unwrap();
        stats
            .layers
            .iter()
            .map(|l| (0..l.channels).map(|ch| l.proportion(ch)).collect())
            .collect()
    };
    let a = profile(&mut model, 0);
    let b = profile(&mut model, 1);
    let l1_distance =
        |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum() };
    let first = l1_distance(&a[0], &b[0]);
    let last = l1_distance(&a[a.len() - 1], &b[b.len() - 1]);
    assert!(
        last > first,
        "deeper layer should separate classes more: first {first:.4}, last {last:.4}"
    );
}
