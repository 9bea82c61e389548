use wisense_core::*;
use wisense_csi::{synth_dataset, Preprocessor, RadioImage};

fn blk(out: usize, stride: usize) -> BlockCfg {
    BlockCfg {
        kernel: 3,
        expansion: 16,
        out,
        se_ratio: 0.25,
        stride,
    }
}

/// Four stride-2 bottlenecks, small enough to train in seconds.
fn small(seed: u64) -> ModelConfig {
    ModelConfig {
        width: 1.0,
        stages: vec![vec![blk(8, 2)], vec![blk(12, 2)], vec![blk(16, 2)], vec![blk(16, 2)]],
        branch_after: 1,
        stem_channels: 4,
        tail_channels: 24,
        head_hidden: 16,
        early_channels: 12,
        early_hidden: 12,
        expect_layers: None,
        seed,
        ..ModelConfig::default()
    }
}

fn data(count: usize, seed: u64) -> Vec<RadioImage> {
    synth_dataset(count, seed, &Preprocessor::default())
        .unwrap()
        .into_iter()
        .map(|s| s.image)
        .collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 7,
        base_lr: 3e-3,
        augment: AugmentConfig::off(),
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let set = data(14, 1);
    let mut m = BranchyModel::<f32>::build(small(1)).unwrap();
    let before: Vec<_> = m.store().params().to_vec();
    let cfg = TrainConfig {
        base_lr: 0.0,
        min_lr: 0.0,
        weight_decay: 0.0,
        ..quick(1)
    };
    train(&mut m, &set, &cfg, |_| {}).unwrap();
    assert_eq!(m.store().params(), &before[..]);
    // running statistics still track the batches
    assert_ne!(m.store().buffers(), BranchyModel::<f32>::build(small(1)).unwrap().store().buffers());
}

#[test]
fn same_seed_same_trajectory() {
    let set = data(14, 2);
    let cfg = TrainConfig {
        augment: AugmentConfig::default(),
        seed: 5,
        ..quick(2)
    };
    let run = || {
        let mut m = BranchyModel::<f32>::build(small(3)).unwrap();
        let h = train(&mut m, &set, &cfg, |_| {}).unwrap();
        (m.store().clone(), h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
}

#[test]
fn loss_falls_on_learnable_data() {
    let set = data(42, 3);
    let mut m = BranchyModel::<f32>::build(small(4)).unwrap();
    let mut seen = Vec::new();
    let h = train(&mut m, &set, &quick(6), |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, (0..6).collect::<Vec<_>>());
    assert!(h[5].loss.total < h[0].loss.total, "{:?}", h.iter().map(|r| r.loss.total).collect::<Vec<_>>());
    assert!(h.iter().all(|r| (r.loss.total - r.loss.rod_ce - r.loss.har_ce).abs() < 1e-6 * r.loss.total));
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let set = data(7, 4);
    let mut m = BranchyModel::<f32>::build(small(5)).unwrap();
    let fc = m.early_head().fc.clone();
    m.store_mut().param_mut(fc.bias).data_mut()[0] = f32::NAN;
    match train(&mut m, &set, &quick(1), |_| {}) {
        Err(CoreError::Diverged { epoch, batch, lr }) => {
            assert_eq!((epoch, batch), (0, 0));
            assert_eq!(lr, 3e-3);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_or_invalid_inputs_are_rejected() {
    let mut m = BranchyModel::<f32>::build(small(6)).unwrap();
    assert!(matches!(train(&mut m, &[], &quick(1), |_| {}), Err(CoreError::Param(_))));
    let bad = TrainConfig { epochs: 0, ..quick(1) };
    assert!(matches!(train(&mut m, &data(2, 1), &bad, |_| {}), Err(CoreError::Config(_))));
    assert!(matches!(evaluate(&m, &[], Task::Rod, 1), Err(CoreError::Param(_))));
    // nobody-only data has no activity labels
    let nobody: Vec<_> = data(14, 1).into_iter().filter(|i| i.har.is_none()).collect();
    assert!(matches!(evaluate(&m, &nobody, Task::Har, 4), Err(CoreError::Param(_))));
}

#[test]
fn evaluation_confusion_matches_per_sample_predictions() {
    let set = data(20, 7);
    let mut m = BranchyModel::<f32>::build(small(7)).unwrap();
    train(&mut m, &data(42, 8), &quick(3), |_| {}).unwrap();
    let mut rod = vec![vec![0u64; 3]; 3];
    let mut har = vec![vec![0u64; 5]; 5];
    for img in &set {
        let x = images_to_tensor(&[img]).unwrap();
        let out = m.run_path(&x, ExitPath::Full).unwrap();
        rod[img.rod.unwrap().index()][out.rod_label.index()] += 1;
        if let Some(h) = img.har {
            har[h.index()][out.har_label.unwrap().index()] += 1;
        }
    }
    for batch in [1, 6, 20] {
        assert_eq!(evaluate(&m, &set, Task::Rod, batch).unwrap().confusion, rod);
        assert_eq!(evaluate(&m, &set, Task::Har, batch).unwrap().confusion, har);
    }
    let r = evaluate(&m, &set, Task::Rod, 4).unwrap();
    assert_eq!(r.samples, 20);
    assert_eq!(r.micro_avg.precision, r.accuracy);
    assert_eq!(r.confusion.iter().map(|row| row.iter().sum::<u64>()).collect::<Vec<_>>(), {
        let mut support = vec![0u64; 3];
        set.iter().for_each(|i| support[i.rod.unwrap().index()] += 1);
        support
    });
}
