mod common;

use amc_ee::arch::{encode_weights, BranchGraph, Section, Variant};
use amc_ee::nn::{Optimizer, OptimizerKind};
use amc_ee::signal::{split_dataset, LabeledExample};
use amc_ee::train::*;
use amc_ee::{Error, Tensor};

fn batch(data: &[LabeledExample], n: usize) -> (Tensor, Vec<u8>) {
    let refs: Vec<&LabeledExample> = data.iter().step_by(data.len() / n).take(n).collect();
    batch_tensor(&refs).unwrap()
}

fn adam() -> Optimizer {
    Optimizer::new(OptimizerKind::adam(1e-3)).unwrap()
}

fn step(g: &mut BranchGraph, x: &Tensor, y: &[u8], opts: StepOptions) -> (f64, f64) {
    train_step_ee_with(g, x, y, &mut adam(), &mut adam(), opts).unwrap()
}

const ONLY_LOSS1: StepOptions = StepOptions {
    apply_loss1: true,
    apply_loss2: false,
    loss1_first: true,
};
const ONLY_LOSS2: StepOptions = StepOptions {
    apply_loss1: false,
    apply_loss2: true,
    loss1_first: true,
};

#[test]
fn loss2_only_leaves_common_and_head_bitwise_unchanged() {
    let data = common::small_dataset(1, 2);
    let (x, y) = batch(&data, 16);
    for v in Variant::EARLY_EXIT {
        let mut g = common::graph(v, 1);
        let common0 = g.snapshot(Section::Common);
        let head0 = g.snapshot(Section::ExitHead);
        let tail0 = g.snapshot(Section::Tail);
        step(&mut g, &x, &y, ONLY_LOSS2);
        assert_eq!(g.snapshot(Section::Common), common0, "{v}");
        assert_eq!(g.snapshot(Section::ExitHead), head0, "{v}");
        assert_ne!(g.snapshot(Section::Tail), tail0, "{v}: tail should move");
    }
}

#[test]
fn loss1_only_leaves_tail_bitwise_unchanged() {
    let data = common::small_dataset(1, 2);
    let (x, y) = batch(&data, 16);
    for v in Variant::EARLY_EXIT {
        let mut g = common::graph(v, 1);
        let common0 = g.snapshot(Section::Common);
        let tail0 = g.snapshot(Section::Tail);
        step(&mut g, &x, &y, ONLY_LOSS1);
        assert_eq!(g.snapshot(Section::Tail), tail0, "{v}");
        assert_ne!(g.snapshot(Section::Common), common0, "{v}: common should move");
    }
}

#[test]
fn full_step_is_the_union_of_single_loss_steps() {
    let data = common::small_dataset(1, 3);
    let (x, y) = batch(&data, 12);
    let mut full = common::graph(Variant::V1, 4);
    let mut only1 = common::graph(Variant::V1, 4);
    let mut only2 = common::graph(Variant::V1, 4);
    step(&mut full, &x, &y, StepOptions::default());
    step(&mut only1, &x, &y, ONLY_LOSS1);
    step(&mut only2, &x, &y, ONLY_LOSS2);
    assert_eq!(full.snapshot(Section::Common), only1.snapshot(Section::Common));
    assert_eq!(full.snapshot(Section::ExitHead), only1.snapshot(Section::ExitHead));
    assert_eq!(full.snapshot(Section::Tail), only2.snapshot(Section::Tail));
}

#[test]
fn update_order_commutes_bitwise() {
    let data = common::small_dataset(1, 3);
    let (x, y) = batch(&data, 12);
    for v in Variant::EARLY_EXIT {
        let mut a = common::graph(v, 4);
        let mut b = common::graph(v, 4);
        let la = step(&mut a, &x, &y, StepOptions::default());
        let lb = step(
            &mut b,
            &x,
            &y,
            StepOptions {
                loss1_first: false,
                ..Default::default()
            },
        );
        assert_eq!(la, lb);
        assert_eq!(encode_weights(&a), encode_weights(&b), "{v}");
    }
}

#[test]
fn losses_are_finite_and_near_chance_at_init() {
    let data = common::small_dataset(1, 3);
    let (x, y) = batch(&data, 32);
    let mut g = common::graph(Variant::V2, 0);
    let (l1, l2) = step(&mut g, &x, &y, StepOptions::default());
    assert!(l1.is_finite() && l2.is_finite());
    assert!(l1 > 1.0 && l1 < 6.0, "{l1}");
    assert!(l2 > 1.0 && l2 < 6.0, "{l2}");
}

fn quick_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        seed,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_trained_parameters() {
    let data = common::small_dataset(20, 5);
    let split = split_dataset(&data, 0).unwrap();
    let run = |v: Variant| {
        let mut g = common::graph(v, 7);
        let h = if v == Variant::Baseline {
            train_baseline(&mut g, &split.train[..400], &split.val, &quick_cfg(1, 3)).unwrap()
        } else {
            train(&mut g, &split.train[..400], &split.val, &quick_cfg(1, 3)).unwrap()
        };
        (encode_weights(&g), h.epochs[0].loss2)
    };
    for v in [Variant::Baseline, Variant::V1] {
        assert_eq!(run(v), run(v), "{v}");
    }
    let mut g = common::graph(Variant::V1, 7);
    train(&mut g, &split.train[..400], &split.val, &quick_cfg(1, 4)).unwrap();
    assert_ne!(encode_weights(&g), run(Variant::V1).0, "training seed should matter");
}

#[test]
fn baseline_loss_trends_down_on_separable_toy_set() {
    // High-SNR frames of two very different schemes.
    let data: Vec<LabeledExample> = common::small_dataset(15, 6)
        .into_iter()
        .filter(|e| e.snr_db >= 16 && [0u8, 8].contains(&e.label.code()))
        .collect();
    let mut g = common::graph(Variant::Baseline, 1);
    let h = train_baseline(&mut g, &data, &data, &quick_cfg(5, 2)).unwrap();
    let losses: Vec<f64> = h.epochs.iter().map(|e| e.loss2).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[4] < losses[0] * 0.5, "{losses:?}");
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 1, "{losses:?}");
    assert!(h.epochs[4].val_acc_backbone > 0.75, "{:?}", h.epochs);
    assert!(h.epochs[4].val_acc_backbone > h.epochs[0].val_acc_backbone);
}

#[test]
fn untrained_accuracy_is_chance() {
    let data = common::small_dataset(10, 12);
    let mut g = common::graph(Variant::Baseline, 5);
    let (exit, acc) = evaluate_accuracy(&mut g, &data, 256).unwrap();
    assert!(exit.is_none());
    assert!((acc - 0.1).abs() <= 0.03, "{acc}");
}

#[test]
fn history_records_both_heads_for_early_exit() {
    let data = common::small_dataset(20, 5);
    let split = split_dataset(&data, 0).unwrap();
    let mut g = common::graph(Variant::V1, 0);
    let h = train(&mut g, &split.train[..256], &split.val, &quick_cfg(2, 0)).unwrap();
    assert_eq!(h.epochs.len(), 2);
    for e in &h.epochs {
        assert!(e.loss1.unwrap().is_finite());
        assert!(e.val_acc_exit.is_some());
        assert!((0.0..=1.0).contains(&e.val_acc_backbone));
    }
    assert_eq!(h.to_csv().lines().count(), 3);
}

#[test]
fn patience_stops_early() {
    let data = common::small_dataset(20, 5);
    let split = split_dataset(&data, 0).unwrap();
    let mut g = common::graph(Variant::Baseline, 0);
    let cfg = TrainConfig {
        optimizer_exit: OptimizerKind::adam(1e-9),
        patience: Some(1),
        ..quick_cfg(10, 0)
    };
    let h = train_baseline(&mut g, &split.train[..128], &split.val, &cfg).unwrap();
    assert!(h.epochs.len() < 10);
}

#[test]
fn contract_and_config_errors() {
    let data = common::small_dataset(20, 5);
    let split = split_dataset(&data, 0).unwrap();
    let mut base = common::graph(Variant::Baseline, 0);
    let mut ee = common::graph(Variant::V1, 0);
    assert!(matches!(train(&mut base, &split.train, &split.val, &quick_cfg(1, 0)), Err(Error::Contract(_))));
    assert!(matches!(
        train_baseline(&mut ee, &split.train, &split.val, &quick_cfg(1, 0)),
        Err(Error::Contract(_))
    ));
    assert!(matches!(train(&mut ee, &[], &split.val, &quick_cfg(1, 0)), Err(Error::Config(_))));
    assert!(matches!(
        train(&mut ee, &split.train, &split.val, &quick_cfg(0, 0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn non_finite_input_aborts_with_numeric_error_and_no_update() {
    let data = common::small_dataset(1, 2);
    let (mut x, y) = batch(&data, 4);
    x.data_mut()[10] = f32::NAN;
    let mut g = common::graph(Variant::V1, 0);
    let before = encode_weights(&g);
    let r = train_step_ee(&mut g, &x, &y, &mut adam(), &mut adam());
    assert!(matches!(r, Err(Error::Numeric(_))), "{r:?}");
    assert_eq!(encode_weights(&g), before);
}

#[test]
fn checkpoint_has_weights_and_sidecar() {
    let data = common::small_dataset(20, 5);
    let split = split_dataset(&data, 0).unwrap();
    let mut g = common::graph(Variant::V1, 0);
    let cfg = quick_cfg(1, 0);
    let h = train(&mut g, &split.train[..64], &split.val, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.eewt");
    write_checkpoint(&g, &path, &cfg.to_pairs(), &h).unwrap();
    let loaded = amc_ee::arch::load_graph(&path, g.config()).unwrap();
    assert_eq!(encode_weights(&loaded), encode_weights(&g));
    let meta = std::fs::read_to_string(sidecar_path(&path)).unwrap();
    for key in ["arch.variant=v1", "train.epochs=1", "train.batch_size=32", "final.loss1=", "final.val_acc_backbone="] {
        assert!(meta.contains(key), "missing {key} in\n{meta}");
    }
}
