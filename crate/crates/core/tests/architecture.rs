mod common;

use amc_ee::arch::*;
use amc_ee::nn::{LayerKind, Mode};
use amc_ee::{Error, Tensor};
use std::collections::HashSet;

fn input(n: usize, seed: u64) -> Tensor {
    let mut r = common::rng(seed);
    Tensor::new(&[n, 2, 128], common::uniform(&mut r, n * 256, -1.5, 1.5)).unwrap()
}

/// Parameter count of the default backbone from its layer table.
fn expected_backbone_params() -> usize {
    let conv = |cin: usize, cout: usize| cout * cin * 3 + cout;
    let dense = |i: usize, o: usize| i * o + o;
    let bn = |c: usize| 2 * c;
    conv(2, 64)
        + conv(64, 64)
        + bn(64)
        + conv(64, 32)
        + conv(32, 32)
        + bn(32)
        + conv(32, 16)
        + conv(16, 16)
        + bn(16)
        + dense(16 * 8, 128)
        + dense(128, 64)
        + dense(64, 10)
}

/// Exit head parameters for a branch after `block` (1-based).
fn expected_head_params(block: usize) -> usize {
    let (c, l) = match block {
        1 => (64, 128),
        2 => (64, 64),
        3 => (32, 64),
        4 => (32, 32),
        5 => (16, 32),
        _ => unreachable!(),
    };
    let flat = c * (l / 2);
    flat * 64 + 64 + 64 * 10 + 10
}

#[test]
fn parameter_counts_match_closed_form() {
    assert_eq!(expected_backbone_params(), 50_058);
    let base = common::graph(Variant::Baseline, 0);
    assert_eq!(base.param_count(), expected_backbone_params());
    for v in Variant::EARLY_EXIT {
        let g = common::graph(v, 0);
        let head: usize = g
            .section(Section::ExitHead)
            .iter()
            .map(|l| l.params().iter().map(|p| p.len()).sum::<usize>())
            .sum();
        assert_eq!(head, expected_head_params(v.branch_block().unwrap()), "{v}");
        assert_eq!(g.param_count(), expected_backbone_params() + head, "{v}");
    }
}

#[test]
fn branch_points() {
    assert_eq!(Variant::Baseline.branch_block(), None);
    assert_eq!(Variant::V0.branch_block(), Some(1));
    assert_eq!(Variant::V1.branch_block(), Some(2));
    assert_eq!(Variant::V2.branch_block(), Some(4));
    assert_eq!(Variant::V3.branch_block(), Some(5));
}

#[test]
fn early_exit_backbones_equal_the_baseline() {
    let base = common::graph(Variant::Baseline, 42);
    let base_kinds = base.layer_kinds(Section::Common);
    let base_params = base.snapshot(Section::Common);
    for v in Variant::EARLY_EXIT {
        let g = common::graph(v, 42);
        assert_eq!(g.backbone_kinds(), base_kinds, "{v}");
        let mut params = g.snapshot(Section::Common);
        params.extend(g.snapshot(Section::Tail));
        assert_eq!(params, base_params, "{v} backbone init differs from baseline");
    }
}

#[test]
fn exit_head_shape() {
    for v in Variant::EARLY_EXIT {
        let g = common::graph(v, 0);
        let kinds = g.layer_kinds(Section::ExitHead);
        let q = g.section_output_shape(Section::Common).unwrap();
        let flat = q[0] * (q[1] / 2);
        assert_eq!(
            kinds,
            vec![
                LayerKind::MaxPool1d { window: 2, stride: 2 },
                LayerKind::Flatten,
                LayerKind::Dense { in_dim: flat, out_dim: 64 },
                LayerKind::Relu,
                LayerKind::Dropout { rate: 0.3 },
                LayerKind::Dense { in_dim: 64, out_dim: 10 },
                LayerKind::Softmax,
            ],
            "{v}"
        );
        assert_eq!(g.section_output_shape(Section::ExitHead).unwrap(), vec![10]);
        assert_eq!(g.section_output_shape(Section::Tail).unwrap(), vec![10]);
    }
}

#[test]
fn theta_partition_is_disjoint_and_exhaustive() {
    for v in Variant::EARLY_EXIT {
        let g = common::graph(v, 0);
        let t1: HashSet<ParamId> = g.theta1_ids().into_iter().collect();
        let t2: HashSet<ParamId> = g.theta2_ids().into_iter().collect();
        assert!(t1.is_disjoint(&t2));
        let mut all: HashSet<ParamId> = HashSet::new();
        for s in [Section::Common, Section::ExitHead, Section::Tail] {
            all.extend(g.param_ids(s));
        }
        assert_eq!(&t1 | &t2, all);
        assert!(t2.iter().all(|(s, _, _)| *s == Section::Tail));
        assert!(t1.iter().all(|(s, _, _)| *s != Section::Tail));
    }
}

#[test]
fn cached_q_reproduces_monolithic_backbone() {
    for v in Variant::EARLY_EXIT {
        let mut g = common::graph(v, 3);
        let x = input(5, 1);
        g.forward_pass1(&x, Mode::Eval).unwrap();
        let q = g.q_cache().unwrap().clone();
        let two_pass = g.forward_pass2(Mode::Eval).unwrap();
        assert!(g.q_cache().is_none(), "pass 2 consumes the cache");
        let mono = g.forward_backbone(&x, Mode::Eval).unwrap();
        assert_eq!(two_pass, mono, "{v}");
        assert_eq!(q.shape()[1..], g.section_output_shape(Section::Common).unwrap()[..]);
    }
}

#[test]
fn unbatched_input_matches_batch_of_one() {
    let mut g = common::graph(Variant::V1, 3);
    let x = input(1, 2);
    let z_b = g.forward_pass1(&x, Mode::Eval).unwrap();
    let single = x.clone().reshape(&[2, 128]).unwrap();
    let z_s = g.forward_pass1(&single, Mode::Eval).unwrap();
    assert_eq!(z_s.shape(), &[10]);
    assert_eq!(z_s.data(), z_b.data());
    let full = g.forward_pass2(Mode::Eval).unwrap();
    assert_eq!(full.shape(), &[10]);
}

#[test]
fn outputs_are_distributions() {
    for v in Variant::ALL {
        let mut g = common::graph(v, 9);
        let z = g.forward_backbone(&input(4, 3), Mode::Eval).unwrap();
        for i in 0..4 {
            let s: f64 = z.row(i).iter().map(|&p| p as f64).sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(z.row(i).iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn call_order_errors() {
    let mut base = common::graph(Variant::Baseline, 0);
    assert!(matches!(base.forward_pass1(&input(1, 0), Mode::Eval), Err(Error::Contract(_))));
    let mut g = common::graph(Variant::V1, 0);
    assert!(matches!(g.forward_pass2(Mode::Eval), Err(Error::State(_))));
    g.forward_pass1(&input(1, 0), Mode::Eval).unwrap();
    g.forward_pass2(Mode::Eval).unwrap();
    assert!(matches!(g.forward_pass2(Mode::Eval), Err(Error::State(_))));
    let bad = Tensor::zeros(&[1, 3, 128]);
    assert!(matches!(g.forward_pass1(&bad, Mode::Eval), Err(Error::Config(_))));
}

#[test]
fn invalid_configs_name_the_layer() {
    let cfg = ArchConfig {
        input_len: 8,
        ..Default::default()
    };
    match build(Variant::Baseline, &cfg) {
        Err(Error::Config(msg)) => assert!(msg.contains("maxpool1d"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let cfg = ArchConfig {
        num_classes: 7,
        ..Default::default()
    };
    assert!(matches!(build(Variant::V1, &cfg), Err(Error::Config(_))));
    let mut cfg = ArchConfig::default();
    cfg.conv_blocks.pop();
    assert!(matches!(build(Variant::V1, &cfg), Err(Error::Config(_))));
}

#[test]
fn flop_identities() {
    let base = common::graph(Variant::Baseline, 0);
    for v in Variant::EARLY_EXIT {
        let g = common::graph(v, 0);
        let (c, h, t) = (
            g.section_flops(Section::Common),
            g.section_flops(Section::ExitHead),
            g.section_flops(Section::Tail),
        );
        assert_eq!(g.flop_count(ExitPath::Full), c + h + t);
        assert_eq!(g.flop_count(ExitPath::Exit), c + h);
        assert!(g.flop_count(ExitPath::Exit) < g.flop_count(ExitPath::Full), "{v}");
        assert_eq!(g.backbone_flops(), base.backbone_flops());
    }
    assert_eq!(LayerKind::Dense { in_dim: 10, out_dim: 10 }.flops(&[10]).unwrap(), 100);
    let conv = LayerKind::Conv1d {
        in_channels: 2,
        out_channels: 64,
        kernel_size: 3,
        stride: 1,
        padding: 1,
    };
    assert_eq!(conv.flops(&[2, 128]).unwrap(), 64 * 128 * 2 * 3);
    assert_eq!(LayerKind::Relu.flops(&[4, 5]).unwrap(), 20);
    assert_eq!(LayerKind::Flatten.flops(&[4, 5]).unwrap(), 0);
}

#[test]
fn weights_round_trip() {
    for v in Variant::ALL {
        let src = common::graph(v, 5);
        let bytes = encode_weights(&src);
        assert_eq!(weights_variant(&bytes).unwrap(), v);
        let mut dst = common::graph(v, 6);
        assert_ne!(dst.snapshot(Section::Common), src.snapshot(Section::Common));
        decode_weights_into(&mut dst, &bytes).unwrap();
        assert_eq!(encode_weights(&dst), bytes);
        let x = input(3, 4);
        let mut src = src;
        assert_eq!(
            src.forward_backbone(&x, Mode::Eval).unwrap(),
            dst.forward_backbone(&x, Mode::Eval).unwrap()
        );
    }
}

#[test]
fn weights_file_errors_leave_graph_untouched() {
    let src = common::graph(Variant::V1, 5);
    let bytes = encode_weights(&src);
    let mut dst = common::graph(Variant::V1, 6);
    let before = encode_weights(&dst);
    let offset = |r: amc_ee::Result<()>| match r {
        Err(Error::Format { offset, .. }) => offset,
        other => panic!("{other:?}"),
    };
    let cut = &bytes[..bytes.len() - 3];
    assert_eq!(offset(decode_weights_into(&mut dst, cut)), cut.len() as u64);
    let mut bad = bytes.clone();
    bad[0] = b'Z';
    assert_eq!(offset(decode_weights_into(&mut dst, &bad)), 0);
    let mut other = common::graph(Variant::V2, 0);
    assert_eq!(offset(decode_weights_into(&mut other, &bytes)), 8);
    let mut longer = bytes.clone();
    longer.push(0);
    assert_eq!(offset(decode_weights_into(&mut dst, &longer)), bytes.len() as u64);
    assert_eq!(encode_weights(&dst), before);
}

#[test]
fn load_graph_builds_stored_variant() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.eewt");
    let src = common::graph(Variant::V2, 8);
    write_weights(&src, &path).unwrap();
    let g = load_graph(&path, &ArchConfig::default()).unwrap();
    assert_eq!(g.variant(), Variant::V2);
    assert_eq!(encode_weights(&g), encode_weights(&src));
}

#[test]
fn classify_breaks_ties_low() {
    assert_eq!(classify(&[0.2, 0.4, 0.4]), 1);
    assert_eq!(classify(&[0.1; 10]), 0);
}

#[test]
fn variants_share_backbone_initialization_with_baseline() {
    let base = common::graph(Variant::Baseline, 21).snapshot(Section::Common);
    for v in Variant::EARLY_EXIT {
        let g = common::graph(v, 21);
        let mut backbone = g.snapshot(Section::Common);
        backbone.extend(g.snapshot(Section::Tail));
        assert_eq!(backbone, base, "{v}");
    }
}
