use super::*;
use crate::autodiff::{grad_check_with, GradCheckOptions};
use crate::tensor::{slice_channels, Precision};
use proptest::prelude::*;
use rand::Rng;

fn desk() -> NetworkConfig {
    NetworkConfig::dd_unet(2, 8, 2, 2, 2)
}

fn full_scale() -> NetworkConfig {
    NetworkConfig::dd_unet(2, 16, 4, 3, 2)
}

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

fn initialized(cfg: &NetworkConfig, seed: u64) -> OpGraph {
    let mut g = build_network(cfg).unwrap().graph;
    let p = init_params(&g, seed);
    g.load_params(p).unwrap();
    g
}

fn conv_count(i: usize, o: usize, k: usize, dims: u32) -> usize {
    i * o * k.pow(dims) + o
}

fn block_count(c: usize, f: usize, k: usize, split: bool, dims: u32) -> usize {
    let mut total = 0;
    let mut ch = c;
    while ch < f {
        total += if split {
            2 * conv_count(ch, k / 2, 3, dims)
        } else {
            conv_count(ch, k, 3, dims)
        };
        ch += k;
    }
    total
}

/// Independent closed form of the layer arithmetic.
fn expected_params(cfg: &NetworkConfig) -> usize {
    let dd = cfg.variant == Variant::DdUnet;
    let d = cfg.spatial_dims as u32;
    let f = |l: usize| cfg.f1 * 2usize.pow(l as u32);
    let k = |l: usize| cfg.k1 * 2usize.pow(l as u32);
    let mut total = conv_count(cfg.input_channels, cfg.f1 / 2, 3, d);
    for l in 0..cfg.levels {
        total += block_count(f(l) / 2, f(l), k(l), dd, d);
        if l + 1 < cfg.levels && dd {
            total += conv_count(f(l), f(l), 2, d);
        }
    }
    for l in 0..cfg.levels - 1 {
        total += conv_count(f(l + 1), f(l) / 2, 2, d);
        total += conv_count(f(l) / 2 + f(l), f(l) / 2, 1, d);
        total += block_count(f(l) / 2, f(l), k(l), dd, d);
    }
    if dd {
        total += conv_count(cfg.f1, cfg.f1 / 2, 1, d);
        total += block_count(cfg.f1 / 2, cfg.f1, cfg.k1, true, d);
        total += 2 * conv_count(cfg.f1, cfg.f1, 3, d);
    }
    total + conv_count(cfg.f1, cfg.output_channels, 1, d)
}

#[test]
fn block_step_rule() {
    let fig = DenseDilationBlockSpec::new(32, 64, 8, 2).unwrap();
    assert_eq!(fig.steps, 4);
    let small = DenseDilationBlockSpec::new(8, 16, 4, 2).unwrap();
    assert_eq!(small.steps, 2);
    assert!(matches!(DenseDilationBlockSpec::new(8, 15, 4, 2), Err(crate::Error::Config(_))));
    assert!(DenseDilationBlockSpec::new(16, 16, 4, 2).is_err());
}

#[test]
fn block_output_channels_and_passthrough() {
    let spec = DenseDilationBlockSpec::new(8, 16, 4, 2).unwrap();
    let mut g = OpGraph::new(8, 2);
    let input = g.input();
    let out = build_dense_dilation_block(&mut g, "b", input, spec).unwrap();
    assert_eq!(g.node(out).channels, 16);
    let p = init_params(&g, 1);
    g.load_params(p).unwrap();
    let x = random_input(&[1, 8, 6, 6], 2);
    let y = g.forward(&x).unwrap();
    assert_eq!(y.shape(), &[1, 16, 6, 6]);
    assert_eq!(slice_channels(&y, 0..8).unwrap(), x);
    assert_eq!(g.count_kind(|k| matches!(k, OpKind::Conv { spec, .. } if spec.dilation[0] == 2)), 2);
    assert!(build_dense_dilation_block(&mut g, "odd", out, DenseDilationBlockSpec::new(16, 19, 3, 2).unwrap()).is_err());
}

#[test]
fn dd_unet_preserves_shape_at_full_scale() {
    let cfg = full_scale();
    let g = initialized(&cfg, 3);
    let y = g.evaluate(&random_input(&[2, 1, 64, 64], 4)).unwrap();
    assert_eq!(y.shape(), &[2, 1, 64, 64]);
    assert!(y.is_finite());
}

#[test]
fn rate_one_degenerates_but_runs() {
    let g = initialized(&NetworkConfig::dd_unet(2, 8, 2, 2, 1), 5);
    let y = g.evaluate(&random_input(&[1, 1, 16, 16], 6)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 16, 16]);
}

#[test]
fn fd_unet_shape_and_structure() {
    let cfg = NetworkConfig::fd_unet(2, 16, 4, 3);
    let g = initialized(&cfg, 7);
    let y = g.evaluate(&random_input(&[2, 1, 64, 64], 8)).unwrap();
    assert_eq!(y.shape(), &[2, 1, 64, 64]);
    let dilated = g.count_kind(|k| matches!(k, OpKind::Conv { spec, .. } if spec.dilation.iter().any(|&r| r > 1)));
    let strided = g.count_kind(|k| matches!(k, OpKind::Conv { spec, .. } if spec.stride.iter().any(|&s| s > 1)));
    assert_eq!((dilated, strided), (0, 0));
    assert_eq!(g.count_kind(|k| matches!(k, OpKind::MaxPool { .. })), 2);
    assert!(build_dd_unet(&cfg).is_err());
}

#[test]
fn dd_unet_structure() {
    let g = build_dd_unet(&full_scale()).unwrap();
    assert_eq!(g.count_kind(|k| matches!(k, OpKind::MaxPool { .. })), 0);
    let strided = g.count_kind(|k| matches!(k, OpKind::Conv { spec, .. } if spec.stride[0] == 2));
    assert_eq!(strided, 2);
    assert_eq!(g.count_kind(|k| matches!(k, OpKind::TransposedConv { .. })), 2);
    assert!(build_fd_unet(&full_scale()).is_err());
}

#[test]
fn channel_bookkeeping_in_every_block() {
    for cfg in [desk(), full_scale(), NetworkConfig::fd_unet(2, 16, 4, 3)] {
        let net = build_network(&cfg).unwrap();
        let expected = if cfg.variant == Variant::DdUnet { 2 * cfg.levels } else { 2 * cfg.levels - 1 };
        assert_eq!(net.blocks.len(), expected);
        for b in &net.blocks {
            assert_eq!(b.in_channels + b.steps * b.growth, b.target_features);
        }
    }
}

#[test]
fn parameter_counts() {
    let mut one = OpGraph::new(4, 2);
    one.conv("c", one.input(), ConvSpec::cube(2, 4, 8, 1)).unwrap();
    assert_eq!(count_params(&one), 40);
    assert_eq!(count_params(&OpGraph::new(1, 2)), 0);

    for cfg in [desk(), full_scale(), NetworkConfig::fd_unet(2, 16, 4, 3), NetworkConfig::dd_unet(3, 8, 2, 2, 2)] {
        let net = build_network(&cfg).unwrap();
        assert_eq!(net.ledger_total(), count_params(&net.graph), "{cfg:?}");
        assert_eq!(count_params(&net.graph), expected_params(&cfg), "{cfg:?}");
    }
    let dd = count_params(&build_dd_unet(&full_scale()).unwrap()) as f64;
    let fd = count_params(&build_fd_unet(&NetworkConfig::fd_unet(2, 16, 4, 3)).unwrap()) as f64;
    println!("parameters at f1=16 k1=4 L=3: dd_unet {dd}, fd_unet {fd}");
    assert!((0.1..10.0).contains(&(dd / fd)));
}

#[test]
fn init_is_seeded_he_normal() {
    let g = build_dd_unet(&full_scale()).unwrap();
    let a = init_params(&g, 11);
    assert_eq!(a, init_params(&g, 11));
    assert_ne!(a, init_params(&g, 12));
    let mut checked = 0;
    for node in g.nodes() {
        let (OpKind::Conv { spec, weight, bias } | OpKind::TransposedConv { spec, weight, bias }) = &node.kind else {
            continue;
        };
        if let Some(b) = bias {
            assert_eq!(a.get(*b).max_abs(), 0.0);
        }
        let w = a.get(*weight);
        if w.len() >= 1000 {
            let fan_in = match node.kind {
                OpKind::Conv { .. } => spec.in_channels * spec.taps(),
                _ => spec.in_channels,
            };
            let target = (2.0 / fan_in as f64).sqrt();
            let mean = w.mean();
            let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64).sqrt();
            assert!((std / target - 1.0).abs() < 0.1, "{}: {std} vs {target}", node.name);
            checked += 1;
        }
    }
    assert!(checked > 5);
}

#[test]
fn zero_parameters_give_zero_output() {
    let g = build_dd_unet(&desk()).unwrap();
    let y = g.evaluate(&random_input(&[1, 1, 16, 16], 13)).unwrap();
    assert_eq!(y.max_abs(), 0.0);
}

#[test]
fn indivisible_input_names_the_levels() {
    let g = initialized(&full_scale(), 14);
    let err = g.evaluate(&Tensor::zeros(&[1, 1, 30, 32])).unwrap_err();
    assert!(matches!(err, crate::Error::Config(_)));
    assert!(err.to_string().contains("level"), "{err}");
}

#[test]
fn invalid_configs() {
    let mut odd = desk();
    odd.k1 = 3;
    assert!(odd.validate().is_err());
    let mut flat = desk();
    flat.spatial_dims = 1;
    assert!(build_network(&flat).is_err());
    let mut uneven = desk();
    uneven.f1 = 6;
    uneven.k1 = 4;
    assert!(build_network(&uneven).is_err());
}

#[test]
fn config_json_field_names() {
    let v = serde_json::to_value(desk()).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["dilation_rate", "f1", "input_channels", "k1", "levels", "output_channels", "spatial_dims", "variant"]
    );
    assert_eq!(v["variant"], "dd_unet");
    let back: NetworkConfig = serde_json::from_value(v).unwrap();
    assert_eq!(back, desk());
}

#[test]
fn three_dimensional_dd_unet() {
    let g = initialized(&NetworkConfig::dd_unet(3, 8, 2, 2, 2), 15);
    let y = g.evaluate(&random_input(&[1, 1, 8, 8, 8], 16)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 8, 8, 8]);
}

#[test]
fn desk_network_gradients_match_finite_differences() {
    let mut g = initialized(&desk(), 17);
    let x = random_input(&[1, 1, 16, 16], 18);
    let target = random_input(&[1, 1, 16, 16], 19);
    let r = grad_check_with(
        &mut g,
        &x,
        &GradCheckOptions {
            target: Some(target),
            check_input: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
    assert!(r.checked > 200);
    let single = x.with_precision(Precision::Single);
    assert!(g.evaluate(&single).unwrap().is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn output_matches_input_and_vanishes_with_zero_parameters(
        dilated in any::<bool>(),
        k1 in prop::sample::select(vec![2usize, 4]),
        levels in 1usize..4,
        m in 1usize..4,
        batch in 1usize..3,
        seed in 0u64..1000,
    ) {
        let cfg = if dilated {
            NetworkConfig::dd_unet(2, 8, k1, levels, 2)
        } else {
            NetworkConfig::fd_unet(2, 8, k1, levels)
        };
        let n = m << (levels - 1);
        let x = random_input(&[batch, 1, n, n + (1 << (levels - 1))], seed);
        let g = initialized(&cfg, seed);
        let y = g.evaluate(&x).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.is_finite());
        let zero = build_network(&cfg).unwrap().graph;
        prop_assert_eq!(zero.evaluate(&x).unwrap().max_abs(), 0.0);
    }
}
