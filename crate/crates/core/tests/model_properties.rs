use proptest::prelude::*;
use span_core::model::{fuse_model, param_count, span_forward, BranchMask, Mode, SpanConfig, SpanModel, Variant};
use span_core::nn::{pixel_shuffle, pixel_unshuffle, AttentionParams, PadMode};
use span_core::{Distribution, Shape4, Tensor4};

fn uniform(shape: [usize; 4], seed: u64) -> Tensor4<f32> {
    let [n, c, h, w] = shape;
    Tensor4::fill_random(Shape4::new(n, c, h, w).unwrap(), seed, Distribution::Uniform { lo: 0.0, hi: 1.0 }).unwrap()
}

fn tiny(scale: usize, variant: Variant) -> SpanConfig {
    SpanConfig {
        channels: 6,
        blocks: 2,
        ..SpanConfig::desk(scale)
    }
    .with_variant(variant)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shuffle_round_trips_bit_exact(n in 1usize..3, c in 1usize..4, h in 1usize..7, w in 1usize..7, r in 1usize..5, seed in any::<u64>()) {
        let x = Tensor4::<f32>::fill_random(Shape4::new(n, c * r * r, h, w).unwrap(), seed, Distribution::Normal { mean: 0.0, std: 1.0 }).unwrap();
        let y = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(y.shape().dims(), [n, c, h * r, w * r]);
        let back = pixel_unshuffle(&y, r).unwrap();
        prop_assert_eq!(back.data(), x.data());
        let again = pixel_shuffle(&back, r).unwrap();
        prop_assert_eq!(again.data(), y.data());
    }

    #[test]
    fn attention_activation_is_odd_and_sign_preserving(x in -60.0f64..60.0) {
        let p = AttentionParams::<f64>::default();
        prop_assert!((p.value(x) + p.value(-x)).abs() <= 1e-12);
        if x.abs() > 1e-300 {
            prop_assert!(x * p.value(x) > 0.0);
        }
        prop_assert!(p.value(x).abs() <= 0.5);
    }

    #[test]
    fn output_shape_scales_input(h in 3usize..10, w in 3usize..10, scale in 2usize..5) {
        let model = SpanModel::<f32>::init(tiny(scale, Variant::Span), 1).unwrap();
        let (y, _) = span_forward(&uniform([1, 3, h, w], 5), &model, Mode::Infer).unwrap();
        prop_assert_eq!(y.shape().dims(), [1, 3, h * scale, w * scale]);
        prop_assert!(y.all_finite());
    }
}

#[test]
fn fused_model_matches_unfused_for_every_variant_and_padding() {
    for variant in Variant::ALL {
        for padding in [PadMode::Zero, PadMode::Replicate] {
            let cfg = SpanConfig { padding, ..tiny(2, variant) };
            let model = SpanModel::<f32>::init(cfg, 11).unwrap();
            let fused = fuse_model(&model).unwrap();
            assert!(fused.fused);
            assert_eq!(fused.num_params(), param_count(&cfg, true));
            for seed in 0..3 {
                let x = uniform([2, 3, 9, 7], seed);
                let (a, _) = span_forward(&x, &model, Mode::Infer).unwrap();
                let (b, _) = span_forward(&x, &fused, Mode::Infer).unwrap();
                let d = a.max_abs_diff(&b).unwrap();
                assert!(d <= 1e-5, "{variant:?} {padding:?}: {d}");
            }
        }
    }
}

#[test]
fn closed_form_count_matches_materialised_model() {
    for branches in [BranchMask::FULL, BranchMask::PLAIN, BranchMask { conv1x1: false, identity: true }] {
        for scale in 2..=4 {
            let cfg = SpanConfig { branches, ..SpanConfig::paper(scale) };
            let model = SpanModel::<f32>::init(cfg, 0).unwrap();
            assert_eq!(model.num_params(), param_count(&cfg, false));
            assert_eq!(fuse_model(&model).unwrap().num_params(), param_count(&cfg, true));
        }
    }
}

#[test]
fn batch_items_are_independent() {
    let model = SpanModel::<f32>::init(tiny(3, Variant::Span), 4).unwrap();
    let x = uniform([3, 3, 6, 5], 9);
    let (joint, _) = span_forward(&x, &model, Mode::Infer).unwrap();
    for n in 0..3 {
        let (alone, _) = span_forward(&x.batch_item(n).unwrap(), &model, Mode::Infer).unwrap();
        assert_eq!(alone.data(), joint.batch_item(n).unwrap().data());
    }
}

#[test]
fn fusing_twice_is_rejected() {
    let model = SpanModel::<f32>::init(tiny(2, Variant::Span), 0).unwrap();
    let fused = fuse_model(&model).unwrap();
    assert!(matches!(fuse_model(&fused), Err(span_core::Error::AlreadyFused)));
}
