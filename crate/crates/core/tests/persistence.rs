use proptest::prelude::*;
use span_core::io::{decode_checkpoint, decode_weights, encode_checkpoint, encode_weights, Checkpoint};
use span_core::model::{fuse_model, BranchMask, SpanConfig, SpanModel, Variant};
use span_core::nn::{Activation, PadMode};
use span_core::train::{TrainConfig, TrainState};
use span_core::{Error, FormatError};

fn config_strategy() -> impl Strategy<Value = SpanConfig> {
    (
        2usize..5,
        1usize..6,
        1usize..4,
        0usize..4,
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        (any::<bool>(), any::<bool>()),
    )
        .prop_map(|(scale, channels, blocks, v, c1, id, replicate, (ta, tb))| {
            let mut cfg = SpanConfig {
                channels,
                blocks,
                padding: if replicate { PadMode::Replicate } else { PadMode::Zero },
                activation: if c1 { Activation::Silu } else { Activation::LeakyRelu },
                branches: BranchMask { conv1x1: c1, identity: id },
                ..SpanConfig::desk(scale)
            }
            .with_variant(Variant::ALL[v]);
            cfg.block.train_attention_a = ta;
            cfg.block.train_attention_b = tb;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weights_round_trip_bit_exact(cfg in config_strategy(), seed in any::<u64>(), fuse in any::<bool>()) {
        let mut model = SpanModel::<f32>::init(cfg, seed).unwrap();
        model.params.attention.a = 1.0 + (seed % 7) as f32 * 0.125;
        if fuse {
            model = fuse_model(&model).unwrap();
        }
        let bytes = encode_weights(&model).unwrap();
        let back = decode_weights(&bytes).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(encode_weights(&back).unwrap(), bytes);
    }

    #[test]
    fn any_single_byte_flip_is_rejected(seed in any::<u64>(), pos in any::<prop::sample::Index>(), xor in 1u8..=255) {
        let cfg = SpanConfig { channels: 3, blocks: 1, ..SpanConfig::desk(2) };
        let model = SpanModel::<f32>::init(cfg, seed).unwrap();
        let mut bytes = encode_weights(&model).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] ^= xor;
        prop_assert!(decode_weights(&bytes).is_err());
    }

    #[test]
    fn truncation_is_rejected(seed in any::<u64>(), cut in any::<prop::sample::Index>()) {
        let cfg = SpanConfig { channels: 2, blocks: 1, ..SpanConfig::desk(3) };
        let bytes = encode_weights(&SpanModel::<f32>::init(cfg, seed).unwrap()).unwrap();
        let keep = cut.index(bytes.len());
        prop_assert!(decode_weights(&bytes[..keep]).is_err());
    }
}

#[test]
fn checkpoint_preserves_optimizer_moments() {
    let cfg = SpanConfig { channels: 3, blocks: 2, ..SpanConfig::desk(2) };
    let model = SpanModel::<f32>::init(cfg, 8).unwrap();
    let mut state = TrainState::fresh(&model);
    state.stage = 1;
    state.iteration = 17;
    let ck = Checkpoint {
        model,
        state,
        train: TrainConfig { seed: 99, ..TrainConfig::desk() },
    };
    let bytes = encode_checkpoint(&ck).unwrap();
    assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(FormatError::Crc { .. }))));
}

#[test]
fn weight_file_is_not_a_checkpoint() {
    let cfg = SpanConfig { channels: 2, blocks: 1, ..SpanConfig::desk(2) };
    let bytes = encode_weights(&SpanModel::<f32>::init(cfg, 0).unwrap()).unwrap();
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(FormatError::BadMagic))));
}
