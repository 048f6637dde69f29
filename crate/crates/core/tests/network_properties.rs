use proptest::prelude::*;
use sscan_core::hsi::{make_band_groups, BandGroupingSpec};
use sscan_core::network::{decode_checkpoint, encode_checkpoint, ModelConfig, SscanModel, TrunkActivation};
use sscan_core::tensor::Tensor;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn model_config() -> impl Strategy<Value = ModelConfig> {
    (
        2usize..6,
        0usize..3,
        0usize..10,
        0usize..3,
        0usize..3,
        prop::sample::select(vec![(4usize, 2usize, 2usize), (8, 4, 2), (6, 3, 3)]),
        prop::sample::select(vec![3usize, 7]),
        any::<u64>(),
        prop::sample::select(vec![TrunkActivation::After, TrunkActivation::Between, TrunkActivation::None]),
        any::<bool>(),
    )
        .prop_map(|(k, o, extra, n_ssab, fusion_ssab, (c, cg, r), sk, seed, act, trunk)| ModelConfig {
            group_size: k,
            overlap: o.min(k - 1),
            n_ssab,
            fusion_ssab,
            trunk_channels: c,
            group_channels: cg,
            reduction: r,
            spatial_kernel: sk,
            bands: k + extra,
            seed,
            trunk_activation: act,
            ssab_trunk: trunk,
        })
}

fn input(batch: usize, bands: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut s = seed | 1;
    Tensor::from_fn(&[batch, bands, h, w], |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn fresh_model_is_identity(cfg in model_config(), batch in 1usize..3, h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let model = SscanModel::new(cfg).unwrap();
        let x = input(batch, cfg.bands, h, w, seed);
        let y = model.infer(&x).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        for (a, b) in y.data().iter().zip(x.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn perturbed_model_keeps_shape(cfg in model_config(), h in 1usize..8, w in 1usize..8, seed in any::<u64>()) {
        let mut model = SscanModel::new(cfg).unwrap();
        let id = model.param_id("reconstruct.weight").unwrap();
        let n = model.params().get(id).tensor.numel();
        let mut s = seed | 1;
        model.params_mut().tensor_mut(id).data_mut().copy_from_slice(&(0..n).map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.2
        }).collect::<Vec<_>>());
        let x = input(1, cfg.bands, h, w, seed);
        let y = model.infer(&x).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.is_finite());
        prop_assert!(y.data() != x.data());
    }

    #[test]
    fn checkpoint_round_trip(cfg in model_config()) {
        let model = SscanModel::new(cfg).unwrap();
        let bytes = encode_checkpoint(&model).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.config(), model.config());
        prop_assert_eq!(back.params(), model.params());
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn group_count_follows_band_grouping(cfg in model_config()) {
        let model = SscanModel::new(cfg).unwrap();
        let groups = make_band_groups(cfg.bands, BandGroupingSpec::new(cfg.group_size, cfg.overlap).unwrap()).unwrap();
        prop_assert_eq!(model.band_groups(), &groups);
        let fuse = model.param_id("fuse.weight").unwrap();
        prop_assert_eq!(model.params().get(fuse).tensor.shape()[1], groups.n_groups() * cfg.group_channels);
    }
}

#[test]
fn wrong_band_count_is_rejected() {
    let model = SscanModel::new(ModelConfig::tiny()).unwrap();
    let err = model.infer(&input(1, 7, 4, 4, 1)).unwrap_err().to_string();
    assert!(err.contains("6") && err.contains("7"), "{err}");
}
