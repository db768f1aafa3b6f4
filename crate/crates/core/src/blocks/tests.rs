use super::*;
use crate::neuron::lif_sequence;

fn sn() -> SpikeLayer {
    SpikeLayer {
        neuron: NeuronConfig::default(),
        mode: TemporalMode::Carry,
    }
}

fn conv_with(
    k: usize,
    cin: usize,
    cout: usize,
    groups: usize,
    f: impl FnMut(usize) -> f64,
) -> Conv {
    let w = RealTensor::from_fn(vec![k, k, cin / groups, cout], f).unwrap();
    Conv::new(w, groups, 1, Norm::identity(cout)).unwrap()
}

#[test]
fn cnn_block_zero_input_gives_zero_output() {
    let w = CnnBlock::random(4, 2, 7, 3, &mut seeded(1)).unwrap();
    let u = RealTensor::zeros(vec![3, 8, 8, 4]).unwrap();
    let y = sep_conv_block(&u, &w, &sn(), &mut OpCounter::new()).unwrap();
    assert_eq!(y.dims(), u.dims());
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn cnn_block_preserves_shape() {
    let w = CnnBlock::random(4, 2, 7, 3, &mut seeded(2)).unwrap();
    let u = RealTensor::from_fn(vec![2, 8, 8, 4], |i| ((i * 13) % 7) as f64 * 0.5).unwrap();
    let y = sep_conv_block(&u, &w, &sn(), &mut OpCounter::new()).unwrap();
    assert_eq!(y.dims(), &[2, 8, 8, 4]);
    let bad = RealTensor::zeros(vec![2, 8, 8, 3]).unwrap();
    assert!(matches!(
        sep_conv_block(&bad, &w, &sn(), &mut OpCounter::new()),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn cnn_block_on_single_pixel_is_a_lif_chain() {
    let (c, e, k) = (2, 4, 7);
    let centre = |k: usize| (k / 2) * k + k / 2;
    // Identity on the first `c` channels; off-centre taps are arbitrary
    // because a 1×1 map only ever sees the centre tap.
    let pw1 = conv_with(1, c, e, 1, |i| if i % e == i / e { 1.0 } else { 0.0 });
    let dw = conv_with(k, e, e, e, |i| {
        if i / e == centre(k) {
            1.0
        } else {
            0.3 * (i % 5) as f64
        }
    });
    let pw2 = conv_with(1, e, c, 1, |i| if i / c == i % c { 1.0 } else { 0.0 });
    let id3 = |i: usize| {
        let (tap, ci, co) = (i / (c * c), (i / c) % c, i % c);
        if tap == centre(3) {
            if ci == co {
                1.0
            } else {
                0.0
            }
        } else {
            -0.7
        }
    };
    let w = CnnBlock {
        pw1,
        dw,
        pw2,
        conv1: conv_with(3, c, c, 1, id3),
        conv2: conv_with(3, c, c, 1, id3),
    };
    let t = 6;
    let u = RealTensor::from_fn(vec![t, 1, 1, c], |i| {
        [1.7, 0.4, 2.9, 0.2, 1.1, 0.8, 3.3, 0.05, 0.6, 1.4, 2.2, 0.9][i]
    })
    .unwrap();
    let got = sep_conv_block(&u, &w, &sn(), &mut OpCounter::new()).unwrap();

    let cfg = NeuronConfig::default();
    let lif = |x: &RealTensor| lif_sequence(x, &cfg).unwrap().unpack();
    let s2 = lif(&lif(&u));
    let u1 = u.add(&s2).unwrap();
    let s4 = lif(&lif(&u1));
    let want = u1.add(&s4).unwrap();
    assert_eq!(got, want);
}

#[test]
fn transformer_block_shapes_and_hidden_width() {
    let spec = AttentionSpec::new(Variant::Joint, Score::Hamming, 2, 4, 32, 2).unwrap();
    let w = TransformerBlock::random(&spec, 4, 9).unwrap();
    assert_eq!(w.mlp_hidden(), 128);
    let u = RealTensor::from_fn(vec![2, 4, 32], |i| ((i * 7) % 11) as f64 * 0.3).unwrap();
    let y = transformer_block(&u, &spec, &w, TemporalMode::Carry, &mut OpCounter::new()).unwrap();
    assert_eq!(y.dims(), &[2, 4, 32]);
}

#[test]
fn zeroed_attention_leaves_the_mlp_residual() {
    for variant in Variant::ALL {
        let spec = AttentionSpec::new(variant, Score::Hamming, 3, 4, 8, 2).unwrap();
        let mut w = TransformerBlock::random(&spec, 4, 5).unwrap();
        w.attention = AttentionWeights::zeros(&spec).unwrap();
        let u = RealTensor::from_fn(vec![3, 4, 8], |i| ((i * 5) % 9) as f64 * 0.4).unwrap();
        let y =
            transformer_block(&u, &spec, &w, TemporalMode::Carry, &mut OpCounter::new()).unwrap();

        let mode = if variant == Variant::SpatialOnly {
            TemporalMode::ResetEachStep
        } else {
            TemporalMode::Carry
        };
        let layer = SpikeLayer {
            neuron: spec.neuron,
            mode,
        };
        let mut c = OpCounter::new();
        let s1 = layer.fire(&u).unwrap().reshape(vec![12, 8]).unwrap();
        let h = w
            .mlp1
            .forward(&s1, "a", &mut c)
            .unwrap()
            .reshape(vec![3, 4, 32])
            .unwrap();
        let s2 = layer.fire(&h).unwrap().reshape(vec![12, 32]).unwrap();
        let want = u
            .add(
                &w.mlp2
                    .forward(&s2, "b", &mut c)
                    .unwrap()
                    .reshape(vec![3, 4, 8])
                    .unwrap(),
            )
            .unwrap();
        assert_eq!(y, want, "{variant}");
    }
}

#[test]
fn downsample_halves_and_maps_channels() {
    let conv = Conv::random(3, 8, 16, 1, 2, 1.0, &mut seeded(3)).unwrap();
    let u = RealTensor::from_fn(vec![2, 16, 16, 8], |i| (i % 3) as f64).unwrap();
    let y = downsample(&u, &conv, Some(&sn()), &mut OpCounter::new()).unwrap();
    assert_eq!(y.dims(), &[2, 8, 8, 16]);
}

fn conv_params(k: usize, cin: usize, cout: usize, groups: usize) -> usize {
    k * k * cin / groups * cout + 2 * cout
}

#[test]
fn default_backbone_shape_params_and_audit() {
    let cfg = BackboneConfig::default();
    let net = build_backbone(&cfg).unwrap();
    assert_eq!(cfg.output_dims(), [4, 2, 2, 80]);

    let c = cfg.channels;
    let mut want = conv_params(7, 3, c, 1);
    let cnn = |c: usize| {
        conv_params(1, c, 2 * c, 1)
            + conv_params(7, 2 * c, 2 * c, 2 * c)
            + conv_params(1, 2 * c, c, 1)
            + 2 * conv_params(3, c, c, 1)
    };
    let tr = |d: usize| 4 * (d * d + 2 * d) + (d * 4 * d + 8 * d) + (4 * d * d + 2 * d);
    want += cnn(c);
    want += conv_params(3, c, 2 * c, 1) + cnn(2 * c);
    want += conv_params(3, 2 * c, 4 * c, 1) + 2 * cnn(4 * c);
    want += conv_params(3, 4 * c, 8 * c, 1) + 6 * tr(8 * c);
    want += conv_params(3, 8 * c, 10 * c, 1) + 2 * tr(10 * c);
    assert_eq!(net.param_count(), want);
    assert_eq!(net.to_store().unwrap().total_elements(), want);

    let x = RealTensor::from_fn(vec![4, 32, 32, 3], |i| ((i * 31) % 17) as f64 / 8.0).unwrap();
    let mut counter = OpCounter::new();
    let y = net.forward(&x, &mut counter).unwrap();
    assert_eq!(y.dims(), &[4, 2, 2, 80]);
    assert_eq!(
        non_spiking_layers(&counter),
        vec!["stage0.down".to_string()]
    );
}

#[test]
fn zero_input_fires_nothing() {
    let net = build_backbone(&BackboneConfig::default()).unwrap();
    let x = RealTensor::zeros(vec![4, 32, 32, 3]).unwrap();
    let mut counter = OpCounter::new();
    let y = net.forward(&x, &mut counter).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    let spikes: u64 = counter
        .layers()
        .iter()
        .filter(|l| l.operand != Operand::Real)
        .map(|l| l.ones)
        .sum();
    assert_eq!(spikes, 0);
}

#[test]
fn weights_round_trip_through_store() {
    let mut cfg = BackboneConfig::default();
    cfg.attention.variant = Variant::Factorized;
    cfg.depths = [1, 1, 1, 1, 1];
    let net = build_backbone(&cfg).unwrap();
    let back = Backbone::from_store(&cfg, &net.to_store().unwrap()).unwrap();
    assert_eq!(back, net);
}

#[test]
fn config_rejects_bad_sizes() {
    let cfg = BackboneConfig {
        h: 24,
        ..BackboneConfig::default()
    };
    assert!(matches!(build_backbone(&cfg), Err(Error::Config(_))));
    let cfg = BackboneConfig {
        sep_kernel: 4,
        ..BackboneConfig::default()
    };
    assert!(build_backbone(&cfg).is_err());
}
