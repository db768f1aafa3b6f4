use rand::Rng;

use super::*;
use crate::attention::hamming_scores_linear;
use crate::neuron::lif_sequence;
use crate::rng::seeded;
use crate::tensor::SpikeTensor;

fn uniform(dims: &[usize], seed: u64, lo: f64, hi: f64) -> RealTensor {
    let mut rng = seeded(seed);
    RealTensor::from_fn(dims.to_vec(), |_| rng.random_range(lo..hi)).unwrap()
}

fn sum_of_squares(tape: &mut Tape, x: Var) -> Result<Var> {
    let sq = tape.mul(x, x)?;
    tape.sum(sq)
}

#[test]
fn square_has_gradient_six_at_three() {
    let mut tape = Tape::default();
    let w = tape.leaf(&RealTensor::scalar(3.0).unwrap());
    let y = tape.mul(w, w).unwrap();
    let loss = tape.sum(y).unwrap();
    assert_eq!(tape.backward(loss).unwrap().wrt(w).unwrap().data(), &[6.0]);
}

#[test]
fn constant_loss_has_zero_gradient() {
    let mut tape = Tape::default();
    let w = tape.leaf(&RealTensor::filled(vec![3], 2.0).unwrap());
    let c = tape.leaf(&RealTensor::filled(vec![3], 5.0).unwrap());
    let loss = tape.sum(c).unwrap();
    let g = tape.backward(loss).unwrap().wrt(w).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn foreign_and_non_scalar_values_are_graph_errors() {
    let mut a = Tape::default();
    let mut b = Tape::default();
    let x = a.leaf(&RealTensor::filled(vec![2], 1.0).unwrap());
    assert!(matches!(b.sum(x), Err(Error::Graph(_))));
    assert!(matches!(a.backward(x), Err(Error::Graph(_))));
}

#[test]
fn linear_map_checks_to_rounding() {
    let w = uniform(&[4, 3], 1, -1.0, 1.0);
    let x = uniform(&[5, 4], 2, -1.0, 1.0);
    let err = finite_diff_check(&[w, x], 1e-5, |t, p| {
        let y = t.matmul(p[1], p[0])?;
        t.sum(y)
    })
    .unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn zero_function_checks_exactly() {
    let x = uniform(&[3, 2], 3, -1.0, 1.0);
    let err = finite_diff_check(&[x], 1e-5, |t, p| {
        let s = t.sum(p[0])?;
        t.scale(s, 0.0)
    })
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn single_lif_neuron_checks() {
    let x = uniform(&[8, 1], 4, 0.0, 2.0);
    let cfg = NeuronConfig::default();
    let err = finite_diff_check(&[x], 1e-5, |t, p| {
        let s = t.lif(p[0], &cfg, TemporalMode::Carry)?;
        t.sum(s)
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn lif_chain_checks_in_both_temporal_modes() {
    let x = uniform(&[8, 6], 5, -0.5, 2.5);
    let w = uniform(&[6, 6], 6, -1.0, 1.0);
    for mode in [TemporalMode::Carry, TemporalMode::ResetEachStep] {
        let cfg = NeuronConfig::default();
        let err = finite_diff_check(&[x.clone(), w.clone()], 1e-5, |t, p| {
            let s1 = t.lif(p[0], &cfg, mode)?;
            let h = t.matmul(s1, p[1])?;
            let s2 = t.lif(h, &cfg, mode)?;
            sum_of_squares(t, s2)
        })
        .unwrap();
        assert!(err < 1e-4, "{mode:?}: {err}");
    }
}

#[test]
fn two_layer_spiking_mlp_checks() {
    let x = uniform(&[4, 3, 5], 7, 0.0, 2.0);
    let w1 = uniform(&[5, 8], 8, -1.0, 1.0);
    let w2 = uniform(&[8, 2], 9, -1.0, 1.0);
    let cfg = NeuronConfig::default();
    let err = finite_diff_check(&[x, w1, w2], 1e-5, |t, p| {
        let s = t.lif(p[0], &cfg, TemporalMode::Carry)?;
        let h = t.matmul(s, p[1])?;
        let s = t.lif(h, &cfg, TemporalMode::Carry)?;
        let y = t.matmul(s, p[2])?;
        let m = t.mean_rows(y)?;
        t.cross_entropy(m, 1)
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn attention_checks_for_both_scores() {
    let groups = Arc::new(vec![vec![0, 2, 4], vec![1, 3, 5]]);
    for score in [Score::Hamming, Score::Dot] {
        let params: Vec<RealTensor> = (0..3).map(|s| uniform(&[6, 4], 10 + s, 0.0, 1.0)).collect();
        let err = finite_diff_check(&params, 1e-5, |t, p| {
            let y = t.attend(p[0], p[1], p[2], groups.clone(), 2, 0.125, score)?;
            sum_of_squares(t, y)
        })
        .unwrap();
        assert!(err < 1e-6, "{score}: {err}");
    }
}

#[test]
fn conv_checks_with_groups_and_stride() {
    for &(k, cin, cout, groups, stride) in &[
        (3, 2, 3, 1, 1),
        (3, 4, 4, 4, 1),
        (3, 2, 4, 2, 2),
        (1, 3, 2, 1, 1),
    ] {
        let x = uniform(&[2, 5, 5, cin], 20, -1.0, 1.0);
        let w = uniform(&[k, k, cin / groups, cout], 21, -1.0, 1.0);
        let err = finite_diff_check(&[x, w], 1e-5, |t, p| {
            let y = t.conv2d(p[0], p[1], groups, stride)?;
            sum_of_squares(t, y)
        })
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }
}

#[test]
fn affine_and_concat_check() {
    let x = uniform(&[3, 4], 30, -1.0, 1.0);
    let y = uniform(&[3, 2], 31, -1.0, 1.0);
    let s = uniform(&[6], 32, 0.5, 1.5);
    let b = uniform(&[6], 33, -0.5, 0.5);
    let err = finite_diff_check(&[x, y, s, b], 1e-5, |t, p| {
        let c = t.concat_cols(p[0], p[1])?;
        let a = t.affine(c, p[2], p[3])?;
        let r = t.reshape(a, vec![18])?;
        sum_of_squares(t, r)
    })
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn hard_lif_matches_neuron_module() {
    let x = uniform(&[7, 5], 40, -0.5, 2.0);
    let cfg = NeuronConfig::default();
    for mode in [TemporalMode::Carry, TemporalMode::ResetEachStep] {
        let mut tape = Tape::new(SpikeFn::Hard);
        let v = tape.leaf(&x);
        let s = tape.lif(v, &cfg, mode).unwrap();
        let want = crate::neuron::lif_sequence_with(&x, &cfg, mode)
            .unwrap()
            .0
            .unpack();
        assert_eq!(tape.tensor(s).unwrap(), want);
    }
    assert_eq!(lif_sequence(&x, &cfg).unwrap().unpack().dims(), &[7, 5]);
}

#[test]
fn binary_attention_matches_integer_kernel() {
    let (l, dh) = (9, 8);
    let bits = |seed| {
        SpikeTensor::from_fn(vec![l, dh], |i| (i as u64 * 2654435761 + seed) % 7 < 3).unwrap()
    };
    let (q, k, v) = (bits(1), bits(2), bits(5));
    let mut tape = Tape::new(SpikeFn::Hard);
    let (vq, vk, vv) = (
        tape.leaf(&q.unpack()),
        tape.leaf(&k.unpack()),
        tape.leaf(&v.unpack()),
    );
    let y = tape
        .attend(
            vq,
            vk,
            vv,
            Arc::new(vec![(0..l).collect()]),
            1,
            1.0,
            Score::Hamming,
        )
        .unwrap();
    let want = hamming_scores_linear(&q, &k, &v).unwrap().values;
    for (a, &b) in tape.value(y).unwrap().iter().zip(want.data()) {
        assert_eq!(*a, b as f64);
    }
}
