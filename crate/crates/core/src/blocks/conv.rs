use rand::Rng;
use rand_distr::StandardNormal;

use crate::attention::Norm;
use crate::cost::{OpCounter, Operand};
use crate::error::{shape_err, Result};
use crate::svt1::WeightStore;
use crate::tensor::{RealTensor, SpikeTensor};

/// 2-D convolution over `[T, H, W, C]` maps with zero padding `k/2`.
/// Weights are laid out `[k, k, C_in/groups, C_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: RealTensor,
    pub groups: usize,
    pub stride: usize,
    pub norm: Norm,
}

impl Conv {
    pub fn new(weight: RealTensor, groups: usize, stride: usize, norm: Norm) -> Result<Self> {
        let &[kh, kw, _, cout] = weight.dims() else {
            return Err(shape_err(format!(
                "conv weight must be [k, k, in, out], got {}",
                weight.shape()
            )));
        };
        if kh != kw || kh % 2 == 0 {
            return Err(shape_err(format!(
                "conv kernel must be square and odd, got {kh}x{kw}"
            )));
        }
        if groups == 0 || cout % groups != 0 || stride == 0 {
            return Err(shape_err(format!(
                "{cout} outputs, {groups} groups, stride {stride}"
            )));
        }
        if norm.channels() != cout || norm.shift.len() != cout {
            return Err(shape_err(format!(
                "norm of {} channels for {cout} outputs",
                norm.channels()
            )));
        }
        Ok(Self {
            weight,
            groups,
            stride,
            norm,
        })
    }

    /// Gaussian weights with standard deviation `gain/√fan_in`, identity norm.
    pub fn random(
        kernel: usize,
        inputs: usize,
        outputs: usize,
        groups: usize,
        stride: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = kernel * kernel * inputs / groups;
        let std = gain / (fan_in as f64).sqrt();
        let w = RealTensor::from_fn(vec![kernel, kernel, inputs / groups, outputs], |_| {
            std * rng.sample::<f64, _>(StandardNormal)
        })?;
        Self::new(w, groups, stride, Norm::identity(outputs))
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weight.dims()[2] * self.groups
    }

    pub fn outputs(&self) -> usize {
        self.weight.dims()[3]
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + 2 * self.outputs()
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let (k, p, s) = (self.kernel(), self.kernel() / 2, self.stride);
        ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1)
    }

    fn dense_ops(&self, t: usize, ho: usize, wo: usize) -> u64 {
        let positions = (t * ho * wo * self.outputs()) as u64;
        let fan_in = (self.kernel() * self.kernel() * self.inputs() / self.groups) as u64;
        positions * fan_in + positions
    }

    fn check_input(&self, dims: &[usize]) -> Result<(usize, usize, usize)> {
        match *dims {
            [t, h, w, c] if c == self.inputs() => Ok((t, h, w)),
            _ => Err(shape_err(format!(
                "conv expects [T, H, W, {}], got {:?}",
                self.inputs(),
                dims
            ))),
        }
    }

    /// Scatters each nonzero input into the outputs its window touches.
    /// Returns the raw outputs and the number of accumulates performed.
    fn scatter(
        &self,
        (t, h, w): (usize, usize, usize),
        inputs: impl Iterator<Item = (usize, f64)>,
    ) -> (Vec<f64>, usize, usize, u64) {
        let (k, p, s) = (self.kernel(), self.kernel() / 2, self.stride);
        let (ho, wo) = self.out_dims(h, w);
        let (cin, cout) = (self.inputs(), self.outputs());
        let (cin_g, cout_g) = (cin / self.groups, cout / self.groups);
        let wd = self.weight.data();
        let mut out = vec![0.0; t * ho * wo * cout];
        let mut acc = 0u64;
        for (flat, value) in inputs {
            let c = flat % cin;
            let x = (flat / cin) % w;
            let y = (flat / (cin * w)) % h;
            let tt = flat / (cin * w * h);
            let (g, cl) = (c / cin_g, c % cin_g);
            for ky in 0..k {
                let Some(oy) = window_pos(y, ky, p, s, ho) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ox) = window_pos(x, kx, p, s, wo) else {
                        continue;
                    };
                    let wrow = ((ky * k + kx) * cin_g + cl) * cout + g * cout_g;
                    let orow = ((tt * ho + oy) * wo + ox) * cout + g * cout_g;
                    for (o, &wv) in out[orow..orow + cout_g]
                        .iter_mut()
                        .zip(&wd[wrow..wrow + cout_g])
                    {
                        *o += value * wv;
                    }
                    acc += cout_g as u64;
                }
            }
        }
        (out, ho, wo, acc)
    }

    fn finish(&self, t: usize, ho: usize, wo: usize, mut out: Vec<f64>) -> Result<RealTensor> {
        self.norm.apply(&mut out);
        RealTensor::new(vec![t, ho, wo, self.outputs()], out)
    }

    /// Event-driven convolution of a spike map; only set bits do work.
    pub fn forward_spikes(
        &self,
        x: &SpikeTensor,
        name: &str,
        counter: &mut OpCounter,
    ) -> Result<RealTensor> {
        let (t, h, w) = self.check_input(x.dims())?;
        let cin = self.inputs();
        let rows = x.shape().rows();
        let ones = (0..rows).flat_map(|r| x.row_ones(r).map(move |c| (r * cin + c, 1.0)));
        let (out, ho, wo, acc) = self.scatter((t, h, w), ones);
        let norm_ops = (t * ho * wo * self.outputs()) as u64;
        counter.record(
            name,
            Operand::Binary,
            self.dense_ops(t, ho, wo),
            acc + norm_ops,
            x.count_ones(),
            x.numel() as u64,
        );
        self.finish(t, ho, wo, out)
    }

    /// Dense convolution of a real-valued map (the encoding layer).
    pub fn forward_real(
        &self,
        x: &RealTensor,
        name: &str,
        counter: &mut OpCounter,
    ) -> Result<RealTensor> {
        let (t, h, w) = self.check_input(x.dims())?;
        let (out, ho, wo, _) = self.scatter((t, h, w), x.data().iter().copied().enumerate());
        let dense = self.dense_ops(t, ho, wo);
        counter.record(
            name,
            Operand::Real,
            dense,
            dense,
            x.numel() as u64,
            x.numel() as u64,
        );
        self.finish(t, ho, wo, out)
    }

    pub fn store(&self, prefix: &str, out: &mut WeightStore) -> Result<()> {
        out.insert(format!("{prefix}.weight"), self.weight.clone());
        out.insert(
            format!("{prefix}.norm_scale"),
            RealTensor::new(vec![self.outputs()], self.norm.scale.clone())?,
        );
        out.insert(
            format!("{prefix}.norm_shift"),
            RealTensor::new(vec![self.outputs()], self.norm.shift.clone())?,
        );
        Ok(())
    }

    pub fn load(prefix: &str, groups: usize, stride: usize, store: &WeightStore) -> Result<Self> {
        let weight = store.get(&format!("{prefix}.weight"))?.clone();
        let scale = store.get(&format!("{prefix}.norm_scale"))?.data().to_vec();
        let shift = store.get(&format!("{prefix}.norm_shift"))?.data().to_vec();
        Self::new(weight, groups, stride, Norm { scale, shift })
    }
}

/// Output coordinate that input coordinate `i` reaches through kernel tap
/// `k`, if any: `o·s + k − p = i`.
fn window_pos(i: usize, k: usize, p: usize, s: usize, len: usize) -> Option<usize> {
    let shifted = (i + p).checked_sub(k)?;
    (shifted % s == 0 && shifted / s < len).then_some(shifted / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    /// Direct gather-form convolution used as an oracle.
    fn naive(conv: &Conv, x: &[f64], (t, h, w): (usize, usize, usize)) -> Vec<f64> {
        let (k, p, s) = (conv.kernel(), conv.kernel() / 2, conv.stride);
        let (ho, wo) = conv.out_dims(h, w);
        let (cin, cout) = (conv.inputs(), conv.outputs());
        let (cin_g, cout_g) = (cin / conv.groups, cout / conv.groups);
        let mut out = vec![0.0; t * ho * wo * cout];
        for tt in 0..t {
            for oy in 0..ho {
                for ox in 0..wo {
                    for co in 0..cout {
                        let g = co / cout_g;
                        let mut sum = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = (
                                    (oy * s + ky) as isize - p as isize,
                                    (ox * s + kx) as isize - p as isize,
                                );
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for cl in 0..cin_g {
                                    let ci = g * cin_g + cl;
                                    let xi =
                                        x[((tt * h + iy as usize) * w + ix as usize) * cin + ci];
                                    sum += xi
                                        * conv.weight.data()
                                            [((ky * k + kx) * cin_g + cl) * cout + co];
                                }
                            }
                        }
                        out[((tt * ho + oy) * wo + ox) * cout + co] = sum;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn spike_conv_matches_gather_oracle() {
        let mut rng = seeded(3);
        for &(k, cin, cout, groups, stride) in &[
            (3, 4, 6, 1, 1),
            (3, 4, 4, 4, 1),
            (7, 2, 3, 1, 2),
            (3, 6, 4, 2, 2),
            (1, 5, 3, 1, 1),
        ] {
            let conv = Conv::random(k, cin, cout, groups, stride, 1.0, &mut rng).unwrap();
            let dims = (2, 6, 6);
            let x = SpikeTensor::from_fn(vec![2, 6, 6, cin], |i| (i * 7 + 3) % 5 < 2).unwrap();
            let mut counter = OpCounter::new();
            let y = conv.forward_spikes(&x, "c", &mut counter).unwrap();
            let want = naive(&conv, x.unpack().data(), dims);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_two_halves_and_dense_count_matches_all_ones() {
        let mut rng = seeded(1);
        let conv = Conv::random(3, 4, 8, 1, 2, 1.0, &mut rng).unwrap();
        assert_eq!(conv.out_dims(16, 16), (8, 8));
        // Interior-only kernel so that no window hits padding.
        let conv1 = Conv::random(1, 4, 8, 1, 1, 1.0, &mut rng).unwrap();
        let x = SpikeTensor::from_fn(vec![2, 4, 4, 4], |_| true).unwrap();
        let mut counter = OpCounter::new();
        conv1.forward_spikes(&x, "pw", &mut counter).unwrap();
        let l = counter.layer("pw").unwrap();
        assert_eq!(l.acc_ops, l.dense_ops);
    }

    #[test]
    fn zero_spikes_do_no_work() {
        let mut rng = seeded(2);
        let conv = Conv::random(3, 4, 4, 1, 1, 1.0, &mut rng).unwrap();
        let x = SpikeTensor::zeros(vec![2, 5, 5, 4]).unwrap();
        let mut counter = OpCounter::new();
        let y = conv.forward_spikes(&x, "c", &mut counter).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(counter.layer("c").unwrap().acc_ops, (2 * 5 * 5 * 4) as u64);
    }

    #[test]
    fn real_conv_matches_oracle() {
        let mut rng = seeded(4);
        let conv = Conv::random(7, 3, 4, 1, 2, 1.0, &mut rng).unwrap();
        let x = RealTensor::from_fn(vec![1, 8, 8, 3], |i| (i as f64 * 0.37).sin()).unwrap();
        let y = conv
            .forward_real(&x, "stem", &mut OpCounter::new())
            .unwrap();
        assert_eq!(y.dims(), &[1, 4, 4, 4]);
        let want = naive(&conv, x.data(), (1, 8, 8));
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
