use crate::cost::{OpCounter, Operand};
use crate::error::{shape_err, Result};
use crate::neuron::{lif_fold, NeuronConfig, TemporalMode};
use crate::tensor::{RealTensor, SpikeTensor};

use super::kernels::{dot_scores_linear, hamming_scores_linear};
use super::{AttentionSpec, AttentionWeights, Projection, Score, StageWeights, Variant};

/// Token bookkeeping for a `[B, T, N, D]` input flattened to `B·T·N` rows.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub(crate) b: usize,
    pub(crate) t: usize,
    pub(crate) n: usize,
}

impl Layout {
    fn rows(&self) -> usize {
        self.b * self.t * self.n
    }

    fn row(&self, b: usize, t: usize, n: usize) -> usize {
        (b * self.t + t) * self.n + n
    }

    pub(crate) fn joint(&self) -> Vec<Vec<usize>> {
        (0..self.b)
            .map(|b| {
                (0..self.t * self.n)
                    .map(|i| b * self.t * self.n + i)
                    .collect()
            })
            .collect()
    }

    pub(crate) fn spatial(&self) -> Vec<Vec<usize>> {
        let mut groups = Vec::with_capacity(self.b * self.t);
        for b in 0..self.b {
            for t in 0..self.t {
                groups.push((0..self.n).map(|n| self.row(b, t, n)).collect());
            }
        }
        groups
    }

    pub(crate) fn temporal(&self) -> Vec<Vec<usize>> {
        let mut groups = Vec::with_capacity(self.b * self.n);
        for b in 0..self.b {
            for n in 0..self.n {
                groups.push((0..self.t).map(|t| self.row(b, t, n)).collect());
            }
        }
        groups
    }
}

struct Ctx<'a> {
    spec: &'a AttentionSpec,
    layout: Layout,
    mode: TemporalMode,
}

impl Ctx<'_> {
    fn project(
        &self,
        x: &SpikeTensor,
        p: &Projection,
        name: &str,
        counter: &mut OpCounter,
    ) -> Result<Vec<f64>> {
        Ok(p.forward(x, name, counter)?.into_data())
    }

    /// LIF neurons over the time axis of a `[B, T, N, width]` buffer.
    fn spike(&self, pre: &[f64], width: usize, cfg: &NeuronConfig) -> Result<SpikeTensor> {
        let Layout { b, t, n } = self.layout;
        let per_batch = t * n * width;
        let mut bits = Vec::with_capacity(pre.len());
        for chunk in pre.chunks_exact(per_batch).take(b) {
            bits.extend(lif_fold(chunk, t, cfg, self.mode).0);
        }
        SpikeTensor::from_bools(vec![b * t * n, width], &bits)
    }

    fn spike_projection(
        &self,
        x: &SpikeTensor,
        p: &Projection,
        name: &str,
        counter: &mut OpCounter,
    ) -> Result<SpikeTensor> {
        let pre = self.project(x, p, name, counter)?;
        self.spike(&pre, p.outputs(), &self.spec.neuron)
    }

    /// Multi-head attention within each token group; returns scaled
    /// pre-activations laid out like the inputs.
    fn attend(
        &self,
        q: &SpikeTensor,
        k: &SpikeTensor,
        v: &SpikeTensor,
        groups: &[Vec<usize>],
        name: &str,
        counter: &mut OpCounter,
    ) -> Result<Vec<f64>> {
        let d = self.spec.d;
        let dh = self.spec.head_dim();
        let scale = self.spec.effective_score_scale();
        let mut out = vec![0.0; self.layout.rows() * d];
        for group in groups {
            let (qg, kg, vg) = (
                q.gather_rows(group)?,
                k.gather_rows(group)?,
                v.gather_rows(group)?,
            );
            let l = group.len() as u64;
            for h in 0..self.spec.heads {
                let (qh, kh, vh) = if self.spec.heads == 1 {
                    (qg.clone(), kg.clone(), vg.clone())
                } else {
                    (
                        qg.slice_cols(h * dh, dh)?,
                        kg.slice_cols(h * dh, dh)?,
                        vg.slice_cols(h * dh, dh)?,
                    )
                };
                let scores = match self.spec.score {
                    Score::Hamming => hamming_scores_linear(&qh, &kh, &vh)?,
                    Score::Dot => dot_scores_linear(&qh, &kh, &vh)?,
                };
                let dense = 2 * l * (dh * dh) as u64;
                counter.record(
                    name,
                    Operand::Binary,
                    dense,
                    scores.acc_ops,
                    vh.count_ones(),
                    vh.numel() as u64,
                );
                for (r, &row) in group.iter().enumerate() {
                    let src = &scores.values.data()[r * dh..(r + 1) * dh];
                    let dst = &mut out[row * d + h * dh..row * d + (h + 1) * dh];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o = s as f64 * scale;
                    }
                }
            }
        }
        Ok(out)
    }

    fn stage(
        &self,
        x: &SpikeTensor,
        w: &StageWeights,
        groups: &[Vec<usize>],
        prefix: &str,
        counter: &mut OpCounter,
    ) -> Result<Vec<f64>> {
        let q = self.spike_projection(x, &w.q, &format!("{prefix}q"), counter)?;
        let k = self.spike_projection(x, &w.k, &format!("{prefix}k"), counter)?;
        let v = self.spike_projection(x, &w.v, &format!("{prefix}v"), counter)?;
        let pre = self.attend(&q, &k, &v, groups, &format!("{prefix}attention"), counter)?;
        let a = self.spike(&pre, self.spec.d, &self.spec.attention_neuron())?;
        self.project(&a, &w.out, &format!("{prefix}out"), counter)
    }
}

/// Space-time spike attention over `x: [B, T, N, D]` spikes, returning
/// real membrane-domain outputs of the same shape.
pub fn space_time_attention(
    x: &SpikeTensor,
    spec: &AttentionSpec,
    weights: &AttentionWeights,
    counter: &mut OpCounter,
) -> Result<RealTensor> {
    space_time_attention_with_mode(x, spec, weights, TemporalMode::Carry, counter)
}

/// As [`space_time_attention`], with an explicit neuron temporal mode.
/// The spatial-only layout always resets membranes at every step.
pub fn space_time_attention_with_mode(
    x: &SpikeTensor,
    spec: &AttentionSpec,
    weights: &AttentionWeights,
    mode: TemporalMode,
    counter: &mut OpCounter,
) -> Result<RealTensor> {
    spec.validate()?;
    weights.check(spec)?;
    let &[b, t, n, d] = x.dims() else {
        return Err(shape_err(format!(
            "attention input must be [B, T, N, D], got {}",
            x.shape()
        )));
    };
    if (t, n, d) != (spec.t, spec.n, spec.d) {
        return Err(shape_err(format!(
            "input {} does not match spec T={}, N={}, D={}",
            x.shape(),
            spec.t,
            spec.n,
            spec.d
        )));
    }
    let mode = if spec.variant == Variant::SpatialOnly {
        TemporalMode::ResetEachStep
    } else {
        mode
    };
    let ctx = Ctx {
        spec,
        layout: Layout { b, t, n },
        mode,
    };
    let rows = x.reshape(vec![b * t * n, d])?;
    let out = match (spec.variant, weights) {
        (Variant::Joint, AttentionWeights::Single(w)) => {
            ctx.stage(&rows, w, &ctx.layout.joint(), "", counter)?
        }
        (Variant::NeuronLevel | Variant::SpatialOnly, AttentionWeights::Single(w)) => {
            ctx.stage(&rows, w, &ctx.layout.spatial(), "", counter)?
        }
        (Variant::Hierarchical, AttentionWeights::Hierarchical { spatial, temporal }) => {
            let y = ctx.stage(&rows, spatial, &ctx.layout.spatial(), "spatial.", counter)?;
            let s = ctx.spike(&y, d, &spec.neuron)?;
            ctx.stage(&s, temporal, &ctx.layout.temporal(), "temporal.", counter)?
        }
        (
            Variant::Factorized,
            AttentionWeights::Factorized {
                q,
                k_time,
                v_time,
                k_space,
                v_space,
                out,
            },
        ) => {
            let qs = ctx.spike_projection(&rows, q, "q", counter)?;
            let kt = ctx.spike_projection(&rows, k_time, "k_time", counter)?;
            let vt = ctx.spike_projection(&rows, v_time, "v_time", counter)?;
            let ks = ctx.spike_projection(&rows, k_space, "k_space", counter)?;
            let vs = ctx.spike_projection(&rows, v_space, "v_space", counter)?;
            let attn = spec.attention_neuron();
            let pre_t = ctx.attend(
                &qs,
                &kt,
                &vt,
                &ctx.layout.temporal(),
                "temporal.attention",
                counter,
            )?;
            let pre_s = ctx.attend(
                &qs,
                &ks,
                &vs,
                &ctx.layout.spatial(),
                "spatial.attention",
                counter,
            )?;
            let a_t = ctx.spike(&pre_t, d, &attn)?;
            let a_s = ctx.spike(&pre_s, d, &attn)?;
            ctx.project(&a_t.concat_cols(&a_s)?, out, "out", counter)?
        }
        _ => unreachable!("weights.check accepted a mismatched layout"),
    };
    RealTensor::new(vec![b, t, n, d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{bernoulli_vec, seeded};

    fn spikes(dims: Vec<usize>, seed: u64) -> SpikeTensor {
        let n = dims.iter().product();
        SpikeTensor::from_bools(dims, &bernoulli_vec(&mut seeded(seed), n, 0.4)).unwrap()
    }

    fn spec(variant: Variant, t: usize, n: usize, d: usize) -> AttentionSpec {
        AttentionSpec::new(variant, Score::Hamming, t, n, d, 2).unwrap()
    }

    fn run(x: &SpikeTensor, spec: &AttentionSpec, w: &AttentionWeights) -> RealTensor {
        space_time_attention(x, spec, w, &mut OpCounter::new()).unwrap()
    }

    #[test]
    fn layout_index_arithmetic() {
        let l = Layout { b: 1, t: 2, n: 3 };
        assert_eq!(l.row(0, 1, 2), 5);
        assert_eq!(l.joint(), vec![vec![0, 1, 2, 3, 4, 5]]);
        assert_eq!(l.spatial(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert_eq!(l.temporal(), vec![vec![0, 3], vec![1, 4], vec![2, 5]]);
    }

    #[test]
    fn output_shape_matches_input_for_every_variant() {
        let x = spikes(vec![2, 3, 4, 8], 1);
        for variant in Variant::ALL {
            let s = spec(variant, 3, 4, 8);
            let w = AttentionWeights::random(&s, 9).unwrap();
            assert_eq!(run(&x, &s, &w).dims(), &[2, 3, 4, 8], "{variant}");
        }
    }

    #[test]
    fn single_step_layouts_agree() {
        let x = spikes(vec![1, 1, 5, 8], 2);
        let joint = spec(Variant::Joint, 1, 5, 8);
        let w = AttentionWeights::random(&joint, 4).unwrap();
        let reference = run(&x, &joint, &w);
        for variant in [Variant::NeuronLevel, Variant::SpatialOnly] {
            assert_eq!(run(&x, &spec(variant, 1, 5, 8), &w), reference, "{variant}");
        }
    }

    #[test]
    fn single_step_hierarchical_is_spatial_then_per_token() {
        // At T=1 the temporal pass attends within one-token groups, so it is
        // the joint stage applied to every token on its own.
        let x = spikes(vec![1, 1, 5, 8], 3);
        let h = spec(Variant::Hierarchical, 1, 5, 8);
        let w = AttentionWeights::random(&h, 6).unwrap();
        let AttentionWeights::Hierarchical { spatial, temporal } = &w else {
            unreachable!()
        };
        let joint = spec(Variant::Joint, 1, 5, 8);
        let y = run(&x, &joint, &AttentionWeights::Single(spatial.clone()));
        let th = h.neuron.scale * h.neuron.u_th;
        let s = SpikeTensor::from_fn(vec![5, 8], |i| y.data()[i] > th).unwrap();
        let single = spec(Variant::Joint, 1, 1, 8);
        let mut expected = Vec::new();
        for token in 0..5 {
            let row = s
                .gather_rows(&[token])
                .unwrap()
                .reshape(vec![1, 1, 1, 8])
                .unwrap();
            expected.extend(
                run(&row, &single, &AttentionWeights::Single(temporal.clone())).into_data(),
            );
        }
        assert_eq!(run(&x, &h, &w).into_data(), expected);
    }

    #[test]
    fn batches_are_independent() {
        let x = spikes(vec![2, 3, 4, 8], 5);
        for variant in Variant::ALL {
            let s = spec(variant, 3, 4, 8);
            let w = AttentionWeights::random(&s, 7).unwrap();
            let both = run(&x, &s, &w).into_data();
            let rows = x.reshape(vec![24, 8]).unwrap();
            for b in 0..2 {
                let idx: Vec<usize> = (b * 12..(b + 1) * 12).collect();
                let one = rows
                    .gather_rows(&idx)
                    .unwrap()
                    .reshape(vec![1, 3, 4, 8])
                    .unwrap();
                assert_eq!(
                    run(&one, &s, &w).into_data(),
                    both[b * 96..(b + 1) * 96],
                    "{variant}"
                );
            }
        }
    }
}
