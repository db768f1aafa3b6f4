//! Spike-driven CNN blocks, space-time transformer blocks, downsampling and
//! the five-stage backbone. Shortcuts add real membrane values; every
//! convolution and projection after the stem consumes spikes.

mod conv;

use rand::Rng;

pub use conv::Conv;

use crate::attention::{
    space_time_attention_with_mode, AttentionSpec, AttentionWeights, Norm, Projection, Score,
    Variant,
};
use crate::cost::{OpCounter, Operand};
use crate::error::{shape_err, Error, Result};
use crate::neuron::{lif_sequence_with, NeuronConfig, TemporalMode};
use crate::rng::{derive_seed, seeded};
use crate::svt1::WeightStore;
use crate::tensor::{RealTensor, SpikeTensor};

/// Weight gain for randomly initialized layers.
const INIT_GAIN: f64 = 2.0;

/// The spike neuron `SN(·)` applied along the leading time axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpikeLayer {
    pub neuron: NeuronConfig,
    pub mode: TemporalMode,
}

impl SpikeLayer {
    pub fn fire(&self, u: &RealTensor) -> Result<SpikeTensor> {
        Ok(lif_sequence_with(u, &self.neuron, self.mode)?.0)
    }
}

/// Weights of one CNN block: SepConv (pointwise, depthwise, pointwise)
/// then ChannelConv (two full convolutions).
#[derive(Clone, Debug, PartialEq)]
pub struct CnnBlock {
    pub pw1: Conv,
    pub dw: Conv,
    pub pw2: Conv,
    pub conv1: Conv,
    pub conv2: Conv,
}

impl CnnBlock {
    pub fn random(
        c: usize,
        expansion: usize,
        sep_kernel: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let e = c * expansion;
        Ok(Self {
            pw1: Conv::random(1, c, e, 1, 1, INIT_GAIN, rng)?,
            dw: Conv::random(sep_kernel, e, e, e, 1, INIT_GAIN, rng)?,
            pw2: Conv::random(1, e, c, 1, 1, INIT_GAIN, rng)?,
            conv1: Conv::random(kernel, c, c, 1, 1, INIT_GAIN, rng)?,
            conv2: Conv::random(kernel, c, c, 1, 1, INIT_GAIN, rng)?,
        })
    }

    fn parts(&self) -> [(&'static str, &Conv); 5] {
        [
            ("pw1", &self.pw1),
            ("dw", &self.dw),
            ("pw2", &self.pw2),
            ("conv1", &self.conv1),
            ("conv2", &self.conv2),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.parts().iter().map(|(_, c)| c.param_count()).sum()
    }

    /// The depthwise conv and the following pointwise conv have no spike
    /// layer between them, so they compose into one convolution that
    /// consumes the depthwise input spikes directly.
    pub fn fused_dw_pw(&self) -> Result<Conv> {
        let (k, e, c) = (self.dw.kernel(), self.dw.outputs(), self.pw2.outputs());
        let (dw, pw) = (self.dw.weight.data(), self.pw2.weight.data());
        let mut w = vec![0.0; k * k * e * c];
        for tap in 0..k * k {
            for m in 0..e {
                let a = dw[tap * e + m] * self.dw.norm.scale[m];
                for co in 0..c {
                    w[(tap * e + m) * c + co] = a * pw[m * c + co];
                }
            }
        }
        let mut shift = self.pw2.norm.shift.clone();
        for (co, s) in shift.iter_mut().enumerate() {
            let bias: f64 = (0..e).map(|m| self.dw.norm.shift[m] * pw[m * c + co]).sum();
            *s += bias * self.pw2.norm.scale[co];
        }
        Conv::new(
            RealTensor::new(vec![k, k, e, c], w)?,
            1,
            1,
            Norm {
                scale: self.pw2.norm.scale.clone(),
                shift,
            },
        )
    }

    pub fn store(&self, prefix: &str, out: &mut WeightStore) -> Result<()> {
        for (name, c) in self.parts() {
            c.store(&format!("{prefix}.{name}"), out)?;
        }
        Ok(())
    }

    pub fn load(prefix: &str, store: &WeightStore) -> Result<Self> {
        let e = store.get(&format!("{prefix}.dw.weight"))?.dims()[3];
        Ok(Self {
            pw1: Conv::load(&format!("{prefix}.pw1"), 1, 1, store)?,
            dw: Conv::load(&format!("{prefix}.dw"), e, 1, store)?,
            pw2: Conv::load(&format!("{prefix}.pw2"), 1, 1, store)?,
            conv1: Conv::load(&format!("{prefix}.conv1"), 1, 1, store)?,
            conv2: Conv::load(&format!("{prefix}.conv2"), 1, 1, store)?,
        })
    }
}

/// `U' = U + SepConv(U)`, `U'' = U' + ChannelConv(U')` on `[T, H, W, C]`.
pub fn sep_conv_block(
    u: &RealTensor,
    w: &CnnBlock,
    sn: &SpikeLayer,
    counter: &mut OpCounter,
) -> Result<RealTensor> {
    if u.dims().len() != 4 || u.dims()[3] != w.pw1.inputs() {
        return Err(shape_err(format!(
            "CNN block for {} channels got {}",
            w.pw1.inputs(),
            u.shape()
        )));
    }
    let a = w.pw1.forward_spikes(&sn.fire(u)?, "sep.pw1", counter)?;
    let b = w
        .fused_dw_pw()?
        .forward_spikes(&sn.fire(&a)?, "sep.dw_pw2", counter)?;
    let u1 = u.add(&b)?;
    let c = w
        .conv1
        .forward_spikes(&sn.fire(&u1)?, "channel.conv1", counter)?;
    let d = w
        .conv2
        .forward_spikes(&sn.fire(&c)?, "channel.conv2", counter)?;
    u1.add(&d)
}

/// Weights of one space-time transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock {
    pub attention: AttentionWeights,
    pub mlp1: Projection,
    pub mlp2: Projection,
}

impl TransformerBlock {
    pub fn random(spec: &AttentionSpec, mlp_ratio: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded(derive_seed(seed, 1));
        let h = spec.d * mlp_ratio;
        Ok(Self {
            attention: AttentionWeights::random(spec, seed)?,
            mlp1: Projection::random(spec.d, h, INIT_GAIN, &mut rng)?,
            mlp2: Projection::random(h, spec.d, INIT_GAIN, &mut rng)?,
        })
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp1.outputs()
    }

    pub fn param_count(&self) -> usize {
        let attn: usize = self
            .attention
            .projections()
            .iter()
            .map(|(_, p)| p.param_count())
            .sum();
        attn + self.mlp1.param_count() + self.mlp2.param_count()
    }

    pub fn store(&self, prefix: &str, out: &mut WeightStore) -> Result<()> {
        for (k, v) in self.attention.to_store(&format!("{prefix}.attn"))?.iter() {
            out.insert(k.clone(), v.clone());
        }
        self.mlp1.store(&format!("{prefix}.mlp1"), out)?;
        self.mlp2.store(&format!("{prefix}.mlp2"), out)
    }

    pub fn load(spec: &AttentionSpec, prefix: &str, store: &WeightStore) -> Result<Self> {
        Ok(Self {
            attention: AttentionWeights::from_store(spec, &format!("{prefix}.attn"), store)?,
            mlp1: Projection::load(&format!("{prefix}.mlp1"), store)?,
            mlp2: Projection::load(&format!("{prefix}.mlp2"), store)?,
        })
    }
}

/// `U' = U + Attn(SN(U))`, `U'' = U' + ChannelMLP(U')` on `[T, N, D]`
/// tokens, with ChannelMLP = linear ∘ SN ∘ linear ∘ SN.
pub fn transformer_block(
    u: &RealTensor,
    spec: &AttentionSpec,
    w: &TransformerBlock,
    mode: TemporalMode,
    counter: &mut OpCounter,
) -> Result<RealTensor> {
    let &[t, n, d] = u.dims() else {
        return Err(shape_err(format!(
            "transformer block expects [T, N, D], got {}",
            u.shape()
        )));
    };
    if (t, n, d) != (spec.t, spec.n, spec.d) {
        return Err(shape_err(format!(
            "tokens {} vs spec T={}, N={}, D={}",
            u.shape(),
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
    let sn = SpikeLayer {
        neuron: spec.neuron,
        mode,
    };
    let s = sn.fire(u)?.reshape(vec![1, t, n, d])?;
    let mut inner = OpCounter::new();
    let a = space_time_attention_with_mode(&s, spec, &w.attention, mode, &mut inner)?;
    counter.absorb("attn.", inner);
    let u1 = u.add(&a.reshape(vec![t, n, d])?)?;
    let hidden = w.mlp_hidden();
    let s1 = sn.fire(&u1)?.reshape(vec![t * n, d])?;
    let h = w
        .mlp1
        .forward(&s1, "mlp1", counter)?
        .reshape(vec![t, n, hidden])?;
    let s2 = sn.fire(&h)?.reshape(vec![t * n, hidden])?;
    let y = w
        .mlp2
        .forward(&s2, "mlp2", counter)?
        .reshape(vec![t, n, d])?;
    u1.add(&y)
}

/// Downsampling layer. The first stage encodes real frames directly; later
/// stages fire spikes first and convolve those.
pub fn downsample(
    u: &RealTensor,
    conv: &Conv,
    sn: Option<&SpikeLayer>,
    counter: &mut OpCounter,
) -> Result<RealTensor> {
    match sn {
        None => conv.forward_real(u, "down", counter),
        Some(sn) => conv.forward_spikes(&sn.fire(u)?, "down", counter),
    }
}

/// Channel multipliers of the five stages.
pub const STAGE_WIDTHS: [usize; 5] = [1, 2, 4, 8, 10];

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Base channel count `C`.
    pub channels: usize,
    pub depths: [usize; 5],
    pub in_channels: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub stem_kernel: usize,
    pub down_kernel: usize,
    pub sep_kernel: usize,
    pub sep_expansion: usize,
    pub channel_kernel: usize,
    pub mlp_ratio: usize,
    /// Template for the transformer stages; `t`, `n` and `d` are replaced
    /// per stage.
    pub attention: AttentionSpec,
    pub mode: TemporalMode,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            depths: [1, 1, 2, 6, 2],
            in_channels: 3,
            t: 4,
            h: 32,
            w: 32,
            stem_kernel: 7,
            down_kernel: 3,
            sep_kernel: 7,
            sep_expansion: 2,
            channel_kernel: 3,
            mlp_ratio: 4,
            attention: AttentionSpec::new(Variant::Joint, Score::Hamming, 1, 1, 8, 1)
                .expect("valid template"),
            mode: TemporalMode::Carry,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.channels,
            self.in_channels,
            self.t,
            self.h,
            self.w,
            self.sep_expansion,
            self.mlp_ratio,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("backbone sizes must be at least 1".into()));
        }
        for k in [
            self.stem_kernel,
            self.down_kernel,
            self.sep_kernel,
            self.channel_kernel,
        ] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("kernel size {k} must be odd")));
            }
        }
        if self.h % 16 != 0 || self.w % 16 != 0 {
            return Err(Error::Config(format!(
                "H={} and W={} must be multiples of 16",
                self.h, self.w
            )));
        }
        for stage in 3..5 {
            self.stage_spec(stage)?;
        }
        Ok(())
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.channels * STAGE_WIDTHS[stage]
    }

    /// Spatial size after stage `stage`; the last stage keeps `H/16`.
    pub fn stage_hw(&self, stage: usize) -> (usize, usize) {
        let f = 1 << (stage + 1).min(4);
        (self.h / f, self.w / f)
    }

    pub fn stage_stride(&self, stage: usize) -> usize {
        if stage == 4 {
            1
        } else {
            2
        }
    }

    pub fn is_transformer_stage(stage: usize) -> bool {
        stage >= 3
    }

    pub fn stage_spec(&self, stage: usize) -> Result<AttentionSpec> {
        let (h, w) = self.stage_hw(stage);
        let spec = AttentionSpec {
            t: self.t,
            n: h * w,
            d: self.stage_channels(stage),
            ..self.attention.clone()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn output_dims(&self) -> [usize; 4] {
        let (h, w) = self.stage_hw(4);
        [self.t, h, w, self.stage_channels(4)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Cnn(CnnBlock),
    Transformer(TransformerBlock),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub down: Conv,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub stages: Vec<Stage>,
}

/// Builds a backbone with seeded random weights.
pub fn build_backbone(cfg: &BackboneConfig) -> Result<Backbone> {
    cfg.validate()?;
    let mut stages = Vec::with_capacity(5);
    for stage in 0..5 {
        let mut rng = seeded(derive_seed(cfg.seed, 100 * stage as u64));
        let c_out = cfg.stage_channels(stage);
        let (c_in, k) = if stage == 0 {
            (cfg.in_channels, cfg.stem_kernel)
        } else {
            (cfg.stage_channels(stage - 1), cfg.down_kernel)
        };
        let down = Conv::random(
            k,
            c_in,
            c_out,
            1,
            cfg.stage_stride(stage),
            INIT_GAIN,
            &mut rng,
        )?;
        let mut blocks = Vec::with_capacity(cfg.depths[stage]);
        for i in 0..cfg.depths[stage] {
            let block = if BackboneConfig::is_transformer_stage(stage) {
                let seed = derive_seed(cfg.seed, 100 * stage as u64 + 1 + i as u64);
                Block::Transformer(TransformerBlock::random(
                    &cfg.stage_spec(stage)?,
                    cfg.mlp_ratio,
                    seed,
                )?)
            } else {
                Block::Cnn(CnnBlock::random(
                    c_out,
                    cfg.sep_expansion,
                    cfg.sep_kernel,
                    cfg.channel_kernel,
                    &mut rng,
                )?)
            };
            blocks.push(block);
        }
        stages.push(Stage { down, blocks });
    }
    Ok(Backbone {
        cfg: cfg.clone(),
        stages,
    })
}

impl Backbone {
    pub fn param_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| {
                let blocks: usize = s
                    .blocks
                    .iter()
                    .map(|b| match b {
                        Block::Cnn(c) => c.param_count(),
                        Block::Transformer(t) => t.param_count(),
                    })
                    .sum();
                s.down.param_count() + blocks
            })
            .sum()
    }

    /// Forward pass on real frames `[T, H, W, C_in]`, returning the final
    /// membrane map `[T, H/16, W/16, 10C]`.
    pub fn forward(&self, x: &RealTensor, counter: &mut OpCounter) -> Result<RealTensor> {
        let cfg = &self.cfg;
        if x.dims() != [cfg.t, cfg.h, cfg.w, cfg.in_channels] {
            return Err(shape_err(format!(
                "backbone expects [{}, {}, {}, {}], got {}",
                cfg.t,
                cfg.h,
                cfg.w,
                cfg.in_channels,
                x.shape()
            )));
        }
        let sn = SpikeLayer {
            neuron: cfg.attention.neuron,
            mode: cfg.mode,
        };
        let mut u = x.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            let mut inner = OpCounter::new();
            u = downsample(&u, &stage.down, (i > 0).then_some(&sn), &mut inner)?;
            counter.absorb(&format!("stage{i}."), inner);
            for (j, block) in stage.blocks.iter().enumerate() {
                let mut inner = OpCounter::new();
                u = match block {
                    Block::Cnn(w) => sep_conv_block(&u, w, &sn, &mut inner)?,
                    Block::Transformer(w) => {
                        let spec = cfg.stage_spec(i)?;
                        let tokens = u.reshape(vec![spec.t, spec.n, spec.d])?;
                        transformer_block(&tokens, &spec, w, cfg.mode, &mut inner)?
                            .reshape(u.dims().to_vec())?
                    }
                };
                counter.absorb(&format!("stage{i}.block{j}."), inner);
            }
        }
        Ok(u)
    }

    pub fn to_store(&self) -> Result<WeightStore> {
        let mut out = WeightStore::new();
        for (i, stage) in self.stages.iter().enumerate() {
            stage.down.store(&format!("stage{i}.down"), &mut out)?;
            for (j, block) in stage.blocks.iter().enumerate() {
                let prefix = format!("stage{i}.block{j}");
                match block {
                    Block::Cnn(w) => w.store(&prefix, &mut out)?,
                    Block::Transformer(w) => w.store(&prefix, &mut out)?,
                }
            }
        }
        Ok(out)
    }

    pub fn from_store(cfg: &BackboneConfig, store: &WeightStore) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(5);
        for i in 0..5 {
            let down = Conv::load(&format!("stage{i}.down"), 1, cfg.stage_stride(i), store)?;
            let mut blocks = Vec::with_capacity(cfg.depths[i]);
            for j in 0..cfg.depths[i] {
                let prefix = format!("stage{i}.block{j}");
                blocks.push(if BackboneConfig::is_transformer_stage(i) {
                    Block::Transformer(TransformerBlock::load(&cfg.stage_spec(i)?, &prefix, store)?)
                } else {
                    Block::Cnn(CnnBlock::load(&prefix, store)?)
                });
            }
            stages.push(Stage { down, blocks });
        }
        Ok(Self {
            cfg: cfg.clone(),
            stages,
        })
    }
}

/// Layers whose multiplicand was not a spike tensor. Only the stem, which
/// encodes raw frames, is expected here.
pub fn non_spiking_layers(counter: &OpCounter) -> Vec<String> {
    counter
        .layers()
        .iter()
        .filter(|l| l.operand == Operand::Real)
        .map(|l| l.name.clone())
        .collect()
}

#[cfg(test)]
mod tests;
