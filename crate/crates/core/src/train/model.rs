use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::attention::{AttentionSpec, Layout, Norm, Projection, Variant};
use crate::autodiff::{SpikeFn, Tape, Var};
use crate::blocks::{
    sep_conv_block, transformer_block, CnnBlock, Conv, SpikeLayer, TransformerBlock,
};
use crate::cost::OpCounter;
use crate::error::{shape_err, Error, Result};
use crate::neuron::{NeuronConfig, TemporalMode};
use crate::rng::{derive_seed, seeded};
use crate::svt1::WeightStore;
use crate::tensor::RealTensor;

use super::ToyTask;

const CLASSES: usize = 2;
const SEP_KERNEL: usize = 3;
const CHANNEL_KERNEL: usize = 3;
const SEP_EXPANSION: usize = 2;
const MLP_RATIO: usize = 4;

/// Stem conv (stride 2), one CNN block, one transformer block, then a
/// linear readout of the membrane averaged over time and tokens.
/// Parameters use the weight-store key names of the inference blocks.
///
/// The per-channel norms act as folded normalization statistics: they stay
/// fixed during training and only the weights and the head bias learn.
/// Letting the norm shifts move under momentum SGD at lr 0.1 silences whole
/// spike layers within a few epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub spec: AttentionSpec,
    pub channels: usize,
    pub names: Vec<String>,
    pub values: Vec<RealTensor>,
    frame: (usize, usize, usize),
}

struct Forward<'a> {
    tape: &'a mut Tape,
    vars: HashMap<&'a str, Var>,
    mode: TemporalMode,
    neuron: NeuronConfig,
}

impl Forward<'_> {
    fn p(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Graph(format!("missing parameter `{name}`")))
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let (s, b) = (
            self.p(&format!("{prefix}.norm_scale"))?,
            self.p(&format!("{prefix}.norm_shift"))?,
        );
        self.tape.affine(x, s, b)
    }

    fn conv(&mut self, x: Var, prefix: &str, groups: usize, stride: usize) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let y = self.tape.conv2d(x, w, groups, stride)?;
        self.norm(y, prefix)
    }

    fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let y = self.tape.matmul(x, w)?;
        self.norm(y, prefix)
    }

    /// Spike layer over `[T, ...]`, preserving the input shape.
    fn fire(&mut self, x: Var, t: usize, neuron: NeuronConfig) -> Result<Var> {
        let dims = self.tape.dims(x)?.to_vec();
        let seq = self
            .tape
            .reshape(x, vec![t, dims.iter().product::<usize>() / t])?;
        let s = self.tape.lif(seq, &neuron, self.mode)?;
        self.tape.reshape(s, dims)
    }

    fn project_fire(&mut self, x: Var, prefix: &str, t: usize) -> Result<Var> {
        let y = self.linear(x, prefix)?;
        self.fire(y, t, self.neuron)
    }

    fn attend(
        &mut self,
        spec: &AttentionSpec,
        q: Var,
        k: Var,
        v: Var,
        groups: Vec<Vec<usize>>,
    ) -> Result<Var> {
        let pre = self.tape.attend(
            q,
            k,
            v,
            Arc::new(groups),
            spec.heads,
            spec.effective_score_scale(),
            spec.score,
        )?;
        self.fire(pre, spec.t, spec.attention_neuron())
    }

    fn stage(
        &mut self,
        spec: &AttentionSpec,
        x: Var,
        prefix: &str,
        groups: Vec<Vec<usize>>,
    ) -> Result<Var> {
        let q = self.project_fire(x, &format!("{prefix}.q"), spec.t)?;
        let k = self.project_fire(x, &format!("{prefix}.k"), spec.t)?;
        let v = self.project_fire(x, &format!("{prefix}.v"), spec.t)?;
        let a = self.attend(spec, q, k, v, groups)?;
        self.linear(a, &format!("{prefix}.out"))
    }

    /// Space-time attention on spike rows `[T·N, D]`.
    fn attention(&mut self, spec: &AttentionSpec, x: Var) -> Result<Var> {
        let layout = Layout {
            b: 1,
            t: spec.t,
            n: spec.n,
        };
        match spec.variant {
            Variant::Joint => self.stage(spec, x, "tr.attn", layout.joint()),
            Variant::NeuronLevel | Variant::SpatialOnly => {
                self.stage(spec, x, "tr.attn", layout.spatial())
            }
            Variant::Hierarchical => {
                let y = self.stage(spec, x, "tr.attn.spatial", layout.spatial())?;
                let s = self.fire(y, spec.t, self.neuron)?;
                self.stage(spec, s, "tr.attn.temporal", layout.temporal())
            }
            Variant::Factorized => {
                let q = self.project_fire(x, "tr.attn.q", spec.t)?;
                let kt = self.project_fire(x, "tr.attn.k_time", spec.t)?;
                let vt = self.project_fire(x, "tr.attn.v_time", spec.t)?;
                let ks = self.project_fire(x, "tr.attn.k_space", spec.t)?;
                let vs = self.project_fire(x, "tr.attn.v_space", spec.t)?;
                let at = self.attend(spec, q, kt, vt, layout.temporal())?;
                let as_ = self.attend(spec, q, ks, vs, layout.spatial())?;
                let cat = self.tape.concat_cols(at, as_)?;
                self.linear(cat, "tr.attn.out")
            }
        }
    }
}

impl ToyModel {
    /// Seeded initialization. `spec` supplies the attention layout, score,
    /// heads and neuron; its `T`, `N` and `D` are replaced by the task's
    /// frame count, token count and `channels`.
    pub fn new(spec: &AttentionSpec, task: &ToyTask, channels: usize, seed: u64) -> Result<Self> {
        task.validate()?;
        let (t, n) = (task.t, (task.h / 2) * (task.w / 2));
        let spec = AttentionSpec {
            t,
            n,
            d: channels,
            ..spec.clone()
        };
        spec.validate()?;
        let mut rng = seeded(derive_seed(seed, 11));
        let mut store = WeightStore::new();
        Conv::random(3, 1, channels, 1, 2, 2.0, &mut rng)?.store("stem", &mut store)?;
        CnnBlock::random(
            channels,
            SEP_EXPANSION,
            SEP_KERNEL,
            CHANNEL_KERNEL,
            &mut rng,
        )?
        .store("cnn", &mut store)?;
        TransformerBlock::random(&spec, MLP_RATIO, derive_seed(seed, 12))?
            .store("tr", &mut store)?;
        // A zero head starts every sample at ln 2 loss.
        Projection::zeros(channels, CLASSES)?.store("head", &mut store)?;
        let pool = Norm::identity(channels);
        store.insert(
            "pool.norm_scale",
            RealTensor::new(vec![channels], pool.scale)?,
        );
        store.insert(
            "pool.norm_shift",
            RealTensor::new(vec![channels], pool.shift)?,
        );
        let (names, values) = store.iter().map(|(k, v)| (k.clone(), v.clone())).unzip();
        Ok(Self {
            spec,
            channels,
            names,
            values,
            frame: (t, task.h, task.w),
        })
    }

    pub fn param_count(&self) -> usize {
        self.values.iter().map(RealTensor::numel).sum()
    }

    /// Whether SGD updates the parameter; norms other than the head bias
    /// are fixed.
    pub fn is_trainable(name: &str) -> bool {
        !name.contains(".norm_") || name == "head.norm_shift"
    }

    pub fn mode(&self) -> TemporalMode {
        if self.spec.variant == Variant::SpatialOnly {
            TemporalMode::ResetEachStep
        } else {
            TemporalMode::Carry
        }
    }

    fn check_frames(&self, x: &RealTensor) -> Result<()> {
        let (t, h, w) = self.frame;
        if x.dims() != [t, h, w, 1] {
            return Err(shape_err(format!(
                "toy model expects [{t}, {h}, {w}, 1], got {}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Records the forward pass; returns the parameter handles and logits.
    pub fn forward(&self, tape: &mut Tape, x: &RealTensor) -> Result<(Vec<Var>, Var)> {
        let params: Vec<Var> = self.values.iter().map(|v| tape.leaf(v)).collect();
        let logits = self.forward_with(tape, &params, x)?;
        Ok((params, logits))
    }

    /// Forward pass with caller-supplied parameter handles, in `names` order.
    pub fn forward_with(&self, tape: &mut Tape, params: &[Var], x: &RealTensor) -> Result<Var> {
        Ok(self.run(tape, params, x)?.0)
    }

    /// Returns the logits and the pooled features before the pool norm.
    pub(crate) fn run(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: &RealTensor,
    ) -> Result<(Var, Vec<f64>)> {
        self.check_frames(x)?;
        if params.len() != self.values.len() {
            return Err(Error::Graph(format!(
                "{} parameter handles for {} parameters",
                params.len(),
                self.values.len()
            )));
        }
        let input = tape.leaf(x);
        let vars = self
            .names
            .iter()
            .map(String::as_str)
            .zip(params.iter().copied())
            .collect();
        let spec = &self.spec;
        let (t, n, d) = (spec.t, spec.n, spec.d);
        let mut f = Forward {
            tape,
            vars,
            mode: self.mode(),
            neuron: spec.neuron,
        };

        let u = f.conv(input, "stem", 1, 2)?;
        let s = f.fire(u, t, f.neuron)?;
        let a = f.conv(s, "cnn.pw1", 1, 1)?;
        let s = f.fire(a, t, f.neuron)?;
        let b = f.conv(s, "cnn.dw", SEP_EXPANSION * d, 1)?;
        let b = f.conv(b, "cnn.pw2", 1, 1)?;
        let u1 = f.tape.add(u, b)?;
        let s = f.fire(u1, t, f.neuron)?;
        let c = f.conv(s, "cnn.conv1", 1, 1)?;
        let s = f.fire(c, t, f.neuron)?;
        let c = f.conv(s, "cnn.conv2", 1, 1)?;
        let u2 = f.tape.add(u1, c)?;

        let tokens = f.tape.reshape(u2, vec![t * n, d])?;
        let s = f.fire(tokens, t, f.neuron)?;
        let a = f.attention(spec, s)?;
        let u3 = f.tape.add(tokens, a)?;
        let s = f.fire(u3, t, f.neuron)?;
        let h = f.linear(s, "tr.mlp1")?;
        let s = f.fire(h, t, f.neuron)?;
        let y = f.linear(s, "tr.mlp2")?;
        let u4 = f.tape.add(u3, y)?;

        let pooled = f.tape.mean_rows(u4)?;
        let pooled = f.tape.reshape(pooled, vec![1, d])?;
        let features = f.tape.value(pooled)?.to_vec();
        let pooled = f.norm(pooled, "pool")?;
        let logits = f.linear(pooled, "head")?;
        Ok((f.tape.reshape(logits, vec![CLASSES])?, features))
    }

    /// Centers the pooled features on their mean over `samples`, so the
    /// head sees zero-mean inputs from the start.
    pub fn center_pool(&mut self, samples: &[RealTensor]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Config("centering needs at least one sample".into()));
        }
        let features = samples
            .par_iter()
            .map(|x| {
                let mut tape = Tape::new(SpikeFn::Hard);
                let params: Vec<Var> = self.values.iter().map(|v| tape.leaf(v)).collect();
                Ok(self.run(&mut tape, &params, x)?.1)
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let mut shift = vec![0.0; self.channels];
        for f in &features {
            for (s, v) in shift.iter_mut().zip(f) {
                *s -= v / samples.len() as f64;
            }
        }
        let scale = self.value("pool.norm_scale")?.data().to_vec();
        let shift = shift.iter().zip(&scale).map(|(b, s)| b * s).collect();
        self.set(
            "pool.norm_shift",
            RealTensor::new(vec![self.channels], shift)?,
        )
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Graph(format!("missing parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&RealTensor> {
        Ok(&self.values[self.position(name)?])
    }

    pub(crate) fn set(&mut self, name: &str, t: RealTensor) -> Result<()> {
        let i = self.position(name)?;
        self.values[i] = t;
        Ok(())
    }

    pub fn logits(&self, x: &RealTensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new(SpikeFn::Hard);
        let (_, logits) = self.forward(&mut tape, x)?;
        Ok(tape.value(logits)?.to_vec())
    }

    pub fn predict(&self, x: &RealTensor) -> Result<usize> {
        let z = self.logits(x)?;
        Ok(usize::from(z[1] > z[0]))
    }

    pub fn loss(&self, x: &RealTensor, label: usize) -> Result<f64> {
        let mut tape = Tape::new(SpikeFn::Hard);
        let (_, logits) = self.forward(&mut tape, x)?;
        let loss = tape.cross_entropy(logits, label)?;
        Ok(tape.value(loss)?[0])
    }

    /// Cross-entropy and its gradient for every parameter, in order.
    /// Non-finite values are passed through for the caller to detect.
    pub fn loss_and_grads(&self, x: &RealTensor, label: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new(SpikeFn::Hard);
        let (params, logits) = self.forward(&mut tape, x)?;
        let loss = tape.cross_entropy(logits, label)?;
        let grads = tape.backward(loss)?;
        let g = params
            .iter()
            .map(|&p| grads.raw(p))
            .collect::<Result<Vec<_>>>()?;
        Ok((tape.value(loss)?[0], g))
    }

    /// `v ← μ·v + g`, `w ← w − lr·v` on the trainable parameters. Returns
    /// false, leaving the weights untouched, if the update would make any
    /// weight non-finite.
    pub fn sgd_step(
        &mut self,
        grads: &[Vec<f64>],
        velocity: &mut [Vec<f64>],
        lr: f64,
        momentum: f64,
    ) -> Result<bool> {
        let mut updated = Vec::with_capacity(self.values.len());
        for (((w, g), v), name) in self
            .values
            .iter()
            .zip(grads)
            .zip(velocity.iter_mut())
            .zip(&self.names)
        {
            if !Self::is_trainable(name) {
                updated.push(w.clone());
                continue;
            }
            let mut data = w.data().to_vec();
            for ((wi, gi), vi) in data.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = momentum * *vi + gi;
                *wi -= lr * *vi;
            }
            if data.iter().any(|x| !x.is_finite()) {
                return Ok(false);
            }
            updated.push(RealTensor::new(w.dims().to_vec(), data)?);
        }
        self.values = updated;
        Ok(true)
    }

    pub fn to_store(&self) -> WeightStore {
        let mut store = WeightStore::new();
        for (k, v) in self.names.iter().zip(&self.values) {
            store.insert(k.clone(), v.clone());
        }
        store
    }

    /// Logits through the instrumented spike-driven blocks; must agree with
    /// the hard tape forward.
    pub fn inference_logits(&self, x: &RealTensor, counter: &mut OpCounter) -> Result<Vec<f64>> {
        self.check_frames(x)?;
        let store = self.to_store();
        let spec = &self.spec;
        let sn = SpikeLayer {
            neuron: spec.neuron,
            mode: self.mode(),
        };
        let stem = Conv::load("stem", 1, 2, &store)?;
        let cnn = CnnBlock::load("cnn", &store)?;
        let tr = TransformerBlock::load(spec, "tr", &store)?;
        let head = Projection::load("head", &store)?;

        let mut inner = OpCounter::new();
        let u = stem.forward_real(x, "down", &mut inner)?;
        counter.absorb("stem.", inner);
        let mut inner = OpCounter::new();
        let u = sep_conv_block(&u, &cnn, &sn, &mut inner)?;
        counter.absorb("cnn.", inner);
        let mut inner = OpCounter::new();
        let tokens = u.reshape(vec![spec.t, spec.n, spec.d])?;
        let u = transformer_block(&tokens, spec, &tr, self.mode(), &mut inner)?;
        counter.absorb("tr.", inner);

        let rows = spec.t * spec.n;
        let mut pooled = vec![0.0; spec.d];
        for row in u.data().chunks_exact(spec.d) {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v / rows as f64;
            }
        }
        let pool = Norm {
            scale: self.value("pool.norm_scale")?.data().to_vec(),
            shift: self.value("pool.norm_shift")?.data().to_vec(),
        };
        pool.apply(&mut pooled);
        let mut z = RealTensor::new(vec![1, spec.d], pooled)?
            .matmul(&head.weight)?
            .into_data();
        head.norm.apply(&mut z);
        Ok(z)
    }
}
