use rand::Rng;
use rand_distr::StandardNormal;

use crate::cost::{OpCounter, Operand};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::svt1::WeightStore;
use crate::tensor::{spike_real_matmul, RealTensor, SpikeTensor};

use super::{AttentionSpec, Variant};

/// Per-channel affine map `y = x·scale + shift`; batch normalization with
/// frozen statistics folds into this form.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl Norm {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }

    /// Folds `γ·(x − μ)/√(σ² + ε) + β`.
    pub fn from_batch_stats(
        gamma: &[f64],
        beta: &[f64],
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Self {
        let scale: Vec<f64> = gamma
            .iter()
            .zip(var)
            .map(|(g, v)| g / (v + eps).sqrt())
            .collect();
        let shift = beta
            .iter()
            .zip(mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        Self { scale, shift }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, data: &mut [f64]) {
        let c = self.channels();
        for row in data.chunks_exact_mut(c) {
            for ((x, s), b) in row.iter_mut().zip(&self.scale).zip(&self.shift) {
                *x = *x * s + b;
            }
        }
    }
}

/// Linear map `[in → out]` followed by a per-channel affine norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub weight: RealTensor,
    pub norm: Norm,
}

impl Projection {
    pub fn new(weight: RealTensor, norm: Norm) -> Result<Self> {
        let &[_, out] = weight.dims() else {
            return Err(crate::error::shape_err(format!(
                "projection weight must be rank 2, got {}",
                weight.shape()
            )));
        };
        if norm.channels() != out || norm.shift.len() != out {
            return Err(crate::error::shape_err(format!(
                "norm of {} channels for {out} outputs",
                norm.channels()
            )));
        }
        Ok(Self { weight, norm })
    }

    /// Gaussian weights with standard deviation `gain/√in`, identity norm.
    pub fn random(inputs: usize, outputs: usize, gain: f64, rng: &mut impl Rng) -> Result<Self> {
        let std = gain / (inputs as f64).sqrt();
        let w = RealTensor::from_fn(vec![inputs, outputs], |_| {
            std * rng.sample::<f64, _>(StandardNormal)
        })?;
        Self::new(w, Norm::identity(outputs))
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Result<Self> {
        Self::new(
            RealTensor::zeros(vec![inputs, outputs])?,
            Norm {
                scale: vec![1.0; outputs],
                shift: vec![0.0; outputs],
            },
        )
    }

    pub fn inputs(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.dims()[1]
    }

    /// Applies the projection to spike rows `[R, in]`, recording the
    /// dense and event-driven operation counts under `name`.
    pub fn forward(
        &self,
        x: &SpikeTensor,
        name: &str,
        counter: &mut OpCounter,
    ) -> Result<RealTensor> {
        let rows = x.shape().rows() as u64;
        let (y, acc) = spike_real_matmul(x, &self.weight)?;
        let mut data = y.into_data();
        self.norm.apply(&mut data);
        let (i, o) = (self.inputs() as u64, self.outputs() as u64);
        counter.record(
            name,
            Operand::Binary,
            rows * (i * o + o),
            acc + rows * o,
            x.count_ones(),
            rows * i,
        );
        RealTensor::new(vec![x.shape().rows(), self.outputs()], data)
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + 2 * self.outputs()
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

    pub fn load(prefix: &str, store: &WeightStore) -> Result<Self> {
        let weight = store.get(&format!("{prefix}.weight"))?.clone();
        let scale = store.get(&format!("{prefix}.norm_scale"))?.data().to_vec();
        let shift = store.get(&format!("{prefix}.norm_shift"))?.data().to_vec();
        Self::new(weight, Norm { scale, shift })
    }
}

/// Query/key/value projections and the output projection of one attention pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StageWeights {
    pub q: Projection,
    pub k: Projection,
    pub v: Projection,
    pub out: Projection,
}

impl StageWeights {
    fn build(d: usize, mut make: impl FnMut(usize, usize) -> Result<Projection>) -> Result<Self> {
        Ok(Self {
            q: make(d, d)?,
            k: make(d, d)?,
            v: make(d, d)?,
            out: make(d, d)?,
        })
    }

    fn parts(&self) -> [(&'static str, &Projection); 4] {
        [
            ("q", &self.q),
            ("k", &self.k),
            ("v", &self.v),
            ("out", &self.out),
        ]
    }

    fn load(prefix: &str, store: &WeightStore) -> Result<Self> {
        Ok(Self {
            q: Projection::load(&format!("{prefix}.q"), store)?,
            k: Projection::load(&format!("{prefix}.k"), store)?,
            v: Projection::load(&format!("{prefix}.v"), store)?,
            out: Projection::load(&format!("{prefix}.out"), store)?,
        })
    }
}

/// Projection weights for one attention module, shaped by its layout.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionWeights {
    /// Joint, neuron-level and spatial-only layouts: one pass, `4D²`.
    Single(StageWeights),
    /// Spatial pass then temporal pass, `8D²`.
    Hierarchical {
        spatial: StageWeights,
        temporal: StageWeights,
    },
    /// Shared query, per-branch keys and values, and a `2D → D` output
    /// over the concatenated branches: `5D² + 2D² = 7D²`.
    Factorized {
        q: Projection,
        k_time: Projection,
        v_time: Projection,
        k_space: Projection,
        v_space: Projection,
        out: Projection,
    },
}

impl AttentionWeights {
    fn build(
        spec: &AttentionSpec,
        mut make: impl FnMut(usize, usize) -> Result<Projection>,
    ) -> Result<Self> {
        spec.validate()?;
        let d = spec.d;
        Ok(match spec.variant {
            Variant::Joint | Variant::NeuronLevel | Variant::SpatialOnly => {
                Self::Single(StageWeights::build(d, &mut make)?)
            }
            Variant::Hierarchical => Self::Hierarchical {
                spatial: StageWeights::build(d, &mut make)?,
                temporal: StageWeights::build(d, &mut make)?,
            },
            Variant::Factorized => Self::Factorized {
                q: make(d, d)?,
                k_time: make(d, d)?,
                v_time: make(d, d)?,
                k_space: make(d, d)?,
                v_space: make(d, d)?,
                out: make(2 * d, d)?,
            },
        })
    }

    /// Gaussian projections with gain 2, drawn in a fixed order from `seed`.
    pub fn random(spec: &AttentionSpec, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        Self::build(spec, |i, o| Projection::random(i, o, 2.0, &mut rng))
    }

    pub fn zeros(spec: &AttentionSpec) -> Result<Self> {
        Self::build(spec, Projection::zeros)
    }

    pub fn projections(&self) -> Vec<(String, &Projection)> {
        match self {
            Self::Single(s) => s
                .parts()
                .into_iter()
                .map(|(n, p)| (n.to_string(), p))
                .collect(),
            Self::Hierarchical { spatial, temporal } => spatial
                .parts()
                .into_iter()
                .map(|(n, p)| (format!("spatial.{n}"), p))
                .chain(
                    temporal
                        .parts()
                        .into_iter()
                        .map(|(n, p)| (format!("temporal.{n}"), p)),
                )
                .collect(),
            Self::Factorized {
                q,
                k_time,
                v_time,
                k_space,
                v_space,
                out,
            } => vec![
                ("q".to_string(), q),
                ("k_time".to_string(), k_time),
                ("v_time".to_string(), v_time),
                ("k_space".to_string(), k_space),
                ("v_space".to_string(), v_space),
                ("out".to_string(), out),
            ],
        }
    }

    /// Allocated projection-matrix elements (normalization affines excluded).
    pub fn projection_weight_count(&self) -> usize {
        self.projections()
            .iter()
            .map(|(_, p)| p.weight.numel())
            .sum()
    }

    /// Checks the layout and every projection shape against `spec`.
    pub fn check(&self, spec: &AttentionSpec) -> Result<()> {
        let layout_ok = matches!(
            (self, spec.variant),
            (
                Self::Single(_),
                Variant::Joint | Variant::NeuronLevel | Variant::SpatialOnly
            ) | (Self::Hierarchical { .. }, Variant::Hierarchical)
                | (Self::Factorized { .. }, Variant::Factorized)
        );
        if !layout_ok {
            return Err(Error::VariantWeightMismatch(format!(
                "weights do not have the {} layout",
                spec.variant
            )));
        }
        for (name, p) in self.projections() {
            let inputs = if name == "out" && spec.variant == Variant::Factorized {
                2 * spec.d
            } else {
                spec.d
            };
            if p.inputs() != inputs || p.outputs() != spec.d {
                return Err(Error::VariantWeightMismatch(format!(
                    "projection `{name}` is {}x{}, expected {inputs}x{}",
                    p.inputs(),
                    p.outputs(),
                    spec.d
                )));
            }
        }
        Ok(())
    }

    pub fn to_store(&self, prefix: &str) -> Result<WeightStore> {
        let mut store = WeightStore::new();
        for (name, p) in self.projections() {
            p.store(&format!("{prefix}.{name}"), &mut store)?;
        }
        Ok(store)
    }

    pub fn from_store(spec: &AttentionSpec, prefix: &str, store: &WeightStore) -> Result<Self> {
        let load = |name: &str| {
            Projection::load(&format!("{prefix}.{name}"), store)
                .map_err(|e| Error::VariantWeightMismatch(format!("{} weights: {e}", spec.variant)))
        };
        let weights = match spec.variant {
            Variant::Joint | Variant::NeuronLevel | Variant::SpatialOnly => Self::Single(
                StageWeights::load(prefix, store)
                    .map_err(|e| Error::VariantWeightMismatch(e.to_string()))?,
            ),
            Variant::Hierarchical => Self::Hierarchical {
                spatial: StageWeights::load(&format!("{prefix}.spatial"), store)
                    .map_err(|e| Error::VariantWeightMismatch(e.to_string()))?,
                temporal: StageWeights::load(&format!("{prefix}.temporal"), store)
                    .map_err(|e| Error::VariantWeightMismatch(e.to_string()))?,
            },
            Variant::Factorized => Self::Factorized {
                q: load("q")?,
                k_time: load("k_time")?,
                v_time: load("v_time")?,
                k_space: load("k_space")?,
                v_space: load("v_space")?,
                out: load("out")?,
            },
        };
        weights.check(spec)?;
        Ok(weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{param_count, Score};

    #[test]
    fn allocated_counts_match_closed_form() {
        for v in [Variant::Joint, Variant::Hierarchical, Variant::Factorized] {
            let spec = AttentionSpec::new(v, Score::Hamming, 1, 1, 8, 2).unwrap();
            let w = AttentionWeights::random(&spec, 1).unwrap();
            assert_eq!(w.projection_weight_count(), param_count(&spec));
        }
    }

    #[test]
    fn layout_mismatch_detected() {
        let joint = AttentionSpec::new(Variant::Joint, Score::Hamming, 1, 1, 8, 2).unwrap();
        let hier = AttentionSpec {
            variant: Variant::Hierarchical,
            ..joint.clone()
        };
        let w = AttentionWeights::random(&joint, 1).unwrap();
        assert!(matches!(
            w.check(&hier),
            Err(Error::VariantWeightMismatch(_))
        ));
        let wide = AttentionSpec {
            d: 16,
            ..joint.clone()
        };
        assert!(w.check(&wide).is_err());
    }

    #[test]
    fn folded_batch_norm() {
        let n = Norm::from_batch_stats(&[2.0], &[1.0], &[3.0], &[4.0 - 1e-5], 1e-5);
        let mut x = [5.0];
        n.apply(&mut x);
        assert!((x[0] - (2.0 * (5.0 - 3.0) / 2.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn store_round_trip_and_wrong_variant() {
        let spec = AttentionSpec::new(Variant::Factorized, Score::Hamming, 1, 1, 4, 1).unwrap();
        let w = AttentionWeights::random(&spec, 3).unwrap();
        let store = w.to_store("attn").unwrap();
        assert_eq!(
            AttentionWeights::from_store(&spec, "attn", &store).unwrap(),
            w
        );
        let joint = AttentionSpec {
            variant: Variant::Joint,
            ..spec
        };
        assert!(matches!(
            AttentionWeights::from_store(&joint, "attn", &store),
            Err(Error::VariantWeightMismatch(_))
        ));
    }
}
