//! Spike-driven attention: Hamming and dot-product kernels, the
//! cross-attention memory read, and the space-time layouts.

mod kernels;
mod space_time;
mod weights;

use std::fmt;
use std::str::FromStr;

pub use kernels::{
    cross_sdha, default_hamming_scale, dot_scores_linear, dot_scores_quadratic, fire,
    hamming_score_matrix, hamming_scores_linear, hamming_scores_quadratic, sdha, sdha_quadratic,
    sdsa_dot, Scores,
};
pub(crate) use space_time::Layout;
pub use space_time::{space_time_attention, space_time_attention_with_mode};
pub use weights::{AttentionWeights, Norm, Projection, StageWeights};

use crate::error::{Error, Result};
use crate::neuron::NeuronConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One attention over all `T·N` tokens.
    Joint,
    /// Spatial attention per frame, then temporal attention per location.
    Hierarchical,
    /// Shared query; a temporal and a spatial branch, concatenated.
    Factorized,
    /// Spatial attention only; time enters through membrane carry-over.
    NeuronLevel,
    /// Spatial attention with membranes reset at every step.
    SpatialOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Joint,
        Variant::Hierarchical,
        Variant::Factorized,
        Variant::NeuronLevel,
        Variant::SpatialOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Joint => "joint",
            Variant::Hierarchical => "hierarchical",
            Variant::Factorized => "factorized",
            Variant::NeuronLevel => "neuron_level",
            Variant::SpatialOnly => "spatial_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attention variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Score {
    Hamming,
    Dot,
}

impl FromStr for Score {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hamming" => Ok(Score::Hamming),
            "dot" => Ok(Score::Dot),
            _ => Err(Error::Config(format!("unknown score function `{s}`"))),
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Score::Hamming => "hamming",
            Score::Dot => "dot",
        })
    }
}

/// Width used in the `1/(2D)` Hamming normalizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HammingNorm {
    #[default]
    PerHead,
    FullWidth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSpec {
    pub variant: Variant,
    pub score: Score,
    pub t: usize,
    pub n: usize,
    pub d: usize,
    pub heads: usize,
    /// Multiplier on integer scores before the attention neuron. `None`
    /// selects `1/(2·D_h)` (or `1/(2·D)`) for Hamming and `1/D_h` for dot.
    pub score_scale: Option<f64>,
    pub hamming_norm: HammingNorm,
    /// Extra threshold multiplier on the attention neuron.
    pub threshold_scale: f64,
    pub neuron: NeuronConfig,
}

impl AttentionSpec {
    pub fn new(
        variant: Variant,
        score: Score,
        t: usize,
        n: usize,
        d: usize,
        heads: usize,
    ) -> Result<Self> {
        let spec = Self {
            variant,
            score,
            t,
            n,
            d,
            heads,
            score_scale: None,
            hamming_norm: HammingNorm::PerHead,
            threshold_scale: 1.0,
            neuron: NeuronConfig::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.n == 0 || self.d == 0 || self.heads == 0 {
            return Err(Error::Config(
                "T, N, D and heads must all be at least 1".into(),
            ));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "D={} not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.variant == Variant::Factorized && self.d % (2 * self.heads) != 0 {
            return Err(Error::Config(format!(
                "factorized attention needs D={} divisible by 2·heads={}",
                self.d,
                2 * self.heads
            )));
        }
        if let Some(s) = self.score_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("score scale {s} must be positive")));
            }
        }
        if !(self.threshold_scale > 0.0 && self.threshold_scale.is_finite()) {
            return Err(Error::Config(format!(
                "threshold scale {} must be positive",
                self.threshold_scale
            )));
        }
        self.neuron.validate()
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn effective_score_scale(&self) -> f64 {
        self.score_scale
            .unwrap_or(match (self.score, self.hamming_norm) {
                (Score::Hamming, HammingNorm::PerHead) => default_hamming_scale(self.head_dim()),
                (Score::Hamming, HammingNorm::FullWidth) => default_hamming_scale(self.d),
                (Score::Dot, _) => 1.0 / self.head_dim() as f64,
            })
    }

    /// Neuron applied to scaled attention scores.
    pub fn attention_neuron(&self) -> NeuronConfig {
        self.neuron
            .with_scale(self.neuron.scale * self.threshold_scale)
    }

    pub fn with_dims(&self, t: usize, n: usize) -> Result<Self> {
        let spec = Self {
            t,
            n,
            ..self.clone()
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Projection weight elements per layout: `4D²`, `8D²` or `7D²`.
pub fn param_count(spec: &AttentionSpec) -> usize {
    let d2 = spec.d * spec.d;
    match spec.variant {
        Variant::Joint | Variant::NeuronLevel | Variant::SpatialOnly => 4 * d2,
        Variant::Hierarchical => 8 * d2,
        Variant::Factorized => 7 * d2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("ring".parse::<Variant>().is_err());
    }

    #[test]
    fn spec_invariants() {
        assert!(AttentionSpec::new(Variant::Joint, Score::Hamming, 2, 4, 6, 4).is_err());
        assert!(AttentionSpec::new(Variant::Factorized, Score::Hamming, 2, 4, 6, 2).is_err());
        assert!(AttentionSpec::new(Variant::Factorized, Score::Hamming, 2, 4, 8, 2).is_ok());
        assert!(AttentionSpec::new(Variant::Joint, Score::Hamming, 0, 4, 8, 2).is_err());
    }

    #[test]
    fn default_scale_per_head() {
        let mut spec = AttentionSpec::new(Variant::Joint, Score::Hamming, 2, 4, 16, 2).unwrap();
        assert_eq!(spec.effective_score_scale(), 1.0 / 16.0);
        spec.hamming_norm = HammingNorm::FullWidth;
        assert_eq!(spec.effective_score_scale(), 1.0 / 32.0);
    }

    #[test]
    fn closed_form_parameters() {
        let count = |v| param_count(&AttentionSpec::new(v, Score::Hamming, 1, 1, 64, 1).unwrap());
        assert_eq!(count(Variant::Joint), 16384);
        assert_eq!(count(Variant::Hierarchical), 32768);
        assert_eq!(count(Variant::Factorized), 28672);
    }
}
