//! Leaky integrate-and-fire dynamics with soft reset, the multi-level
//! Integer-LIF variant, and surrogate derivatives for training.

use std::f64::consts::PI;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{IntTensor, RealTensor, SpikeTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurrogateKind {
    /// Derivative of `arctan(π·α·x/2)/π + 1/2`.
    Atan,
    /// Box of width `2α` and height `1/(2α)`.
    Rectangular,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surrogate {
    pub kind: SurrogateKind,
    pub alpha: f64,
}

impl Default for Surrogate {
    fn default() -> Self {
        Self {
            kind: SurrogateKind::Atan,
            alpha: 2.0,
        }
    }
}

impl Surrogate {
    /// Smooth stand-in for the Heaviside step, used by smoothed forwards.
    pub fn step(&self, x: f64) -> f64 {
        match self.kind {
            SurrogateKind::Atan => (PI * self.alpha * x / 2.0).atan() / PI + 0.5,
            SurrogateKind::Rectangular => ((x + self.alpha) / (2.0 * self.alpha)).clamp(0.0, 1.0),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            SurrogateKind::Atan => {
                let z = PI * self.alpha * x / 2.0;
                self.alpha / (2.0 * (1.0 + z * z))
            }
            SurrogateKind::Rectangular => {
                if x.abs() < self.alpha {
                    1.0 / (2.0 * self.alpha)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Surrogate gradient of the spike function at `h_minus_threshold`.
pub fn surrogate_derivative(h_minus_threshold: f64, cfg: &NeuronConfig) -> f64 {
    cfg.surrogate.derivative(h_minus_threshold)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronConfig {
    /// Leak applied to the carried membrane potential.
    pub beta: f64,
    pub u_th: f64,
    /// Threshold multiplier; the neuron fires when `H > scale · u_th`.
    pub scale: f64,
    /// Output alphabet size for Integer-LIF; 2 is the binary neuron.
    pub levels: u32,
    pub surrogate: Surrogate,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            u_th: 1.0,
            scale: 1.0,
            levels: 2,
            surrogate: Surrogate::default(),
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(self.u_th > 0.0 && self.u_th.is_finite()) {
            return Err(Error::Config(format!(
                "u_th {} must be positive",
                self.u_th
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!(
                "threshold scale {} must be positive",
                self.scale
            )));
        }
        if self.levels < 2 {
            return Err(Error::Config(format!(
                "levels {} must be at least 2",
                self.levels
            )));
        }
        if !(self.surrogate.alpha > 0.0) {
            return Err(Error::Config(format!(
                "surrogate alpha {} must be positive",
                self.surrogate.alpha
            )));
        }
        Ok(())
    }

    pub fn with_scale(self, scale: f64) -> Self {
        Self { scale, ..self }
    }

    pub fn threshold(&self) -> f64 {
        self.scale * self.u_th
    }
}

/// Whether membrane potential survives from one time step to the next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TemporalMode {
    #[default]
    Carry,
    /// Potentials restart from zero at every step (no neuron-level memory).
    ResetEachStep,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifState {
    pub u: RealTensor,
}

impl LifState {
    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Ok(Self {
            u: RealTensor::zeros(dims)?,
        })
    }
}

/// One LIF update: `H = β·U + x`, fire iff `H > s·u_th`, `U' = H − s·u_th·S`.
pub fn lif_step(
    state: &LifState,
    x: &RealTensor,
    cfg: &NeuronConfig,
) -> Result<(LifState, SpikeTensor)> {
    if state.u.shape() != x.shape() {
        return Err(shape_err(format!(
            "state {} vs input {}",
            state.u.shape(),
            x.shape()
        )));
    }
    let theta = cfg.threshold();
    let mut u = Vec::with_capacity(x.numel());
    let mut spikes = SpikeTensor::zeros(x.dims().to_vec())?;
    for (i, (&prev, &xi)) in state.u.data().iter().zip(x.data()).enumerate() {
        let h = cfg.beta * prev + xi;
        if h > theta {
            spikes.set_flat(i);
            u.push(h - theta);
        } else {
            u.push(h);
        }
    }
    Ok((
        LifState {
            u: RealTensor::from_shape(x.shape().clone(), u)?,
        },
        spikes,
    ))
}

/// Runs LIF neurons over the leading time axis of a flat buffer laid out
/// `[steps, width]`. Returns the spike flags and the final potentials.
pub(crate) fn lif_fold(
    x: &[f64],
    steps: usize,
    cfg: &NeuronConfig,
    mode: TemporalMode,
) -> (Vec<bool>, Vec<f64>) {
    let width = x.len() / steps;
    let theta = cfg.threshold();
    let mut u = vec![0.0; width];
    let mut spikes = vec![false; x.len()];
    for t in 0..steps {
        if mode == TemporalMode::ResetEachStep {
            u.iter_mut().for_each(|v| *v = 0.0);
        }
        let xt = &x[t * width..(t + 1) * width];
        let st = &mut spikes[t * width..(t + 1) * width];
        for ((ui, &xi), si) in u.iter_mut().zip(xt).zip(st) {
            let h = cfg.beta * *ui + xi;
            if h > theta {
                *si = true;
                *ui = h - theta;
            } else {
                *ui = h;
            }
        }
    }
    (spikes, u)
}

/// Folds [`lif_step`] over axis 0 of `x`, starting from zero potential.
pub fn lif_sequence(x: &RealTensor, cfg: &NeuronConfig) -> Result<SpikeTensor> {
    Ok(lif_sequence_with(x, cfg, TemporalMode::Carry)?.0)
}

pub fn lif_sequence_with(
    x: &RealTensor,
    cfg: &NeuronConfig,
    mode: TemporalMode,
) -> Result<(SpikeTensor, LifState)> {
    let dims = x.dims();
    if dims.len() < 2 {
        return Err(shape_err(format!(
            "sequence input needs [T, ...], got {}",
            x.shape()
        )));
    }
    let (spikes, u) = lif_fold(x.data(), dims[0], cfg, mode);
    let spikes = SpikeTensor::from_bools(dims.to_vec(), &spikes)?;
    let state = LifState {
        u: RealTensor::new(dims[1..].to_vec(), u)?,
    };
    Ok((spikes, state))
}

/// Integer-LIF update. Emits the number of threshold multiples strictly
/// exceeded by `H`, capped at `levels − 1`, and subtracts that many
/// thresholds from the potential.
pub fn integer_lif_step(
    state: &LifState,
    x: &RealTensor,
    cfg: &NeuronConfig,
) -> Result<(LifState, IntTensor)> {
    if cfg.levels < 2 {
        return Err(Error::Config(format!(
            "levels {} must be at least 2",
            cfg.levels
        )));
    }
    if state.u.shape() != x.shape() {
        return Err(shape_err(format!(
            "state {} vs input {}",
            state.u.shape(),
            x.shape()
        )));
    }
    let theta = cfg.threshold();
    let mut u = Vec::with_capacity(x.numel());
    let mut out = Vec::with_capacity(x.numel());
    for (&prev, &xi) in state.u.data().iter().zip(x.data()) {
        let h = cfg.beta * prev + xi;
        let mut m = 0i64;
        while (m as u32) < cfg.levels - 1 && h > (m + 1) as f64 * theta {
            m += 1;
        }
        u.push(h - m as f64 * theta);
        out.push(m);
    }
    Ok((
        LifState {
            u: RealTensor::from_shape(x.shape().clone(), u)?,
        },
        IntTensor::new(x.dims().to_vec(), out)?,
    ))
}
