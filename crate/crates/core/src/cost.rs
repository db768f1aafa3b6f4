//! Analytic FLOPs, instrumented operation counts, spiking rates and the
//! MAC/AC energy model.

use std::fmt::Write as _;

use crate::attention::{space_time_attention, AttentionSpec, AttentionWeights, Score, Variant};
use crate::error::{Error, Result};
use crate::rng::{bernoulli_vec, derive_seed, seeded};
use crate::tensor::{RealTensor, SpikeTensor};

/// What kind of multiplicand a counted kernel consumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operand {
    /// `{0,1}` spikes: zero entries are skipped.
    Binary,
    /// `{−1,1}` after the bit-shift mapping: every position costs one add.
    Signed,
    /// Real-valued input (encoding layer or ANN baseline).
    Real,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCount {
    pub name: String,
    pub operand: Operand,
    /// Multiply-accumulates a dense real-valued implementation performs.
    pub dense_ops: u64,
    /// Accumulates actually performed by the event-driven kernel.
    pub acc_ops: u64,
    pub ones: u64,
    pub operand_elems: u64,
}

impl LayerCount {
    pub fn spiking_rate(&self) -> f64 {
        if self.operand_elems == 0 {
            0.0
        } else {
            self.ones as f64 / self.operand_elems as f64
        }
    }
}

/// Per-invocation accumulator of operation counts, keyed by layer name.
/// Repeated records under one name are summed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OpCounter {
    layers: Vec<LayerCount>,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        name: &str,
        operand: Operand,
        dense_ops: u64,
        acc_ops: u64,
        ones: u64,
        operand_elems: u64,
    ) {
        if let Some(l) = self.layers.iter_mut().find(|l| l.name == name) {
            l.dense_ops += dense_ops;
            l.acc_ops += acc_ops;
            l.ones += ones;
            l.operand_elems += operand_elems;
        } else {
            self.layers.push(LayerCount {
                name: name.to_string(),
                operand,
                dense_ops,
                acc_ops,
                ones,
                operand_elems,
            });
        }
    }

    pub fn layers(&self) -> &[LayerCount] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerCount> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn total_dense(&self) -> u64 {
        self.layers.iter().map(|l| l.dense_ops).sum()
    }

    pub fn total_acc(&self) -> u64 {
        self.layers.iter().map(|l| l.acc_ops).sum()
    }

    /// Merges another counter's layers, renaming each to `prefix + name`.
    pub fn absorb(&mut self, prefix: &str, other: OpCounter) {
        for l in other.layers {
            let name = format!("{prefix}{}", l.name);
            self.record(
                &name,
                l.operand,
                l.dense_ops,
                l.acc_ops,
                l.ones,
                l.operand_elems,
            );
        }
    }

    /// Layers whose names start with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a LayerCount> {
        self.layers
            .iter()
            .filter(move |l| l.name.starts_with(prefix))
    }
}

/// Closed-form attention-module FLOPs (batch size 1) for each layout.
pub fn flops_attention(variant: Variant, t: u64, n: u64, d: u64, m: u64) -> u64 {
    let tokens = t * n;
    let full = |width: u64| {
        let dh = width / m;
        2 * tokens * dh * dh * m + 4 * tokens * (width * width + width)
    };
    match variant {
        Variant::Joint | Variant::NeuronLevel | Variant::SpatialOnly => full(d),
        Variant::Hierarchical => 2 * full(d),
        Variant::Factorized => {
            let half = d / 2;
            let dh = half / m;
            let core = 2 * tokens * dh * dh * m;
            let lin = half * half + half;
            core + 3 * tokens * lin + core + 2 * tokens * lin
        }
    }
}

/// MAC count of a real-valued quadratic-order attention core,
/// `(QKᵀ)V` over `L` tokens: `2·L²·D`.
pub fn quadratic_attention_ops(tokens: u64, d: u64) -> u64 {
    2 * tokens * tokens * d
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyConstants {
    /// pJ per multiply-accumulate.
    pub e_mac: f64,
    /// pJ per accumulate.
    pub e_ac: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self {
            e_mac: 4.6,
            e_ac: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub scope: String,
    pub analytic_flops: u64,
    pub measured_ops: u64,
    pub rho: f64,
    pub e_ann_pj: f64,
    pub e_snn_pj: f64,
}

impl CostReport {
    pub const CSV_HEADER: &'static str = "scope,analytic_flops,measured_ops,rho,e_ann_pj,e_snn_pj";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.scope,
            self.analytic_flops,
            self.measured_ops,
            self.rho,
            self.e_ann_pj,
            self.e_snn_pj
        )
    }

    /// `e_snn / e_ann`, or `None` when there is no work.
    pub fn energy_ratio(&self) -> Option<f64> {
        (self.e_ann_pj > 0.0).then(|| self.e_snn_pj / self.e_ann_pj)
    }
}

pub fn reports_to_csv(reports: &[CostReport]) -> String {
    let mut out = format!("{}\n", CostReport::CSV_HEADER);
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// `E_ANN = FLOPs·E_MAC`, `E_SNN = ρ·FLOPs·E_AC`.
pub fn energy_report(
    scope: &str,
    analytic_flops: u64,
    measured_ops: u64,
    rho: f64,
    constants: &EnergyConstants,
) -> Result<CostReport> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("spiking rate {rho} outside [0, 1]")));
    }
    let flops = analytic_flops as f64;
    Ok(CostReport {
        scope: scope.to_string(),
        analytic_flops,
        measured_ops,
        rho,
        e_ann_pj: flops * constants.e_mac,
        e_snn_pj: rho * flops * constants.e_ac,
    })
}

/// One report per counted layer plus a `total` row whose rate is the
/// FLOPs-weighted mean of the layer rates, so totals stay additive.
pub fn counter_reports(
    counter: &OpCounter,
    constants: &EnergyConstants,
) -> Result<Vec<CostReport>> {
    let mut reports = Vec::with_capacity(counter.layers().len() + 1);
    let mut weighted = 0.0;
    for l in counter.layers() {
        let rho = match l.operand {
            Operand::Real => 1.0,
            _ => l.spiking_rate(),
        };
        weighted += rho * l.dense_ops as f64;
        reports.push(energy_report(
            &l.name,
            l.dense_ops,
            l.acc_ops,
            rho,
            constants,
        )?);
    }
    let total = counter.total_dense();
    let rho = if total == 0 {
        0.0
    } else {
        (weighted / total as f64).clamp(0.0, 1.0)
    };
    reports.push(energy_report(
        "total",
        total,
        counter.total_acc(),
        rho,
        constants,
    )?);
    Ok(reports)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub t: usize,
    /// Accumulates measured in the spike-driven attention module.
    pub measured_ops: u64,
    /// MACs of the real-valued quadratic-order attention core at the same size.
    pub baseline_ops: u64,
    pub analytic_flops: u64,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub const CSV_HEADER: &'static str = "T,measured_ops,baseline_ops,analytic_flops,params";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.t, r.measured_ops, r.baseline_ops, r.analytic_flops, r.params
            );
        }
        out
    }

    fn ts(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t as f64).collect()
    }

    pub fn measured_slope(&self) -> f64 {
        loglog_slope(
            &self.ts(),
            &self
                .rows
                .iter()
                .map(|r| r.measured_ops as f64)
                .collect::<Vec<_>>(),
        )
    }

    pub fn baseline_slope(&self) -> f64 {
        loglog_slope(
            &self.ts(),
            &self
                .rows
                .iter()
                .map(|r| r.baseline_ops as f64)
                .collect::<Vec<_>>(),
        )
    }
}

/// Runs the spike attention module at each `T` on Bernoulli(`density`)
/// input spikes and records measured accumulates next to the analytic
/// FLOPs and the real-valued quadratic baseline count.
pub fn scaling_probe(
    variant: Variant,
    score: Score,
    t_list: &[usize],
    n: usize,
    d: usize,
    heads: usize,
    density: f64,
    seed: u64,
) -> Result<ScalingTable> {
    if t_list.is_empty() || t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "T list must be nonempty and strictly increasing".into(),
        ));
    }
    let mut rows = Vec::with_capacity(t_list.len());
    for (i, &t) in t_list.iter().enumerate() {
        let spec = AttentionSpec::new(variant, score, t, n, d, heads)?;
        let weights = AttentionWeights::random(&spec, derive_seed(seed, 1))?;
        let bits = bernoulli_vec(
            &mut seeded(derive_seed(seed, 100 + i as u64)),
            t * n * d,
            density,
        );
        let x = SpikeTensor::from_bools(vec![1, t, n, d], &bits)?;
        let mut counter = OpCounter::new();
        space_time_attention(&x, &spec, &weights, &mut counter)?;
        rows.push(ScalingRow {
            t,
            measured_ops: counter.total_acc(),
            baseline_ops: quadratic_attention_ops((t * n) as u64, d as u64),
            analytic_flops: flops_attention(variant, t as u64, n as u64, d as u64, heads as u64),
            params: weights.projection_weight_count(),
        });
    }
    Ok(ScalingTable { rows })
}

/// Real-valued quadratic-order attention `(QKᵀ)V` per head, no softmax,
/// counting every multiply-accumulate.
pub fn real_quadratic_attention(
    q: &RealTensor,
    k: &RealTensor,
    v: &RealTensor,
    heads: usize,
    counter: &mut OpCounter,
) -> Result<RealTensor> {
    let &[l, d] = q.dims() else {
        return Err(crate::error::shape_err("queries must be [L, D]"));
    };
    if k.dims() != q.dims() || v.dims() != q.dims() || heads == 0 || d % heads != 0 {
        return Err(crate::error::shape_err(
            "q, k, v must share [L, D] with D divisible by heads",
        ));
    }
    let dh = d / heads;
    let mut out = vec![0.0; l * d];
    let mut ops = 0u64;
    let mut scores = vec![0.0; l];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..l {
            let qi = &q.row(i)[cols.clone()];
            for (j, s) in scores.iter_mut().enumerate() {
                *s = qi
                    .iter()
                    .zip(&k.row(j)[cols.clone()])
                    .map(|(a, b)| a * b)
                    .sum();
            }
            ops += (l * dh) as u64;
            let dst = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
            for (j, &s) in scores.iter().enumerate() {
                for (o, &vv) in dst.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += s * vv;
                }
            }
            ops += (l * dh) as u64;
        }
    }
    counter.record(
        "quadratic_attention",
        Operand::Real,
        ops,
        ops,
        (l * d) as u64,
        (l * d) as u64,
    );
    RealTensor::new(vec![l, d], out)
}
