//! Desk-scale surrogate-gradient training on a synthetic motion-direction
//! task whose single frames carry no label information.

mod model;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

pub use model::ToyModel;

use crate::attention::AttentionSpec;
use crate::cost::{counter_reports, CostReport, EnergyConstants, OpCounter};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tensor::RealTensor;

/// Training sequences used to center the pooled features.
const CENTERING_SAMPLES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A bar moving one pixel per frame, left to right (class 0) or right to
/// left (class 1), with wraparound and salt noise. Start column and row
/// are uniform, so every frame has the same distribution in both classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyTask {
    pub seed: u64,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub bar_width: usize,
    pub bar_height: usize,
    pub noise: f64,
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            seed: 0,
            t: 8,
            h: 16,
            w: 16,
            bar_width: 2,
            bar_height: 4,
            noise: 0.02,
            train_size: 512,
            test_size: 512,
        }
    }
}

impl ToyTask {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.h < 2 || self.w < 2 || self.h % 2 != 0 || self.w % 2 != 0 {
            return Err(Error::Config(format!(
                "task frames {}x{} over T={} must be even and nonempty",
                self.h, self.w, self.t
            )));
        }
        if self.bar_width == 0
            || self.bar_width > self.w
            || self.bar_height == 0
            || self.bar_height > self.h
        {
            return Err(Error::Config("bar must fit inside the frame".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!(
                "noise {} outside [0, 1]",
                self.noise
            )));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("train and test sets must be nonempty".into()));
        }
        Ok(())
    }

    /// Frames `[T, H, W, 1]` and label of sample `index`. Labels alternate.
    pub fn sample(&self, split: Split, index: usize) -> Result<(RealTensor, usize)> {
        let stream = derive_seed(self.seed, if split == Split::Train { 1 } else { 2 });
        let mut rng = seeded(derive_seed(stream, index as u64));
        let label = index % 2;
        let col = rng.random_range(0..self.w);
        let row = rng.random_range(0..self.h);
        let mut data = vec![0.0; self.t * self.h * self.w];
        for t in 0..self.t {
            let shift = if label == 0 { t } else { self.w * self.t - t };
            for dy in 0..self.bar_height {
                for dx in 0..self.bar_width {
                    let y = (row + dy) % self.h;
                    let x = (col + shift + dx) % self.w;
                    data[(t * self.h + y) * self.w + x] = 1.0;
                }
            }
        }
        for v in data.iter_mut() {
            if rng.random::<f64>() < self.noise {
                *v = 1.0;
            }
        }
        Ok((
            RealTensor::new(vec![self.t, self.h, self.w, 1], data)?,
            label,
        ))
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_size,
            Split::Test => self.test_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Base channel count of the toy model (the token width `D`).
    pub channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            seed: 7,
            lr: 0.1,
            momentum: 0.9,
            batch_size: 16,
            channels: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Row 0 describes the untrained model.
    pub rows: Vec<EpochRow>,
    pub final_accuracy: f64,
    pub cost: CostReport,
    pub params: usize,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,test_acc";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6},{:.4}", r.epoch, r.train_loss, r.test_acc);
        }
        out
    }

    pub fn accuracy_curve(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.test_acc).collect()
    }
}

fn mean_loss(model: &ToyModel, task: &ToyTask) -> Result<f64> {
    let losses = (0..task.train_size)
        .into_par_iter()
        .map(|i| {
            let (x, label) = task.sample(Split::Train, i)?;
            model.loss(&x, label)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Fraction of the test split classified correctly.
pub fn evaluate(model: &ToyModel, task: &ToyTask) -> Result<f64> {
    let hits = (0..task.test_size)
        .into_par_iter()
        .map(|i| {
            let (x, label) = task.sample(Split::Test, i)?;
            Ok(usize::from(model.predict(&x)? == label))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / task.test_size as f64)
}

/// Operation counts of the trained network's spike-driven inference path
/// over the whole test split, summarized as one report.
pub fn cost_report(model: &ToyModel, task: &ToyTask) -> Result<CostReport> {
    let mut counter = OpCounter::new();
    for i in 0..task.test_size {
        let (x, _) = task.sample(Split::Test, i)?;
        model.inference_logits(&x, &mut counter)?;
    }
    let mut reports = counter_reports(&counter, &EnergyConstants::default())?;
    let mut total = reports
        .pop()
        .expect("counter_reports always ends with a total row");
    total.scope = "toy_model".to_string();
    Ok(total)
}

/// Trains the toy model (a CNN block and one transformer block with the
/// layout of `spec`) with momentum SGD and BPTT. Batches are reduced in
/// sample order so results do not depend on the thread count.
pub fn train_toy(spec: &AttentionSpec, task: &ToyTask, cfg: &TrainConfig) -> Result<TrainReport> {
    task.validate()?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::Config(
            "batch size, learning rate or momentum out of range".into(),
        ));
    }
    let mut model = ToyModel::new(spec, task, cfg.channels, cfg.seed)?;
    let centering = (0..task.train_size.min(CENTERING_SAMPLES))
        .map(|i| Ok(task.sample(Split::Train, i)?.0))
        .collect::<Result<Vec<_>>>()?;
    model.center_pool(&centering)?;
    let mut velocity: Vec<Vec<f64>> = model.values.iter().map(|v| vec![0.0; v.numel()]).collect();
    let mut rows = vec![EpochRow {
        epoch: 0,
        train_loss: mean_loss(&model, task)?,
        test_acc: evaluate(&model, task)?,
    }];
    let mut order: Vec<usize> = (0..task.train_size).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut seeded(derive_seed(cfg.seed, 1000 + epoch as u64)));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let (x, label) = task.sample(Split::Train, i)?;
                    model.loss_and_grads(&x, label)
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> =
                model.values.iter().map(|v| vec![0.0; v.numel()]).collect();
            for (loss, g) in results {
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                epoch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    for (a, x) in acc.iter_mut().zip(gi) {
                        *a += x * scale;
                    }
                }
            }
            if !model.sgd_step(&grads, &mut velocity, cfg.lr, cfg.momentum)? {
                return Err(Error::Divergence { epoch });
            }
        }
        let train_loss = epoch_loss / task.train_size as f64;
        if !train_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        rows.push(EpochRow {
            epoch,
            train_loss,
            test_acc: evaluate(&model, task)?,
        });
    }
    let final_accuracy = rows.last().expect("row 0 always present").test_acc;
    Ok(TrainReport {
        rows,
        final_accuracy,
        cost: cost_report(&model, task)?,
        params: model.param_count(),
    })
}
