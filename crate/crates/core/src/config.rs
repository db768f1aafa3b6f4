//! Plain-text workbench configuration.
//!
//! The format is line based: `[section]` headers, `key = value` pairs and
//! `#` comments. Sections are `neuron`, `attention`, `backbone`, `cost` and
//! `training`. Unknown sections and keys are errors, as is a key given twice.
//! [`WorkbenchConfig::to_text`] prints every key with its current value, so
//! `WorkbenchConfig::default().to_text()` is the reference for defaults.
//!
//! The `neuron` section feeds every spiking layer, including the attention
//! template. The `attention` section is the template for attention modules
//! and the backbone's transformer stages.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::attention::{AttentionSpec, HammingNorm, Score, Variant};
use crate::blocks::BackboneConfig;
use crate::cost::EnergyConstants;
use crate::error::{Error, Result};
use crate::neuron::{NeuronConfig, SurrogateKind, TemporalMode};
use crate::train::{ToyTask, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct WorkbenchConfig {
    pub neuron: NeuronConfig,
    pub attention: AttentionSpec,
    pub backbone: BackboneConfig,
    pub energy: EnergyConstants,
    pub training: TrainConfig,
    pub task: ToyTask,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        let backbone = BackboneConfig::default();
        Self {
            neuron: NeuronConfig::default(),
            attention: backbone.attention.clone(),
            backbone,
            energy: EnergyConstants::default(),
            training: TrainConfig::default(),
            task: ToyTask::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn surrogate_kind(value: &str) -> Result<SurrogateKind> {
    match value {
        "atan" => Ok(SurrogateKind::Atan),
        "rectangular" => Ok(SurrogateKind::Rectangular),
        _ => Err(Error::Config(format!(
            "unknown surrogate `{value}` (atan, rectangular)"
        ))),
    }
}

fn surrogate_name(kind: SurrogateKind) -> &'static str {
    match kind {
        SurrogateKind::Atan => "atan",
        SurrogateKind::Rectangular => "rectangular",
    }
}

fn hamming_norm(value: &str) -> Result<HammingNorm> {
    match value {
        "per_head" => Ok(HammingNorm::PerHead),
        "full_width" => Ok(HammingNorm::FullWidth),
        _ => Err(Error::Config(format!(
            "unknown hamming_norm `{value}` (per_head, full_width)"
        ))),
    }
}

fn hamming_norm_name(norm: HammingNorm) -> &'static str {
    match norm {
        HammingNorm::PerHead => "per_head",
        HammingNorm::FullWidth => "full_width",
    }
}

fn temporal_mode(value: &str) -> Result<TemporalMode> {
    match value {
        "carry" => Ok(TemporalMode::Carry),
        "reset_each_step" => Ok(TemporalMode::ResetEachStep),
        _ => Err(Error::Config(format!(
            "unknown mode `{value}` (carry, reset_each_step)"
        ))),
    }
}

fn temporal_mode_name(mode: TemporalMode) -> &'static str {
    match mode {
        TemporalMode::Carry => "carry",
        TemporalMode::ResetEachStep => "reset_each_step",
    }
}

fn depths(key: &str, value: &str) -> Result<[usize; 5]> {
    let parts = value
        .split(',')
        .map(|p| parse::<usize>(key, p.trim()))
        .collect::<Result<Vec<_>>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Config(format!("`{key}` needs five comma-separated stage depths")))
}

impl WorkbenchConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses `text` over the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", number + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["neuron", "attention", "backbone", "cost", "training"].contains(&name) {
                    return Err(at(format!("unknown section `{name}`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(at(format!("expected `key = value`, got `{line}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(sec) = &section else {
                return Err(at(format!("`{key}` appears before any section")));
            };
            if !seen.insert(format!("{sec}.{key}")) {
                return Err(at(format!("`{sec}.{key}` given twice")));
            }
            cfg.set(sec, key, value).map_err(|e| match e {
                Error::Config(msg) => at(msg),
                other => at(other.to_string()),
            })?;
        }
        cfg.attention.neuron = cfg.neuron;
        cfg.backbone.attention = cfg.attention.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let n = &mut self.neuron;
        let a = &mut self.attention;
        let b = &mut self.backbone;
        let t = &mut self.training;
        let task = &mut self.task;
        match (section, key) {
            ("neuron", "beta") => n.beta = parse(key, v)?,
            ("neuron", "u_th") => n.u_th = parse(key, v)?,
            ("neuron", "scale") => n.scale = parse(key, v)?,
            ("neuron", "levels") => n.levels = parse(key, v)?,
            ("neuron", "surrogate") => n.surrogate.kind = surrogate_kind(v)?,
            ("neuron", "alpha") => n.surrogate.alpha = parse(key, v)?,
            ("attention", "variant") => a.variant = parse::<Variant>(key, v)?,
            ("attention", "score") => a.score = parse::<Score>(key, v)?,
            ("attention", "t") => a.t = parse(key, v)?,
            ("attention", "n") => a.n = parse(key, v)?,
            ("attention", "d") => a.d = parse(key, v)?,
            ("attention", "heads") => a.heads = parse(key, v)?,
            ("attention", "score_scale") => {
                a.score_scale = if v == "auto" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            ("attention", "hamming_norm") => a.hamming_norm = hamming_norm(v)?,
            ("attention", "threshold_scale") => a.threshold_scale = parse(key, v)?,
            ("backbone", "channels") => b.channels = parse(key, v)?,
            ("backbone", "depths") => b.depths = depths(key, v)?,
            ("backbone", "in_channels") => b.in_channels = parse(key, v)?,
            ("backbone", "t") => b.t = parse(key, v)?,
            ("backbone", "h") => b.h = parse(key, v)?,
            ("backbone", "w") => b.w = parse(key, v)?,
            ("backbone", "stem_kernel") => b.stem_kernel = parse(key, v)?,
            ("backbone", "down_kernel") => b.down_kernel = parse(key, v)?,
            ("backbone", "sep_kernel") => b.sep_kernel = parse(key, v)?,
            ("backbone", "sep_expansion") => b.sep_expansion = parse(key, v)?,
            ("backbone", "channel_kernel") => b.channel_kernel = parse(key, v)?,
            ("backbone", "mlp_ratio") => b.mlp_ratio = parse(key, v)?,
            ("backbone", "mode") => b.mode = temporal_mode(v)?,
            ("backbone", "seed") => b.seed = parse(key, v)?,
            ("cost", "e_mac") => self.energy.e_mac = parse(key, v)?,
            ("cost", "e_ac") => self.energy.e_ac = parse(key, v)?,
            ("training", "epochs") => t.epochs = parse(key, v)?,
            ("training", "seed") => t.seed = parse(key, v)?,
            ("training", "lr") => t.lr = parse(key, v)?,
            ("training", "momentum") => t.momentum = parse(key, v)?,
            ("training", "batch_size") => t.batch_size = parse(key, v)?,
            ("training", "channels") => t.channels = parse(key, v)?,
            ("training", "task_seed") => task.seed = parse(key, v)?,
            ("training", "frames") => task.t = parse(key, v)?,
            ("training", "height") => task.h = parse(key, v)?,
            ("training", "width") => task.w = parse(key, v)?,
            ("training", "bar_width") => task.bar_width = parse(key, v)?,
            ("training", "bar_height") => task.bar_height = parse(key, v)?,
            ("training", "noise") => task.noise = parse(key, v)?,
            ("training", "train_size") => task.train_size = parse(key, v)?,
            ("training", "test_size") => task.test_size = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}` in [{section}]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.neuron.validate()?;
        self.attention.validate()?;
        self.backbone.validate()?;
        self.task.validate()?;
        let e = &self.energy;
        if !(e.e_mac > 0.0 && e.e_ac > 0.0 && e.e_mac.is_finite() && e.e_ac.is_finite()) {
            return Err(Error::Config("energy constants must be positive".into()));
        }
        let t = &self.training;
        if t.batch_size == 0
            || t.channels == 0
            || !(t.lr > 0.0)
            || !(0.0..1.0).contains(&t.momentum)
        {
            return Err(Error::Config(
                "training needs positive batch size, channels and lr, and momentum in [0, 1)"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Every key with its value, in a form [`WorkbenchConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let (n, a, b, t, task) = (
            &self.neuron,
            &self.attention,
            &self.backbone,
            &self.training,
            &self.task,
        );
        let mut s = String::new();
        let _ = writeln!(s, "[neuron]");
        let _ = writeln!(s, "beta = {}", n.beta);
        let _ = writeln!(s, "u_th = {}", n.u_th);
        let _ = writeln!(s, "scale = {}", n.scale);
        let _ = writeln!(s, "levels = {}", n.levels);
        let _ = writeln!(s, "surrogate = {}", surrogate_name(n.surrogate.kind));
        let _ = writeln!(s, "alpha = {}", n.surrogate.alpha);
        let _ = writeln!(s, "\n[attention]");
        let _ = writeln!(s, "variant = {}", a.variant);
        let _ = writeln!(s, "score = {}", a.score);
        let _ = writeln!(s, "t = {}", a.t);
        let _ = writeln!(s, "n = {}", a.n);
        let _ = writeln!(s, "d = {}", a.d);
        let _ = writeln!(s, "heads = {}", a.heads);
        match a.score_scale {
            Some(x) => {
                let _ = writeln!(s, "score_scale = {x}");
            }
            None => {
                let _ = writeln!(s, "score_scale = auto");
            }
        }
        let _ = writeln!(s, "hamming_norm = {}", hamming_norm_name(a.hamming_norm));
        let _ = writeln!(s, "threshold_scale = {}", a.threshold_scale);
        let _ = writeln!(s, "\n[backbone]");
        let _ = writeln!(s, "channels = {}", b.channels);
        let depths: Vec<String> = b.depths.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "depths = {}", depths.join(","));
        let _ = writeln!(s, "in_channels = {}", b.in_channels);
        let _ = writeln!(s, "t = {}", b.t);
        let _ = writeln!(s, "h = {}", b.h);
        let _ = writeln!(s, "w = {}", b.w);
        let _ = writeln!(s, "stem_kernel = {}", b.stem_kernel);
        let _ = writeln!(s, "down_kernel = {}", b.down_kernel);
        let _ = writeln!(s, "sep_kernel = {}", b.sep_kernel);
        let _ = writeln!(s, "sep_expansion = {}", b.sep_expansion);
        let _ = writeln!(s, "channel_kernel = {}", b.channel_kernel);
        let _ = writeln!(s, "mlp_ratio = {}", b.mlp_ratio);
        let _ = writeln!(s, "mode = {}", temporal_mode_name(b.mode));
        let _ = writeln!(s, "seed = {}", b.seed);
        let _ = writeln!(s, "\n[cost]");
        let _ = writeln!(s, "e_mac = {}", self.energy.e_mac);
        let _ = writeln!(s, "e_ac = {}", self.energy.e_ac);
        let _ = writeln!(s, "\n[training]");
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "lr = {}", t.lr);
        let _ = writeln!(s, "momentum = {}", t.momentum);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "channels = {}", t.channels);
        let _ = writeln!(s, "task_seed = {}", task.seed);
        let _ = writeln!(s, "frames = {}", task.t);
        let _ = writeln!(s, "height = {}", task.h);
        let _ = writeln!(s, "width = {}", task.w);
        let _ = writeln!(s, "bar_width = {}", task.bar_width);
        let _ = writeln!(s, "bar_height = {}", task.bar_height);
        let _ = writeln!(s, "noise = {}", task.noise);
        let _ = writeln!(s, "train_size = {}", task.train_size);
        let _ = writeln!(s, "test_size = {}", task.test_size);
        s
    }
}
