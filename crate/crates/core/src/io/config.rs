//! JSON run configuration.
//!
//! ```json
//! {
//!   "preset": "desk",
//!   "model": { "channels": 16, "variant": "noatt" },
//!   "train": { "iterations": 500, "seed": 3 }
//! }
//! ```
//!
//! Every field is optional; missing ones come from the preset (default
//! `paper-x4`). Presets: `paper-x2|x3|x4`, `small-x2|x3|x4`, `desk`
//! (alias `desk-x2`), `desk-x3`, `desk-x4`.
//!
//! `model` keys: `scale`, `image_channels`, `channels`, `blocks`, `variant`
//! (`span|nores|noatt|empty`), `activation` (`silu|leaky_relu`), `padding`
//! (`zero|replicate`), `branches` (`full|plain|conv1x1|identity`),
//! `train_attention_a`, `train_attention_b`.
//!
//! `train` keys: `batch_size`, `patch_size`, `base_lr`, `halving_period`,
//! `iterations`, `loss` (`l1|l2`), `seed`, `stages`, `log_every`.

use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{BranchMask, SpanConfig, Variant};
use crate::nn::{Activation, PadMode};
use crate::train::{LossKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub model: SpanConfig,
    pub train: TrainConfig,
}

pub const PRESETS: [&str; 9] = [
    "paper-x2", "paper-x3", "paper-x4", "small-x2", "small-x3", "small-x4", "desk", "desk-x3", "desk-x4",
];

pub fn preset(name: &str) -> Option<RunConfig> {
    let (family, scale) = match name {
        "desk" | "desk-x2" => ("desk", 2),
        _ => {
            let (f, s) = name.split_once("-x")?;
            (f, s.parse::<usize>().ok().filter(|s| (2..=4).contains(s))?)
        }
    };
    let (model, mut train) = match family {
        "paper" => (SpanConfig::paper(scale), TrainConfig::paper()),
        "small" => (SpanConfig::small(scale), TrainConfig::paper()),
        "desk" => (SpanConfig::desk(scale), TrainConfig::desk()),
        _ => return None,
    };
    // HR patches must divide evenly into LR patches.
    train.patch_size -= train.patch_size % scale;
    Some(RunConfig { model, train })
}

struct Walker {
    problems: Vec<String>,
}

impl Walker {
    fn uint(&mut self, path: &str, v: &Value) -> Option<u64> {
        match v.as_u64() {
            Some(n) => Some(n),
            None if v.as_f64().is_some_and(|f| f < 0.0) => {
                self.problems.push(format!("{path}: must be non-negative, got {v}"));
                None
            }
            None => {
                self.problems.push(format!("{path}: expected a non-negative integer, got {v}"));
                None
            }
        }
    }

    fn usize(&mut self, path: &str, v: &Value) -> Option<usize> {
        self.uint(path, v).and_then(|n| match usize::try_from(n) {
            Ok(n) => Some(n),
            Err(_) => {
                self.problems.push(format!("{path}: {n} is too large"));
                None
            }
        })
    }

    fn float(&mut self, path: &str, v: &Value) -> Option<f64> {
        match v.as_f64() {
            Some(f) if f < 0.0 => {
                self.problems.push(format!("{path}: must be non-negative, got {v}"));
                None
            }
            Some(f) => Some(f),
            None => {
                self.problems.push(format!("{path}: expected a number, got {v}"));
                None
            }
        }
    }

    fn bool(&mut self, path: &str, v: &Value) -> Option<bool> {
        let b = v.as_bool();
        if b.is_none() {
            self.problems.push(format!("{path}: expected true or false, got {v}"));
        }
        b
    }

    fn choice<C: Copy>(&mut self, path: &str, v: &Value, options: &[(&str, C)]) -> Option<C> {
        let found = v.as_str().and_then(|s| options.iter().find(|(n, _)| *n == s)).map(|(_, c)| *c);
        if found.is_none() {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            self.problems.push(format!("{path}: expected one of {}, got {v}", names.join("|")));
        }
        found
    }

    fn object<'a>(&mut self, path: &str, v: &'a Value) -> Option<&'a Map<String, Value>> {
        let o = v.as_object();
        if o.is_none() {
            self.problems.push(format!("{path}: expected an object"));
        }
        o
    }

    fn model(&mut self, obj: &Map<String, Value>, m: &mut SpanConfig) {
        let mut variant = None;
        for (key, v) in obj {
            let path = format!("model.{key}");
            let p = path.as_str();
            match key.as_str() {
                "scale" => m.scale = self.usize(p, v).unwrap_or(m.scale),
                "image_channels" => m.image_channels = self.usize(p, v).unwrap_or(m.image_channels),
                "channels" => m.channels = self.usize(p, v).unwrap_or(m.channels),
                "blocks" => m.blocks = self.usize(p, v).unwrap_or(m.blocks),
                "variant" => {
                    let opts: Vec<(&str, Variant)> = Variant::ALL.iter().map(|v| (v.name(), *v)).collect();
                    variant = self.choice(p, v, &opts);
                }
                "activation" => {
                    let opts = [("silu", Activation::Silu), ("leaky_relu", Activation::LeakyRelu)];
                    m.activation = self.choice(p, v, &opts).unwrap_or(m.activation);
                }
                "padding" => {
                    let opts = [("zero", PadMode::Zero), ("replicate", PadMode::Replicate)];
                    m.padding = self.choice(p, v, &opts).unwrap_or(m.padding);
                }
                "branches" => {
                    let opts = [
                        ("full", BranchMask::FULL),
                        ("plain", BranchMask::PLAIN),
                        ("conv1x1", BranchMask { conv1x1: true, identity: false }),
                        ("identity", BranchMask { conv1x1: false, identity: true }),
                    ];
                    m.branches = self.choice(p, v, &opts).unwrap_or(m.branches);
                }
                "train_attention_a" => m.block.train_attention_a = self.bool(p, v).unwrap_or(false),
                "train_attention_b" => m.block.train_attention_b = self.bool(p, v).unwrap_or(false),
                _ => self.problems.push(format!("unknown key {path}")),
            }
        }
        if let Some(v) = variant {
            *m = m.with_variant(v);
        }
    }

    fn train(&mut self, obj: &Map<String, Value>, t: &mut TrainConfig) {
        for (key, v) in obj {
            let path = format!("train.{key}");
            let p = path.as_str();
            match key.as_str() {
                "batch_size" => t.batch_size = self.usize(p, v).unwrap_or(t.batch_size),
                "patch_size" => t.patch_size = self.usize(p, v).unwrap_or(t.patch_size),
                "base_lr" => t.base_lr = self.float(p, v).unwrap_or(t.base_lr),
                "halving_period" => t.halving_period = self.uint(p, v).unwrap_or(t.halving_period),
                "iterations" => t.iterations = self.uint(p, v).unwrap_or(t.iterations),
                "loss" => t.loss = self.choice(p, v, &[("l1", LossKind::L1), ("l2", LossKind::L2)]).unwrap_or(t.loss),
                "seed" => t.seed = self.uint(p, v).unwrap_or(t.seed),
                "stages" => t.stages = self.uint(p, v).unwrap_or(t.stages),
                "log_every" => t.log_every = self.uint(p, v).unwrap_or(t.log_every),
                _ => self.problems.push(format!("unknown key {path}")),
            }
        }
    }
}

/// Parses and validates a configuration document. Every problem found is
/// reported in one [`Error::Config`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?;
    let mut w = Walker { problems: Vec::new() };
    let Some(root) = w.object("config", &doc) else {
        return Err(Error::Config(w.problems));
    };
    let name = match root.get("preset") {
        None => "paper-x4",
        Some(v) => v.as_str().unwrap_or(""),
    };
    let mut cfg = match preset(name) {
        Some(c) => c,
        None => {
            w.problems.push(format!(
                "preset: unknown preset {}, expected one of {}",
                root.get("preset").map(Value::to_string).unwrap_or_default(),
                PRESETS.join("|")
            ));
            preset("paper-x4").expect("built-in preset")
        }
    };
    for (key, v) in root {
        match key.as_str() {
            "preset" => {}
            "model" => {
                if let Some(o) = w.object("model", v) {
                    w.model(o, &mut cfg.model);
                }
            }
            "train" => {
                if let Some(o) = w.object("train", v) {
                    w.train(o, &mut cfg.train);
                }
            }
            _ => w.problems.push(format!("unknown key {key}")),
        }
    }
    if w.problems.is_empty() {
        for res in [cfg.model.validate(), cfg.train.validate(cfg.model.scale)] {
            if let Err(Error::Config(p)) = res {
                w.problems.extend(p);
            } else {
                res?;
            }
        }
    }
    if w.problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(w.problems))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
