//! `key = value` training configuration.
//!
//! Lines hold one assignment each; `#` starts a comment and blank lines are
//! ignored. A `;` also separates assignments so that a whole configuration
//! fits on one line. Every key is optional and falls back to its default.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::optim::AdamConfig;
use super::LossWeights;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TaskFlags};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub optim: AdamConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Steps between `last` checkpoints; 0 writes one only at the end.
    pub checkpoint_every: usize,
    /// Steps between evaluations; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Stop once the training-set ExpRate reaches this percentage.
    pub early_stop_exprate: Option<f64>,
    /// Random rescale of each training image by a factor in `[0.7, 1.4]`.
    pub scale_aug: bool,
    pub max_decode_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            optim: AdamConfig::default(),
            batch_size: 8,
            max_steps: 2000,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 100,
            early_stop_exprate: None,
            scale_aug: false,
            max_decode_len: 48,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value `{v}` for `{key}` (expected true or false)"))),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        self.optim.validate()?;
        if self.batch_size == 0 || self.max_steps == 0 || self.max_decode_len == 0 {
            return Err(Error::Config("batch_size, max_steps and max_decode_len must be positive".into()));
        }
        if let Some(t) = self.early_stop_exprate {
            if !(0.0..=100.0).contains(&t) {
                return Err(Error::Config(format!("early_stop_exprate {t} is not a percentage")));
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "variant" => m.tasks = TaskFlags::from_variant(v)?,
            "task1" => m.tasks.task1 = parse_bool(key, v)?,
            "multi_view" => m.tasks.multi_view = parse_bool(key, v)?,
            "task2" => m.tasks.task2 = parse_bool(key, v)?,
            "lambda1" => self.weights.lambda1 = parse(key, v)?,
            "lambda2" => self.weights.lambda2 = parse(key, v)?,
            "lambda3" => self.weights.lambda3 = parse(key, v)?,
            "lr" => self.optim.lr = parse(key, v)?,
            "beta1" => self.optim.beta1 = parse(key, v)?,
            "beta2" => self.optim.beta2 = parse(key, v)?,
            "eps" => self.optim.eps = parse(key, v)?,
            "warmup" => self.optim.warmup = parse(key, v)?,
            "clip_norm" => self.optim.clip_norm = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "early_stop_exprate" => {
                self.early_stop_exprate = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "scale_aug" => self.scale_aug = parse_bool(key, v)?,
            "max_decode_len" => self.max_decode_len = parse(key, v)?,
            "growth_rate" => m.backbone.growth_rate = parse(key, v)?,
            "block_layers" => {
                m.backbone.block_layers = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "initial_channels" => m.backbone.initial_channels = parse(key, v)?,
            "reduction" => m.backbone.reduction = parse(key, v)?,
            "stem_pool" => m.backbone.stem_pool = parse_bool(key, v)?,
            "pooled_transitions" => m.backbone.pooled_transitions = parse(key, v)?,
            "model_dim" => m.transformer.model_dim = parse(key, v)?,
            "heads" => m.transformer.heads = parse(key, v)?,
            "ffn_dim" => m.transformer.ffn_dim = parse(key, v)?,
            "layers" => m.transformer.layers = parse(key, v)?,
            "refine" => m.transformer.refine = parse_bool(key, v)?,
            "refine_kernel" => m.transformer.refine_kernel = parse(key, v)?,
            "mscm_hidden" => m.mscm.hidden = parse(key, v)?,
            "mscm_squeeze" => m.mscm.squeeze = parse(key, v)?,
            "count_feature_dim" => m.mscm.feature_dim = parse(key, v)?,
            "channel_attention" => m.mscm.channel_attention = parse_bool(key, v)?,
            "ccad_hidden" => m.ccad.hidden = parse(key, v)?,
            "ccad_embed_dim" => m.ccad.embed_dim = parse(key, v)?,
            "ccad_attention_dim" => m.ccad.attention_dim = parse(key, v)?,
            "coverage_kernel" => m.ccad.coverage_kernel = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults overridden by the assignments in `text`, then validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            for part in line.split(';') {
                let part = part.trim();
                if part.is_empty() {
                    continue;
                }
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
                cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                    e => e,
                })?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Every key in a fixed order, one per line.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let (b, t, s, c) = (&m.backbone, &m.transformer, &m.mscm, &m.ccad);
        let layers: Vec<String> = b.block_layers.iter().map(usize::to_string).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("task1", m.tasks.task1.to_string()),
            ("multi_view", m.tasks.multi_view.to_string()),
            ("task2", m.tasks.task2.to_string()),
            ("lambda1", self.weights.lambda1.to_string()),
            ("lambda2", self.weights.lambda2.to_string()),
            ("lambda3", self.weights.lambda3.to_string()),
            ("lr", self.optim.lr.to_string()),
            ("beta1", self.optim.beta1.to_string()),
            ("beta2", self.optim.beta2.to_string()),
            ("eps", self.optim.eps.to_string()),
            ("warmup", self.optim.warmup.to_string()),
            ("clip_norm", self.optim.clip_norm.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("eval_every", self.eval_every.to_string()),
            (
                "early_stop_exprate",
                self.early_stop_exprate.map_or("none".into(), |v| v.to_string()),
            ),
            ("scale_aug", self.scale_aug.to_string()),
            ("max_decode_len", self.max_decode_len.to_string()),
            ("growth_rate", b.growth_rate.to_string()),
            ("block_layers", layers.join(",")),
            ("initial_channels", b.initial_channels.to_string()),
            ("reduction", b.reduction.to_string()),
            ("stem_pool", b.stem_pool.to_string()),
            ("pooled_transitions", b.pooled_transitions.to_string()),
            ("model_dim", t.model_dim.to_string()),
            ("heads", t.heads.to_string()),
            ("ffn_dim", t.ffn_dim.to_string()),
            ("layers", t.layers.to_string()),
            ("refine", t.refine.to_string()),
            ("refine_kernel", t.refine_kernel.to_string()),
            ("mscm_hidden", s.hidden.to_string()),
            ("mscm_squeeze", s.squeeze.to_string()),
            ("count_feature_dim", s.feature_dim.to_string()),
            ("channel_attention", s.channel_attention.to_string()),
            ("ccad_hidden", c.hidden.to_string()),
            ("ccad_embed_dim", c.embed_dim.to_string()),
            ("ccad_attention_dim", c.attention_dim.to_string()),
            ("coverage_kernel", c.coverage_kernel.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// The first 16 hex digits of the SHA-256 of [`TrainConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
