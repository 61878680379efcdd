//! Flat `key = value` pipeline configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 7
//! codec.codebook_size = 512
//! codec.channels = 64,64
//! lm.top_k = 0        # 0 disables top-k
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::fixer::FixerStrategy;
use crate::lm::LmConfig;
use crate::svg::PreprocessConfig;
use crate::vq::CodecConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}")]
    BadValue { key: String, value: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

/// Every key with a one-line description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for codec training, language model training and sampling"),
    ("corpus", "default corpus directory for train-vq"),
    ("tokens", "default token directory for train-lm"),
    ("fixer", "repair strategy after decoding: none, pc or pi"),
    ("metrics.res", "raster resolution for pixel IoU"),
    ("metrics.stroke_px", "stroke width in pixels for pixel IoU"),
    ("preprocess.max_commands", "reject graphics with more basic commands"),
    ("preprocess.min_commands", "reject graphics with fewer basic commands"),
    ("preprocess.min_keywords", "reject graphics with fewer keywords"),
    ("preprocess.box_cover_fraction", "area fraction above which a rectangle counts as a frame"),
    ("preprocess.dedup_grid", "duplicate-detection grid as a fraction of the extent"),
    ("codec.compression_stages", "stride-2 stages; the rate is 2^stages"),
    ("codec.rvq_depth", "residual quantizer levels"),
    ("codec.codebook_size", "entries per level"),
    ("codec.code_dim", "latent dimension"),
    ("codec.channels", "comma-separated hidden widths per stage"),
    ("codec.alpha", "weight of the two quantizer terms"),
    ("codec.lr", "Adam step size"),
    ("codec.lr_decay", "cosine-anneal the step size to 1% over max_steps"),
    ("codec.batch_size", "graphics per step"),
    ("codec.max_steps", "optimizer steps"),
    ("codec.target_recon", "stop early below this epoch reconstruction loss, or none"),
    ("codec.kmeans_iters", "Lloyd iterations for codebook initialization"),
    ("codec.conventional_roles", "report quantizer terms under conventional names"),
    ("lm.embed_dim", "model width"),
    ("lm.layers", "transformer blocks"),
    ("lm.heads", "attention heads"),
    ("lm.max_len", "stroke-side length limit including BOS and EOS"),
    ("lm.lr", "Adam step size"),
    ("lm.batch_size", "sequences per step"),
    ("lm.max_steps", "optimizer steps"),
    ("lm.target_ce", "stop early below this epoch cross-entropy, or none"),
    ("lm.temperature", "sampling temperature; 0 is greedy"),
    ("lm.top_k", "sample among the k most likely ids; 0 disables"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: String,
    pub tokens: String,
    pub fixer: FixerStrategy,
    pub iou_res: usize,
    pub iou_stroke_px: usize,
    pub preprocess: PreprocessConfig,
    pub codec: CodecConfig,
    pub lm: LmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: String::new(),
            tokens: String::new(),
            fixer: FixerStrategy::Pi,
            iou_res: 128,
            iou_stroke_px: 1,
            preprocess: PreprocessConfig::default(),
            codec: CodecConfig::default(),
            lm: LmConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
    })
}

fn parse_opt(key: &str, value: &str) -> Result<Option<f64>, ConfigError> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn opt_text(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_owned(), |x| x.to_string())
}

impl PipelineConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let p = &mut self.preprocess;
        let c = &mut self.codec;
        let l = &mut self.lm;
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                c.seed = self.seed;
                l.seed = self.seed;
            }
            "corpus" => self.corpus = v.to_owned(),
            "tokens" => self.tokens = v.to_owned(),
            "fixer" => self.fixer = parse(key, v)?,
            "metrics.res" => self.iou_res = parse(key, v)?,
            "metrics.stroke_px" => self.iou_stroke_px = parse(key, v)?,
            "preprocess.max_commands" => p.max_commands = parse(key, v)?,
            "preprocess.min_commands" => p.min_commands = parse(key, v)?,
            "preprocess.min_keywords" => p.min_keywords = parse(key, v)?,
            "preprocess.box_cover_fraction" => p.box_cover_fraction = parse(key, v)?,
            "preprocess.dedup_grid" => p.dedup_grid = parse(key, v)?,
            "codec.compression_stages" => c.compression_stages = parse(key, v)?,
            "codec.rvq_depth" => c.rvq_depth = parse(key, v)?,
            "codec.codebook_size" => c.codebook_size = parse(key, v)?,
            "codec.code_dim" => c.code_dim = parse(key, v)?,
            "codec.channels" => {
                c.channels = v.split(',').map(|x| parse(key, x.trim())).collect::<Result<_, _>>()?;
            }
            "codec.alpha" => c.alpha = parse(key, v)?,
            "codec.lr" => c.lr = parse(key, v)?,
            "codec.lr_decay" => c.lr_decay = parse(key, v)?,
            "codec.batch_size" => c.batch_size = parse(key, v)?,
            "codec.max_steps" => c.max_steps = parse(key, v)?,
            "codec.target_recon" => c.target_recon = parse_opt(key, v)?,
            "codec.kmeans_iters" => c.kmeans_iters = parse(key, v)?,
            "codec.conventional_roles" => c.conventional_roles = parse(key, v)?,
            "lm.embed_dim" => l.embed_dim = parse(key, v)?,
            "lm.layers" => l.layers = parse(key, v)?,
            "lm.heads" => l.heads = parse(key, v)?,
            "lm.max_len" => l.max_len = parse(key, v)?,
            "lm.lr" => l.lr = parse(key, v)?,
            "lm.batch_size" => l.batch_size = parse(key, v)?,
            "lm.max_steps" => l.max_steps = parse(key, v)?,
            "lm.target_ce" => l.target_ce = parse_opt(key, v)?,
            "lm.temperature" => l.sampling.temperature = parse(key, v)?,
            "lm.top_k" => {
                let k: usize = parse(key, v)?;
                l.sampling.top_k = (k > 0).then_some(k);
            }
            _ => return Err(ConfigError::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (p, c, l) = (&self.preprocess, &self.codec, &self.lm);
        let channels: Vec<String> = c.channels.iter().map(ToString::to_string).collect();
        Some(match key {
            "seed" => self.seed.to_string(),
            "corpus" => self.corpus.clone(),
            "tokens" => self.tokens.clone(),
            "fixer" => self.fixer.to_string(),
            "metrics.res" => self.iou_res.to_string(),
            "metrics.stroke_px" => self.iou_stroke_px.to_string(),
            "preprocess.max_commands" => p.max_commands.to_string(),
            "preprocess.min_commands" => p.min_commands.to_string(),
            "preprocess.min_keywords" => p.min_keywords.to_string(),
            "preprocess.box_cover_fraction" => p.box_cover_fraction.to_string(),
            "preprocess.dedup_grid" => p.dedup_grid.to_string(),
            "codec.compression_stages" => c.compression_stages.to_string(),
            "codec.rvq_depth" => c.rvq_depth.to_string(),
            "codec.codebook_size" => c.codebook_size.to_string(),
            "codec.code_dim" => c.code_dim.to_string(),
            "codec.channels" => channels.join(","),
            "codec.alpha" => c.alpha.to_string(),
            "codec.lr" => c.lr.to_string(),
            "codec.lr_decay" => c.lr_decay.to_string(),
            "codec.batch_size" => c.batch_size.to_string(),
            "codec.max_steps" => c.max_steps.to_string(),
            "codec.target_recon" => opt_text(c.target_recon),
            "codec.kmeans_iters" => c.kmeans_iters.to_string(),
            "codec.conventional_roles" => c.conventional_roles.to_string(),
            "lm.embed_dim" => l.embed_dim.to_string(),
            "lm.layers" => l.layers.to_string(),
            "lm.heads" => l.heads.to_string(),
            "lm.max_len" => l.max_len.to_string(),
            "lm.lr" => l.lr.to_string(),
            "lm.batch_size" => l.batch_size.to_string(),
            "lm.max_steps" => l.max_steps.to_string(),
            "lm.target_ce" => opt_text(l.target_ce),
            "lm.temperature" => l.sampling.temperature.to_string(),
            "lm.top_k" => l.sampling.top_k.unwrap_or(0).to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value and description.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, doc) in KEYS {
            let _ = writeln!(out, "# {doc}");
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("listed key"));
        }
        out
    }
}
