use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{BackboneKind, Direction, GeneratorConfig, PATCH_STRIDE};

/// Every key accepted by [`TrainConfig::parse`].
pub const CONFIG_KEYS: &[&str] = &[
    "batch_size",
    "learning_rate",
    "epochs",
    "seed",
    "res_a",
    "res_b",
    "superres_factor",
    "base_channels",
    "use_superres_head",
    "fusion_enabled",
    "w_gan",
    "w_cyc",
    "w_id",
    "w_ssim",
    "w_perc",
    "lambda_dssim",
    "replay_capacity",
    "checkpoint_every",
    "disc_width",
    "train_backbone",
    "train_backbone_stage",
    "train_backbone_weights",
    "eval_backbone",
    "eval_backbone_stage",
    "eval_backbone_weights",
    "rgb_dropout_p",
    "log_wall_time",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub betas: (f64, f64),
    pub seed: u64,
    /// Domain-A training resolution as (height, width).
    pub res_a: (usize, usize),
    /// Domain-B training resolution as (height, width).
    pub res_b: (usize, usize),
    pub superres_factor: usize,
    pub base_channels: usize,
    pub use_superres_head: bool,
    pub fusion_enabled: bool,
    pub weights: LossWeights,
    pub replay_capacity: usize,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub disc_width: usize,
    pub train_backbone: BackboneKind,
    pub train_backbone_stage: String,
    pub train_backbone_weights: Option<PathBuf>,
    pub eval_backbone: BackboneKind,
    pub eval_backbone_stage: String,
    pub eval_backbone_weights: Option<PathBuf>,
    pub rgb_dropout_p: f64,
    /// When false, metrics records carry `null` wall times so that runs are
    /// byte-reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 2e-4,
            epochs: 50,
            betas: (0.5, 0.999),
            seed: 0,
            res_a: (128, 160),
            res_b: (256, 320),
            superres_factor: 2,
            base_channels: 32,
            use_superres_head: true,
            fusion_enabled: true,
            weights: LossWeights::default(),
            replay_capacity: 50,
            checkpoint_every: 1000,
            disc_width: 64,
            train_backbone: BackboneKind::ResNet18,
            train_backbone_stage: "layer2".into(),
            train_backbone_weights: None,
            eval_backbone: BackboneKind::Vgg19,
            eval_backbone_stage: "relu4_4".into(),
            eval_backbone_weights: None,
            rgb_dropout_p: 0.2,
            log_wall_time: true,
        }
    }
}

/// Parses `HxW` (also accepts `×`).
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("resolution '{s}' is not of the form HxW"));
    let (h, w) = s.trim().split_once(['x', 'X', '×']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

fn parse_value<V: FromStr>(key: &str, raw: &str) -> Result<V> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value '{raw}' for key '{key}'")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{raw}' for key '{key}'"))),
    }
}

fn parse_path(raw: &str) -> Option<PathBuf> {
    match raw {
        "" | "none" => None,
        p => Some(PathBuf::from(p)),
    }
}

impl TrainConfig {
    /// Parses flat `key = value` lines. `#` starts a comment; blank lines are
    /// ignored; missing keys keep their defaults; unknown or repeated keys
    /// are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let (key, raw) = (key.trim(), raw.trim());
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown config key '{key}' on line {}", lineno + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("config key '{key}' given twice")));
            }
            cfg.set(key, raw)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let w = &mut self.weights;
        match key {
            "batch_size" => self.batch_size = parse_value(key, raw)?,
            "learning_rate" => self.learning_rate = parse_value(key, raw)?,
            "epochs" => self.epochs = parse_value(key, raw)?,
            "seed" => self.seed = parse_value(key, raw)?,
            "res_a" => self.res_a = parse_resolution(raw)?,
            "res_b" => self.res_b = parse_resolution(raw)?,
            "superres_factor" => self.superres_factor = parse_value(key, raw)?,
            "base_channels" => self.base_channels = parse_value(key, raw)?,
            "use_superres_head" => self.use_superres_head = parse_bool(key, raw)?,
            "fusion_enabled" => self.fusion_enabled = parse_bool(key, raw)?,
            "w_gan" => w.w_gan = parse_value(key, raw)?,
            "w_cyc" => w.w_cyc = parse_value(key, raw)?,
            "w_id" => w.w_id = parse_value(key, raw)?,
            "w_ssim" => w.w_ssim = parse_value(key, raw)?,
            "w_perc" => w.w_perc = parse_value(key, raw)?,
            "lambda_dssim" => w.lambda_dssim = parse_value(key, raw)?,
            "replay_capacity" => self.replay_capacity = parse_value(key, raw)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, raw)?,
            "disc_width" => self.disc_width = parse_value(key, raw)?,
            "train_backbone" => self.train_backbone = raw.parse()?,
            "train_backbone_stage" => self.train_backbone_stage = raw.to_string(),
            "train_backbone_weights" => self.train_backbone_weights = parse_path(raw),
            "eval_backbone" => self.eval_backbone = raw.parse()?,
            "eval_backbone_stage" => self.eval_backbone_stage = raw.to_string(),
            "eval_backbone_weights" => self.eval_backbone_weights = parse_path(raw),
            "rgb_dropout_p" => self.rgb_dropout_p = parse_value(key, raw)?,
            "log_wall_time" => self.log_wall_time = parse_bool(key, raw)?,
            _ => unreachable!("key list checked by caller"),
        }
        Ok(())
    }

    /// Serialises every key, in [`CONFIG_KEYS`] order. Parsing the result
    /// yields an equal config.
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let mut s = String::new();
        for key in CONFIG_KEYS {
            let v = match *key {
                "batch_size" => self.batch_size.to_string(),
                "learning_rate" => self.learning_rate.to_string(),
                "epochs" => self.epochs.to_string(),
                "seed" => self.seed.to_string(),
                "res_a" => format!("{}x{}", self.res_a.0, self.res_a.1),
                "res_b" => format!("{}x{}", self.res_b.0, self.res_b.1),
                "superres_factor" => self.superres_factor.to_string(),
                "base_channels" => self.base_channels.to_string(),
                "use_superres_head" => self.use_superres_head.to_string(),
                "fusion_enabled" => self.fusion_enabled.to_string(),
                "w_gan" => w.w_gan.to_string(),
                "w_cyc" => w.w_cyc.to_string(),
                "w_id" => w.w_id.to_string(),
                "w_ssim" => w.w_ssim.to_string(),
                "w_perc" => w.w_perc.to_string(),
                "lambda_dssim" => w.lambda_dssim.to_string(),
                "replay_capacity" => self.replay_capacity.to_string(),
                "checkpoint_every" => self.checkpoint_every.to_string(),
                "disc_width" => self.disc_width.to_string(),
                "train_backbone" => self.train_backbone.to_string(),
                "train_backbone_stage" => self.train_backbone_stage.clone(),
                "train_backbone_weights" => path(&self.train_backbone_weights),
                "eval_backbone" => self.eval_backbone.to_string(),
                "eval_backbone_stage" => self.eval_backbone_stage.clone(),
                "eval_backbone_weights" => path(&self.eval_backbone_weights),
                "rgb_dropout_p" => self.rgb_dropout_p.to_string(),
                "log_wall_time" => self.log_wall_time.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{key} = {v}");
        }
        s
    }

    pub fn generator_config(&self, direction: Direction) -> GeneratorConfig {
        GeneratorConfig {
            levels: 3,
            base_channels: self.base_channels,
            use_superres_head: self.use_superres_head,
            superres_factor: self.superres_factor,
            fusion_enabled: self.fusion_enabled,
            direction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return fail(format!("adam betas ({b1}, {b2}) must lie in [0, 1)"));
        }
        if self.disc_width == 0 {
            return fail("disc_width must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.rgb_dropout_p) {
            return fail(format!("rgb_dropout_p must lie in [0, 1], got {}", self.rgb_dropout_p));
        }
        self.weights.validate()?;
        self.generator_config(Direction::AB).validate()?;
        let r = self.superres_factor;
        let ((ha, wa), (hb, wb)) = (self.res_a, self.res_b);
        if (hb, wb) != (ha * r, wa * r) {
            return fail(format!(
                "res_b {hb}x{wb} must equal res_a {ha}x{wa} times superres_factor {r}"
            ));
        }
        let m = 4 * r;
        if ha % m != 0 || wa % m != 0 {
            return fail(format!("res_a {ha}x{wa} must be a multiple of {m}"));
        }
        if ha.min(wa) < PATCH_STRIDE {
            return fail(format!("res_a {ha}x{wa} is below the {PATCH_STRIDE}x{PATCH_STRIDE} minimum"));
        }
        for (kind, stage) in [
            (self.train_backbone, &self.train_backbone_stage),
            (self.eval_backbone, &self.eval_backbone_stage),
        ] {
            let s = kind.stride(stage)?;
            if ha.min(wa) < s {
                return fail(format!("res_a {ha}x{wa} is smaller than the {kind} {stage} stride {s}"));
            }
        }
        Ok(())
    }
}
