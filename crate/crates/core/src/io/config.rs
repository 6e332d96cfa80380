use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::meshing::MiseConfig;
use crate::network::{InitMode, NetConfig};
use crate::pipeline::{OptMode, PretrainConfig, SAOptConfig};

/// Every setting of a run, read from flat `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: NetConfig,
    pub init: InitMode,
    pub pretrain: PretrainConfig,
    pub sa: SAOptConfig,
    pub mise: MiseConfig,
    pub tau: f64,
    pub eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            init: InitMode::Random { seed: 0 },
            pretrain: PretrainConfig::default(),
            sa: SAOptConfig::default(),
            mise: MiseConfig::default(),
            tau: crate::eval::DEFAULT_TAU,
            eval_samples: 10_000,
        }
    }
}

/// Recognized keys, in documentation order.
pub const KEYS: &[&str] = &[
    "net.grid_res",
    "net.feature_dim",
    "net.encoder_hidden",
    "net.pointnet_blocks",
    "net.unet_depth",
    "net.decoder_blocks",
    "net.decoder_hidden",
    "init.mode",
    "init.seed",
    "init.radius",
    "pretrain.batch_size",
    "pretrain.lr",
    "pretrain.iterations",
    "pretrain.queries_per_shape",
    "pretrain.surface_points_per_shape",
    "pretrain.noise_sigma",
    "pretrain.seed",
    "sa.iterations",
    "sa.batch",
    "sa.lr0",
    "sa.decay",
    "sa.decay_every",
    "sa.n_surface",
    "sa.n_nonsurface",
    "sa.mode",
    "sa.sum_loss",
    "sa.seed",
    "mise.initial_res",
    "mise.final_res",
    "mise.iso",
    "eval.tau",
    "eval.samples",
];

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: `{key}` cannot take the value `{value}`")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses `key = value` lines (`#` starts a comment), starting from the
    /// defaults, then validates everything.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut init_mode = "random".to_string();
        let mut init_seed = 0u64;
        let mut init_radius = 0.3f64;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {n}: expected `key = value`")))?;
            match key {
                "net.grid_res" => c.net.grid_res = parse(key, value, n)?,
                "net.feature_dim" => c.net.feature_dim = parse(key, value, n)?,
                "net.encoder_hidden" => c.net.encoder_hidden = parse(key, value, n)?,
                "net.pointnet_blocks" => c.net.pointnet_blocks = parse(key, value, n)?,
                "net.unet_depth" => c.net.unet_depth = parse(key, value, n)?,
                "net.decoder_blocks" => c.net.decoder_blocks = parse(key, value, n)?,
                "net.decoder_hidden" => c.net.decoder_hidden = parse(key, value, n)?,
                "init.mode" => init_mode = value.to_string(),
                "init.seed" => init_seed = parse(key, value, n)?,
                "init.radius" => init_radius = parse(key, value, n)?,
                "pretrain.batch_size" => c.pretrain.batch_size = parse(key, value, n)?,
                "pretrain.lr" => c.pretrain.lr = parse(key, value, n)?,
                "pretrain.iterations" => c.pretrain.iterations = parse(key, value, n)?,
                "pretrain.queries_per_shape" => c.pretrain.queries_per_shape = parse(key, value, n)?,
                "pretrain.surface_points_per_shape" => c.pretrain.surface_points_per_shape = parse(key, value, n)?,
                "pretrain.noise_sigma" => c.pretrain.noise_sigma = parse(key, value, n)?,
                "pretrain.seed" => c.pretrain.seed = parse(key, value, n)?,
                "sa.iterations" => c.sa.iterations = parse(key, value, n)?,
                "sa.batch" => c.sa.batch = parse(key, value, n)?,
                "sa.lr0" => c.sa.lr0 = parse(key, value, n)?,
                "sa.decay" => c.sa.decay = parse(key, value, n)?,
                "sa.decay_every" => c.sa.decay_every = parse(key, value, n)?,
                "sa.n_surface" => c.sa.n_surface = parse(key, value, n)?,
                "sa.n_nonsurface" => c.sa.n_nonsurface = parse(key, value, n)?,
                "sa.mode" => {
                    c.sa.mode = match value {
                        "full" => OptMode::Full,
                        "encoder_only" | "encoder-only" => OptMode::EncoderOnly,
                        _ => return Err(Error::Config(format!("line {n}: sa.mode must be full or encoder_only"))),
                    }
                }
                "sa.sum_loss" => c.sa.sum_loss = parse(key, value, n)?,
                "sa.seed" => c.sa.seed = parse(key, value, n)?,
                "mise.initial_res" => c.mise.initial_res = parse(key, value, n)?,
                "mise.final_res" => c.mise.final_res = parse(key, value, n)?,
                "mise.iso" => c.mise.iso = parse(key, value, n)?,
                "eval.tau" => c.tau = parse(key, value, n)?,
                "eval.samples" => c.eval_samples = parse(key, value, n)?,
                _ => return Err(Error::Config(format!("line {n}: unknown key `{key}`"))),
            }
        }
        c.init = match init_mode.as_str() {
            "random" => InitMode::Random { seed: init_seed },
            "geometric" => InitMode::Geometric { radius: init_radius },
            other => return Err(Error::Config(format!("init.mode must be random or geometric, got `{other}`"))),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.pretrain.validate()?;
        self.sa.validate()?;
        self.mise.validate()?;
        if let InitMode::Geometric { radius } = self.init {
            if !(radius > 0.0 && radius < 0.5) {
                return Err(Error::Config(format!("init.radius must lie in (0, 0.5), got {radius}")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("eval.tau must be positive, got {}", self.tau)));
        }
        if self.eval_samples == 0 {
            return Err(Error::Config("eval.samples must be at least 1".into()));
        }
        Ok(())
    }

    /// The configuration as `key = value` text that parses back to itself.
    pub fn to_text(&self) -> String {
        let n = &self.net;
        let p = &self.pretrain;
        let s = &self.sa;
        let (mode, seed, radius) = match self.init {
            InitMode::Random { seed } => ("random", seed, 0.3),
            InitMode::Geometric { radius } => ("geometric", 0, radius),
        };
        let sa_mode = match s.mode {
            OptMode::Full => "full",
            OptMode::EncoderOnly => "encoder_only",
        };
        let values: Vec<String> = vec![
            n.grid_res.to_string(),
            n.feature_dim.to_string(),
            n.encoder_hidden.to_string(),
            n.pointnet_blocks.to_string(),
            n.unet_depth.to_string(),
            n.decoder_blocks.to_string(),
            n.decoder_hidden.to_string(),
            mode.to_string(),
            seed.to_string(),
            radius.to_string(),
            p.batch_size.to_string(),
            p.lr.to_string(),
            p.iterations.to_string(),
            p.queries_per_shape.to_string(),
            p.surface_points_per_shape.to_string(),
            p.noise_sigma.to_string(),
            p.seed.to_string(),
            s.iterations.to_string(),
            s.batch.to_string(),
            s.lr0.to_string(),
            s.decay.to_string(),
            s.decay_every.to_string(),
            s.n_surface.to_string(),
            s.n_nonsurface.to_string(),
            sa_mode.to_string(),
            s.sum_loss.to_string(),
            s.seed.to_string(),
            self.mise.initial_res.to_string(),
            self.mise.final_res.to_string(),
            self.mise.iso.to_string(),
            self.tau.to_string(),
            self.eval_samples.to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
