//! Plain-text `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are namespaced
//! by stage (`fit.*`, `enhance.*`, `dict.*`); `seed`, `threads` and
//! `preset` are global. Unknown keys are errors.

use std::path::Path;
use std::str::FromStr;

use crate::dict::DictConfig;
use crate::enhance::{EnhanceConfig, SmoothField};
use crate::error::{Error, Result};
use crate::raster::BlendMode;
use crate::recon::ReconConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Preset {
    /// Small budgets that finish in minutes.
    #[default]
    Desk,
    /// 70,000 primitives, 20,000 fit and 50,000 enhancement iterations.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset '{s}' (expected desk or paper)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub recon: ReconConfig,
    pub enhance: EnhanceConfig,
    pub dict: DictConfig,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(preset: Preset) -> Self {
        let (recon, enhance) = match preset {
            Preset::Desk => (ReconConfig::desk(), EnhanceConfig::desk()),
            Preset::Paper => (ReconConfig::default(), EnhanceConfig::default()),
        };
        RunConfig {
            recon,
            enhance,
            dict: DictConfig::default(),
            seed: 0,
            threads: None,
        }
    }

    /// Parses `text`; a `preset` key (if present) picks the base values
    /// before the other keys apply.
    pub fn parse(text: &str, preset: Option<Preset>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            pairs.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut base = preset;
        for (n, k, v) in &pairs {
            if k == "preset" && base.is_none() {
                base = Some(v.parse().map_err(|e| Error::Config(format!("line {n}: {e}")))?);
            }
        }
        let mut cfg = RunConfig::new(base.unwrap_or_default());
        for (n, k, v) in &pairs {
            if k == "preset" {
                continue;
            }
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {n}: {m}")),
                e => e,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, preset)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let r = &mut self.recon;
        let e = &mut self.enhance;
        let d = &mut self.dict;
        match key {
            "seed" => self.seed = num(key, value)?,
            "threads" => self.threads = Some(num(key, value)?),
            "fit.gaussians" => r.num_primitives = num(key, value)?,
            "fit.scales" => r.scales = num(key, value)?,
            "fit.iterations" => r.iterations = num(key, value)?,
            "fit.lr" => r.lr = num(key, value)?,
            "fit.lr_min_fraction" => r.lr_min_fraction = num(key, value)?,
            "fit.ssim_weight" => r.ssim_weight = num(key, value)?,
            "fit.split" => r.level_split = list(key, value)?,
            "fit.mode" => r.mode = mode(value)?,
            "enhance.iterations" => e.iterations = num(key, value)?,
            "enhance.lr" => e.lr = num(key, value)?,
            "enhance.lr_min_fraction" => e.lr_min_fraction = num(key, value)?,
            "enhance.e_target" => e.e_target = num(key, value)?,
            "enhance.blur_sigma" => e.blur_sigma = Some(num(key, value)?),
            "enhance.eps" => e.eps = num(key, value)?,
            "enhance.patch" => e.patch = num(key, value)?,
            "enhance.smooth" => e.smooth = value.parse::<SmoothField>()?,
            "enhance.mode" => e.mode = mode(value)?,
            "enhance.w_target" => e.weights.target = num(key, value)?,
            "enhance.w_spa" => e.weights.spa = num(key, value)?,
            "enhance.w_exp" => e.weights.exp = num(key, value)?,
            "enhance.w_sparse" => e.weights.sparse = num(key, value)?,
            "enhance.w_tv" => e.weights.tv = num(key, value)?,
            "enhance.w_cont" => e.weights.cont = num(key, value)?,
            "dict.k" => d.k = num(key, value)?,
            "dict.p" => d.order = num(key, value)?,
            "dict.targets" => d.targets = list(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Copies the global seed into every stage.
    pub fn sync_seed(&mut self) {
        self.recon.seed = self.seed;
        self.enhance.seed = self.seed;
        self.dict.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.recon.validate()?;
        self.enhance.validate()?;
        self.dict.validate()?;
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("'{value}' is not a valid value for {key}")))
}

pub(crate) fn list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn mode(value: &str) -> Result<BlendMode> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("unknown blend mode '{value}' (expected alpha or sum)")))
}
