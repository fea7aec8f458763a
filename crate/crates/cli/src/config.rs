//! `key = value` run configuration.
//!
//! ```text
//! # comment
//! variant = coop
//! episodes = 2000
//! hidden = 32,32
//! seeds = 1,2,3
//! ```
//!
//! Command-line overrides go through the same [`RunConfig::set`] path, so
//! the accepted keys and value syntax are identical in both places.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use coop_rl::{AgentConfig, ObsMode, PixelConfig};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error(transparent)]
    Invalid(#[from] coop_rl::AgentError),
}

/// Every accepted key, in the order used for the canonical rendering.
pub const KEYS: &[&str] = &[
    "variant",
    "episodes",
    "gamma",
    "alpha",
    "alpha_decay",
    "alpha_min",
    "sync_period",
    "buffer_size",
    "batch_size",
    "s0",
    "s_decay",
    "c",
    "epsilon",
    "epsilon_decay",
    "epsilon_min",
    "hidden",
    "activation",
    "optimizer",
    "enforce_descent",
    "weight_bound",
    "probe_count",
    "obs",
    "pixel_height",
    "pixel_width",
    "wall_clock",
    "seeds",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Agent settings; `agent.seed` is replaced per run by each entry of `seeds`.
    pub agent: AgentConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pixel_height: usize,
    pixel_width: usize,
    pixels: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let px = PixelConfig::default();
        Self {
            agent: AgentConfig::default(),
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
            pixel_height: px.height,
            pixel_width: px.width,
            pixels: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str_config(&text)
    }

    pub fn from_str_config(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                text: raw.trim().to_string(),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Applies `key=value`, e.g. from a `--set` flag.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: pair.to_string(),
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let a = &mut self.agent;
        match key {
            "variant" => a.variant = parse(key, value)?,
            "episodes" => a.episodes = parse(key, value)?,
            "gamma" => a.gamma = parse(key, value)?,
            "alpha" => a.alpha = parse(key, value)?,
            "alpha_decay" => a.alpha_decay = parse(key, value)?,
            "alpha_min" => a.alpha_min = parse(key, value)?,
            "sync_period" | "C" => a.sync_period = parse(key, value)?,
            "buffer_size" => a.buffer_capacity = parse(key, value)?,
            "batch_size" => a.batch_size = parse(key, value)?,
            "s0" | "exploration_rate" => a.s0 = parse(key, value)?,
            "s_decay" => a.s_decay = parse(key, value)?,
            "c" => a.c = parse(key, value)?,
            "epsilon" => a.epsilon = parse(key, value)?,
            "epsilon_decay" => a.epsilon_decay = parse(key, value)?,
            "epsilon_min" => a.epsilon_min = parse(key, value)?,
            "hidden" => a.hidden = parse_list(key, value)?,
            "activation" => a.activation = parse(key, value)?,
            "optimizer" => a.optimizer = parse(key, value)?,
            "enforce_descent" => a.enforce_descent = parse(key, value)?,
            "weight_bound" => a.weight_bound = parse(key, value)?,
            "probe_count" => a.probe_count = parse(key, value)?,
            "wall_clock" => a.wall_clock = parse(key, value)?,
            "obs" => {
                self.pixels = match value {
                    "state" => false,
                    "pixels" => true,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected `state` or `pixels`".into(),
                        })
                    }
                }
            }
            "pixel_height" => self.pixel_height = parse(key, value)?,
            "pixel_width" => self.pixel_width = parse(key, value)?,
            "seeds" | "seed" => {
                let seeds: Vec<u64> = parse_list(key, value)?;
                if seeds.is_empty() {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: value.into(),
                        reason: "at least one seed is required".into(),
                    });
                }
                self.seeds = seeds;
            }
            "out" => self.out_dir = PathBuf::from(value),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        self.sync_obs_mode();
        Ok(())
    }

    fn sync_obs_mode(&mut self) {
        self.agent.obs_mode = if self.pixels {
            ObsMode::Pixels(PixelConfig {
                height: self.pixel_height,
                width: self.pixel_width,
                // keep the track spanning the full frame width
                scale: self.pixel_width as f64 / (2.0 * coop_rl::env::X_LIMIT),
            })
        } else {
            ObsMode::State
        };
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.agent.validate()?;
        Ok(())
    }

    /// Agent configuration for one seed.
    pub fn agent_for(&self, seed: u64) -> AgentConfig {
        AgentConfig {
            seed,
            ..self.agent.clone()
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let a = &self.agent;
        Some(match key {
            "variant" => a.variant.to_string(),
            "episodes" => a.episodes.to_string(),
            "gamma" => a.gamma.to_string(),
            "alpha" => a.alpha.to_string(),
            "alpha_decay" => a.alpha_decay.to_string(),
            "alpha_min" => a.alpha_min.to_string(),
            "sync_period" => a.sync_period.to_string(),
            "buffer_size" => a.buffer_capacity.to_string(),
            "batch_size" => a.batch_size.to_string(),
            "s0" => a.s0.to_string(),
            "s_decay" => a.s_decay.to_string(),
            "c" => a.c.to_string(),
            "epsilon" => a.epsilon.to_string(),
            "epsilon_decay" => a.epsilon_decay.to_string(),
            "epsilon_min" => a.epsilon_min.to_string(),
            "hidden" => join(&a.hidden),
            "activation" => a.activation.to_string(),
            "optimizer" => a.optimizer.to_string(),
            "enforce_descent" => a.enforce_descent.to_string(),
            "weight_bound" => a.weight_bound.to_string(),
            "probe_count" => a.probe_count.to_string(),
            "obs" => if self.pixels { "pixels" } else { "state" }.to_string(),
            "pixel_height" => self.pixel_height.to_string(),
            "pixel_width" => self.pixel_width.to_string(),
            "wall_clock" => a.wall_clock.to_string(),
            "seeds" => join(&self.seeds),
            "out" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Fully resolved configuration, one `key = value` per line. Parsing it
    /// back yields the same configuration.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    /// SHA-256 of everything that influences a run with `seed`. The output
    /// directory and the seed list are excluded.
    pub fn hash_for(&self, seed: u64) -> String {
        let mut h = Sha256::new();
        for key in KEYS.iter().filter(|k| !matches!(**k, "seeds" | "out")) {
            h.update(format!("{key} = {}\n", self.get(key).expect("listed key")));
        }
        h.update(format!("seed = {seed}\n"));
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}
