//! Flat `key = value` run configuration.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Which sampled trajectory scores each metric under best-of-K.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Selection {
    /// ADE and FDE each take their own best draw.
    #[default]
    PerMetric,
    /// The min-ADE draw supplies both metrics.
    ByAde,
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerMetric => "per-metric",
            Self::ByAde => "by-ade",
        })
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-metric" => Ok(Self::PerMetric),
            "by-ade" => Ok(Self::ByAde),
            other => Err(Error::Config(format!("unknown selection {other:?}"))),
        }
    }
}

/// Training configuration plus evaluation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Number of sampled trajectories for best-of-K.
    pub k: usize,
    pub selection: Selection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            k: 20,
            selection: Selection::PerMetric,
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k" => {
                self.k = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("k = {value:?} is not a count")))?
            }
            "selection" => self.selection = value.parse()?,
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    /// Applies `key=value` overrides such as those given on a command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.as_ref().split_once('=').ok_or_else(|| {
                Error::Config(format!("override {:?} is not key=value", o.as_ref()))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        self.train.validate()
    }

    pub fn render(&self) -> String {
        format!(
            "{}k = {}\nselection = {}\n",
            self.train.render(),
            self.k,
            self.selection
        )
    }
}

/// Parses config text on top of the defaults. Blank lines and `#` comments
/// are skipped; unknown keys are errors.
pub fn parse_config(text: &str, origin: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        cfg.set(k.trim(), v.trim())
            .map_err(|e| err(e.to_string()))?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}
