//! Run configuration: model keys plus the run-level settings.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::adjoint::Truncation;
use crate::error::{Error, Result};
use crate::ssm::{KeyValues, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Gradcheck,
    Distcheck,
    Cost,
    Curves,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Gradcheck => "gradcheck",
            Mode::Distcheck => "distcheck",
            Mode::Cost => "cost",
            Mode::Curves => "curves",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Mode::Train),
            "gradcheck" => Ok(Mode::Gradcheck),
            "distcheck" => Ok(Mode::Distcheck),
            "cost" => Ok(Mode::Cost),
            "curves" => Ok(Mode::Curves),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Mse,
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

/// `on`/`off`, also accepting `true`/`false`.
pub fn parse_switch(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("expected on/off, got '{other}'"))),
    }
}

/// Keys accepted in a config file.
pub const KNOWN_KEYS: [&str; 19] = [
    "K", "N", "P", "V", "T", "bs", "seed", "variant", "head_activation", "h0", "Tbar", "upsilon", "workers", "lr", "steps",
    "loss", "mode", "deterministic", "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// `None` keeps every state.
    pub tbar: Option<usize>,
    pub upsilon: usize,
    pub workers: usize,
    pub loss: LossKind,
    pub lr: f64,
    pub steps: usize,
    pub mode: Mode,
    pub deterministic: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            tbar: None,
            upsilon: 1,
            workers: 1,
            loss: LossKind::CrossEntropy,
            lr: 0.2,
            steps: 200,
            mode: Mode::Train,
            deterministic: true,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Overlays model and run keys from a config file.
    pub fn apply(mut self, kv: &KeyValues) -> Result<Self> {
        if let Some(key) = kv.0.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        self.model = self.model.apply(kv)?;
        if let Some(v) = kv.parsed("Tbar")? {
            self.tbar = Some(v);
        }
        if let Some(v) = kv.parsed("upsilon")? {
            self.upsilon = v;
        }
        if let Some(v) = kv.parsed("workers")? {
            self.workers = v;
        }
        if let Some(v) = kv.parsed("lr")? {
            self.lr = v;
        }
        if let Some(v) = kv.parsed("steps")? {
            self.steps = v;
        }
        if let Some(v) = kv.get("loss") {
            self.loss = v.parse()?;
        }
        if let Some(v) = kv.get("mode") {
            self.mode = v.parse()?;
        }
        if let Some(v) = kv.get("deterministic") {
            self.deterministic = parse_switch(v)?;
        }
        if let Some(v) = kv.get("out") {
            self.out = PathBuf::from(v);
        }
        Ok(self)
    }

    pub fn truncation(&self) -> Truncation {
        self.tbar.map_or(Truncation::Full, Truncation::Window)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.dims.validate()?;
        if self.tbar == Some(0) {
            return Err(Error::Config("Tbar must be at least 1".into()));
        }
        if self.upsilon == 0 || self.workers == 0 {
            return Err(Error::Config("upsilon and workers must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_keys_overlay_defaults() {
        let kv = KeyValues::parse("K = 4\nTbar = 3\nupsilon = 2\nmode = distcheck\ndeterministic = off\nloss = mse\nlr = 0.1\n").unwrap();
        let cfg = RunConfig::default().apply(&kv).unwrap();
        assert_eq!(cfg.model.dims.k, 4);
        assert_eq!(cfg.truncation(), Truncation::Window(3));
        assert_eq!((cfg.upsilon, cfg.mode, cfg.deterministic, cfg.loss), (2, Mode::Distcheck, false, LossKind::Mse));
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        assert!("sideways".parse::<Mode>().is_err());
        assert!(parse_switch("maybe").is_err());
        let kv = KeyValues::parse("activation = tanh").unwrap();
        assert!(RunConfig::default().apply(&kv).is_err());
        let cfg = RunConfig { tbar: Some(0), ..RunConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
