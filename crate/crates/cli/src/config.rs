//! Run configuration: a flat `key = value` file overridden by flags.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment            (also: blank lines)
//! key = value          (whitespace around key and value is ignored)
//! ```
//!
//! Keys may appear at most once. Unknown keys are rejected.
//!
//! | key                  | value                                  | default      |
//! |----------------------|----------------------------------------|--------------|
//! | `classes`            | comma-separated class names            | from dataset |
//! | `a`                  | pooling divisor, `>= 1`                | 8            |
//! | `entropy_threshold`  | nats `> 0`, or `auto` (half of `ln C`) | auto         |
//! | `conf_threshold`     | `(0, 1)`                               | 0.7          |
//! | `nms_threshold`      | `(0, 1)`                               | 0.5          |
//! | `nms_mode`           | `class-wise` or `class-agnostic`       | class-wise   |
//! | `seed`               | unsigned integer                       | 0            |
//! | `epochs`             | unsigned integer                       | 100          |
//! | `lr`                 | `> 0`                                  | 0.001        |
//! | `batch_size`         | `>= 1`                                 | 64           |
//! | `lambda1`, `lambda2` | `>= 0`, not both zero                  | 1, 0.15      |
//! | `hidden`             | comma-separated widths, or empty       | 512,256,128  |
//! | `holdout_fraction`   | `[0, 0.5)`                             | 0.1          |
//! | `patience`           | epochs, or `none`                      | 15           |
//! | `checkpoint_every`   | epochs, 0 disables                     | 0            |
//! | `include_background` | `true` or `false`                      | true         |
//! | `threads`            | `>= 1`                                 | 1            |
//! | `dataset`, `out`     | paths                                  | unset        |
//!
//! Paths and `threads` do not enter the config hash.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use maskhead::infer::{InferConfig, NmsMode};
use maskhead::trainer::TrainConfig;
use sha2::{Digest, Sha256};

use crate::{CliError, Overrides};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub classes: Option<Vec<String>>,
    pub include_background: bool,
    pub threads: usize,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            infer: InferConfig::default(),
            classes: None,
            include_background: true,
            threads: 1,
            dataset: None,
            out: None,
        }
    }
}

fn bad(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {key} = {value:?}"))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_hidden(value: &str) -> Result<Vec<usize>, String> {
    list(value).iter().map(|w| num("hidden", w)).collect()
}

fn parse_nms_mode(value: &str) -> Result<NmsMode, String> {
    match value {
        "class-wise" => Ok(NmsMode::ClassWise),
        "class-agnostic" => Ok(NmsMode::ClassAgnostic),
        _ => Err(format!("nms_mode must be class-wise or class-agnostic, got {value:?}")),
    }
}

fn nms_mode_name(mode: NmsMode) -> &'static str {
    match mode {
        NmsMode::ClassWise => "class-wise",
        NmsMode::ClassAgnostic => "class-agnostic",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| bad(line, format!("expected `key = value`, got {trimmed:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(bad(line, format!("duplicate key {key:?}")));
            }
            cfg.set(key, value).map_err(|m| bad(line, m))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "classes" => self.classes = Some(list(value)),
            "a" => t.a = num(key, value)?,
            "entropy_threshold" => t.entropy_threshold = if value == "auto" { None } else { Some(num(key, value)?) },
            "conf_threshold" => self.infer.conf_threshold = num(key, value)?,
            "nms_threshold" => self.infer.nms_threshold = num(key, value)?,
            "nms_mode" => self.infer.nms_mode = parse_nms_mode(value)?,
            "seed" => t.seed = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "lambda1" => t.lambda1 = num(key, value)?,
            "lambda2" => t.lambda2 = num(key, value)?,
            "hidden" => t.hidden = parse_hidden(value)?,
            "holdout_fraction" => t.holdout_fraction = num(key, value)?,
            "patience" => t.patience = if value == "none" { None } else { Some(num(key, value)?) },
            "checkpoint_every" => t.checkpoint_every = num(key, value)?,
            "include_background" => self.include_background = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Config file (if any), then flags on top.
    pub fn resolve(flags: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(flags)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, f: &Overrides) -> Result<(), CliError> {
        let t = &mut self.train;
        if let Some(v) = &f.classes {
            self.classes = Some(list(v));
        }
        if let Some(v) = f.a {
            t.a = v;
        }
        if let Some(v) = &f.entropy_threshold {
            self.set("entropy_threshold", v).map_err(CliError::Config)?;
        }
        let t = &mut self.train;
        if let Some(v) = f.seed {
            t.seed = v;
        }
        if let Some(v) = f.epochs {
            t.epochs = v;
        }
        if let Some(v) = f.lr {
            t.lr = v;
        }
        if let Some(v) = f.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = f.lambda1 {
            t.lambda1 = v;
        }
        if let Some(v) = f.lambda2 {
            t.lambda2 = v;
        }
        if let Some(v) = &f.hidden {
            t.hidden = parse_hidden(v).map_err(CliError::Config)?;
        }
        if let Some(v) = &f.patience {
            self.set("patience", v).map_err(CliError::Config)?;
        }
        if let Some(v) = f.conf_threshold {
            self.infer.conf_threshold = v;
        }
        if let Some(v) = f.nms_threshold {
            self.infer.nms_threshold = v;
        }
        if let Some(v) = &f.nms_mode {
            self.infer.nms_mode = parse_nms_mode(v).map_err(CliError::Config)?;
        }
        if f.no_background {
            self.include_background = false;
        }
        if let Some(v) = f.threads {
            self.threads = v;
        }
        if let Some(v) = &f.out {
            self.out = Some(v.clone());
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), CliError> {
        let cfg = |e: maskhead::Error| CliError::Config(e.to_string());
        self.train.check().map_err(cfg)?;
        self.infer.check().map_err(cfg)?;
        if let Some(names) = &self.classes {
            if names.is_empty() || names.len() > 255 {
                return Err(CliError::Config(format!(
                    "classes must list 1..=255 names, got {}",
                    names.len()
                )));
            }
            let unique: BTreeSet<_> = names.iter().collect();
            if unique.len() != names.len() {
                return Err(CliError::Config("class names must be unique".into()));
            }
        }
        let t = &self.train;
        if !(t.lambda1 >= 0.0 && t.lambda2 >= 0.0 && t.lambda1.is_finite() && t.lambda2.is_finite()) {
            return Err(CliError::Config("lambda1 and lambda2 must be finite and >= 0".into()));
        }
        if t.lambda1 == 0.0 && t.lambda2 == 0.0 {
            return Err(CliError::Config("lambda1 and lambda2 cannot both be 0".into()));
        }
        if let Some(tau) = t.entropy_threshold {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(CliError::Config(format!("entropy_threshold must be > 0, got {tau}")));
            }
        }
        if self.train.hidden.contains(&0) {
            return Err(CliError::Config("hidden widths must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    /// Hashable form of every setting that can change an artifact.
    pub fn canonical(&self) -> String {
        let mut s = self.train.canonical();
        let _ = writeln!(s, "conf_threshold={:?}", self.infer.conf_threshold);
        let _ = writeln!(s, "nms_threshold={:?}", self.infer.nms_threshold);
        let _ = writeln!(s, "nms_mode={}", nms_mode_name(self.infer.nms_mode));
        let _ = writeln!(s, "include_background={}", self.include_background);
        let classes = self
            .classes
            .as_ref()
            .map_or_else(|| "<dataset>".to_string(), |c| c.join(","));
        let _ = writeln!(s, "classes={classes}");
        s
    }

    pub fn hash(&self) -> String {
        hex_sha256(self.canonical().as_bytes())
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let cfg = RunConfig::parse(
            "# run\n\
             classes = cat, dog ,bird\n\
             a = 4\n\
             entropy_threshold = 0.3\n\
             conf_threshold = 0.6\n\
             nms_threshold=0.4\n\
             nms_mode = class-agnostic\n\
             seed = 9\n\
             epochs = 3\n\
             lr = 0.01\n\
             batch_size = 8\n\
             lambda1 = 1\n\
             lambda2 = 0.5\n\
             hidden = 16,8\n\
             holdout_fraction = 0.2\n\
             patience = none\n\
             checkpoint_every = 2\n\
             include_background = false\n\
             threads = 4\n\
             \n\
             dataset = data/train.usam\n\
             out = runs/x\n",
        )
        .unwrap();
        assert_eq!(
            cfg.classes.as_deref(),
            Some(&["cat".to_string(), "dog".into(), "bird".into()][..])
        );
        assert_eq!(cfg.train.a, 4.0);
        assert_eq!(cfg.train.entropy_threshold, Some(0.3));
        assert_eq!(cfg.infer.nms_mode, NmsMode::ClassAgnostic);
        assert_eq!(cfg.train.hidden, vec![16, 8]);
        assert_eq!(cfg.train.patience, None);
        assert!(!cfg.include_background);
        assert_eq!(cfg.threads, 4);
        assert_eq!(cfg.out.as_deref(), Some(Path::new("runs/x")));
        cfg.check().unwrap();
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let e = RunConfig::parse("seed = 1\nlearning_rate = 0.1\n").unwrap_err();
        assert!(
            e.to_string().contains("line 2") && e.to_string().contains("learning_rate"),
            "{e}"
        );
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("seed 1\n").is_err());
        assert!(RunConfig::parse("seed = -1\n").is_err());
    }

    #[test]
    fn range_checks() {
        for text in [
            "lr = 0",
            "a = 0.5",
            "conf_threshold = 1",
            "nms_threshold = 0",
            "batch_size = 0",
            "lambda1 = 0\nlambda2 = 0",
            "holdout_fraction = 0.5",
            "threads = 0",
            "hidden = 8,0",
            "entropy_threshold = -1",
            "classes = a,a",
        ] {
            let cfg = RunConfig::parse(text).unwrap();
            assert!(cfg.check().is_err(), "{text}");
        }
    }

    #[test]
    fn hash_ignores_paths_and_threads() {
        let a = RunConfig::parse("seed = 3\n").unwrap();
        let b = RunConfig::parse("seed = 3\nthreads = 8\nout = elsewhere\ndataset = d.usam\n").unwrap();
        let c = RunConfig::parse("seed = 4\n").unwrap();
        let d = RunConfig::parse("seed = 3\nconf_threshold = 0.8\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_ne!(a.hash(), d.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
