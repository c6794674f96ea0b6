//! Flat `key=value` run configuration.
//!
//! Every key has a default; the canonical text form lists all keys in
//! sorted order and its FNV-1a digest is the config hash stamped on every
//! artifact.

use std::collections::BTreeMap;
use std::path::Path;

use super::fnv64;

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    Int { min: u64 },
    Float { min: f64, max: f64 },
    Bool,
    Choice(&'static [&'static str]),
    IntList,
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub kind: Kind,
    pub help: &'static str,
}

const fn int(key: &'static str, default: &'static str, min: u64, help: &'static str) -> KeySpec {
    KeySpec { key, default, kind: Kind::Int { min }, help }
}

const fn float(key: &'static str, default: &'static str, min: f64, max: f64, help: &'static str) -> KeySpec {
    KeySpec { key, default, kind: Kind::Float { min, max }, help }
}

const fn flag(key: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, default, kind: Kind::Bool, help }
}

pub const FUSION_MODES: &[&str] = &["none", "concat", "cross_attention", "hcaa"];

/// Every recognised key with its desk-scale default.
pub const KEYS: &[KeySpec] = &[
    int("seed", "7", 0, "master seed for data, initialization and noise"),
    int("clips", "512", 1, "number of synthetic clips"),
    int("frames", "32", 2, "frames per clip (N)"),
    int("joints", "6", 1, "joints per hand (J)"),
    int("pitches", "16", 2, "feature channels / pitch classes (C)"),
    float("density", "0.15", 1e-9, 10.0, "expected events per frame"),
    float("coupling", "0.3", 0.0, 1.0, "fraction of events paired across hands"),
    int("overlap", "0", 0, "pitch classes shared by both hands"),
    int("feature-width", "16", 1, "refined feature channels (C')"),
    int("refiner-layers", "2", 0, "encoder layers in each feature refiner"),
    int("refiner-heads", "2", 1, "attention heads in the refiner"),
    int("predictor-width", "32", 1, "channels of the position predictor"),
    KeySpec { key: "dims", default: "32,64", kind: Kind::IntList, help: "U-Net channel widths per level" },
    int("heads", "2", 1, "attention heads in the denoiser"),
    KeySpec { key: "fusion-mode", default: "hcaa", kind: Kind::Choice(FUSION_MODES), help: "cross-hand feature interaction" },
    KeySpec { key: "fusion-levels", default: "deepest", kind: Kind::Choice(&["deepest", "all"]), help: "U-Net levels with a fusion point" },
    flag("position-sharing", "true", "condition each hand on both predicted trajectories"),
    flag("decoupled-noise", "true", "independent noise per hand stream"),
    flag("stop-gradient", "true", "block gradients through exchanged peer features"),
    float("lambda-init", "0.78", 1e-12, 1.0, "constant offset of the suppression coefficient"),
    int("diffusion-steps", "200", 1, "diffusion steps (T)"),
    float("beta-start", "0.0001", 1e-12, 0.999_999, "beta at t = 1"),
    float("beta-end", "0.02", 1e-12, 0.999_999, "beta at t = T"),
    float("learning-rate", "0.001", 1e-12, 1.0, "Adam step size"),
    float("adam-beta1", "0.9", 0.0, 0.999_999, "Adam first-moment decay"),
    float("adam-beta2", "0.999", 0.0, 0.999_999_999, "Adam second-moment decay"),
    float("adam-eps", "1e-8", 0.0, 1.0, "Adam denominator offset"),
    int("batch-size", "16", 1, "clips per optimization step"),
    int("position-steps", "600", 0, "optimization steps for the position predictors"),
    int("motion-steps", "2500", 0, "optimization steps for the motion denoisers"),
    int("embedder-steps", "600", 0, "optimization steps for the metric embedder"),
    float("grad-clip", "0", 0.0, 1e12, "global-norm gradient clip, 0 disables"),
    int("wgd-components", "8", 1, "GMM components for WGD"),
    int("embed-width", "16", 1, "bottleneck width of the metric embedder"),
    int("eval-clips", "0", 0, "clips of the split to sample and score, 0 = all"),
    int("metric-seed", "0", 0, "seed for metric fitting"),
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("duplicate config key {0:?}")]
    DuplicateKey(String),
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
}

fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

fn validate(spec: &KeySpec, value: &str) -> Result<String, ConfigError> {
    let bad = |reason: String| ConfigError::InvalidValue {
        key: spec.key.to_string(),
        value: value.to_string(),
        reason,
    };
    let value = value.trim();
    match spec.kind {
        Kind::Int { min } => {
            let v: u64 = value.parse().map_err(|e| bad(format!("{e}")))?;
            if v < min {
                return Err(bad(format!("must be >= {min}")));
            }
            Ok(v.to_string())
        }
        Kind::Float { min, max } => {
            let v: f64 = value.parse().map_err(|e| bad(format!("{e}")))?;
            if !(v.is_finite() && v >= min && v <= max) {
                return Err(bad(format!("must lie in [{min}, {max}]")));
            }
            Ok(value.to_string())
        }
        Kind::Bool => match value {
            "true" | "on" | "1" => Ok("true".into()),
            "false" | "off" | "0" => Ok("false".into()),
            _ => Err(bad("expected true or false".into())),
        },
        Kind::Choice(options) => {
            if options.contains(&value) {
                Ok(value.to_string())
            } else {
                Err(bad(format!("expected one of {options:?}")))
            }
        }
        Kind::IntList => {
            let parts: Result<Vec<u64>, _> = value.split(',').map(|p| p.trim().parse::<u64>()).collect();
            let parts = parts.map_err(|e| bad(format!("{e}")))?;
            if parts.is_empty() || parts.contains(&0) {
                return Err(bad("expected a comma-separated list of positive integers".into()));
            }
            Ok(parts.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
        }
    }
}

/// Resolved configuration: every known key mapped to a validated value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = KEYS.iter().map(|s| (s.key, s.default.to_string())).collect();
        Self { values }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let spec = spec(key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let v = validate(spec, value)?;
        self.values.insert(spec.key, v);
        Ok(())
    }

    pub fn with(mut self, key: &str, value: &str) -> Result<Self, ConfigError> {
        self.set(key, value)?;
        Ok(self)
    }

    /// Parse `key=value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown and repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::DuplicateKey(k.to_string()));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Sorted `key=value` lines, newline-terminated.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> u64 {
        fnv64(self.canonical().as_bytes())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    /// Canonical text followed by a `# config-hash=` trailer line.
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = format!("{}# config-hash={}\n", self.canonical(), self.hash_hex());
        std::fs::write(path, text)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).unwrap_or_else(|| panic!("unknown config key {key}"))
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.raw(key).parse().unwrap_or_else(|_| panic!("{key} is not an integer"))
    }

    pub fn usize(&self, key: &str) -> usize {
        self.u64(key) as usize
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.raw(key).parse().unwrap_or_else(|_| panic!("{key} is not a number"))
    }

    pub fn bool(&self, key: &str) -> bool {
        self.raw(key) == "true"
    }

    pub fn list(&self, key: &str) -> Vec<usize> {
        self.raw(key).split(',').map(|p| p.parse().expect("validated list")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert_eq!(RunConfig::parse("bogus=1"), Err(ConfigError::UnknownKey("bogus".into())));
    }

    #[test]
    fn duplicate_keys_rejected() {
        assert!(matches!(RunConfig::parse("seed=1\nseed=2"), Err(ConfigError::DuplicateKey(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::default().with("batch-size", "0").is_err());
        assert!(RunConfig::default().with("fusion-mode", "sum").is_err());
        assert!(RunConfig::default().with("lambda-init", "1.5").is_err());
        assert!(RunConfig::default().with("dims", "32,,64").is_err());
        assert!(RunConfig::default().with("decoupled-noise", "maybe").is_err());
    }

    #[test]
    fn hash_tracks_values_not_order() {
        let a = RunConfig::parse("seed=3\nframes=16").unwrap();
        let b = RunConfig::parse("frames=16\nseed=3").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = a.clone().with("seed", "4").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn booleans_and_lists_normalize() {
        let cfg = RunConfig::parse("position-sharing=off\ndims= 8, 16").unwrap();
        assert!(!cfg.bool("position-sharing"));
        assert_eq!(cfg.list("dims"), vec![8, 16]);
        assert_eq!(cfg.raw("dims"), "8,16");
    }

    #[test]
    fn written_file_parses_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        let cfg = RunConfig::default().with("seed", "11").unwrap();
        cfg.write(&p).unwrap();
        assert_eq!(RunConfig::read(&p).unwrap(), cfg);
    }
}
