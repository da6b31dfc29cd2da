//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, list values are comma
//! separated. Numbers accept `2^-5` style powers besides plain decimals.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use elastolod::fe::MaterialParams;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Cube3d,
    Hole2d,
    Infsup,
    KupradzeVerify,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [Self::Cube3d, Self::Hole2d, Self::Infsup, Self::KupradzeVerify];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cube3d => "cube3d",
            Self::Hole2d => "hole2d",
            Self::Infsup => "infsup",
            Self::KupradzeVerify => "kupradze-verify",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| "expected one of cube3d, hole2d, infsup, kupradze-verify".to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Fem,
    Mspg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fem => "fem",
            Self::Mspg => "mspg",
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fem" => Ok(Self::Fem),
            "mspg" => Ok(Self::Mspg),
            _ => Err("expected fem or mspg".into()),
        }
    }
}

/// Fully resolved configuration; every field has a value after parsing.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub k: Vec<f64>,
    /// Coarse mesh sizes.
    pub coarse_h: Vec<f64>,
    /// Fine mesh sizes; the first entry is the reference mesh of
    /// cube3d/hole2d, all entries are swept by infsup.
    pub fine_h: Vec<f64>,
    pub m: Vec<usize>,
    pub methods: Vec<Method>,
    pub output: PathBuf,
    /// 0 lets the thread pool choose.
    pub threads: usize,
    pub k0: f64,
    pub max_kh: f64,
    pub lambda: f64,
    pub mu: f64,
    /// Domain dimension of the infsup sweep.
    pub dim: usize,
    pub dump_fields: bool,
}

const KEYS: [&str; 14] =
    ["experiment", "k", "H", "h", "m", "methods", "output", "threads", "k0", "max_kh", "lambda", "mu", "dim", "dump_fields"];

/// Parses `2^-5`, `2^3`, `1/16` or a plain float.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = if let Some((base, exp)) = s.split_once('^') {
        let b: f64 = base.trim().parse().map_err(|_| format!("bad base `{base}`"))?;
        let e: i32 = exp.trim().parse().map_err(|_| format!("bad exponent `{exp}`"))?;
        b.powi(e)
    } else if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|_| format!("bad numerator `{num}`"))?;
        let d: f64 = den.trim().parse().map_err(|_| format!("bad denominator `{den}`"))?;
        n / d
    } else {
        s.parse().map_err(|_| format!("not a number: `{s}`"))?
    };
    if !v.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(v)
}

fn list<T>(key: &str, value: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            item(s).map_err(|reason| ConfigError::Value { key: key.into(), value: s.into(), reason })
        })
        .collect()
}

fn single<T>(key: &str, value: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<T, ConfigError> {
    item(value.trim()).map_err(|reason| ConfigError::Value { key: key.into(), value: value.into(), reason })
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

impl ExperimentConfig {
    /// Small default sweep for each experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            k: vec![8.0],
            coarse_h: vec![0.25, 0.125],
            fine_h: vec![1.0 / 16.0],
            m: vec![2],
            methods: vec![Method::Fem, Method::Mspg],
            output: PathBuf::from(format!("{}.csv", experiment.name())),
            threads: 0,
            k0: 1.0,
            max_kh: elastolod::solver::DEFAULT_MAX_KH,
            lambda: 1.0,
            mu: 1.0,
            dim: 3,
            dump_fields: false,
        };
        match experiment {
            Experiment::Cube3d => base,
            Experiment::Hole2d => Self { k: vec![16.0], coarse_h: vec![1.0 / 16.0, 1.0 / 32.0], fine_h: vec![1.0 / 128.0], ..base },
            Experiment::Infsup => Self { k: vec![2.0, 4.0, 8.0], fine_h: vec![1.0 / 16.0], ..base },
            Experiment::KupradzeVerify => Self { k: vec![4.0], ..base },
        }
    }

    pub fn parse(text: &str, experiment_override: Option<Experiment>) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(key));
            }
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError::Duplicate(key));
            }
            pairs.push((key, value.trim().to_string()));
        }
        let get = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let experiment = match (experiment_override, get("experiment")) {
            (Some(e), _) => e,
            (None, Some(v)) => single("experiment", v, Experiment::from_str)?,
            (None, None) => return Err(ConfigError::Invalid("no experiment given".into())),
        };
        let mut cfg = Self::defaults(experiment);
        for (key, value) in &pairs {
            let (key, value) = (key.as_str(), value.as_str());
            match key {
                "experiment" => {}
                "k" => cfg.k = list(key, value, parse_number)?,
                "H" => cfg.coarse_h = list(key, value, parse_number)?,
                "h" => cfg.fine_h = list(key, value, parse_number)?,
                "m" => cfg.m = list(key, value, |s| s.parse::<usize>().map_err(|e| e.to_string()))?,
                "methods" => cfg.methods = list(key, value, Method::from_str)?,
                "output" => cfg.output = PathBuf::from(value),
                "threads" => cfg.threads = single(key, value, |s| s.parse::<usize>().map_err(|e| e.to_string()))?,
                "k0" => cfg.k0 = single(key, value, parse_number)?,
                "max_kh" => cfg.max_kh = single(key, value, parse_number)?,
                "lambda" => cfg.lambda = single(key, value, parse_number)?,
                "mu" => cfg.mu = single(key, value, parse_number)?,
                "dim" => cfg.dim = single(key, value, |s| s.parse::<usize>().map_err(|e| e.to_string()))?,
                "dump_fields" => cfg.dump_fields = single(key, value, parse_bool)?,
                _ => unreachable!("keys are checked above"),
            }
        }
        cfg.methods.sort();
        cfg.methods.dedup();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, experiment_override: Option<Experiment>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text, experiment_override)
    }

    pub fn material(&self, k: f64) -> Result<MaterialParams, ConfigError> {
        MaterialParams::new(self.lambda, self.mu, k).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.k.is_empty() {
            return invalid("k list is empty".into());
        }
        if !(self.k0 > 0.0) {
            return invalid(format!("k0={} must be positive", self.k0));
        }
        for &k in &self.k {
            // kupradze-verify probes arbitrary wavenumbers, the solvers need k >= k0
            if self.experiment != Experiment::KupradzeVerify && k < self.k0 {
                return invalid(format!("k={k} is below k0={}", self.k0));
            }
            self.material(k)?;
        }
        if self.fine_h.is_empty() || self.fine_h.iter().any(|&h| !(h > 0.0)) {
            return invalid("h must hold positive mesh sizes".into());
        }
        if self.experiment == Experiment::Infsup && !(self.dim == 2 || self.dim == 3) {
            return invalid(format!("dim={} must be 2 or 3", self.dim));
        }
        if !matches!(self.experiment, Experiment::Cube3d | Experiment::Hole2d) {
            return Ok(());
        }
        if self.methods.is_empty() {
            return invalid("method set is empty".into());
        }
        if self.coarse_h.is_empty() || self.coarse_h.iter().any(|&h| !(h > 0.0)) {
            return invalid("H must hold positive mesh sizes".into());
        }
        let h = self.fine_h[0];
        for &big_h in &self.coarse_h {
            let ratio = big_h / h;
            let levels = ratio.log2().round();
            if levels < 0.0 || (ratio - 2f64.powi(levels as i32)).abs() > 1e-9 * ratio {
                return invalid(format!("H={big_h} is not a power-of-two multiple of h={h}"));
            }
        }
        if self.methods.contains(&Method::Mspg) {
            if self.m.is_empty() || self.m.contains(&0) {
                return invalid("m must hold oversampling orders >= 1".into());
            }
            if !(self.max_kh > 0.0) {
                return invalid(format!("max_kh={} must be positive", self.max_kh));
            }
            for &k in &self.k {
                for &big_h in &self.coarse_h {
                    if k * big_h > self.max_kh * (1.0 + 1e-12) {
                        return invalid(format!("kH={} exceeds max_kh={} (k={k}, H={big_h})", k * big_h, self.max_kh));
                    }
                }
            }
        }
        Ok(())
    }

    /// The resolved configuration as `key = value` lines.
    pub fn echo(&self) -> Vec<String> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        vec![
            format!("experiment = {}", self.experiment),
            format!("k = {}", join(&self.k)),
            format!("H = {}", join(&self.coarse_h)),
            format!("h = {}", join(&self.fine_h)),
            format!("m = {}", self.m.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(", ")),
            format!("methods = {}", self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")),
            format!("output = {}", self.output.display()),
            format!("threads = {}", self.threads),
            format!("k0 = {}", self.k0),
            format!("max_kh = {}", self.max_kh),
            format!("lambda = {}", self.lambda),
            format!("mu = {}", self.mu),
            format!("dim = {}", self.dim),
            format!("dump_fields = {}", self.dump_fields),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers() {
        assert_eq!(parse_number("2^-5").unwrap(), 1.0 / 32.0);
        assert_eq!(parse_number(" 1/16 ").unwrap(), 0.0625);
        assert_eq!(parse_number("0.5").unwrap(), 0.5);
        assert!(parse_number("2^x").is_err());
        assert!(parse_number("1/0").is_err());
    }

    #[test]
    fn full_config_round_trips_through_echo() {
        let text = "experiment = hole2d\nk = 16, 32 # two runs\nH = 2^-4, 2^-5\nh = 2^-7\nm = 1,2\nmethods = mspg, fem\n\
                    threads = 2\nmax_kh = 2.5\ndump_fields = true\n";
        let cfg = ExperimentConfig::parse(text, None).unwrap();
        assert_eq!(cfg.k, vec![16.0, 32.0]);
        assert_eq!(cfg.coarse_h, vec![0.0625, 0.03125]);
        assert_eq!(cfg.methods, vec![Method::Fem, Method::Mspg]);
        assert!(cfg.dump_fields);
        let again = ExperimentConfig::parse(&cfg.echo().join("\n"), None).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejections() {
        let bad = |text: &str| ExperimentConfig::parse(text, None).unwrap_err();
        assert!(matches!(bad("experiment = hole2d\nmethods = \n"), ConfigError::Invalid(_)));
        assert!(matches!(bad("experiment = hole2d\nfoo = 1\n"), ConfigError::UnknownKey(_)));
        assert!(matches!(bad("experiment = hole2d\nk = 1\nk = 2\n"), ConfigError::Duplicate(_)));
        assert!(matches!(bad("experiment = hole2d\nk\n"), ConfigError::Syntax { line: 2, .. }));
        assert!(matches!(bad("experiment = bogus\n"), ConfigError::Value { .. }));
        assert!(matches!(bad("k = 4\n"), ConfigError::Invalid(_)));
        // kH = 64 / 8 exceeds the default bound
        assert!(matches!(bad("experiment = hole2d\nk = 64\nH = 2^-3\nh = 2^-5\n"), ConfigError::Invalid(_)));
        assert!(matches!(bad("experiment = hole2d\nk = 0.5\n"), ConfigError::Invalid(_)));
        assert!(matches!(bad("experiment = hole2d\nH = 0.3\nh = 0.1\n"), ConfigError::Invalid(_)));
        assert!(matches!(bad("experiment = hole2d\nm = 0\n"), ConfigError::Invalid(_)));
        assert!(matches!(bad("experiment = hole2d\nlambda = -5\n"), ConfigError::Invalid(_)));
    }

    #[test]
    fn override_and_fem_only_skips_kh_bound() {
        let cfg = ExperimentConfig::parse("experiment = hole2d\n", Some(Experiment::Infsup)).unwrap();
        assert_eq!(cfg.experiment, Experiment::Infsup);
        let cfg = ExperimentConfig::parse("experiment = hole2d\nk = 64\nH = 2^-3\nh = 2^-5\nmethods = fem\n", None);
        assert!(cfg.is_ok());
    }
}
