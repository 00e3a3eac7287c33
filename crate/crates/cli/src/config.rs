//! Sectioned `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! [system]
//! name = dubin
//! v = 10
//! [budget]
//! mu = 0.785398
//! k_lo = -1, -1, -1
//! ```
//!
//! Blank lines and `#` comments are ignored, keys are unique per section and
//! unknown sections or keys are errors. Values stay strings until a command
//! reads them; every read is recorded together with the default it fell back
//! to, so outputs can echo the effective configuration.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("[{section}] {key}: {message}")]
    Value {
        section: String,
        key: String,
        message: String,
    },
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("system", &["name", "dim", "v", "mass", "g", "r", "c", "inertia", "u_max", "k", "a"]),
    ("budget", &["mu", "eta", "k_lo", "k_hi", "u0_lo", "u0_hi"]),
    ("accuracy", &["eps", "alpha"]),
    (
        "bound",
        &[
            "mode", "rho", "gains", "gain_x", "gain_u", "lattice", "tp", "du", "dx", "tp_lo", "tp_hi", "tp_count",
            "du_lo", "du_hi", "du_count", "passes",
        ],
    ),
    ("estimate", &["horizon", "pieces", "dt", "x0"]),
    (
        "separated",
        &[
            "construction", "a", "b", "x0", "horizon", "max_switches", "max_members", "dump_gaps", "eps_list",
            "t_list", "verify_cap",
        ],
    ),
    (
        "switched",
        &[
            "modes", "a", "b", "dwell", "tau", "reach_horizon", "signals", "sample_every", "dt", "k_lo", "k_hi",
        ],
    ),
    ("run", &["seed"]),
];

/// Keys each built-in system accepts in `[system]`.
pub fn system_keys(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "integrator" => &["dim"],
        "simple" => &[],
        "dubin" => &["v"],
        "harrier" => &["mass", "g", "r", "c", "inertia", "u_max"],
        "pendulum" => &["k", "inertia"],
        "scalar_linear" => &["a"],
        _ => return None,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| ConfigError::Syntax { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header {line:?}")))?
                    .trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let section = current
                .as_ref()
                .ok_or_else(|| err(format!("key {key:?} appears before any section")))?;
            let allowed = SECTIONS
                .iter()
                .find(|(s, _)| s == section)
                .map(|(_, keys)| *keys)
                .unwrap_or(&[]);
            if !allowed.contains(&key) {
                return Err(err(format!("unknown key {key:?} in [{section}]")));
            }
            if value.is_empty() {
                return Err(err(format!("empty value for {key:?}")));
            }
            let map = sections.entry(section.clone()).or_default();
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(err(format!("duplicate key {key:?} in [{section}]")));
            }
        }
        let cfg = Self { sections };
        cfg.check_system_keys()?;
        Ok(cfg)
    }

    fn check_system_keys(&self) -> Result<(), ConfigError> {
        let Some(sys) = self.sections.get("system") else {
            return Ok(());
        };
        let Some(name) = sys.get("name") else {
            return Ok(());
        };
        let keys = system_keys(name).ok_or_else(|| ConfigError::Value {
            section: "system".into(),
            key: "name".into(),
            message: format!(
                "unknown system {name:?}; known: integrator, simple, dubin, harrier, pendulum, scalar_linear"
            ),
        })?;
        for k in sys.keys().filter(|k| k.as_str() != "name") {
            if !keys.contains(&k.as_str()) {
                return Err(ConfigError::Value {
                    section: "system".into(),
                    key: k.clone(),
                    message: format!("not a parameter of {name}"),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    /// Canonical text: sections and keys in sorted order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, keys) in &self.sections {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in keys {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}

/// Typed reads that remember what was used.
pub struct Lookup<'a> {
    cfg: &'a ExperimentConfig,
    used: RefCell<BTreeMap<(String, String), String>>,
}

impl<'a> Lookup<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        Self {
            cfg,
            used: RefCell::new(BTreeMap::new()),
        }
    }

    fn record(&self, section: &str, key: &str, value: String) {
        self.used
            .borrow_mut()
            .insert((section.to_string(), key.to_string()), value);
    }

    fn bad(section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            section: section.into(),
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&'a str> {
        self.cfg.get(section, key)
    }

    pub fn str_or(&self, section: &str, key: &str, default: &str) -> String {
        let v = self.cfg.get(section, key).unwrap_or(default).to_string();
        self.record(section, key, v.clone());
        v
    }

    pub fn opt_f64(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.cfg.get(section, key) {
            None => Ok(None),
            Some(s) => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Self::bad(section, key, format!("not a number: {s:?}")))?;
                if !v.is_finite() {
                    return Err(Self::bad(section, key, "must be finite"));
                }
                self.record(section, key, s.to_string());
                Ok(Some(v))
            }
        }
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.opt_f64(section, key)? {
            Some(v) => Ok(v),
            None => {
                self.record(section, key, format!("{default:?}"));
                Ok(default)
            }
        }
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.cfg.get(section, key) {
            Some(s) => {
                let v = s
                    .parse()
                    .map_err(|_| Self::bad(section, key, format!("not a nonnegative integer: {s:?}")))?;
                self.record(section, key, s.to_string());
                Ok(v)
            }
            None => {
                self.record(section, key, default.to_string());
                Ok(default)
            }
        }
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        let v = match self.cfg.get(section, key) {
            Some("true") => true,
            Some("false") => false,
            Some(s) => return Err(Self::bad(section, key, format!("expected true or false, got {s:?}"))),
            None => default,
        };
        self.record(section, key, v.to_string());
        Ok(v)
    }

    /// Comma-separated numbers; a single value is broadcast to `len`.
    pub fn vec_or(&self, section: &str, key: &str, default: &[f64], len: Option<usize>) -> Result<Vec<f64>, ConfigError> {
        let v = match self.cfg.get(section, key) {
            Some(s) => s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Self::bad(section, key, format!("not a number list: {s:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => default.to_vec(),
        };
        let v = match len {
            Some(n) if v.len() == 1 && n > 1 => vec![v[0]; n],
            Some(n) if v.len() != n => {
                return Err(Self::bad(section, key, format!("expected {n} values, got {}", v.len())))
            }
            _ => v,
        };
        if v.is_empty() {
            return Err(Self::bad(section, key, "empty list"));
        }
        self.record(
            section,
            key,
            v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","),
        );
        Ok(v)
    }

    /// `# [section] key = value` lines for every value read so far.
    pub fn provenance(&self) -> Vec<String> {
        self.used
            .borrow()
            .iter()
            .map(|((s, k), v)| format!("# [{s}] {k} = {v}"))
            .collect()
    }
}
