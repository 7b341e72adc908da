//! Settings file (`key = value` lines) and environment overrides.
//!
//! Precedence, highest first: command-line flag, environment variable
//! (endpoint and workers only), settings file, built-in default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

pub const ENV_ENDPOINT: &str = "MASKPRESS_ENDPOINT";
pub const ENV_WORKERS: &str = "MASKPRESS_WORKERS";

const KEYS: &[&str] = &[
    "codec",
    "p-mask",
    "window",
    "max-run",
    "aux-order",
    "infill-chunk",
    "k",
    "mode",
    "beta",
    "refine-iters",
    "top-k",
    "predictor",
    "tokenizer",
    "static-bytes",
    "n-copies",
    "workers",
    "corpus",
    "p-masks",
    "ks",
    "codecs",
    "seeds",
];

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            let key = key.trim().replace('_', "-");
            if !KEYS.contains(&key.as_str()) {
                return Err(format!("line {}: unknown setting '{key}'", n + 1));
            }
            let value = value.trim().trim_matches('"').to_owned();
            values.insert(key, value);
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Self::parse(&text).map_err(|e| format!("{}: {e}", p.display()))
            }
        }
    }

    /// The flag if given, else the file's value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, String>
    where
        T::Err: std::fmt::Display,
    {
        debug_assert!(KEYS.contains(&key), "{key}");
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| format!("setting {key} = {v}: {e}")))
            .transpose()
    }

    pub fn predictor(&self, flag: Option<String>) -> Result<String, String> {
        if flag.is_some() {
            return Ok(flag.unwrap_or_default());
        }
        if let Ok(ep) = std::env::var(ENV_ENDPOINT) {
            if !ep.is_empty() {
                return Ok(format!("extern:{ep}"));
            }
        }
        self.pick(None, "predictor", "builtin:order1".to_owned())
    }

    pub fn workers(&self, flag: Option<usize>) -> Result<usize, String> {
        if let Some(w) = flag {
            return Ok(w.max(1));
        }
        if let Ok(w) = std::env::var(ENV_WORKERS) {
            return w
                .parse::<usize>()
                .map(|w| w.max(1))
                .map_err(|e| format!("{ENV_WORKERS}={w}: {e}"));
        }
        let default = std::thread::available_parallelism().map_or(1, |n| n.get());
        self.pick(None, "workers", default).map(|w| w.max(1))
    }
}

/// Comma-separated list.
pub fn list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| format!("'{x}': {e}")))
        .collect()
}
