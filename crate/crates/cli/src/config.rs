//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

pub const KEYS: [&str; 7] = [
    "threshold",
    "images_per_prompt",
    "seed",
    "categories",
    "format",
    "detector_id",
    "samples",
];

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`", i + 1);
            };
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key `{key}`", i + 1);
            }
            let value = value.trim().trim_matches('"').to_string();
            if values.insert(key.clone(), value).is_some() {
                bail!("line {}: `{key}` set twice", i + 1);
            }
        }
        Ok(Config { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Config> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Config::parse(&text).with_context(|| format!("in config {}", p.display()))
            }
        }
    }

    /// Flag value if given, else the config value, else `default`.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| anyhow::anyhow!("config key `{key}`: {e}")),
            None => Ok(default),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let c = Config::parse("# run\nthreshold = 0.3\nimages-per-prompt=2\n").unwrap();
        assert_eq!(c.resolve(Some(0.2), "threshold", 0.1).unwrap(), 0.2);
        assert_eq!(c.resolve(None, "threshold", 0.1).unwrap(), 0.3);
        assert_eq!(c.resolve(None, "seed", 7u64).unwrap(), 7);
        assert_eq!(c.resolve::<usize>(None, "images_per_prompt", 4).unwrap(), 2);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(Config::parse("threshold 0.3").is_err());
        assert!(Config::parse("colour = red").is_err());
        assert!(Config::parse("seed = 1\nseed = 2").is_err());
        let c = Config::parse("seed = x").unwrap();
        assert!(c.resolve::<u64>(None, "seed", 0).is_err());
    }
}
