//! Flat `key = value` config files and flag/config resolution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use serde_json::Value;

use crate::Failure;

/// Keys shared by every subcommand. They are echoed in the manifest but kept
/// out of `results.json` so that results do not depend on where they land.
pub const COMMON_KEYS: [&str; 3] = ["out", "seed", "threads"];

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// underscores in keys are read as dashes so `z_samples` and `z-samples`
/// name the same parameter.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>, Failure> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("config line {}: expected key = value", lineno + 1)))?;
        let key = normalize(key);
        if key.is_empty() {
            return Err(Failure::Usage(format!("config line {}: empty key", lineno + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Failure::Usage(format!("config key {key} given twice")));
        }
    }
    Ok(out)
}

/// Resolves parameters from flags (which win) over config entries over
/// defaults, and records what was used.
#[derive(Debug, Default)]
pub struct Params {
    file: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
    resolved: BTreeMap<String, Value>,
}

impl Params {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Self {
            file,
            ..Self::default()
        }
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Failure>
    where
        T: FromStr + Clone + Into<Value>,
        T::Err: Display,
    {
        self.consumed.insert(key.to_string());
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(text)) => text
                .parse()
                .map_err(|e| Failure::Usage(format!("config key {key}: cannot parse {text:?}: {e}")))?,
            (None, None) => default,
        };
        self.resolved.insert(key.to_string(), value.clone().into());
        Ok(value)
    }

    /// Rejects config keys that no parameter consumed.
    pub fn finish(&self) -> Result<(), Failure> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Failure::Usage(format!("unknown config key(s): {}", unknown.join(", "))))
        }
    }

    /// Every resolved parameter, common keys included.
    pub fn all(&self) -> &BTreeMap<String, Value> {
        &self.resolved
    }

    /// Resolved parameters of the experiment itself.
    pub fn experiment(&self) -> BTreeMap<String, Value> {
        self.resolved
            .iter()
            .filter(|(k, _)| !COMMON_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_normalizes_keys() {
        let m = parse("# run\n n = 3\nz_samples=5\n\n").unwrap();
        assert_eq!(m.get("n").unwrap(), "3");
        assert_eq!(m.get("z-samples").unwrap(), "5");
    }

    #[test]
    fn rejects_malformed_and_duplicate_lines() {
        assert!(parse("n 3").is_err());
        assert!(parse("n = 3\nn = 4").is_err());
    }

    #[test]
    fn flags_win_over_file_over_default() {
        let mut p = Params::new(parse("n = 3\nseed = 9").unwrap());
        assert_eq!(p.get("n", Some(5usize), 4).unwrap(), 5);
        assert_eq!(p.get("seed", None, 0u64).unwrap(), 9);
        assert_eq!(p.get("kmax", None, 6usize).unwrap(), 6);
        p.finish().unwrap();
        assert!(!p.experiment().contains_key("seed"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut p = Params::new(parse("n = 3\nbogus = 1").unwrap());
        p.get("n", None, 4usize).unwrap();
        assert!(matches!(p.finish(), Err(Failure::Usage(m)) if m.contains("bogus")));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let mut p = Params::new(parse("n = three").unwrap());
        assert!(matches!(p.get("n", None, 4usize), Err(Failure::Usage(_))));
    }
}
