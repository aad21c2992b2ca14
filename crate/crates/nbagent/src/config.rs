//! Run configuration files (TOML or JSON) with environment overrides.
//!
//! Any key can be overridden by `NBAGENT_<PATH>`, where nested keys are joined
//! by a double underscore: `NBAGENT_LR=1e-3`, `NBAGENT_SUITE__GRID=10`.
//! Values are parsed as JSON when possible and taken as strings otherwise.

use std::path::Path;

use nbagent_core::trainer::RunConfig;
use serde_json::{Map, Value};

pub const ENV_PREFIX: &str = "NBAGENT_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("override {key}: {detail}")]
    Override { key: String, detail: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Parses `text` as JSON when `path` ends in `.json`, TOML otherwise.
pub fn parse_value(path: &Path, text: &str) -> Result<Value, ConfigError> {
    let err = |detail: String| ConfigError::Parse {
        path: path.display().to_string(),
        detail,
    };
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(text).map_err(|e| err(e.to_string()))
    } else {
        toml::from_str(text).map_err(|e| err(e.to_string()))
    }
}

fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `(key, value)` overrides, keys already stripped of the prefix.
pub fn apply_overrides<I>(mut root: Value, overrides: I) -> Result<Value, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (key, raw) in overrides {
        let path: Vec<String> = key.split("__").map(|p| p.to_ascii_lowercase()).collect();
        if path.iter().any(String::is_empty) {
            return Err(ConfigError::Override {
                key,
                detail: "empty path segment".into(),
            });
        }
        let mut node = &mut root;
        for (i, part) in path.iter().enumerate() {
            if !node.is_object() {
                return Err(ConfigError::Override {
                    key: key.clone(),
                    detail: format!("'{}' is not a table", path[..i].join(".")),
                });
            }
            let map = node.as_object_mut().expect("checked object");
            if i + 1 == path.len() {
                map.insert(part.clone(), override_value(&raw));
                break;
            }
            node = map.entry(part.clone()).or_insert_with(|| Value::Object(Map::new()));
        }
    }
    Ok(root)
}

/// Overrides from the process environment, sorted by key.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = std::env::vars()
        .filter_map(|(k, val)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_string(), val)))
        .collect();
    v.sort();
    v
}

/// Starts from defaults, applies the file (if any) and then overrides.
pub fn resolve(
    file: Option<(&Path, &str)>,
    overrides: Vec<(String, String)>,
) -> Result<RunConfig, ConfigError> {
    let root = match file {
        Some((path, text)) => parse_value(path, text)?,
        None => Value::Object(Map::new()),
    };
    let root = apply_overrides(root, overrides)?;
    let cfg: RunConfig = serde_json::from_value(root).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    resolve(Some((path, &text)), env_overrides())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let t = resolve(Some((Path::new("a.toml"), "lr = 0.001\n[suite]\ngrid = 20\n")), vec![]).unwrap();
        let j = resolve(Some((Path::new("a.json"), r#"{"lr": 0.001, "suite": {"grid": 20}}"#)), vec![]).unwrap();
        assert_eq!(t, j);
        assert_eq!(t.lr, 0.001);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = resolve(
            Some((Path::new("a.toml"), "seed = 1\n")),
            vec![
                ("SEED".into(), "5".into()),
                ("SWITCHES__NO_SRD".into(), "true".into()),
                ("BASE_ITERATIONS".into(), "7".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert!(cfg.switches.no_srd);
        assert_eq!(cfg.base_iterations, 7);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(
            resolve(None, vec![("DELTA".into(), "2.0".into())]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            resolve(None, vec![("LR".into(), "fast".into())]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            resolve(Some((Path::new("a.toml"), "lr = 0.1\n")), vec![("LR__X".into(), "1".into())]),
            Err(ConfigError::Override { .. })
        ));
        assert!(matches!(
            resolve(Some((Path::new("a.json"), "{")), vec![]),
            Err(ConfigError::Parse { .. })
        ));
    }
}
