use std::path::{Path, PathBuf};

use aquabot_core::engine::TrainConfig;
use chrono::{DateTime, Utc};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config {key}: {path} does not exist")]
    Missing { key: String, path: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub domain: PathBuf,
    pub nlu: PathBuf,
    pub stories: PathBuf,
    #[serde(default)]
    pub test_stories: Option<PathBuf>,
    /// Labelled examples for NLU evaluation; the training examples when unset.
    #[serde(default)]
    pub test_nlu: Option<PathBuf>,
    #[serde(default)]
    pub lexicons: Vec<PathBuf>,
    #[serde(default)]
    pub records: Option<PathBuf>,
    #[serde(default)]
    pub situations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorePaths {
    /// Directory holding the trained model files.
    pub models: PathBuf,
    /// Directory of per-conversation event logs.
    pub conversations: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_log_level")]
    pub log_level: String,
    /// Pin the service clock, e.g. for reproducible situational answers.
    #[serde(default)]
    pub fixed_time: Option<DateTime<Utc>>,
    pub data: DataPaths,
    pub store: StorePaths,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_bind() -> String {
    "127.0.0.1:5005".into()
}

fn default_log_level() -> String {
    "info".into()
}

impl ServiceConfig {
    /// Parse TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut cfg.data;
        for p in [&mut d.domain, &mut d.nlu, &mut d.stories] {
            fix(p);
        }
        for p in [&mut d.test_stories, &mut d.test_nlu, &mut d.records, &mut d.situations]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        d.lexicons.iter_mut().for_each(fix);
        fix(&mut cfg.store.models);
        fix(&mut cfg.store.conversations);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_toml(&text, base, &path.display().to_string())?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Every configured input file must exist.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let d = &self.data;
        let mut inputs: Vec<(String, &PathBuf)> = vec![
            ("data.domain".into(), &d.domain),
            ("data.nlu".into(), &d.nlu),
            ("data.stories".into(), &d.stories),
        ];
        for (k, p) in [
            ("data.test_stories", &d.test_stories),
            ("data.test_nlu", &d.test_nlu),
            ("data.records", &d.records),
            ("data.situations", &d.situations),
        ] {
            if let Some(p) = p {
                inputs.push((k.into(), p));
            }
        }
        for (i, p) in d.lexicons.iter().enumerate() {
            inputs.push((format!("data.lexicons[{i}]"), p));
        }
        for (key, p) in inputs {
            if !p.is_file() {
                return Err(ConfigError::Missing {
                    key,
                    path: p.display().to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.fixed_time.unwrap_or_else(Utc::now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
domain = "domain.md"
nlu = "nlu.md"
stories = "/abs/stories.md"
lexicons = ["locations.tsv"]

[store]
models = "models"
conversations = "conv"

[train.nlu]
epochs = 7
"#;

    #[test]
    fn relative_paths_and_defaults() {
        let c = ServiceConfig::from_toml(MINIMAL, Path::new("/etc/bot"), "x").unwrap();
        assert_eq!(c.data.domain, PathBuf::from("/etc/bot/domain.md"));
        assert_eq!(c.data.stories, PathBuf::from("/abs/stories.md"));
        assert_eq!(c.data.lexicons, vec![PathBuf::from("/etc/bot/locations.tsv")]);
        assert_eq!(c.bind, "127.0.0.1:5005");
        assert_eq!(c.train.nlu.epochs, 7);
        assert_eq!(c.train.nlu.dim, 32);
        assert!(c.fixed_time.is_none());
    }

    #[test]
    fn missing_file_is_reported() {
        let c = ServiceConfig::from_toml(MINIMAL, Path::new("/nonexistent"), "x").unwrap();
        match c.check_paths() {
            Err(ConfigError::Missing { key, .. }) => assert_eq!(key, "data.domain"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("bogus = 1\n{MINIMAL}");
        assert!(ServiceConfig::from_toml(&text, Path::new("."), "x").is_err());
    }
}
