//! Optional TOML defaults. Relative paths resolve against the file's
//! directory. Credentials are read from the environment only.

use std::path::{Path, PathBuf};

use objhal::llm_client::LlmConfig;
use objhal::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::args::{Backend, Generator, GlobalArgs};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub max_parallel: Option<usize>,
    pub max_attempts: Option<u32>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub l2: Option<f64>,
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub replay: Option<bool>,
    pub cache_dir: Option<PathBuf>,
    pub extractor: Option<Backend>,
    pub matcher: Option<Backend>,
    pub generator: Option<Generator>,
    pub mode: Option<Vec<String>>,
    pub unit: Option<String>,
    pub chair_s_denominator: Option<String>,
    pub epsilon: Option<f64>,
    pub lexicon_dir: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub llm: LlmSection,
    pub train_base: TrainSection,
    pub train_control: TrainSection,
}

impl FileConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.cache_dir, &mut cfg.lexicon_dir, &mut cfg.synonyms].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Settings shared by all commands after merging flags over the file.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub file: FileConfig,
    pub seed: u64,
    /// The seed when one was given, for commands with their own default.
    pub explicit_seed: Option<u64>,
    pub jobs: usize,
    pub replay: bool,
    pub cache_dir: Option<PathBuf>,
}

impl Resolved {
    pub fn new(global: &GlobalArgs) -> Result<Self> {
        let file = match &global.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let jobs = global.jobs.or(file.jobs).unwrap_or(1);
        if jobs == 0 {
            return Err(Error::InvalidConfig("jobs must be at least 1".into()));
        }
        Ok(Self {
            seed: global.seed.or(file.seed).unwrap_or(0),
            explicit_seed: global.seed.or(file.seed),
            jobs,
            replay: global.replay || file.replay.unwrap_or(false),
            cache_dir: global.cache_dir.clone().or_else(|| file.cache_dir.clone()),
            file,
        })
    }

    /// Client settings: environment first, then the file, then flags.
    pub fn llm_config(&self) -> LlmConfig {
        let mut cfg = LlmConfig::from_env();
        let s = &self.file.llm;
        if let Some(v) = &s.endpoint {
            cfg.endpoint = Some(v.clone());
        }
        if let Some(v) = &s.model {
            cfg.model = v.clone();
        }
        if let Some(v) = s.temperature {
            cfg.temperature = v;
        }
        if let Some(v) = s.max_tokens {
            cfg.max_tokens = v;
        }
        if let Some(v) = s.max_parallel {
            cfg.max_parallel = v;
        }
        if let Some(v) = s.max_attempts {
            cfg.max_attempts = v;
        }
        if let Some(v) = s.timeout_secs {
            cfg.timeout = std::time::Duration::from_secs(v);
        }
        cfg.cache_dir = self.cache_dir.clone();
        cfg.replay = self.replay;
        cfg
    }

    /// Client settings fit for a run record: no credential.
    pub fn llm_record(&self) -> serde_json::Value {
        let c = self.llm_config();
        serde_json::json!({
            "endpoint": c.endpoint,
            "model": c.model,
            "temperature": c.temperature,
            "max_tokens": c.max_tokens,
            "replay": c.replay,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(FileConfig::parse("sed = 3", "x").is_err());
        assert!(FileConfig::parse("[llm]\napi_key = \"k\"", "x").is_err());
        let cfg = FileConfig::parse("seed = 3\nmode = [\"wo-ind\"]\n[train_base]\nepochs = 5", "x").unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.train_base.epochs, Some(5));
    }

    #[test]
    fn flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\njobs = 2\ncache_dir = \"cache\"").unwrap();
        let global = GlobalArgs { config: Some(path), seed: Some(9), jobs: None, replay: false, cache_dir: None };
        let r = Resolved::new(&global).unwrap();
        assert_eq!((r.seed, r.jobs), (9, 2));
        assert_eq!(r.cache_dir, Some(dir.path().join("cache")));
    }
}
