//! Run configuration files: TOML with every training knob, corpus paths,
//! evaluation options and the run seed.

use std::fs;
use std::path::{Path, PathBuf};

use daptain::audio::CorpusSpec;
use daptain::vcae::{Method, TrainingConfig};
use daptain::{Error, Result};
use serde::{Deserialize, Serialize};

/// Name of the resolved configuration written next to every run's outputs.
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Metrics whose tables are written: any of `stoi`, `fwsnrseg`, `pesq`.
    pub metrics: Vec<String>,
    /// Built-in reference methods scored alongside the enhanced directories:
    /// `unprocessed` (the noisy mixture) and `clean`.
    pub reference_methods: Vec<String>,
    /// Number of utterances whose magnitude spectrograms are dumped.
    pub spectrograms: usize,
    /// Manifest split to evaluate.
    pub split: String,
    /// Externally computed PESQ scores, one `id score` line per utterance.
    pub pesq_scores: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metrics: vec!["stoi".into(), "fwsnrseg".into()],
            reference_methods: vec!["unprocessed".into()],
            spectrograms: 1,
            split: "test".into(),
            pesq_scores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds corpus synthesis, mixture generation and training; overrides
    /// `training.seed`.
    pub seed: u64,
    /// Shrinks corpus clip counts and training epochs.
    pub scale: f64,
    /// Worker cap for per-clip parallel work.
    pub threads: usize,
    pub source_manifest: Option<PathBuf>,
    pub target_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub corpus: CorpusSpec,
    pub training: TrainingConfig,
    pub evaluation: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 1.0,
            threads: 1,
            source_manifest: None,
            target_manifest: None,
            output_dir: PathBuf::from("out"),
            corpus: CorpusSpec::default(),
            training: TrainingConfig::default(),
            evaluation: EvalOptions::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scale: Option<f64>,
    pub threads: Option<usize>,
    pub method: Option<String>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths in a config file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.source_manifest, &mut cfg.target_manifest, &mut cfg.evaluation.pesq_scores]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Loads `path` if given, else the defaults, then applies overrides,
    /// scaling and validation.
    pub fn resolve(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(s) = o.scale {
            cfg.scale = s;
        }
        if let Some(t) = o.threads {
            cfg.threads = t;
        }
        if let Some(m) = &o.method {
            cfg.training.method = m.parse::<Method>()?;
        }
        if let Some(d) = &o.out {
            cfg.output_dir = d.clone();
        }
        cfg.training.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::Config(format!("scale must be in (0, 1], got {}", self.scale)));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        for m in &self.evaluation.metrics {
            if !["stoi", "fwsnrseg", "pesq"].contains(&m.as_str()) {
                return Err(Error::Config(format!("unknown metric {m:?}")));
            }
        }
        for m in &self.evaluation.reference_methods {
            if !["unprocessed", "clean"].contains(&m.as_str()) {
                return Err(Error::Config(format!("unknown reference method {m:?}")));
            }
        }
        self.training.validate()
    }

    /// Training settings with epochs shrunk by `scale` (at least one).
    pub fn scaled_training(&self) -> TrainingConfig {
        let mut t = self.training.clone();
        t.epochs = ((t.epochs as f64 * self.scale).round() as usize).max(1);
        t
    }

    pub fn scaled_corpus(&self) -> CorpusSpec {
        self.corpus.scaled(self.scale)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    }
}
