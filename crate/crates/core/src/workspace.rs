//! On-disk layout shared by the CLI and the service.
//!
//! ```text
//! <root>/events.jsonl     append-only event log
//! <root>/signatures.json  trained header signatures
//! <root>/prompts/         mirror of the prompt lineages
//! <root>/config.json      pipeline config, used when no path is given
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::classify::{load_signatures, save_signatures, ClassifyError};
use crate::config::{load_config, ConfigError, PipelineConfig};
use crate::engine::{Engine, EngineError, Pipeline};
use crate::eval::{Corpus, EvalError};
use crate::events::{EventLog, LogError};
use crate::model::DocBundle;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Signatures(#[from] ClassifyError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> WorkspaceError {
    WorkspaceError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub struct Workspace {
    pub root: PathBuf,
    pub config: PipelineConfig,
}

impl Workspace {
    /// Config comes from `config_path`, else `<root>/config.json`, else the
    /// defaults.
    pub fn open(
        root: impl Into<PathBuf>,
        config_path: Option<&Path>,
    ) -> Result<Self, WorkspaceError> {
        let root = root.into();
        let local = root.join("config.json");
        let config = match config_path {
            Some(p) => load_config(p)?,
            None if local.exists() => load_config(&local)?,
            None => PipelineConfig::default(),
        };
        Ok(Workspace { root, config })
    }

    pub fn events_path(&self) -> PathBuf {
        self.root.join("events.jsonl")
    }

    pub fn signatures_path(&self) -> PathBuf {
        self.root.join("signatures.json")
    }

    pub fn prompts_dir(&self) -> PathBuf {
        self.root.join("prompts")
    }

    /// Engine over the workspace log, replayed to its current state.
    pub fn engine(&self) -> Result<Engine, WorkspaceError> {
        let sig_path = self.signatures_path();
        let signatures = if sig_path.exists() {
            load_signatures(&sig_path)?
        } else {
            log::warn!(
                "no signatures at {}; every document will be unknown",
                sig_path.display()
            );
            Vec::new()
        };
        let pipeline = Pipeline::from_config(self.config.clone(), signatures);
        let log = EventLog::open(&self.events_path())?;
        Ok(Engine::new(pipeline, log)?.with_prompt_dir(self.prompts_dir()))
    }

    /// Trains header signatures on a labeled corpus and stores them.
    pub fn train(&self, corpus: &Corpus) -> Result<usize, WorkspaceError> {
        let signatures = corpus.train(&self.config)?;
        std::fs::create_dir_all(&self.root).map_err(|e| io_err(&self.root, e))?;
        save_signatures(&self.signatures_path(), &signatures)?;
        Ok(signatures.len())
    }
}

/// Every `*.json` bundle in `dir`, or in `dir/bundles` when that exists,
/// sorted by file name.
pub fn read_bundles(dir: &Path) -> Result<Vec<DocBundle>, WorkspaceError> {
    let dir = if dir.join("bundles").is_dir() {
        dir.join("bundles")
    } else {
        dir.to_path_buf()
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| io_err(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| io_err(p, e))
        })
        .collect()
}

/// Ingests bundles not yet in the log; returns `(ingested, skipped)`.
pub fn ingest_new(
    engine: &mut Engine,
    bundles: Vec<DocBundle>,
) -> Result<(usize, usize), WorkspaceError> {
    let (mut added, mut skipped) = (0, 0);
    for b in bundles {
        if engine.store().doc(&b.doc_id).is_some() {
            skipped += 1;
            continue;
        }
        engine.ingest(b)?;
        added += 1;
    }
    Ok((added, skipped))
}
