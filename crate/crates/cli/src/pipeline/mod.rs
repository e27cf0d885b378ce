//! Stage orchestration. Each stage reads its upstream manifests, writes its
//! outputs under `<output>/<stage>/` and records a manifest holding a
//! fingerprint of the settings and inputs that produced them. A stage whose
//! manifest matches the current fingerprint and whose outputs still hash to
//! the recorded values is skipped.

mod analyze;
mod data;
mod evaluate;
mod predict;
mod train;
mod transfer;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cardioseg::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DataSource, PipelineConfig};

pub use data::{CaseRecord, Role};
pub use evaluate::{CASES_FILE, REPORT_FILE, REPORT_JSON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Phantom,
    Ingest,
    Analyze,
    Train,
    Transfer,
    Predict,
    Ensemble,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Phantom,
        Stage::Ingest,
        Stage::Analyze,
        Stage::Train,
        Stage::Transfer,
        Stage::Predict,
        Stage::Ensemble,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Phantom => "phantom",
            Stage::Ingest => "ingest",
            Stage::Analyze => "analyze",
            Stage::Train => "train",
            Stage::Transfer => "transfer",
            Stage::Predict => "predict",
            Stage::Ensemble => "ensemble",
            Stage::Evaluate => "evaluate",
        }
    }

    fn upstream(self, cfg: &PipelineConfig) -> Vec<Stage> {
        match self {
            Stage::Phantom => vec![],
            Stage::Ingest => match cfg.data.source {
                DataSource::Phantom => vec![Stage::Phantom],
                DataSource::Files => vec![],
            },
            Stage::Analyze | Stage::Train => vec![Stage::Ingest],
            Stage::Transfer => vec![Stage::Ingest, Stage::Analyze, Stage::Train],
            Stage::Predict => vec![Stage::Ingest, Stage::Train, Stage::Transfer],
            Stage::Ensemble => vec![Stage::Ingest, Stage::Predict],
            Stage::Evaluate => vec![Stage::Ingest, Stage::Ensemble],
        }
    }

    /// The configuration sections a stage's outputs depend on.
    fn settings(self, cfg: &PipelineConfig) -> serde_json::Value {
        let seg = &cfg.segmentation;
        match self {
            Stage::Phantom => serde_json::json!({ "seed": cfg.seed, "phantom": cfg.phantom }),
            Stage::Ingest => serde_json::json!({ "data": cfg.data }),
            Stage::Analyze => serde_json::json!({ "seed": cfg.seed, "analysis": cfg.analysis }),
            Stage::Train => serde_json::json!({
                "seed": cfg.seed,
                "encoder": seg.encoder,
                "aspp": seg.aspp,
                "schedule": seg.schedule,
                "augmentation": seg.augmentation,
            }),
            Stage::Transfer => serde_json::json!({
                "transfer": cfg.transfer,
                "scales": seg.scales,
                "score_mode": seg.score_mode,
            }),
            Stage::Predict => serde_json::json!({ "scales": seg.scales, "score_mode": seg.score_mode }),
            Stage::Ensemble => serde_json::json!({ "ensemble": cfg.ensemble }),
            Stage::Evaluate => serde_json::json!({ "metrics": cfg.metrics }),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown stage {s:?}")))
    }
}

/// Written to `<output>/<stage>/manifest.json` when a stage completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub fingerprint: String,
    pub config_hash: String,
    /// Output files relative to the stage directory, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub summary: serde_json::Value,
}

pub const MANIFEST: &str = "manifest.json";

/// What a stage body hands back: the files to record and a short summary.
#[derive(Debug, Default)]
struct StageOutput {
    files: Vec<PathBuf>,
    summary: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub root: PathBuf,
    pub diagnostics: bool,
    config_hash: String,
}

impl Pipeline {
    /// Validates the configuration and writes the resolved copy and its hash
    /// into the run directory.
    pub fn new(cfg: PipelineConfig, diagnostics: bool) -> Result<Self> {
        cfg.validate()?;
        let root = cfg.output.clone();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let config_hash = cfg.hash();
        write_file(&root.join("config.toml"), cfg.to_toml().as_bytes())?;
        write_file(&root.join("config.sha256"), format!("{config_hash}\n").as_bytes())?;
        Ok(Self { cfg, root, diagnostics, config_hash })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.as_str())
    }

    /// Runs every stage in order, skipping those already up to date.
    pub fn run_all(&self, force: bool) -> Result<Vec<(Stage, Outcome)>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            if stage == Stage::Phantom && self.cfg.data.source != DataSource::Phantom {
                continue;
            }
            out.push((stage, self.run(stage, force)?));
        }
        Ok(out)
    }

    /// Runs one stage. Upstream stages must already be complete for the
    /// current configuration.
    pub fn run(&self, stage: Stage, force: bool) -> Result<Outcome> {
        if stage == Stage::Phantom && self.cfg.data.source != DataSource::Phantom {
            return Err(Error::Config("`phantom` needs data.source = \"phantom\"".into()));
        }
        let upstream = stage
            .upstream(&self.cfg)
            .into_iter()
            .map(|u| Ok((u, self.require(u)?.fingerprint)))
            .collect::<Result<Vec<_>>>()?;
        let fingerprint = self.fingerprint(stage, &upstream);
        if !force && self.is_current(stage, &fingerprint)? {
            log::info!("{stage}: up to date");
            return Ok(Outcome::UpToDate);
        }

        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        log::info!("{stage}: running");
        let output = match stage {
            Stage::Phantom => data::phantom(self)?,
            Stage::Ingest => data::ingest(self)?,
            Stage::Analyze => analyze::run(self)?,
            Stage::Train => train::run(self)?,
            Stage::Transfer => transfer::run(self)?,
            Stage::Predict => predict::predict(self)?,
            Stage::Ensemble => predict::ensemble(self)?,
            Stage::Evaluate => evaluate::run(self)?,
        };
        let mut outputs = BTreeMap::new();
        for f in &output.files {
            let rel = f.strip_prefix(&dir).map_err(|_| {
                Error::validation(format!("{stage} wrote {} outside its directory", f.display()))
            })?;
            outputs.insert(rel.to_string_lossy().replace('\\', "/"), sha256_file(f)?);
        }
        let manifest = StageManifest {
            stage: stage.as_str().into(),
            fingerprint,
            config_hash: self.config_hash.clone(),
            outputs,
            summary: output.summary,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        write_file(&dir.join(MANIFEST), text.as_bytes())?;
        Ok(Outcome::Ran)
    }

    fn fingerprint(&self, stage: Stage, upstream: &[(Stage, String)]) -> String {
        let doc = serde_json::json!({
            "stage": stage.as_str(),
            "settings": stage.settings(&self.cfg),
            "upstream": upstream.iter().map(|(s, f)| (s.as_str(), f)).collect::<BTreeMap<_, _>>(),
        });
        hex::encode(Sha256::digest(doc.to_string()))
    }

    pub fn read_manifest(&self, stage: Stage) -> Result<Option<StageManifest>> {
        let path = self.stage_dir(stage).join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))
    }

    fn is_current(&self, stage: Stage, fingerprint: &str) -> Result<bool> {
        let Some(m) = self.read_manifest(stage)? else { return Ok(false) };
        if m.fingerprint != fingerprint {
            return Ok(false);
        }
        let dir = self.stage_dir(stage);
        for (rel, hash) in &m.outputs {
            let p = dir.join(rel);
            if !p.exists() || sha256_file(&p)? != *hash {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// The manifest of a finished upstream stage, or an error naming the
    /// command to run.
    fn require(&self, stage: Stage) -> Result<StageManifest> {
        let path = self.stage_dir(stage).join(MANIFEST);
        let missing = |why: &str| Error::MissingArtifact {
            path: path.clone(),
            reason: why.to_string(),
            command: format!("cardioseg {stage}"),
        };
        let Some(m) = self.read_manifest(stage)? else {
            return Err(missing("not run yet"));
        };
        let upstream = stage
            .upstream(&self.cfg)
            .into_iter()
            .map(|u| Ok((u, self.require(u)?.fingerprint)))
            .collect::<Result<Vec<_>>>()?;
        if m.fingerprint != self.fingerprint(stage, &upstream) {
            return Err(missing("outputs are stale for this configuration"));
        }
        Ok(m)
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value).expect("serialisable").as_bytes())
}
