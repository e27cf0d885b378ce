//! Dataset generation and ingest.

use std::path::{Path, PathBuf};

use cardioseg::rng::{derive_seed, tag};
use cardioseg::volume::{
    generate_phantom, load_volume, save_volume, Domain, LabelVolume, PhantomSpec, Volume, VolumeFormat,
};
use cardioseg::{Error, Result};
use serde::{Deserialize, Serialize};

use super::{read_json, sha256_file, write_json, Pipeline, Stage, StageOutput};
use crate::config::DataSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// One ingested case. Paths are relative to the ingest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub role: Role,
    pub volume: PathBuf,
    pub labels: Option<PathBuf>,
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub source: String,
    pub source_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SourceEntry {
    id: String,
    role: Role,
    path: PathBuf,
}

const CASES: &str = "cases.json";

pub(super) fn phantom(p: &Pipeline) -> Result<StageOutput> {
    let cfg = &p.cfg.phantom;
    let dir = p.stage_dir(Stage::Phantom);
    let mut entries = Vec::new();
    let mut files = Vec::new();
    for (role, count, domain) in [(Role::Train, cfg.train_count, Domain::A), (Role::Test, cfg.test_count, Domain::B)] {
        let render = match domain {
            Domain::A => &cfg.domain_a,
            Domain::B => &cfg.domain_b,
        };
        let role_name = match role {
            Role::Train => "train",
            Role::Test => "test",
        };
        for i in 0..count {
            let spec = PhantomSpec {
                shape: cfg.shape,
                domain,
                seed: derive_seed(p.cfg.seed, &[tag("phantom"), tag(role_name), i as u64]),
                noise_sigma: render.noise_sigma,
                intensity_map: render.intensity_map,
                tissue_means: render.tissue_means,
                shell_fraction: cfg.shell_fraction,
                spacing: cfg.spacing,
            };
            let (mut v, mut l) = generate_phantom(&spec)?;
            let id = format!("{role_name}-{i:02}");
            v.id = id.clone();
            l.id = id.clone();
            let path = dir.join(role_name).join(cfg.format.file_name(&id));
            save_volume(&path, cfg.format, &v, Some(&l))?;
            entries.push(SourceEntry {
                id,
                role,
                path: path.strip_prefix(&dir).expect("inside").to_path_buf(),
            });
        }
        files.extend(list_files(&dir.join(role_name))?);
    }
    let list = dir.join(CASES);
    write_json(&list, &entries)?;
    files.push(list);
    Ok(StageOutput {
        files,
        summary: serde_json::json!({ "train": cfg.train_count, "test": cfg.test_count }),
    })
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

pub(super) fn ingest(p: &Pipeline) -> Result<StageOutput> {
    let sources: Vec<SourceEntry> = match p.cfg.data.source {
        DataSource::Phantom => {
            let dir = p.stage_dir(Stage::Phantom);
            let mut entries: Vec<SourceEntry> = read_json(&dir.join(CASES))?;
            for e in &mut entries {
                e.path = dir.join(&e.path);
            }
            entries
        }
        DataSource::Files => {
            let mk = |role: Role| {
                move |path: &PathBuf| SourceEntry {
                    id: String::new(),
                    role,
                    path: path.clone(),
                }
            };
            let d = &p.cfg.data;
            d.train.iter().map(mk(Role::Train)).chain(d.test.iter().map(mk(Role::Test))).collect()
        }
    };

    let dir = p.stage_dir(Stage::Ingest);
    let mut records: Vec<CaseRecord> = Vec::new();
    let mut files = Vec::new();
    for src in sources {
        let format = VolumeFormat::infer(&src.path)
            .ok_or_else(|| Error::validation(format!("{}: unrecognised volume format", src.path.display())))?;
        let (mut volume, labels) = load_volume(&src.path, format)?;
        if !src.id.is_empty() {
            volume.id = src.id.clone();
        }
        let id = volume.id.clone();
        if records.iter().any(|r| r.id == id) {
            return Err(Error::validation(format!("two input volumes share the id {id:?}")));
        }
        if src.role == Role::Train && labels.is_none() {
            return Err(Error::validation(format!(
                "training volume {} has no label sidecar ({})",
                src.path.display(),
                cardioseg::volume::label_sidecar_path(&src.path).display()
            )));
        }
        if p.cfg.data.normalize {
            volume = volume.min_max_normalized();
        }
        let labels = labels.map(|l| LabelVolume { id: id.clone(), ..l });
        let rel = PathBuf::from("cases").join(format!("{id}.nii.gz"));
        let path = dir.join(&rel);
        save_volume(&path, VolumeFormat::Nifti, &volume, labels.as_ref())?;
        files.push(path.clone());
        let label_rel = labels.as_ref().map(|_| {
            let l = cardioseg::volume::label_sidecar_path(&path);
            files.push(l.clone());
            l.strip_prefix(&dir).expect("inside").to_path_buf()
        });
        records.push(CaseRecord {
            id,
            role: src.role,
            volume: rel,
            labels: label_rel,
            shape: volume.shape(),
            spacing: volume.spacing,
            // Relative to the run directory when inside it, so identical runs
            // in different directories produce identical records.
            source: src.path.strip_prefix(&p.root).unwrap_or(&src.path).display().to_string(),
            source_sha256: sha256_file(&src.path)?,
        });
    }
    let list = dir.join(CASES);
    write_json(&list, &records)?;
    files.push(list);
    let count = |r: Role| records.iter().filter(|c| c.role == r).count();
    Ok(StageOutput {
        files,
        summary: serde_json::json!({ "train": count(Role::Train), "test": count(Role::Test) }),
    })
}

pub(super) fn cases(p: &Pipeline) -> Result<Vec<CaseRecord>> {
    read_json(&p.stage_dir(Stage::Ingest).join(CASES))
}

pub(super) fn load(p: &Pipeline, case: &CaseRecord) -> Result<(Volume, Option<LabelVolume>)> {
    let (mut v, l) = load_volume(&p.stage_dir(Stage::Ingest).join(&case.volume), VolumeFormat::Nifti)?;
    v.id = case.id.clone();
    let l = l.map(|l| LabelVolume { id: case.id.clone(), ..l });
    if let (Some(labels), None) = (&case.labels, &l) {
        return Err(Error::MissingArtifact {
            path: p.stage_dir(Stage::Ingest).join(labels),
            reason: "label file recorded at ingest is gone".into(),
            command: "cardioseg ingest --force".into(),
        });
    }
    Ok((v, l))
}

/// Ground-truth labels of a case, which evaluation and training require.
pub(super) fn load_labeled(p: &Pipeline, case: &CaseRecord) -> Result<(Volume, LabelVolume)> {
    let (v, l) = load(p, case)?;
    let l = l.ok_or_else(|| Error::validation(format!("case {} has no ground-truth labels", case.id)))?;
    Ok((v, l))
}
