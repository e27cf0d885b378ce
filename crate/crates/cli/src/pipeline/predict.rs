//! Multi-scale per-plane scoring of both variants, then adjustment and voting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cardioseg::nn::{read_archive, write_archive, TensorArchive};
use cardioseg::postprocess::{adjust, argmax_labels, sum_plane_logits, vote_with, EnsembleInput};
use cardioseg::segment::{predict_multiscale, LogitsMap, PlaneTag, SegNet, Variant};
use cardioseg::volume::{load_intensities, slice_volume, write_nifti, Plane, Volume, VolumeFormat};
use cardioseg::{Error, Result};
use ndarray::{Array3, Array4};

use super::data::{cases, load, Role};
use super::train::load_model;
use super::transfer::transferred_path;
use super::{Pipeline, Stage, StageOutput};

const KIND: &str = "cardioseg-logits";

/// Report rows, in order, and the label map each one reads.
pub const ROWS: [&str; 5] = ["baseline", "styleseg-baseline", "adjusted", "transferred-adjusted", "ensemble"];

pub(super) fn models(p: &Pipeline) -> Result<Vec<(Plane, SegNet<f32>)>> {
    Plane::ALL.iter().map(|&pl| Ok((pl, load_model(p, pl)?))).collect()
}

pub(super) fn plane_logits(p: &Pipeline, model: &SegNet<f32>, volume: &Volume, plane: Plane, variant: Variant) -> Result<LogitsMap> {
    let seg = &p.cfg.segmentation;
    predict_multiscale(model, &slice_volume(volume, plane), &seg.scales, seg.score_mode, variant)
}

fn logits_path(p: &Pipeline, case: &str, plane: Plane, variant: Variant) -> PathBuf {
    p.stage_dir(Stage::Predict).join(case).join(format!("{variant}-{plane}.safetensors"))
}

pub(super) fn predict(p: &Pipeline) -> Result<StageOutput> {
    let models = models(p)?;
    let mut files = Vec::new();
    let test: Vec<_> = cases(p)?.into_iter().filter(|c| c.role == Role::Test).collect();
    for case in &test {
        let (volume, _) = load(p, case)?;
        for (plane, model) in &models {
            let transferred = load_intensities(&transferred_path(p, &case.id, *plane), VolumeFormat::Nifti)?;
            for (variant, source) in [(Variant::Original, &volume), (Variant::Transferred, &transferred)] {
                let map = plane_logits(p, model, source, *plane, variant)?;
                let path = logits_path(p, &case.id, *plane, variant);
                save_logits(&path, &map)?;
                files.push(path.clone());
                files.push(path.with_extension("json"));
            }
        }
        log::info!("predict: {}", case.id);
    }
    Ok(StageOutput {
        files,
        summary: serde_json::json!({ "cases": test.len(), "scales": p.cfg.segmentation.scales }),
    })
}

fn save_logits(path: &Path, map: &LogitsMap) -> Result<()> {
    let mut archive = TensorArchive::default();
    archive.tensors.insert("scores".into(), map.scores.clone().into_dyn());
    let config = serde_json::json!({ "plane": map.plane, "variant": map.variant, "scales": map.scales });
    write_archive(path, &archive, &archive.manifest(KIND, config))
}

fn load_logits(path: &Path, plane: Plane, variant: Variant) -> Result<LogitsMap> {
    let (mut archive, manifest) = read_archive(path)?;
    let bad = |msg: &str| Error::validation(format!("{}: {msg}", path.display()));
    if manifest.kind != KIND {
        return Err(bad("not a logits archive"));
    }
    let scores = archive.tensors.remove("scores").ok_or_else(|| bad("no `scores` tensor"))?;
    let scores: Array4<f32> = scores.into_dimensionality().map_err(|_| bad("`scores` is not 4-d"))?;
    let scales = serde_json::from_value(manifest.config["scales"].clone()).map_err(|e| bad(&e.to_string()))?;
    LogitsMap::new(scores, plane.into(), variant, scales)
}

pub(super) fn ensemble(p: &Pipeline) -> Result<StageOutput> {
    let dir = p.stage_dir(Stage::Ensemble);
    let ties: Vec<(PlaneTag, Variant)> = p.cfg.ensemble.tie_break.iter().map(|t| (t.plane, t.variant)).collect();
    let mut files = Vec::new();
    let test: Vec<_> = cases(p)?.into_iter().filter(|c| c.role == Role::Test).collect();
    for case in &test {
        let mut input = EnsembleInput::new();
        let mut rows: BTreeMap<&str, Array3<u8>> = BTreeMap::new();
        for variant in Variant::ALL {
            let mut maps = Vec::new();
            for plane in Plane::ALL {
                let path = logits_path(p, &case.id, plane, variant);
                if !path.exists() {
                    log::warn!("ensemble: {} is missing", path.display());
                    continue;
                }
                let map = load_logits(&path, plane, variant)?;
                input.insert(plane.into(), variant, adjust(&map, false)?.labels)?;
                maps.push(map);
            }
            if let [xy, yz, zx] = &maps[..] {
                let sum = sum_plane_logits(xy, yz, zx)?;
                let adjusted = adjust(&sum, false)?.labels;
                let (plain, adj) = match variant {
                    Variant::Original => ("baseline", "adjusted"),
                    Variant::Transferred => ("styleseg-baseline", "transferred-adjusted"),
                };
                rows.insert(plain, argmax_labels(&sum));
                rows.insert(adj, adjusted.clone());
                input.insert(PlaneTag::Sum, variant, adjusted)?;
            }
        }
        let voted = vote_with(&input, &ties).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("case {}: {msg}", case.id)),
            other => other,
        })?;
        rows.insert("ensemble", voted);
        for (name, labels) in &rows {
            let path = dir.join(&case.id).join(format!("{name}.nii.gz"));
            write_nifti(&path, labels.view(), case.spacing)?;
            files.push(path);
        }
        if p.diagnostics {
            for ((plane, variant), labels) in input.iter() {
                let path = dir.join(&case.id).join("votes").join(format!("{plane}-{variant}.nii.gz"));
                write_nifti(&path, labels.view(), case.spacing)?;
                files.push(path);
            }
        }
    }
    Ok(StageOutput {
        files,
        summary: serde_json::json!({ "cases": test.len(), "tie_break": p.cfg.ensemble.tie_break }),
    })
}

/// Label map written by the ensemble stage for one report row.
pub(super) fn row_path(p: &Pipeline, case: &str, row: &str) -> PathBuf {
    p.stage_dir(Stage::Ensemble).join(case).join(format!("{row}.nii.gz"))
}
