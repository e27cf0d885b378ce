//! Joint tri-planar training followed by per-plane fine-tuning.

use std::fmt::Write as _;
use std::path::PathBuf;

use cardioseg::nn::{read_archive, write_archive, TensorArchive};
use cardioseg::rng::{derive_seed, tag};
use cardioseg::segment::{build_backbone, train, LabeledSlice, SegNet};
use cardioseg::volume::{slice_labels, slice_volume, Plane};
use cardioseg::{Error, Result};
use rayon::prelude::*;

use super::data::{cases, load_labeled, Role};
use super::{write_file, Pipeline, Stage, StageOutput};

const KIND: &str = "cardioseg-segnet";

fn model_path(p: &Pipeline, name: &str) -> PathBuf {
    p.stage_dir(Stage::Train).join(format!("{name}.safetensors"))
}

fn fresh_model(p: &Pipeline) -> Result<SegNet<f32>> {
    let seg = &p.cfg.segmentation;
    build_backbone(&seg.aspp, &seg.encoder, seg.augmentation.crop, derive_seed(p.cfg.seed, &[tag("model")]))
}

/// Rebuilds a trained network from its archive.
pub(super) fn load_model(p: &Pipeline, plane: Plane) -> Result<SegNet<f32>> {
    let path = model_path(p, plane.as_str());
    let (archive, manifest) = read_archive(&path)?;
    if manifest.kind != KIND {
        return Err(Error::validation(format!("{}: expected a {KIND} archive, found {}", path.display(), manifest.kind)));
    }
    let mut model = fresh_model(p)?;
    archive.load_into(&mut model)?;
    Ok(model)
}

pub(super) fn run(p: &Pipeline) -> Result<StageOutput> {
    let seg = &p.cfg.segmentation;
    let dir = p.stage_dir(Stage::Train);
    let train_cases: Vec<_> = cases(p)?.into_iter().filter(|c| c.role == Role::Train).collect();
    let loaded = train_cases
        .par_iter()
        .map(|c| load_labeled(p, c))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::new();
    for (v, l) in &loaded {
        for plane in Plane::ALL {
            let images = slice_volume(v, plane).slices;
            let labels = slice_labels(l, plane, v.spacing).slices;
            data.extend(images.into_iter().zip(labels).map(|(image, labels)| LabeledSlice { plane, image, labels }));
        }
    }
    log::info!("train: {} slices from {} volumes", data.len(), loaded.len());

    let mut timing = String::from("stage\tepoch\tseconds\n");
    let trained = train(
        fresh_model(p)?,
        &data,
        &seg.schedule,
        &seg.augmentation,
        derive_seed(p.cfg.seed, &[tag("train")]),
        |r| {
            log::info!("train: {} epoch {} lr {:.5} loss {:.5} ({:.1}s)", r.stage, r.epoch, r.lr, r.loss, r.seconds);
            let _ = writeln!(timing, "{}\t{}\t{:.3}", r.stage, r.epoch, r.seconds);
        },
    )?;

    let mut files = Vec::new();
    let config = serde_json::json!({ "encoder": seg.encoder, "aspp": seg.aspp });
    let mut save = |name: &str, model: &SegNet<f32>| -> Result<()> {
        let archive = TensorArchive::from_model(model);
        let path = model_path(p, name);
        write_archive(&path, &archive, &archive.manifest(KIND, config.clone()))?;
        files.push(path.clone());
        files.push(path.with_extension("json"));
        Ok(())
    };
    save("joint", &trained.joint)?;
    for (plane, model) in &trained.planes {
        save(plane.as_str(), model)?;
    }
    let mut log = String::from("stage\tepoch\tlr\tloss\n");
    for r in &trained.log {
        let _ = writeln!(log, "{}\t{}\t{:.8}\t{:.10}", r.stage, r.epoch, r.lr, r.loss);
    }
    let log_path = dir.join("log.tsv");
    write_file(&log_path, log.as_bytes())?;
    files.push(log_path);
    // Wall-clock times differ between runs, so they are kept out of the manifest.
    write_file(&dir.join("timing.tsv"), timing.as_bytes())?;

    Ok(StageOutput {
        files,
        summary: serde_json::json!({
            "slices": data.len(),
            "loss_trace_sha256": trained.loss_trace_hash(),
            "final_loss": trained.log.last().map(|r| r.loss),
        }),
    })
}
