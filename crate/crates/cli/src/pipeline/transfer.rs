//! Restyles every test slice towards its closest library slice.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use cardioseg::domain::{distribution_of, wasserstein1, StyleLibrary};
use cardioseg::postprocess::{argmax_labels, sum_plane_logits};
use cardioseg::segment::Variant;
use cardioseg::style::{build_extractor, select_style_target, transfer, LabelFractionVector, SliceKey};
use cardioseg::volume::{
    assemble_slices, cut_slices, slice_labels, slice_volume, write_nifti, LabelVolume, Plane,
};
use cardioseg::Result;
use ndarray::{Array2, ArrayView3};
use rayon::prelude::*;

use super::analyze::LIBRARY;
use super::data::{cases, load, load_labeled, Role};
use super::predict::{models, plane_logits};
use super::{read_json, write_file, Pipeline, Stage, StageOutput};
use crate::config::TargetMode;

/// Restyled volume of one case, rebuilt from the slices of one plane.
pub(super) fn transferred_path(p: &Pipeline, case: &str, plane: Plane) -> PathBuf {
    p.stage_dir(Stage::Transfer).join(case).join(format!("{plane}.nii.gz"))
}

/// Per-slice record written to `slices.tsv`.
struct SliceRecord {
    index: usize,
    target: SliceKey,
    fraction_distance: f64,
    initial: f64,
    last: f64,
    w_before: f64,
    w_after: f64,
}

fn volume_fractions(labels: ArrayView3<'_, u8>) -> Result<LabelFractionVector> {
    let flat = Array2::from_shape_vec((1, labels.len()), labels.iter().copied().collect()).expect("length matches");
    LabelFractionVector::from_labels(flat.view())
}

pub(super) fn run(p: &Pipeline) -> Result<StageOutput> {
    let settings = &p.cfg.transfer;
    let library: StyleLibrary = read_json(&p.stage_dir(Stage::Analyze).join(LIBRARY))?;
    let all = cases(p)?;

    // Label fractions and images of every library slice.
    let mut fractions = BTreeMap::new();
    let mut images: BTreeMap<SliceKey, Array2<f32>> = BTreeMap::new();
    let mut member_fractions = BTreeMap::new();
    for case in all.iter().filter(|c| c.role == Role::Train && library.contains(&c.id)) {
        let (v, l) = load_labeled(p, case)?;
        member_fractions.insert(case.id.clone(), volume_fractions(l.data.view())?);
        for plane in Plane::ALL {
            let imgs = slice_volume(&v, plane).slices;
            let labs = slice_labels(&l, plane, v.spacing).slices;
            for (index, (img, lab)) in imgs.into_iter().zip(labs).enumerate() {
                let key = SliceKey { sample_id: case.id.clone(), plane, index };
                fractions.insert(key.clone(), LabelFractionVector::from_labels(lab.view())?);
                images.insert(key, img);
            }
        }
    }

    let models = models(p)?;
    let fx = build_extractor::<f32>(&settings.optimizer)?;
    let mut files = Vec::new();
    let (mut total, mut w_improved, mut loss_decreased) = (0usize, 0usize, 0usize);
    let test: Vec<_> = all.iter().filter(|c| c.role == Role::Test).collect();
    for case in test {
        // Test labels are never read here: targets are matched on the
        // baseline prediction.
        let (volume, _) = load(p, case)?;
        let logits = models
            .iter()
            .map(|(plane, m)| plane_logits(p, m, &volume, *plane, Variant::Original))
            .collect::<Result<Vec<_>>>()?;
        let baseline = argmax_labels(&sum_plane_logits(&logits[0], &logits[1], &logits[2])?);
        let baseline_path = p.stage_dir(Stage::Transfer).join(&case.id).join("baseline.nii.gz");
        write_nifti(&baseline_path, baseline.view(), volume.spacing)?;
        files.push(baseline_path);

        let mut lib = library.clone();
        if settings.target == TargetMode::Volume {
            let own = volume_fractions(baseline.view())?;
            let nearest = member_fractions
                .iter()
                .map(|(id, f)| (own.distance(f), id))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, id)| id.clone())
                .expect("library has members");
            lib.members = vec![nearest];
        }
        let predicted = LabelVolume { data: baseline, id: case.id.clone() };

        let mut table = String::from("plane\tindex\ttarget\ttarget_plane\ttarget_index\tfraction_distance\tinitial_loss\tfinal_loss\tw_before\tw_after\n");
        let mut trace_tsv = String::from("plane\tindex\tepoch\tcontent\tstyle\ttotal\n");
        for plane in Plane::ALL {
            let content = cut_slices(volume.data.view(), plane);
            let labels = slice_labels(&predicted, plane, volume.spacing).slices;
            let results = content
                .par_iter()
                .zip(labels.par_iter())
                .enumerate()
                .map(|(index, (c, l))| {
                    let f = LabelFractionVector::from_labels(l.view())?;
                    let (key, d) = select_style_target(&f, &lib, &fractions, settings.same_plane.then_some(plane))?;
                    let style = &images[key];
                    let out = transfer(c.view(), style.view(), &fx, &settings.optimizer)?;
                    let style_dist = distribution_of(style.iter().copied(), &key.sample_id)?;
                    let record = SliceRecord {
                        index,
                        target: key.clone(),
                        fraction_distance: d,
                        initial: out.initial_loss().total,
                        last: out.final_loss.total,
                        w_before: wasserstein1(&distribution_of(c.iter().copied(), &case.id)?, &style_dist),
                        w_after: wasserstein1(&distribution_of(out.image.iter().copied(), &case.id)?, &style_dist),
                    };
                    Ok((record, out))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut restyled = Vec::with_capacity(results.len());
            for (r, out) in results {
                total += 1;
                w_improved += usize::from(r.w_after < r.w_before);
                loss_decreased += usize::from(r.last < r.initial);
                let _ = writeln!(
                    table,
                    "{plane}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6e}\t{:.6e}\t{:.6}\t{:.6}",
                    r.index, r.target.sample_id, r.target.plane, r.target.index, r.fraction_distance, r.initial, r.last, r.w_before, r.w_after
                );
                if p.diagnostics {
                    for (epoch, l) in out.trace.iter().enumerate() {
                        let _ = writeln!(trace_tsv, "{plane}\t{}\t{epoch}\t{:.6e}\t{:.6e}\t{:.6e}", r.index, l.content, l.style, l.total);
                    }
                }
                restyled.push(out.image);
            }
            let data = assemble_slices(&restyled, plane, volume.shape())?;
            let path = transferred_path(p, &case.id, plane);
            write_nifti(&path, data.view(), volume.spacing)?;
            files.push(path);
        }
        let dir = p.stage_dir(Stage::Transfer).join(&case.id);
        write_file(&dir.join("slices.tsv"), table.as_bytes())?;
        files.push(dir.join("slices.tsv"));
        if p.diagnostics {
            write_file(&dir.join("trace.tsv"), trace_tsv.as_bytes())?;
            files.push(dir.join("trace.tsv"));
        }
        log::info!("transfer: {} done", case.id);
    }
    Ok(StageOutput {
        files,
        summary: serde_json::json!({
            "slices": total,
            "wasserstein_decreased": w_improved,
            "loss_decreased": loss_decreased,
        }),
    })
}
