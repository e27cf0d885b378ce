//! Library-level walk through the phantom workflow: files on disk, domain
//! clustering, style selection and fusion on small volumes.

use std::collections::BTreeMap;

use cardioseg::domain::{
    build_style_library, hierarchical_cluster, pairwise_distances, sample_distribution, Linkage,
};
use cardioseg::metrics::{evaluate_case, Connectivity};
use cardioseg::postprocess::{adjust, sum_plane_logits, vote, EnsembleInput};
use cardioseg::segment::{LogitsMap, PlaneTag, Variant};
use cardioseg::style::{select_style_target, LabelFractionVector, SliceKey};
use cardioseg::volume::{
    generate_phantom, load_volume, save_volume, slice_labels, PhantomSpec, Plane, VolumeFormat,
};
use ndarray::Array4;

#[test]
fn volumes_round_trip_through_both_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let (mut v, mut l) = generate_phantom(&PhantomSpec::domain_b([20, 18, 22], 3)).unwrap();
    v.id = "case".into();
    l.id = "case".into();
    for (format, name) in [(VolumeFormat::Nifti, "case.nii.gz"), (VolumeFormat::Nifti, "case.nii"), (VolumeFormat::Raw, "case.hdr")] {
        let path = tmp.path().join(name);
        save_volume(&path, format, &v, Some(&l)).unwrap();
        let (v2, l2) = load_volume(&path, format).unwrap();
        assert_eq!(v2.data, v.data, "{name}");
        assert_eq!(v2.spacing, v.spacing);
        assert_eq!(l2.unwrap().data, l.data);
    }
}

#[test]
fn domains_separate_and_targets_come_from_the_library() {
    let train: Vec<_> = (0..4).map(|i| generate_phantom(&PhantomSpec::domain_a([24; 3], 10 + i)).unwrap()).collect();
    let test: Vec<_> = (0..3).map(|i| generate_phantom(&PhantomSpec::domain_b([24; 3], 20 + i)).unwrap()).collect();
    let train_ids: Vec<String> = (0..4).map(|i| format!("train-{i}")).collect();
    let test_ids: Vec<String> = (0..3).map(|i| format!("test-{i}")).collect();
    let dists: Vec<_> = train
        .iter()
        .chain(&test)
        .zip(train_ids.iter().chain(&test_ids))
        .enumerate()
        .map(|(i, ((v, _), id))| {
            let mut v = v.clone();
            v.id = id.clone();
            sample_distribution(&v, None, 5_000, i as u64).unwrap()
        })
        .collect();
    let m = pairwise_distances(&dists).unwrap();
    let dend = hierarchical_cluster(&m, Linkage::Average).unwrap();
    let lib = build_style_library(&dend, &m, 2, &train_ids, &test_ids).unwrap();
    assert_eq!(lib.members, train_ids);

    let mut fractions = BTreeMap::new();
    for (id, (v, l)) in train_ids.iter().zip(&train) {
        for plane in Plane::ALL {
            for (index, s) in slice_labels(l, plane, v.spacing).slices.iter().enumerate() {
                let key = SliceKey { sample_id: id.clone(), plane, index };
                fractions.insert(key, LabelFractionVector::from_labels(s.view()).unwrap());
            }
        }
    }
    let (v, l) = &test[0];
    for s in slice_labels(l, Plane::Yz, v.spacing).slices.iter().step_by(5) {
        let f = LabelFractionVector::from_labels(s.view()).unwrap();
        let (key, d) = select_style_target(&f, &lib, &fractions, Some(Plane::Yz)).unwrap();
        assert_eq!(key.plane, Plane::Yz);
        assert!(lib.contains(&key.sample_id));
        assert!(fractions.iter().filter(|(k, _)| k.plane == Plane::Yz).all(|(_, g)| f.distance(g) >= d));
    }
}

/// One-hot logits that agree with `labels` with the given margin.
fn confident(labels: &ndarray::Array3<u8>, margin: f32, plane: PlaneTag, variant: Variant) -> LogitsMap {
    let (x, y, z) = labels.dim();
    let scores = Array4::from_shape_fn((3, x, y, z), |(c, i, j, k)| if labels[[i, j, k]] as usize == c { margin } else { 0.0 });
    LogitsMap::new(scores, plane, variant, vec![1.0]).unwrap()
}

#[test]
fn fusion_of_perfect_maps_scores_perfectly() {
    let (_, l) = generate_phantom(&PhantomSpec::domain_a([24; 3], 5)).unwrap();
    let mut input = EnsembleInput::new();
    for variant in Variant::ALL {
        let maps: Vec<_> = Plane::ALL.iter().map(|&p| confident(&l.data, 3.0, p.into(), variant)).collect();
        for m in &maps {
            input.insert(m.plane, variant, adjust(m, false).unwrap().labels).unwrap();
        }
        let sum = sum_plane_logits(&maps[0], &maps[1], &maps[2]).unwrap();
        input.insert(PlaneTag::Sum, variant, adjust(&sum, false).unwrap().labels).unwrap();
    }
    let fused = vote(&input).unwrap();
    assert_eq!(fused, l.data);
    let m = evaluate_case("p", &fused, &l.data, [1.0; 3], Connectivity::Six).unwrap();
    assert_eq!(m.overall, Some(1.0));
}
