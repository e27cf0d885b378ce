use std::time::Instant;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::augment::augment;
use super::config::{poly_lr, AugmentationConfig, TrainSchedule};
use super::model::SegNet;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Mode, Params, Sgd};
use crate::rng::{derive_seed, tag};
use crate::volume::Plane;

/// One training slice with its aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSlice {
    pub plane: Plane,
    pub image: Array2<f32>,
    pub labels: Array2<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// `joint` or the plane being fine-tuned.
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub joint: SegNet<f32>,
    /// Fine-tuned copies in `Plane::ALL` order.
    pub planes: Vec<(Plane, SegNet<f32>)>,
    pub log: Vec<EpochRecord>,
}

impl TrainedModels {
    pub fn model(&self, plane: Plane) -> &SegNet<f32> {
        &self.planes.iter().find(|(p, _)| *p == plane).expect("all planes trained").1
    }

    /// Hash of the loss values (timings excluded).
    pub fn loss_trace_hash(&self) -> String {
        loss_trace_hash(&self.log)
    }
}

pub fn loss_trace_hash(log: &[EpochRecord]) -> String {
    let mut h = Sha256::new();
    for r in log {
        h.update(r.stage.as_bytes());
        h.update(r.epoch.to_le_bytes());
        h.update(r.loss.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Stage 1 trains one model on slices from every plane; stage 2 clones it
/// once per plane and fine-tunes each copy on that plane alone.
pub fn train(
    model: SegNet<f32>,
    data: &[LabeledSlice],
    sched: &TrainSchedule,
    aug: &AugmentationConfig,
    seed: u64,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainedModels> {
    sched.validate()?;
    aug.validate()?;
    for plane in Plane::ALL {
        if !data.iter().any(|s| s.plane == plane) {
            return Err(Error::validation(format!("no training slices for plane {plane}")));
        }
    }
    if let Some(s) = data.iter().find(|s| s.image.dim() != s.labels.dim()) {
        return Err(Error::validation(format!(
            "training slice image {:?} and labels {:?} differ in shape",
            s.image.dim(),
            s.labels.dim()
        )));
    }

    let mut log = Vec::new();
    let all: Vec<&LabeledSlice> = data.iter().collect();
    let mut joint = model;
    run_stage(&mut joint, &all, sched.joint_epochs, sched.joint_lr, "joint", sched, aug, seed, &mut log, &mut progress)?;

    let mut planes = Vec::with_capacity(3);
    for plane in Plane::ALL {
        let mut m = joint.clone();
        let subset: Vec<&LabeledSlice> = data.iter().filter(|s| s.plane == plane).collect();
        run_stage(&mut m, &subset, sched.finetune_epochs, sched.finetune_lr, plane.as_str(), sched, aug, seed, &mut log, &mut progress)?;
        planes.push((plane, m));
    }
    Ok(TrainedModels { joint, planes, log })
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    model: &mut SegNet<f32>,
    data: &[&LabeledSlice],
    epochs: usize,
    base_lr: f64,
    stage: &str,
    sched: &TrainSchedule,
    aug: &AugmentationConfig,
    seed: u64,
    log: &mut Vec<EpochRecord>,
    progress: &mut impl FnMut(&EpochRecord),
) -> Result<()> {
    let opt = Sgd {
        momentum: sched.momentum,
        weight_decay: sched.weight_decay,
    };
    let mut velocity = model.zeros_like();
    let st = tag(stage);
    let [ch, cw] = aug.crop;
    for epoch in 0..epochs {
        let started = Instant::now();
        let lr = poly_lr(base_lr, epoch, epochs);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[st, epoch as u64])));
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(sched.batch_size).enumerate() {
            let samples: Vec<(Array2<f32>, Array2<u8>)> = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[st, epoch as u64, i as u64, 1]));
                    augment(data[i].image.view(), data[i].labels.view(), aug, &mut rng)
                })
                .collect();
            let mut x = Array4::<f32>::zeros((samples.len(), 1, ch, cw));
            let mut y = Array3::<u8>::zeros((samples.len(), ch, cw));
            for (k, (img, lab)) in samples.iter().enumerate() {
                x.slice_mut(ndarray::s![k, 0, .., ..]).assign(img);
                y.index_axis_mut(Axis(0), k).assign(lab);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[st, epoch as u64, b as u64, 2]));
            let (logits, cache) = model.forward(&x, Mode::Train, &mut rng);
            let (loss, dlogits) = cross_entropy(&logits, &y);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step_size: lr,
                    detail: format!("training loss became {loss} in stage {stage}, batch {b}"),
                });
            }
            let mut grads = model.zeros_like();
            model.backward(&cache, &dlogits, &mut grads);
            opt.step(model, &grads, &mut velocity, lr);
            total += loss;
            batches += 1;
        }
        let record = EpochRecord {
            stage: stage.to_string(),
            epoch,
            lr,
            loss: total / batches.max(1) as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&record);
        log.push(record);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::config::{AsppConfig, EncoderConfig};
    use crate::segment::model::build_backbone;
    use crate::volume::{generate_phantom, slice_labels, slice_volume, PhantomSpec};

    fn setup() -> (SegNet<f32>, Vec<LabeledSlice>, TrainSchedule, AugmentationConfig) {
        let aspp = AsppConfig {
            rates: [1, 2, 3],
            branch_width: 4,
            head_widths: [6, 5],
            ..Default::default()
        };
        let enc = EncoderConfig {
            in_channels: 1,
            stem_width: 4,
            stage_widths: vec![6],
        };
        let model = build_backbone(&aspp, &enc, [12, 12], 3).unwrap();
        let (v, l) = generate_phantom(&PhantomSpec::domain_a([12, 12, 12], 4)).unwrap();
        let mut data = Vec::new();
        for plane in Plane::ALL {
            let vs = slice_volume(&v, plane);
            let ls = slice_labels(&l, plane, v.spacing);
            for (image, labels) in vs.slices.into_iter().zip(ls.slices).step_by(4) {
                data.push(LabeledSlice { plane, image, labels });
            }
        }
        let sched = TrainSchedule {
            joint_epochs: 2,
            joint_lr: 0.01,
            finetune_epochs: 1,
            finetune_lr: 0.002,
            batch_size: 4,
            ..Default::default()
        };
        (model, data, sched, AugmentationConfig::identity([12, 12]))
    }

    #[test]
    fn training_is_reproducible_and_fine_tunes_start_from_the_joint_model() {
        let (model, data, sched, aug) = setup();
        let a = train(model.clone(), &data, &sched, &aug, 7, |_| {}).unwrap();
        let b = train(model.clone(), &data, &sched, &aug, 7, |_| {}).unwrap();
        assert_eq!(a.loss_trace_hash(), b.loss_trace_hash());
        assert_eq!(a.log.len(), 2 + 3);
        assert!(a.log.iter().all(|r| r.loss.is_finite()));

        // Zero fine-tune epochs leave exact copies of the joint weights.
        let frozen = TrainSchedule { finetune_epochs: 0, ..sched };
        let c = train(model, &data, &frozen, &aug, 7, |_| {}).unwrap();
        for (_, m) in &c.planes {
            for ((n1, w1), (n2, w2)) in m.params().iter().zip(c.joint.params().iter()) {
                assert_eq!(n1, n2);
                assert_eq!(w1, w2);
            }
        }
        assert_ne!(
            a.model(Plane::Xy).params()[0].1,
            a.model(Plane::Yz).params()[0].1,
            "fine-tuned copies should diverge"
        );
    }

    #[test]
    fn every_plane_needs_data() {
        let (model, data, sched, aug) = setup();
        let only_xy: Vec<_> = data.into_iter().filter(|s| s.plane == Plane::Xy).collect();
        let err = train(model, &only_xy, &sched, &aug, 1, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
