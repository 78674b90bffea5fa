//! Datasets, the training loop and evaluation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tridet_autograd::{Tape, Tensor};

use crate::assign::{center_sample, AssignConfig, AssignmentResult};
use crate::checkpoint::Checkpoint;
use crate::config::{DataConfig, RunConfig};
use crate::data::{
    generate_synthetic, read_annotations, read_feature_file, AnnotationSet, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{mean_ap, MapReport};
use crate::inference::{detect, Detection};
use crate::loss::{total_loss, LossBreakdown, Quality};
use crate::model::{Detector, VideoFeatures};
use crate::optim::{clip_grad_norm, AdamW, Schedule};
use crate::sequence::Stream;

/// Features and ground truth of every video, in annotation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: Vec<VideoFeatures>,
    pub annotations: AnnotationSet,
}

impl Dataset {
    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        let data = generate_synthetic(spec)?;
        let videos = data
            .features
            .into_iter()
            .map(|temporal| VideoFeatures {
                temporal,
                spatial: None,
            })
            .collect();
        Ok(Self {
            videos,
            annotations: data.annotations,
        })
    }

    /// Reads `<id>.tdf` for every annotated video, plus `<id>.spatial.tdf`
    /// when present.
    pub fn from_files(annotations: &Path, features: &Path) -> Result<Self> {
        let annotations = read_annotations(annotations)?;
        let mut videos = Vec::with_capacity(annotations.videos.len());
        for v in &annotations.videos {
            let temporal = read_feature_file(&features.join(format!("{}.tdf", v.id)))?;
            let spatial_path = features.join(format!("{}.spatial.tdf", v.id));
            let spatial = if spatial_path.exists() {
                let s = read_feature_file(&spatial_path)?;
                if s.stream != Stream::SpatialLevel {
                    return Err(Error::config(format!(
                        "{} is not tagged as a spatial-level stream",
                        spatial_path.display()
                    )));
                }
                Some(s)
            } else {
                None
            };
            videos.push(VideoFeatures { temporal, spatial });
        }
        Ok(Self {
            videos,
            annotations,
        })
    }

    pub fn load(cfg: &DataConfig) -> Result<Self> {
        if let Some(spec) = &cfg.synthetic {
            return Self::synthetic(spec);
        }
        match (&cfg.annotations, &cfg.features) {
            (Some(a), Some(f)) => Self::from_files(a, f),
            _ => Err(Error::config(
                "[data] needs annotations and features, or a synthetic section",
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,total,focal_pos,focal_neg,iou,n_pos,n_neg";

    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{:.6e},{:.9},{:.9},{:.9},{:.9},{},{}",
            self.epoch, self.lr, l.total, l.focal_pos, l.focal_neg, l.iou, l.n_pos, l.n_neg
        )
    }
}

/// Model, optimizer and cached label assignments.
pub struct Trainer {
    pub cfg: RunConfig,
    pub detector: Detector,
    pub optimizer: AdamW,
    /// Completed epochs.
    pub epoch: usize,
    assignments: Vec<AssignmentResult>,
    schedule: Schedule,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::config("training needs at least one video"));
        }
        if data.annotations.num_classes() != cfg.model.head.num_classes {
            return Err(Error::config(format!(
                "[model] head.num_classes = {} but the annotations define {} classes",
                cfg.model.head.num_classes,
                data.annotations.num_classes()
            )));
        }
        let detector = Detector::new(&cfg.model, cfg.seed)?;
        let optimizer = AdamW::new(cfg.training.optimizer, &detector.params);
        let assign_cfg = AssignConfig {
            radius: cfg.assignment.radius,
            num_bins: cfg.model.head.num_bins,
            num_classes: cfg.model.head.num_classes,
            multilabel: cfg.model.head.multilabel,
        };
        let assignments = data
            .videos
            .iter()
            .zip(&data.annotations.videos)
            .map(|(v, a)| center_sample(&a.segments, &detector.level_lengths(v.len()), &assign_cfg))
            .collect::<Result<Vec<_>>>()?;
        let steps_per_epoch = data.len().div_ceil(cfg.training.batch_size);
        let schedule = Schedule {
            warmup: cfg.training.warmup_epochs * steps_per_epoch,
            total: cfg.training.epochs * steps_per_epoch,
            cosine: cfg.training.cosine,
        };
        Ok(Self {
            cfg: cfg.clone(),
            detector,
            optimizer,
            epoch: 0,
            assignments,
            schedule,
        })
    }

    pub fn assignments(&self) -> &[AssignmentResult] {
        &self.assignments
    }

    /// Restores parameters and, when present, optimizer state and epoch.
    pub fn resume(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.restore_params(&mut self.detector.params)?;
        if ck.has_optimizer_state() {
            ck.restore_optimizer(&self.detector.params, &mut self.optimizer)?;
        }
        self.epoch = ck.epoch as usize;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.detector.params,
            Some(&self.optimizer),
            self.epoch as u64,
        )
    }

    /// Loss and parameter gradients of one video.
    pub fn video_gradients(
        &self,
        data: &Dataset,
        index: usize,
    ) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let tape = Tape::new();
        let p = self.detector.params.bind(&tape);
        let preds = self.detector.forward(&p, &tape, &data.videos[index])?;
        let (loss, breakdown) = total_loss(
            &preds,
            &self.assignments[index],
            &self.cfg.loss,
            Quality::Current,
        )?;
        loss.backward()?;
        Ok((breakdown, p.gradients()))
    }

    /// Video order of epoch `epoch` (0-based).
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let seed = self
            .cfg
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    /// One optimizer step on the mean loss of `batch`.
    pub fn step(&mut self, data: &Dataset, batch: &[usize]) -> Result<LossBreakdown> {
        let mut grads: Option<Vec<Tensor>> = None;
        let mut parts = Vec::with_capacity(batch.len());
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let (b, g) = self.video_gradients(data, i)?;
            parts.push(b);
            match &mut grads {
                None => grads = Some(g.into_iter().map(|t| t.map(|x| x * scale)).collect()),
                Some(acc) => {
                    for (a, t) in acc.iter_mut().zip(g) {
                        a.data_mut()
                            .iter_mut()
                            .zip(t.data())
                            .for_each(|(a, x)| *a += x * scale);
                    }
                }
            }
        }
        let mut grads = grads.ok_or_else(|| Error::config("empty batch"))?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at epoch {}, step {}",
                self.epoch + 1,
                self.optimizer.step + 1
            )));
        }
        if self.cfg.training.max_grad_norm > 0.0 {
            clip_grad_norm(&mut grads, self.cfg.training.max_grad_norm);
        }
        let factor = self.schedule.factor(self.optimizer.step);
        self.optimizer
            .update(&mut self.detector.params, &grads, factor)?;
        Ok(LossBreakdown::merge(&parts))
    }

    pub fn current_lr(&self) -> f64 {
        self.cfg.training.optimizer.lr * self.schedule.factor(self.optimizer.step)
    }

    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochLog> {
        let lr = self.current_lr();
        let order = self.epoch_order(self.epoch, data.len());
        let mut parts = Vec::new();
        for batch in order.chunks(self.cfg.training.batch_size) {
            let b = self.step(data, batch).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {}: {m}", self.epoch + 1)),
                other => other,
            })?;
            parts.push(b);
        }
        self.epoch += 1;
        let loss = LossBreakdown::merge(&parts);
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {} at epoch {}",
                loss.total, self.epoch
            )));
        }
        Ok(EpochLog {
            epoch: self.epoch,
            lr,
            loss,
        })
    }

    /// Trains until `cfg.training.epochs` epochs are complete.
    pub fn fit(
        &mut self,
        data: &Dataset,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.cfg.training.epochs {
            let log = self.run_epoch(data)?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Detections for every video; videos are processed on worker threads and
/// returned in input order.
pub fn detect_all(
    detector: &Detector,
    data: &Dataset,
    cfg: &RunConfig,
) -> Result<Vec<Vec<Detection>>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(data.len().max(1));
    let chunk = data.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<Vec<Detection>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = data
            .videos
            .chunks(chunk)
            .zip(data.annotations.videos.chunks(chunk))
            .map(|(vs, anns)| {
                s.spawn(move || {
                    vs.iter()
                        .zip(anns)
                        .map(|(v, a)| {
                            Ok(detect(
                                &detector.predict(v)?,
                                &cfg.inference,
                                Some(a.duration),
                            ))
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(data.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub fn evaluate(
    detector: &Detector,
    data: &Dataset,
    cfg: &RunConfig,
) -> Result<(MapReport, Vec<Vec<Detection>>)> {
    let dets = detect_all(detector, data, cfg)?;
    let gts: Vec<_> = data
        .annotations
        .videos
        .iter()
        .map(|v| v.segments.clone())
        .collect();
    let report = mean_ap(&dets, &gts, data.annotations.num_classes(), &cfg.eval)?;
    Ok((report, dets))
}
