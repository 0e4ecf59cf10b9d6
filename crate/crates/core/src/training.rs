//! Multiple-instance objective, gradients, Adam with cosine annealing and
//! the training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::eval::evaluate_model;
use crate::fusion::FeatureSequence;
use crate::model::tape::{forward_tape, TapeParams};
use crate::model::{HyperVDModel, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Matrix;
use crate::{Mode, Rng};

/// Frames per snippet.
pub const FRAMES_PER_SNIPPET: usize = 16;

/// Log arguments in the loss are clamped here.
pub const LOSS_CLAMP: f64 = 1e-12;

/// One training or test video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoBag {
    pub id: String,
    pub visual: FeatureSequence,
    pub audio: FeatureSequence,
    /// Video-level label, 0 or 1.
    pub label: u8,
    /// Per-frame labels (`16 T` entries); test videos only.
    pub frame_labels: Option<Vec<u8>>,
}

impl VideoBag {
    pub fn new(
        id: impl Into<String>,
        visual: FeatureSequence,
        audio: FeatureSequence,
        label: u8,
        frame_labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let id = id.into();
        if label > 1 {
            return Err(Error::Data(format!("video `{id}`: label must be 0 or 1, got {label}")));
        }
        if visual.len() != audio.len() {
            return Err(Error::Alignment {
                visual: visual.len(),
                audio: audio.len(),
            });
        }
        if let Some(f) = &frame_labels {
            if f.len() != FRAMES_PER_SNIPPET * visual.len() {
                return Err(Error::Data(format!(
                    "video `{id}`: {} frame labels for {} snippets",
                    f.len(),
                    visual.len()
                )));
            }
            if f.iter().any(|&v| v > 1) {
                return Err(Error::Data(format!("video `{id}`: frame labels must be 0 or 1")));
            }
        }
        Ok(Self {
            id,
            visual,
            audio,
            label,
            frame_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.visual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visual.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Videos per optimizer step.
    pub batch_size: usize,
    pub lr0: f64,
    /// k-max divisor: `k = floor(T / q) + 1`.
    pub q: usize,
    /// Set by the caller, not read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            lr0: 5e-4,
            q: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.q == 0 {
            return bad("epochs, batch_size and q must be positive");
        }
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return bad("lr0 must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

/// `k = floor(T / q) + 1`, clipped to `T`.
pub fn topk_count(t: usize, q: usize) -> usize {
    (t / q + 1).min(t)
}

/// Indices of the `k` largest scores; ties go to the lower index.
pub fn topk_indices(scores: &[f64], q: usize) -> Vec<usize> {
    let k = topk_count(scores.len(), q);
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(k);
    idx
}

pub fn topk_mean(scores: &[f64], q: usize) -> f64 {
    let idx = topk_indices(scores, q);
    idx.iter().map(|&i| scores[i]).sum::<f64>() / idx.len() as f64
}

/// Mean binary cross-entropy of bag scores against bag labels.
pub fn mil_loss(sbar: &[f64], labels: &[u8]) -> f64 {
    assert_eq!(sbar.len(), labels.len());
    assert!(!sbar.is_empty());
    let total: f64 = sbar
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let y = f64::from(y);
            -y * s.max(LOSS_CLAMP).ln() - (1.0 - y) * (1.0 - s).max(LOSS_CLAMP).ln()
        })
        .sum();
    total / sbar.len() as f64
}

/// Loss of one video and the gradient of that loss for every parameter.
pub fn video_gradients(
    model: &HyperVDModel,
    bag: &VideoBag,
    q: usize,
    mode: &mut Mode<'_>,
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let params = TapeParams::register(&mut tape, &model.store);
    let scores = forward_tape(model, &mut tape, &params, &bag.visual, &bag.audio, mode)?;
    let top = topk_indices(tape.value(scores).as_slice(), q);
    let sbar = tape.mean_of_rows(scores, top);
    let loss = tape.bce(sbar, f64::from(bag.label));
    let grads = tape.backward(loss);
    let out = model
        .store
        .iter()
        .zip(params.vars())
        .map(|((_, p), &v)| match grads.get(v) {
            Some(g) => g.clone(),
            None => Matrix::zeros(p.value.rows(), p.value.cols()),
        })
        .collect();
    Ok((tape.value(loss).as_slice()[0], out))
}

/// Dropout stream for one video of one batch, independent of thread scheduling.
fn video_rng(seed: u64, epoch: usize, batch: usize, index: usize) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 42) ^ ((batch as u64) << 21) ^ index as u64);
    rng
}

/// Where train-mode dropout draws come from; `None` evaluates in eval mode.
#[derive(Clone, Copy, Debug)]
pub struct DropoutStream {
    pub seed: u64,
    pub epoch: usize,
    pub batch: usize,
}

/// Mean loss over the batch and its gradient. Videos are processed in
/// parallel and reduced in batch order, so the result is deterministic.
pub fn batch_gradients(
    model: &HyperVDModel,
    batch: &[&VideoBag],
    q: usize,
    dropout: Option<DropoutStream>,
) -> Result<(f64, Vec<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let per_video = batch
        .par_iter()
        .enumerate()
        .map(|(i, bag)| match dropout {
            Some(d) => {
                let mut rng = video_rng(d.seed, d.epoch, d.batch, i);
                video_gradients(model, bag, q, &mut Mode::Train(&mut rng))
            }
            None => video_gradients(model, bag, q, &mut Mode::Eval),
        })
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut total: Vec<Matrix> = model
        .store
        .iter()
        .map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols()))
        .collect();
    for (l, grads) in &per_video {
        loss += l / n;
        for (acc, g) in total.iter_mut().zip(grads) {
            acc.axpy(1.0 / n, g);
        }
    }
    for ((_, p), g) in model.store.iter().zip(&total) {
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    Ok((loss, total))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Matrix> = store
            .iter()
            .map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update without weight decay.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, grads: &[Matrix], lr: f64) {
    assert_eq!(grads.len(), store.len());
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((param, g), m), v) in store.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let values = param.value.as_mut_slice();
        let it = values
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice());
        for (((p, &g), m), v) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + state.eps);
            if step != 0.0 {
                *p -= step;
            }
        }
    }
}

/// `lr0 (1 + cos(pi epoch / epochs)) / 2`, floored at 0.
pub fn cosine_lr(epoch: usize, epochs: usize, lr0: f64) -> f64 {
    let phase = std::f64::consts::PI * epoch as f64 / epochs as f64;
    (lr0 * (1.0 + phase.cos()) / 2.0).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Frame-level AP on the held-out split, if one was given.
    pub eval_ap: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: HyperVDModel,
    /// Model snapshot from the epoch with the highest held-out AP (the final
    /// model when there is no held-out split).
    pub best: HyperVDModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Trains from a fresh initialization. Everything, including shuffling and
/// dropout, derives from `train_cfg.seed`.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[VideoBag],
    eval_set: &[VideoBag],
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let positives = train_set.iter().filter(|b| b.label == 1).count();
    if positives == 0 || positives == train_set.len() {
        return Err(Error::Config("training set must contain both labels".into()));
    }
    let mut model = HyperVDModel::new(model_cfg.clone(), train_cfg.seed)?;
    let mut adam = AdamState::new(&model.store, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps);
    let mut shuffle_rng = Rng::seed_from_u64(train_cfg.seed);
    shuffle_rng.set_stream(u64::MAX);

    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(f64, usize, HyperVDModel)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..train_cfg.epochs {
        let lr = cosine_lr(epoch, train_cfg.epochs, train_cfg.lr0);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch: Vec<&VideoBag> = chunk.iter().map(|&i| &train_set[i]).collect();
            let stream = DropoutStream {
                seed: train_cfg.seed,
                epoch,
                batch: b,
            };
            let (loss, grads) = batch_gradients(&model, &batch, train_cfg.q, Some(stream))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut model.store, &mut adam, &grads, lr);
        }
        let eval_ap = if eval_set.is_empty() {
            None
        } else {
            Some(evaluate_model(&model, eval_set)?.ap)
        };
        if let Some(ap) = eval_ap {
            if best.as_ref().is_none_or(|(b, _, _)| ap > *b) {
                best = Some((ap, epoch, model.clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            eval_ap,
        });
    }
    let (best_epoch, best) = match best {
        Some((_, e, m)) => (e, m),
        None => (train_cfg.epochs - 1, model.clone()),
    };
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        history,
    })
}

/// History as delimited text: `epoch,lr,train_loss,eval_ap`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,eval_ap\n");
    for r in history {
        let ap = r.eval_ap.map_or_else(String::new, |a| a.to_string());
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, ap));
    }
    out
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

/// Denominator floor of the gradient-check relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Entries above tolerance.
    pub failures: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares every scalar's analytic gradient of the eval-mode batch loss
/// with a central difference of step `h`. The relative error is
/// `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn gradient_check(
    model: &HyperVDModel,
    batch: &[VideoBag],
    q: usize,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let refs: Vec<&VideoBag> = batch.iter().collect();
    let (_, analytic) = batch_gradients(model, &refs, q, None)?;
    let loss_at = |m: &HyperVDModel| -> Result<f64> {
        let mut sbar = Vec::with_capacity(batch.len());
        for b in batch {
            let s = m.forward(&b.visual, &b.audio, &mut Mode::Eval)?;
            sbar.push(topk_mean(s.as_slice(), q));
        }
        let labels: Vec<u8> = batch.iter().map(|b| b.label).collect();
        Ok(mil_loss(&sbar, &labels))
    };
    let ids: Vec<_> = model.store.ids().collect();
    let jobs: Vec<(usize, usize)> = ids
        .iter()
        .enumerate()
        .flat_map(|(pi, &id)| (0..model.store.get(id).len()).map(move |j| (pi, j)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(pi, j)| {
            let id = ids[pi];
            let mut m = model.clone();
            let base = m.store.get(id).as_slice()[j];
            m.store.get_mut(id).as_mut_slice()[j] = base + h;
            let up = loss_at(&m)?;
            m.store.get_mut(id).as_mut_slice()[j] = base - h;
            let down = loss_at(&m)?;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi].as_slice()[j];
            let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            Ok(GradCheckEntry {
                param: model.store.param(id).name.clone(),
                index: j,
                analytic: a,
                numeric,
                rel_err,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        checked: entries.len(),
        max_rel_err,
        tolerance,
        failures: entries.into_iter().filter(|e| !(e.rel_err <= tolerance)).collect(),
    })
}
