//! Frame-level average precision and score-curve files.

use std::fmt::Write as _;
use std::path::Path;

use crate::data_io::expand_scores;
use crate::error::{Error, Result};
use crate::model::HyperVDModel;
use crate::training::VideoBag;
use crate::Mode;

/// Average precision over the descending-score ranking.
///
/// Ties keep their original order. The sum `sum_k P@k rel(k)` is accumulated
/// in rank order and divided by the number of positives once at the end.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] != 0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ap: f64,
    pub n_frames: usize,
    pub n_positive: usize,
    /// Per-video AP; `None` for videos without positive frames.
    pub per_video: Vec<(String, Option<f64>)>,
}

impl EvalReport {
    /// Ranks all frames of all videos together.
    pub fn from_videos(videos: &[(String, Vec<f64>, Vec<u8>)]) -> Result<Self> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut per_video = Vec::with_capacity(videos.len());
        for (id, s, l) in videos {
            if s.len() != l.len() {
                return Err(Error::Data(format!(
                    "video `{id}`: {} frame scores for {} frame labels",
                    s.len(),
                    l.len()
                )));
            }
            let ap = match average_precision(s, l) {
                Ok(ap) => Some(ap),
                Err(Error::UndefinedMetric) => None,
                Err(e) => return Err(e),
            };
            per_video.push((id.clone(), ap));
            scores.extend_from_slice(s);
            labels.extend_from_slice(l);
        }
        Ok(Self {
            ap: average_precision(&scores, &labels)?,
            n_frames: labels.len(),
            n_positive: labels.iter().filter(|&&l| l != 0).count(),
            per_video,
        })
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "ap: {:.6}", self.ap).unwrap();
        writeln!(out, "n_frames: {}", self.n_frames).unwrap();
        writeln!(out, "n_positive: {}", self.n_positive).unwrap();
        for (id, ap) in &self.per_video {
            match ap {
                Some(ap) => writeln!(out, "video.{id}: {ap:.6}").unwrap(),
                None => writeln!(out, "video.{id}: undefined").unwrap(),
            }
        }
        out
    }
}

/// Eval-mode frame scores of one video (each snippet score repeated per frame).
pub fn frame_scores(model: &HyperVDModel, bag: &VideoBag) -> Result<Vec<f64>> {
    let s = model.forward(&bag.visual, &bag.audio, &mut Mode::Eval)?;
    Ok(expand_scores(s.as_slice()))
}

/// Scores every video and computes frame-level AP; all videos need frame labels.
pub fn evaluate_model(model: &HyperVDModel, videos: &[VideoBag]) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(videos.len());
    for bag in videos {
        let labels = bag
            .frame_labels
            .clone()
            .ok_or_else(|| Error::Data(format!("video `{}` has no frame labels", bag.id)))?;
        rows.push((bag.id.clone(), frame_scores(model, bag)?, labels));
    }
    EvalReport::from_videos(&rows)
}

pub const CURVE_HEADER: &str = "frame_index,score,label";

/// Writes `frame_index,score,label` rows; scores keep 12 decimals.
pub fn export_curves(path: impl AsRef<Path>, scores: &[f64], labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} frame scores for {} frame labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut out = String::with_capacity(24 * (scores.len() + 1));
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for (i, (s, l)) in scores.iter().zip(labels).enumerate() {
        writeln!(out, "{i},{s:.12},{l}").unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a curve file back into scores and labels.
pub fn read_curves(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<u8>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(Error::format(path, 0, "missing curve header"));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut offset = CURVE_HEADER.len() as u64 + 1;
    for (n, line) in lines.enumerate() {
        let bad = || Error::format(path, offset, format!("malformed curve row `{line}`"));
        let mut parts = line.split(',');
        let (Some(idx), Some(score), Some(label), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        if idx.parse::<usize>().ok() != Some(n) {
            return Err(bad());
        }
        scores.push(score.parse::<f64>().map_err(|_| bad())?);
        labels.push(match label {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad()),
        });
        offset += line.len() as u64 + 1;
    }
    Ok((scores, labels))
}
