//! Confusion-matrix metrics (mIoU, frequency-weighted IoU) and the
//! sliding-window video consistency score VCn.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::{LabelMap, IGNORE};

/// `counts[g * C + p]` = pixels with ground truth `g` predicted as `p`.
/// Pixels whose ground truth is ignore are never counted; pixels where the
/// prediction abstains (ignore) are tallied in `abstained` instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_count: usize,
    counts: Vec<u64>,
    abstained: u64,
}

impl ConfusionMatrix {
    pub fn new(class_count: usize) -> Result<Self> {
        if class_count == 0 || class_count > usize::from(IGNORE) {
            return Err(Error::validation(format!(
                "class count must be in [1, 255], got {class_count}"
            )));
        }
        Ok(Self {
            class_count,
            counts: vec![0; class_count * class_count],
            abstained: 0,
        })
    }

    /// Row-major `C x C` counts.
    pub fn from_counts(class_count: usize, counts: Vec<u64>) -> Result<Self> {
        let mut cm = Self::new(class_count)?;
        if counts.len() != class_count * class_count {
            return Err(Error::validation(format!(
                "expected {} counts, got {}",
                class_count * class_count,
                counts.len()
            )));
        }
        cm.counts = counts;
        Ok(cm)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.class_count + pred]
    }

    /// Pixels with a valid ground truth where the prediction was ignore.
    pub fn abstained(&self) -> u64 {
        self.abstained
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one frame. Nothing is modified on error.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if !pred.same_dims(gt) {
            return Err(Error::validation(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        pred.check_classes(self.class_count)?;
        gt.check_classes(self.class_count)?;
        let c = self.class_count;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (g, p) {
                (IGNORE, _) => {}
                (_, IGNORE) => self.abstained += 1,
                _ => self.counts[usize::from(g) * c + usize::from(p)] += 1,
            }
        }
        Ok(())
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        if self.class_count != other.class_count {
            return Err(Error::validation(format!(
                "cannot merge confusion matrices over {} and {} classes",
                self.class_count, other.class_count
            )));
        }
        Ok(ConfusionMatrix {
            class_count: self.class_count,
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a + b)
                .collect(),
            abstained: self.abstained + other.abstained,
        })
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.class_count..(c + 1) * self.class_count]
            .iter()
            .sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.class_count).map(|g| self.get(g, c)).sum()
    }

    /// IoU per class; `None` where the class appears in neither ground truth
    /// nor prediction.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.class_count)
            .map(|c| {
                let tp = self.get(c, c);
                let union = self.row_sum(c) + self.col_sum(c) - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Unweighted mean over classes with a defined IoU.
    pub fn miou(&self) -> Result<f64> {
        let defined: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(Error::validation("empty evaluation"));
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// IoU weighted by each class's share of counted ground-truth pixels.
    pub fn weighted_iou(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::validation("empty evaluation"));
        }
        let ious = self.per_class_iou();
        Ok((0..self.class_count)
            .map(|c| {
                let w = self.row_sum(c) as f64 / total as f64;
                w * ious[c].unwrap_or(0.0)
            })
            .sum())
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total() + self.abstained;
        if total == 0 {
            return Err(Error::validation("empty evaluation"));
        }
        let correct: u64 = (0..self.class_count).map(|c| self.get(c, c)).sum();
        Ok(correct as f64 / total as f64)
    }
}

/// How VCn window scores are combined across videos.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VcPooling {
    /// Mean over every scored window of every video.
    #[default]
    Windows,
    /// Mean per video first, then mean over videos.
    PerVideo,
}

/// Window scores `|T| / |S|` for one video, skipping windows with empty `S`.
pub fn window_scores(preds: &[LabelMap], gts: &[LabelMap], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::validation("window length must be at least 1"));
    }
    if preds.len() != gts.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if !p.same_dims(g) || !g.same_dims(&gts[0]) {
            return Err(Error::validation(format!(
                "frame {i}: inconsistent dimensions"
            )));
        }
    }
    if gts.len() < n {
        return Ok(Vec::new());
    }
    let pixels = gts[0].len();
    let mut scores = Vec::new();
    for start in 0..=gts.len() - n {
        let window = start..start + n;
        let (mut consistent, mut correct) = (0u64, 0u64);
        for i in 0..pixels {
            let g = gts[start].data()[i];
            if g == IGNORE || gts[window.clone()].iter().any(|f| f.data()[i] != g) {
                continue;
            }
            consistent += 1;
            if preds[window.clone()].iter().all(|f| f.data()[i] == g) {
                correct += 1;
            }
        }
        if consistent > 0 {
            scores.push(correct as f64 / consistent as f64);
        }
    }
    Ok(scores)
}

/// VCn for a single video.
pub fn video_consistency(preds: &[LabelMap], gts: &[LabelMap], n: usize) -> Result<f64> {
    let scores = window_scores(preds, gts, n)?;
    if scores.is_empty() {
        return Err(Error::validation(format!("no windows of length {n}")));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Collects VCn window scores over many videos.
#[derive(Debug, Clone)]
pub struct VcAccumulator {
    n: usize,
    per_video: Vec<Vec<f64>>,
}

impl VcAccumulator {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("window length must be at least 1"));
        }
        Ok(Self {
            n,
            per_video: Vec::new(),
        })
    }

    pub fn add_video(&mut self, preds: &[LabelMap], gts: &[LabelMap]) -> Result<()> {
        let scores = window_scores(preds, gts, self.n)?;
        self.per_video.push(scores);
        Ok(())
    }

    pub fn finish(&self, pooling: VcPooling) -> Result<f64> {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let value = match pooling {
            VcPooling::Windows => {
                let all: Vec<f64> = self.per_video.iter().flatten().copied().collect();
                (!all.is_empty()).then(|| mean(&all))
            }
            VcPooling::PerVideo => {
                let means: Vec<f64> = self
                    .per_video
                    .iter()
                    .filter(|v| !v.is_empty())
                    .map(|v| mean(v))
                    .collect();
                (!means.is_empty()).then(|| mean(&means))
            }
        };
        value.ok_or_else(|| Error::validation(format!("no windows of length {}", self.n)))
    }
}

/// The metric row reported for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub miou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_iou: Option<f64>,
    /// Window length -> VCn.
    #[serde(default)]
    pub vc: BTreeMap<usize, f64>,
    #[serde(default)]
    pub per_class_iou: Vec<Option<f64>>,
    #[serde(default)]
    pub abstained: u64,
}

impl MetricReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            miou: cm.miou()?,
            weighted_iou: Some(cm.weighted_iou()?),
            vc: BTreeMap::new(),
            per_class_iou: cm.per_class_iou(),
            abstained: cm.abstained(),
        })
    }

    /// `class,iou` lines; undefined classes have an empty value.
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,iou\n");
        for (c, iou) in self.per_class_iou.iter().enumerate() {
            match iou {
                Some(v) => out.push_str(&format!("{c},{v:.6}\n")),
                None => out.push_str(&format!("{c},\n")),
            }
        }
        out
    }
}

/// One video's aligned predictions and ground truth.
pub struct VideoPair {
    pub preds: Vec<LabelMap>,
    pub gts: Vec<LabelMap>,
}

/// Full metric suite over a set of videos. Videos are accumulated in
/// parallel and merged in input order. A window length for which no video
/// is long enough is left out of `vc` with a warning.
pub fn evaluate(
    videos: &[VideoPair],
    class_count: usize,
    vc_windows: &[usize],
    pooling: VcPooling,
) -> Result<MetricReport> {
    let matrices = videos
        .par_iter()
        .map(|v| {
            let mut cm = ConfusionMatrix::new(class_count)?;
            for (p, g) in v.preds.iter().zip(&v.gts) {
                cm.accumulate(p, g)?;
            }
            Ok(cm)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::new(class_count)?;
    for m in &matrices {
        cm = cm.merge(m)?;
    }
    let mut report = MetricReport::from_confusion(&cm)?;
    for &n in vc_windows {
        let mut acc = VcAccumulator::new(n)?;
        for v in videos {
            acc.add_video(&v.preds, &v.gts)?;
        }
        match acc.finish(pooling) {
            Ok(vc) => {
                report.vc.insert(n, vc);
            }
            Err(_) => log::warn!("VC{n}: no video has {n} frames with consistent labels"),
        }
    }
    Ok(report)
}
