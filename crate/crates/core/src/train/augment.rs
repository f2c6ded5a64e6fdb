use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{nearest_index, Image};
use crate::labelmap::{LabelMap, IGNORE};

/// Training-time augmentation, applied in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Resize ratio drawn uniformly from `[low, high]`.
    #[serde(default = "default_resize_range")]
    pub resize_range: (f64, f64),
    /// Square crop side; `None` keeps the whole resized frame. Frames smaller
    /// than the crop are padded (image with 0, labels with ignore).
    #[serde(default)]
    pub crop_size: Option<usize>,
    #[serde(default = "default_flip_prob")]
    pub flip_prob: f64,
    /// Per-channel gain drawn from `[1 - a, 1 + a]`.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_resize_range() -> (f64, f64) {
    (0.5, 2.0)
}

fn default_flip_prob() -> f64 {
    0.5
}

fn default_jitter() -> f64 {
    0.1
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            resize_range: default_resize_range(),
            crop_size: None,
            flip_prob: default_flip_prob(),
            jitter: default_jitter(),
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn identity() -> Self {
        Self {
            resize_range: (1.0, 1.0),
            crop_size: None,
            flip_prob: 0.0,
            jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.resize_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::validation(format!(
                "resize range must satisfy 0 < low <= high, got [{lo}, {hi}]"
            )));
        }
        if self.crop_size == Some(0) {
            return Err(Error::validation("crop size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::validation("flip probability must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(Error::validation("jitter amplitude must be in [0, 1]"));
        }
        Ok(())
    }
}

fn resize_labels(label: &LabelMap, out_h: usize, out_w: usize) -> LabelMap {
    if out_h == label.height() && out_w == label.width() {
        return label.clone();
    }
    let cols: Vec<usize> = (0..out_w)
        .map(|x| nearest_index(x, label.width(), out_w))
        .collect();
    let mut data = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = nearest_index(y, label.height(), out_h);
        data.extend(cols.iter().map(|&sx| label.get(sy, sx)));
    }
    LabelMap::new(out_h, out_w, data).expect("non-empty target")
}

fn crop_labels(label: &LabelMap, top: usize, left: usize, h: usize, w: usize) -> LabelMap {
    let mut data = vec![IGNORE; h * w];
    for y in 0..h.min(label.height().saturating_sub(top)) {
        for x in 0..w.min(label.width().saturating_sub(left)) {
            data[y * w + x] = label.get(top + y, left + x);
        }
    }
    LabelMap::new(h, w, data).expect("non-empty crop")
}

/// Random resize (bilinear image, nearest labels), crop, horizontal flip and
/// colour jitter. Labels move in lockstep with the image and are never
/// interpolated.
pub fn augment<R: Rng + ?Sized>(
    image: &Image,
    label: &LabelMap,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Image, LabelMap)> {
    if image.height() != label.height() || image.width() != label.width() {
        return Err(Error::validation(format!(
            "image is {}x{}, labels are {}x{}",
            image.height(),
            image.width(),
            label.height(),
            label.width()
        )));
    }
    let (lo, hi) = cfg.resize_range;
    let ratio = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let rh = ((image.height() as f64 * ratio).round() as usize).max(1);
    let rw = ((image.width() as f64 * ratio).round() as usize).max(1);
    let mut img = image.resize(rh, rw)?;
    let mut lab = resize_labels(label, rh, rw);

    if let Some(side) = cfg.crop_size {
        let top = if rh > side { rng.random_range(0..=rh - side) } else { 0 };
        let left = if rw > side { rng.random_range(0..=rw - side) } else { 0 };
        img = img.crop_padded(top, left, side, side);
        lab = crop_labels(&lab, top, left, side, side);
    }

    if cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob {
        img = img.hflip();
        lab = lab.hflip();
    }

    if cfg.jitter > 0.0 {
        let a = cfg.jitter;
        for plane in img.planes_mut() {
            let gain = 1.0 + rng.random_range(-a..=a) as f32;
            plane.iter_mut().for_each(|v| *v = (*v * gain).clamp(0.0, 1.0));
        }
    }
    Ok((img, lab))
}
