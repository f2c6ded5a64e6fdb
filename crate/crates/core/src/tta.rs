//! Test-time augmentation: run a segmenter at several scales, optionally on
//! the mirrored frame too, and average the soft outputs at base resolution.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_plane_bilinear, Image};
use crate::probmap::ProbMap;

/// A model that maps an RGB frame to per-pixel class probabilities of the
/// same height and width.
pub trait Segmenter: Sync {
    fn num_classes(&self) -> usize;
    fn segment(&self, frame: &Image) -> Result<ProbMap>;
}

impl<S: Segmenter + ?Sized> Segmenter for &S {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn segment(&self, frame: &Image) -> Result<ProbMap> {
        (**self).segment(frame)
    }
}

/// Positive rational scale factor, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scale {
    num: u64,
    den: u64,
}

impl Scale {
    pub const ONE: Scale = Scale { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::validation(format!("scale {num}/{den} must be positive")));
        }
        let g = gcd(num, den);
        let s = Scale {
            num: num / g,
            den: den / g,
        };
        if s.num > 8 * s.den {
            return Err(Error::validation(format!("scale {s} exceeds 8")));
        }
        Ok(s)
    }

    pub fn factor(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(len * self)`, half away from zero, at least 1.
    pub fn apply(self, len: usize) -> usize {
        let len = len as u64;
        ((2 * len * self.num + self.den) / (2 * self.den)).max(1) as usize
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Scale {
    type Err = Error;

    /// Accepts `a/b` or a decimal such as `1.25`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::format(format!("cannot parse scale {s:?}"));
        if let Some((a, b)) = s.split_once('/') {
            let num = parse_decimal(a.trim()).ok_or_else(bad)?;
            let den = parse_decimal(b.trim()).ok_or_else(bad)?;
            // (n1/d1) / (n2/d2)
            return Scale::new(num.0 * den.1, num.1 * den.0);
        }
        let (num, den) = parse_decimal(s).ok_or_else(bad)?;
        Scale::new(num, den)
    }
}

/// `"1.25"` -> `(125, 100)`; `"512."` -> `(512, 1)`.
fn parse_decimal(s: &str) -> Option<(u64, u64)> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 9 {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let den = 10u64.pow(frac.len() as u32);
    let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    Some((int.checked_mul(den)?.checked_add(frac)?, den))
}

impl Serialize for Scale {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scale {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Scales, in run order, and whether each scale also runs mirrored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtaConfig {
    #[serde(default = "default_scales")]
    pub scales: Vec<Scale>,
    #[serde(default = "default_flip")]
    pub flip: bool,
    /// When set, a scale `s` resizes the frame so its long side becomes
    /// `round(base_size * s)` instead of scaling native resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_size: Option<usize>,
}

/// 512/896 through 1408/896 in steps of 128/896.
pub fn default_scales() -> Vec<Scale> {
    (512..=1408)
        .step_by(128)
        .map(|n| Scale::new(n, 896).unwrap())
        .collect()
}

fn default_flip() -> bool {
    true
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            scales: default_scales(),
            flip: true,
            base_size: None,
        }
    }
}

impl TtaConfig {
    /// No augmentation: one run at native size.
    pub fn single() -> Self {
        Self {
            scales: vec![Scale::ONE],
            flip: false,
            base_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::validation("TTA needs at least one scale"));
        }
        for (i, s) in self.scales.iter().enumerate() {
            if self.scales[..i].contains(s) {
                return Err(Error::validation(format!("duplicate TTA scale {s}")));
            }
        }
        if self.base_size == Some(0) {
            return Err(Error::validation("base size must be positive"));
        }
        Ok(())
    }

    /// Output `(height, width)` for running `scale` on an `h x w` frame.
    pub fn scaled_size(&self, scale: Scale, h: usize, w: usize) -> (usize, usize) {
        match self.base_size {
            None => (scale.apply(h), scale.apply(w)),
            Some(base) => {
                let long = h.max(w) as f64;
                let f = scale.factor() * base as f64 / long;
                let r = |len: usize| ((len as f64 * f).round() as usize).max(1);
                (r(h), r(w))
            }
        }
    }

    /// `(scale, mirrored)` pairs in aggregation order: scales as listed,
    /// unflipped before flipped.
    pub fn runs(&self) -> Vec<(Scale, bool)> {
        self.scales
            .iter()
            .flat_map(|&s| {
                std::iter::once((s, false)).chain(self.flip.then_some((s, true)))
            })
            .collect()
    }
}

/// Per-class bilinear resampling with half-pixel alignment, followed by
/// per-pixel renormalisation. Identity size returns an exact copy.
pub fn resize_prob(pm: &ProbMap, out_h: usize, out_w: usize) -> Result<ProbMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::validation("resize target must be at least 1x1"));
    }
    if out_h == pm.height() && out_w == pm.width() {
        return Ok(pm.clone());
    }
    let mut values = Vec::with_capacity(out_h * out_w * pm.num_classes());
    for c in 0..pm.num_classes() {
        values.extend(resize_plane_bilinear(
            pm.plane(c),
            pm.height(),
            pm.width(),
            out_h,
            out_w,
        ));
    }
    Ok(ProbMap::renormalized(out_h, out_w, pm.num_classes(), &values))
}

/// Mirrors every class plane left to right.
pub fn hflip_prob(pm: &ProbMap) -> ProbMap {
    let mut data = pm.data().to_vec();
    for row in data.chunks_exact_mut(pm.width()) {
        row.reverse();
    }
    ProbMap::from_raw(pm.height(), pm.width(), pm.num_classes(), data)
        .expect("flip preserves shape")
}

/// Runs `model` once per `(scale, mirrored)` pair of `cfg` and returns the
/// mean of the outputs, each resampled back to the frame's size. Runs are
/// evaluated in parallel; the reduction order is always `cfg.runs()`.
pub fn tta_aggregate<S: Segmenter + ?Sized>(
    model: &S,
    frame: &Image,
    cfg: &TtaConfig,
) -> Result<ProbMap> {
    cfg.validate()?;
    let (h, w) = (frame.height(), frame.width());
    let runs = cfg.runs();
    let outputs = runs
        .par_iter()
        .map(|&(scale, flipped)| {
            let (sh, sw) = cfg.scaled_size(scale, h, w);
            let input = frame.resize(sh, sw)?;
            let input = if flipped { input.hflip() } else { input };
            let out = model.segment(&input)?;
            if out.height() != sh || out.width() != sw || out.num_classes() != model.num_classes()
            {
                return Err(Error::Contract(format!(
                    "at scale {scale}{}: segmenter returned {}x{}x{} for a {sh}x{sw} input with {} classes",
                    if flipped { " (flipped)" } else { "" },
                    out.height(),
                    out.width(),
                    out.num_classes(),
                    model.num_classes()
                )));
            }
            let out = if flipped { hflip_prob(&out) } else { out };
            resize_prob(&out, h, w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_of(outputs))
}

/// Element-wise mean in input order, renormalised per pixel. A single map is
/// returned unchanged.
pub(crate) fn mean_of(mut maps: Vec<ProbMap>) -> ProbMap {
    if maps.len() == 1 {
        return maps.pop().unwrap();
    }
    let first = &maps[0];
    let mut acc = vec![0f64; first.data().len()];
    for m in &maps {
        for (a, v) in acc.iter_mut().zip(m.data()) {
            *a += f64::from(*v);
        }
    }
    let k = maps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    ProbMap::renormalized(first.height(), first.width(), first.num_classes(), &acc)
}
