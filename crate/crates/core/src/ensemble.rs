//! Fusing soft outputs of several models and turning them into hard or
//! thresholded pseudo labels.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::{LabelMap, IGNORE};
use crate::mapping::ClassMapping;
use crate::probmap::ProbMap;

/// How per-model probabilities are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Per-class arithmetic mean.
    #[default]
    Mean,
    /// Per-class maximum over models, renormalised. The argmax is the class
    /// holding the single highest probability across all models.
    Max,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Strategy::Mean),
            "max" => Ok(Strategy::Max),
            _ => Err(Error::format(format!("unknown strategy {s:?}, expected mean or max"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoLabelConfig {
    /// A pixel keeps its argmax class only when its top probability is
    /// strictly greater than this.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.4
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
        }
    }
}

impl PseudoLabelConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        let cfg = Self { threshold };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::validation(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

fn check_compatible(maps: &[ProbMap]) -> Result<&ProbMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::validation("ensemble needs at least one map"))?;
    if let Some((i, m)) = maps.iter().enumerate().find(|(_, m)| !m.same_shape(first)) {
        return Err(Error::validation(format!(
            "map {i} is {}x{}x{}, expected {}x{}x{}",
            m.height(),
            m.width(),
            m.num_classes(),
            first.height(),
            first.width(),
            first.num_classes()
        )));
    }
    Ok(first)
}

/// Per-pixel, per-class mean over `maps` in input order, renormalised.
pub fn ensemble_probs(maps: &[ProbMap]) -> Result<ProbMap> {
    check_compatible(maps)?;
    Ok(crate::tta::mean_of(maps.to_vec()))
}

/// Per-pixel, per-class maximum over `maps`, renormalised.
pub fn ensemble_max(maps: &[ProbMap]) -> Result<ProbMap> {
    let first = check_compatible(maps)?;
    if maps.len() == 1 {
        return Ok(first.clone());
    }
    let mut acc: Vec<f64> = first.data().iter().map(|&v| f64::from(v)).collect();
    for m in &maps[1..] {
        for (a, v) in acc.iter_mut().zip(m.data()) {
            *a = a.max(f64::from(*v));
        }
    }
    Ok(ProbMap::renormalized(
        first.height(),
        first.width(),
        first.num_classes(),
        &acc,
    ))
}

pub fn ensemble(maps: &[ProbMap], strategy: Strategy) -> Result<ProbMap> {
    match strategy {
        Strategy::Mean => ensemble_probs(maps),
        Strategy::Max => ensemble_max(maps),
    }
}

/// `(class, probability)` of the most likely class at each pixel; ties go to
/// the lowest class index.
fn top_classes(pm: &ProbMap) -> impl Iterator<Item = (u8, f32)> + '_ {
    (0..pm.plane_len()).map(move |i| {
        let mut best = (0u8, pm.data()[i]);
        for (c, p) in pm.pixel(i).enumerate().skip(1) {
            if p > best.1 {
                best = (c as u8, p);
            }
        }
        best
    })
}

pub fn argmax_label(pm: &ProbMap) -> LabelMap {
    let data = top_classes(pm).map(|(c, _)| c).collect();
    LabelMap::new(pm.height(), pm.width(), data).expect("shape comes from a valid map")
}

/// Argmax where the top probability exceeds the threshold, ignore elsewhere.
///
/// The comparison happens at the map's f32 precision, so a stored 0.4 does
/// not exceed a threshold of 0.4.
pub fn pseudo_label(pm: &ProbMap, cfg: &PseudoLabelConfig) -> LabelMap {
    let tau = cfg.threshold as f32;
    let data = top_classes(pm)
        .map(|(c, p)| if p > tau { c } else { IGNORE })
        .collect();
    LabelMap::new(pm.height(), pm.width(), data).expect("shape comes from a valid map")
}

/// Rewrites class ids through `mapping`; ignore stays ignore and classes
/// without an entry become ignore.
pub fn remap_labels(lm: &LabelMap, mapping: &ClassMapping) -> Result<LabelMap> {
    let data = lm
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            mapping.get(v).ok_or_else(|| {
                Error::validation(format!(
                    "label {v} at pixel ({}, {}) outside the mapping's {} source classes",
                    i / lm.width(),
                    i % lm.width(),
                    mapping.source_class_count()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(lm.height(), lm.width(), data)
}
