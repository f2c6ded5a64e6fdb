use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::probmap::ProbMap;
use crate::train::features::{pixel_features, PixelFeatures};
use crate::train::loss::SoftPrediction;
use crate::tta::Segmenter;

pub const SEGW_MAGIC: &[u8; 4] = b"SEGW";
const SEGW_VERSION: u32 = 1;

/// Linear per-pixel classifier: `logits = W f + b`, then softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    class_count: usize,
    feature_dim: usize,
    /// `C x F`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ModelParams {
    pub fn new(class_count: usize, feature_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if !(2..=255).contains(&class_count) {
            return Err(Error::validation(format!(
                "class count must be in [2, 255], got {class_count}"
            )));
        }
        if !(5..=6).contains(&feature_dim) {
            return Err(Error::validation(format!(
                "feature dimension must be 5 or 6, got {feature_dim}"
            )));
        }
        if weights.len() != class_count * feature_dim || bias.len() != class_count {
            return Err(Error::validation(format!(
                "expected {} weights and {class_count} biases, got {} and {}",
                class_count * feature_dim,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::validation("model parameters must be finite"));
        }
        Ok(Self {
            class_count,
            feature_dim,
            weights,
            bias,
        })
    }

    pub fn zeros(class_count: usize, feature_dim: usize) -> Result<Self> {
        Self::new(
            class_count,
            feature_dim,
            vec![0.0; class_count * feature_dim],
            vec![0.0; class_count],
        )
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn uses_local_mean(&self) -> bool {
        self.feature_dim == 6
    }

    /// Channel-major logits for every pixel.
    pub fn logits(&self, feats: &PixelFeatures) -> Result<Vec<f64>> {
        if feats.dim != self.feature_dim {
            return Err(Error::validation(format!(
                "model expects {} features per pixel, got {}",
                self.feature_dim, feats.dim
            )));
        }
        let n = feats.len();
        let mut out = vec![0.0; n * self.class_count];
        for i in 0..n {
            let f = feats.pixel(i);
            for c in 0..self.class_count {
                let row = &self.weights[c * self.feature_dim..(c + 1) * self.feature_dim];
                out[c * n + i] = self.bias[c] + row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>();
            }
        }
        Ok(out)
    }

    pub fn predict(&self, feats: &PixelFeatures) -> Result<SoftPrediction> {
        let logits = self.logits(feats)?;
        Ok(SoftPrediction::from_logits(
            feats.height,
            feats.width,
            self.class_count,
            &logits,
        ))
    }
}

/// Softmax probabilities of the linear model, stored as `f32`.
pub fn forward(params: &ModelParams, feats: &PixelFeatures) -> Result<ProbMap> {
    let p = params.predict(feats)?;
    Ok(ProbMap::renormalized(
        p.height,
        p.width,
        p.num_classes,
        &p.data,
    ))
}

impl Segmenter for ModelParams {
    fn num_classes(&self) -> usize {
        self.class_count
    }

    fn segment(&self, frame: &Image) -> Result<ProbMap> {
        forward(self, &pixel_features(frame, self.uses_local_mean()))
    }
}

/// "SEGW": magic, version, C, F as u32 LE, then `C*F` weights and `C` biases
/// as f64 LE.
pub fn write_params<W: Write>(params: &ModelParams, mut dst: W) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + 8 * (params.weights.len() + params.class_count));
    buf.extend_from_slice(SEGW_MAGIC);
    for v in [SEGW_VERSION, params.class_count as u32, params.feature_dim as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in params.weights.iter().chain(&params.bias) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    dst.write_all(&buf)?;
    Ok(())
}

pub fn read_params<R: Read>(mut src: R) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::format("SEGW header truncated"));
    }
    if &bytes[..4] != SEGW_MAGIC {
        return Err(Error::format(format!("bad SEGW magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != SEGW_VERSION as usize {
        return Err(Error::format(format!("unsupported SEGW version {}", word(0))));
    }
    let (c, f) = (word(1), word(2));
    let count = c
        .checked_mul(f)
        .and_then(|cf| cf.checked_add(c))
        .ok_or_else(|| Error::format("SEGW dimensions overflow"))?;
    let payload = &bytes[16..];
    if payload.len() != 8 * count {
        return Err(Error::format(format!(
            "SEGW payload is {} bytes, expected {}",
            payload.len(),
            8 * count
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let (w, b) = values.split_at(c * f);
    ModelParams::new(c, f, w.to_vec(), b.to_vec())
}
