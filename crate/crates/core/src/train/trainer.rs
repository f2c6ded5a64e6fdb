use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{load_image, load_label_map};
use crate::labelmap::{LabelMap, IGNORE};
use crate::manifest::DatasetManifest;
use crate::train::augment::{augment, AugmentConfig};
use crate::train::features::pixel_features;
use crate::train::loss::{joint_loss, LossWeights};
use crate::train::model::ModelParams;

/// Hyperparameters for [`train`].
///
/// Optimisation is plain mini-batch gradient descent with decoupled weight
/// decay. The defaults suit the linear toy model; large backbones are
/// usually trained with a learning rate around 1e-5 and the same 0.05 decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    /// Crops are drawn until at least this many pixels are in the batch.
    pub batch_pixels: usize,
    pub seed: u64,
    /// Adds the 3x3 mean-intensity feature (F = 6 instead of 5).
    pub local_mean_feature: bool,
    pub loss_weights: LossWeights,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            weight_decay: 0.05,
            iterations: 200,
            batch_pixels: 1024,
            seed: 0,
            local_mean_feature: false,
            loss_weights: LossWeights::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::validation("weight decay must be non-negative"));
        }
        if self.batch_pixels == 0 {
            return Err(Error::validation("batch must hold at least one pixel"));
        }
        self.augment.validate()
    }

    pub fn feature_dim(&self) -> usize {
        if self.local_mean_feature {
            6
        } else {
            5
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean joint loss of each iteration's batch.
    pub loss_curve: Vec<f64>,
}

/// An image with its (true or pseudo) labels.
#[derive(Debug, Clone)]
pub struct LabeledFrame {
    pub image: Image,
    pub label: LabelMap,
}

/// Trains on every labeled frame of `manifest`, pseudo labels included.
/// Starts from `init` when given (fine-tuning), otherwise from zeros.
pub fn train(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    init: Option<&ModelParams>,
) -> Result<TrainOutcome> {
    let mut frames = Vec::new();
    for (video, frame) in manifest.frames() {
        let Some(label_path) = &frame.label else { continue };
        let tag = || format!("{}/{}", video.id, frame.id);
        let image = load_image(&frame.image).map_err(|e| e.at_stage("load", tag()))?;
        let label = load_label_map(label_path).map_err(|e| e.at_stage("load", tag()))?;
        label
            .check_classes(manifest.class_count)
            .map_err(|e| e.at_stage("load", tag()))?;
        frames.push(LabeledFrame { image, label });
    }
    train_on_frames(&frames, manifest.class_count, cfg, init)
}

pub fn train_on_frames(
    frames: &[LabeledFrame],
    class_count: usize,
    cfg: &TrainConfig,
    init: Option<&ModelParams>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = match init {
        Some(p) => {
            if p.class_count() != class_count || p.feature_dim() != cfg.feature_dim() {
                return Err(Error::validation(format!(
                    "initial model is {}x{}, config needs {class_count}x{}",
                    p.class_count(),
                    p.feature_dim(),
                    cfg.feature_dim()
                )));
            }
            p.clone()
        }
        None => ModelParams::zeros(class_count, cfg.feature_dim())?,
    };
    for f in frames {
        if f.image.height() != f.label.height() || f.image.width() != f.label.width() {
            return Err(Error::validation("image and label dimensions differ"));
        }
        f.label.check_classes(class_count)?;
    }
    let supervised: Vec<&LabeledFrame> = frames
        .iter()
        .filter(|f| f.label.data().iter().any(|&v| v != IGNORE))
        .collect();
    if supervised.is_empty() {
        return Err(Error::validation("no labeled pixels in any frame"));
    }

    let dim = cfg.feature_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    let mut grad_w = vec![0.0; class_count * dim];
    let mut grad_b = vec![0.0; class_count];
    // bound on crops per batch, so all-ignore crops cannot stall an iteration
    let max_draws = cfg.batch_pixels.max(64);

    for _ in 0..cfg.iterations {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        let (mut pixels, mut crops, mut loss_sum) = (0usize, 0usize, 0.0);
        for _ in 0..max_draws {
            if pixels >= cfg.batch_pixels {
                break;
            }
            let frame = supervised[rng.random_range(0..supervised.len())];
            let (img, lab) = augment(&frame.image, &frame.label, &cfg.augment, &mut rng)?;
            let valid = lab.data().iter().filter(|&&v| v != IGNORE).count();
            if valid == 0 {
                continue;
            }
            let feats = pixel_features(&img, cfg.local_mean_feature);
            let probs = params.predict(&feats)?;
            let out = joint_loss(&probs, &lab, cfg.loss_weights)?;
            let n = feats.len();
            for c in 0..class_count {
                let gw = &mut grad_w[c * dim..(c + 1) * dim];
                for i in 0..n {
                    let g = out.grad[c * n + i];
                    if g != 0.0 {
                        grad_b[c] += g;
                        for (acc, x) in gw.iter_mut().zip(feats.pixel(i)) {
                            *acc += g * x;
                        }
                    }
                }
            }
            loss_sum += out.loss;
            crops += 1;
            pixels += valid;
        }
        if crops == 0 {
            loss_curve.push(f64::NAN);
            continue;
        }
        let scale = 1.0 / crops as f64;
        let lr = cfg.learning_rate;
        let decay = 1.0 - lr * cfg.weight_decay;
        for (w, g) in params.weights_mut().iter_mut().zip(&grad_w) {
            *w = *w * decay - lr * g * scale;
        }
        for (b, g) in params.bias_mut().iter_mut().zip(&grad_b) {
            *b -= lr * g * scale;
        }
        loss_curve.push(loss_sum * scale);
    }
    Ok(TrainOutcome { params, loss_curve })
}
