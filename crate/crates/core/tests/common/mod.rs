#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use segcycle::image::Image;
use segcycle::manifest::{DatasetManifest, Split};
use segcycle::pipeline::{InitMode, RoundConfig};
use segcycle::synthetic::{generate, write_dataset, SyntheticConfig};
use segcycle::{LabelMap, ProbMap, IGNORE};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random normalized map built from positive per-pixel weights.
pub fn random_prob_map(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> ProbMap {
    let weights: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(0.01..1.0)).collect();
    ProbMap::from_pixel_weights(h, w, c, &weights).unwrap()
}

/// Random labels in `0..c` with roughly `ignore_frac` ignore pixels.
pub fn random_labels(rng: &mut impl Rng, h: usize, w: usize, c: usize, ignore_frac: f64) -> LabelMap {
    let data = (0..h * w)
        .map(|_| {
            if rng.random_bool(ignore_frac) {
                IGNORE
            } else {
                rng.random_range(0..c as u8)
            }
        })
        .collect();
    LabelMap::new(h, w, data).unwrap()
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
    let data = (0..3 * h * w).map(|_| rng.random_range(0.0f32..=1.0)).collect();
    Image::new(h, w, data).unwrap()
}

pub struct SynthData {
    pub labeled: DatasetManifest,
    pub unlabeled: DatasetManifest,
    pub heldout: DatasetManifest,
}

/// Source-domain labeled set plus colour-shifted unlabeled and held-out sets.
pub fn synth_data(dir: &Path, seed: u64, videos: usize, frames: usize) -> SynthData {
    let base = SyntheticConfig {
        videos,
        frames_per_video: frames,
        ..SyntheticConfig::default()
    };
    let target = SyntheticConfig {
        cast: [-0.15, 0.15, 0.15],
        ..base.clone()
    };
    let make = |name: &str, prefix: &str, cfg: &SyntheticConfig, off: u64, split, labels| {
        let cfg = SyntheticConfig {
            seed: seed * 10 + off,
            ..cfg.clone()
        };
        let v = generate(&cfg, prefix).unwrap();
        write_dataset(&dir.join(name), &v, cfg.class_count, split, labels).unwrap()
    };
    SynthData {
        labeled: make("labeled", "l", &base, 0, Split::Train, true),
        unlabeled: make("unlabeled", "u", &target, 1, Split::Test, false),
        heldout: make("heldout", "h", &target, 2, Split::Val, true),
    }
}

/// Round configuration for the end-to-end experiment: both teachers retrain
/// from scratch each round on the merged set.
pub fn e2e_round_config() -> RoundConfig {
    let mut cfg = RoundConfig {
        init: InitMode::Scratch,
        eval_windows: vec![2],
        ..RoundConfig::default()
    };
    for (m, crop) in [(&mut cfg.model_a, 24), (&mut cfg.model_b, 32)] {
        m.learning_rate = 0.2;
        m.iterations = 400;
        m.augment.crop_size = Some(crop);
    }
    cfg
}

/// A small, fast configuration for plumbing tests.
pub fn quick_round_config() -> RoundConfig {
    let mut cfg = RoundConfig::default();
    for m in [&mut cfg.model_a, &mut cfg.model_b] {
        m.learning_rate = 0.2;
        m.iterations = 40;
    }
    cfg.eval_windows = vec![2];
    cfg
}

/// SHA-256 of every file under `root`, keyed by relative path.
pub fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let bytes = std::fs::read(e.path()).unwrap();
            let digest = Sha256::digest(&bytes);
            let hex = digest.iter().map(|b| format!("{b:02x}")).collect::<String>();
            (rel, hex)
        })
        .collect()
}

/// Set-based mIoU and frequency-weighted IoU over `(pred, gt)` frames.
/// Pixels with ignore ground truth or an abstaining prediction are left out.
pub fn oracle_iou(pairs: &[(LabelMap, LabelMap)], classes: usize) -> (f64, f64) {
    use std::collections::HashSet;
    let mut ious = Vec::new();
    let mut weighted = Vec::new();
    let mut gt_sets = Vec::new();
    for c in 0..classes as u8 {
        let mut g = HashSet::new();
        let mut p = HashSet::new();
        for (f, (pred, gt)) in pairs.iter().enumerate() {
            for (i, (&pv, &gv)) in pred.data().iter().zip(gt.data()).enumerate() {
                if gv == IGNORE || pv == IGNORE {
                    continue;
                }
                if gv == c {
                    g.insert((f, i));
                }
                if pv == c {
                    p.insert((f, i));
                }
            }
        }
        let inter = g.intersection(&p).count();
        let union = g.union(&p).count();
        let iou = (union > 0).then(|| inter as f64 / union as f64);
        if let Some(v) = iou {
            ious.push(v);
        }
        weighted.push(iou.unwrap_or(0.0));
        gt_sets.push(g.len());
    }
    let total: usize = gt_sets.iter().sum();
    let miou = ious.iter().sum::<f64>() / ious.len() as f64;
    let wiou = weighted
        .iter()
        .zip(&gt_sets)
        .map(|(iou, &n)| iou * n as f64 / total as f64)
        .sum();
    (miou, wiou)
}

/// Window scores by explicit set intersection over every length-`n` window.
pub fn oracle_vc_windows(preds: &[LabelMap], gts: &[LabelMap], n: usize) -> Vec<f64> {
    use std::collections::HashSet;
    let mut out = Vec::new();
    if gts.len() < n {
        return out;
    }
    let pixels = gts[0].len();
    for start in 0..=gts.len() - n {
        let frames = start..start + n;
        let mut s: HashSet<usize> = (0..pixels).filter(|&i| gts[start].data()[i] != IGNORE).collect();
        for t in frames.clone() {
            let same: HashSet<usize> = (0..pixels)
                .filter(|&i| gts[t].data()[i] == gts[start].data()[i])
                .collect();
            s = s.intersection(&same).copied().collect();
        }
        if s.is_empty() {
            continue;
        }
        let mut t_set = s.clone();
        for t in frames {
            let hit: HashSet<usize> = (0..pixels)
                .filter(|&i| preds[t].data()[i] == gts[t].data()[i])
                .collect();
            t_set = t_set.intersection(&hit).copied().collect();
        }
        out.push(t_set.len() as f64 / s.len() as f64);
    }
    out
}

/// Random video whose ground truth persists between frames with probability
/// `keep`, and whose predictions match with probability `acc`.
#[allow(clippy::too_many_arguments)]
pub fn random_video(
    rng: &mut impl Rng,
    frames: usize,
    h: usize,
    w: usize,
    classes: usize,
    keep: f64,
    acc: f64,
    ignore: f64,
) -> (Vec<LabelMap>, Vec<LabelMap>) {
    let mut gts: Vec<LabelMap> = Vec::with_capacity(frames);
    for t in 0..frames {
        let data = (0..h * w)
            .map(|i| {
                if t > 0 && rng.random_bool(keep) {
                    gts[t - 1].data()[i]
                } else if rng.random_bool(ignore) {
                    IGNORE
                } else {
                    rng.random_range(0..classes as u8)
                }
            })
            .collect();
        gts.push(LabelMap::new(h, w, data).unwrap());
    }
    let preds = gts
        .iter()
        .map(|g| {
            let data = g
                .data()
                .iter()
                .map(|&v| {
                    if v != IGNORE && rng.random_bool(acc) {
                        v
                    } else {
                        rng.random_range(0..classes as u8)
                    }
                })
                .collect();
            LabelMap::new(h, w, data).unwrap()
        })
        .collect();
    (preds, gts)
}

pub struct GradCheck {
    /// Largest elementwise `|a - n| / max(|a|, |n|)` over entries where
    /// either side exceeds `floor`.
    pub max_rel: f64,
    /// Largest absolute difference over the remaining tiny entries.
    pub max_abs_tiny: f64,
    /// Analytic gradient exactly zero and the loss unchanged when an ignored
    /// pixel's logits move.
    pub ignore_inert: bool,
}

/// Central finite differences of `loss` with respect to channel-major
/// logits `z`, compared against `grad`.
pub fn finite_difference_check(
    loss: impl Fn(&[f64]) -> f64,
    z: &[f64],
    grad: &[f64],
    gt: &LabelMap,
    step: f64,
    floor: f64,
) -> GradCheck {
    let n = gt.len();
    let mut max_rel: f64 = 0.0;
    let mut max_abs_tiny: f64 = 0.0;
    let mut ignore_inert = true;
    let base = loss(z);
    let mut probe = z.to_vec();
    for j in 0..z.len() {
        let orig = probe[j];
        probe[j] = orig + step;
        let up = loss(&probe);
        probe[j] = orig - step;
        let down = loss(&probe);
        probe[j] = orig;
        let numeric = (up - down) / (2.0 * step);
        if gt.data()[j % n] == IGNORE {
            ignore_inert &= grad[j] == 0.0 && up == base && down == base;
            continue;
        }
        let scale = grad[j].abs().max(numeric.abs());
        if scale > floor {
            max_rel = max_rel.max((grad[j] - numeric).abs() / scale);
        } else {
            max_abs_tiny = max_abs_tiny.max((grad[j] - numeric).abs());
        }
    }
    GradCheck { max_rel, max_abs_tiny, ignore_inert }
}

/// Random 4x4 fixture: logits, labels with some ignore pixels (at least one
/// supervised pixel).
pub fn loss_fixture(rng: &mut impl Rng, classes: usize) -> (Vec<f64>, LabelMap) {
    loop {
        let gt = random_labels(rng, 4, 4, classes, 0.2);
        let has_ignore = gt.data().contains(&IGNORE);
        if has_ignore && gt.coverage() > 0.0 {
            let z = (0..16 * classes).map(|_| rng.random_range(-2.0..2.0)).collect();
            return (z, gt);
        }
    }
}
