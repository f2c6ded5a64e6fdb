//! Seeded synthetic video datasets for demos and end-to-end tests.
//!
//! Each video shows vertical class bands whose boundaries drift by one pixel
//! per frame. Pixel colours are a class prototype plus a per-domain colour
//! cast plus Gaussian noise, so classes are linearly separable up to noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{save_image, save_label_map};
use crate::labelmap::LabelMap;
use crate::manifest::{frame_stem, DatasetManifest, FrameRecord, LabelKind, Split, Video};

/// Class colour prototypes (RGB) for up to six classes.
const PROTOTYPES: [[f32; 3]; 6] = [
    [0.75, 0.30, 0.30],
    [0.30, 0.75, 0.30],
    [0.30, 0.30, 0.75],
    [0.75, 0.75, 0.30],
    [0.75, 0.30, 0.75],
    [0.30, 0.75, 0.75],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub class_count: usize,
    pub height: usize,
    pub width: usize,
    pub videos: usize,
    pub frames_per_video: usize,
    /// Standard deviation of per-pixel colour noise.
    pub noise: f32,
    /// Colour cast added to every pixel of this domain.
    pub cast: [f32; 3],
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            class_count: 3,
            height: 32,
            width: 32,
            videos: 4,
            frames_per_video: 5,
            noise: 0.15,
            cast: [0.0; 3],
            seed: 0,
        }
    }
}

/// One generated video: frames with their ground truth.
pub struct SyntheticVideo {
    pub id: String,
    pub frames: Vec<(Image, LabelMap)>,
}

pub fn generate(cfg: &SyntheticConfig, id_prefix: &str) -> Result<Vec<SyntheticVideo>> {
    if !(2..=PROTOTYPES.len()).contains(&cfg.class_count) {
        return Err(Error::validation(format!(
            "synthetic data supports 2..={} classes",
            PROTOTYPES.len()
        )));
    }
    if cfg.height == 0 || cfg.width < cfg.class_count {
        return Err(Error::validation("frame too small for the class bands"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0f32, cfg.noise.max(0.0))
        .map_err(|e| Error::validation(format!("noise: {e}")))?;
    let (h, w, k) = (cfg.height, cfg.width, cfg.class_count);
    let mut videos = Vec::with_capacity(cfg.videos);
    for v in 0..cfg.videos {
        // random class order and band widths per video, boundaries drift over time
        let mut order: Vec<u8> = (0..k as u8).collect();
        for i in (1..k).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut cuts: Vec<usize> = (0..k - 1).map(|_| rng.random_range(1..w)).collect();
        cuts.sort_unstable();
        let drift: isize = if rng.random::<bool>() { 1 } else { -1 };
        let tilt = rng.random_range(-0.5f32..=0.5);
        let mut frames = Vec::with_capacity(cfg.frames_per_video);
        for t in 0..cfg.frames_per_video {
            let n = h * w;
            let mut data = vec![0f32; 3 * n];
            let mut labels = vec![0u8; n];
            for y in 0..h {
                let shift = drift * t as isize + (tilt * (y as f32 - h as f32 / 2.0)) as isize;
                for x in 0..w {
                    let xs = (x as isize - shift).rem_euclid(w as isize) as usize;
                    let band = cuts.iter().filter(|&&c| xs >= c).count();
                    let class = order[band];
                    let i = y * w + x;
                    labels[i] = class;
                    for c in 0..3 {
                        let v = PROTOTYPES[usize::from(class)][c] + cfg.cast[c] + noise.sample(&mut rng);
                        data[c * n + i] = v.clamp(0.0, 1.0);
                    }
                }
            }
            frames.push((Image::new(h, w, data)?, LabelMap::new(h, w, labels)?));
        }
        videos.push(SyntheticVideo {
            id: format!("{id_prefix}{v:03}"),
            frames,
        });
    }
    Ok(videos)
}

/// Writes videos under `dir` as `<video>/<frame>.ppm` (+ `.pgm` labels when
/// `with_labels`) and saves `dir/manifest.json`.
pub fn write_dataset(
    dir: &Path,
    videos: &[SyntheticVideo],
    class_count: usize,
    split: Split,
    with_labels: bool,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let root = std::fs::canonicalize(dir)?;
    let mut manifest = DatasetManifest::new(class_count, split);
    for video in videos {
        let mut records = Vec::new();
        for (t, (img, lab)) in video.frames.iter().enumerate() {
            let stem = frame_stem(t as u32);
            let image = root.join(&video.id).join(format!("{stem}.ppm"));
            save_image(&image, img)?;
            let label = if with_labels {
                let p = root.join(&video.id).join(format!("{stem}.pgm"));
                save_label_map(&p, lab)?;
                Some(p)
            } else {
                None
            };
            records.push(FrameRecord {
                id: t as u32,
                image,
                kind: if with_labels { LabelKind::True } else { LabelKind::None },
                label,
            });
        }
        manifest.videos.push(Video {
            id: video.id.clone(),
            frames: records,
        });
    }
    manifest.save(&root.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg, "v").unwrap();
        let b = generate(&cfg, "v").unwrap();
        assert_eq!(a.len(), 4);
        for (va, vb) in a.iter().zip(&b) {
            assert_eq!(va.id, vb.id);
            for (fa, fb) in va.frames.iter().zip(&vb.frames) {
                assert_eq!(fa.0, fb.0);
                assert_eq!(fa.1, fb.1);
            }
        }
    }

    #[test]
    fn every_label_is_a_class() {
        let cfg = SyntheticConfig {
            class_count: 4,
            ..SyntheticConfig::default()
        };
        for v in generate(&cfg, "v").unwrap() {
            for (_, lab) in &v.frames {
                lab.check_classes(4).unwrap();
                assert!(lab.data().iter().all(|&l| l != crate::IGNORE));
            }
        }
    }
}
