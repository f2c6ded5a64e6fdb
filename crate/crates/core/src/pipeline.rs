//! The recyclable semi-supervised loop: train two teachers, run TTA on the
//! unlabeled frames, ensemble, threshold into pseudo labels, merge with the
//! labeled set and hand the merged set to the next round.
//!
//! Round directory layout:
//!
//! ```text
//! round_01/
//!   model_a.segw  model_b.segw
//!   probs/<video>/<frame>.segp     ensembled soft output
//!   pseudo/<video>/<frame>.pgm     thresholded pseudo labels
//!   pseudo.json  merged.json       manifests
//!   summary.json                   coverage and loss curves
//!   reports/{model_a,model_b,ensemble}.json  report.txt   (with an eval set)
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{argmax_label, ensemble, pseudo_label, PseudoLabelConfig, Strategy};
use crate::error::{Error, Result};
use crate::io::{load_image, load_label_map, save_label_map, save_prob_map, write_atomic};
use crate::labelmap::LabelMap;
use crate::manifest::{frame_stem, DatasetManifest, FrameRecord, LabelKind, Split, Video};
use crate::metrics::{evaluate, MetricReport, VcPooling, VideoPair};
use crate::probmap::ProbMap;
use crate::train::{train, write_params, ModelParams, TrainConfig};
use crate::tta::{tta_aggregate, TtaConfig};

pub use crate::report::emit_report;

/// Whether later rounds start from the previous round's teachers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    FineTune,
    Scratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundConfig {
    pub round_index: usize,
    pub model_a: TrainConfig,
    pub model_b: TrainConfig,
    pub tta: TtaConfig,
    pub pseudo: PseudoLabelConfig,
    pub strategy: Strategy,
    pub init: InitMode,
    /// VC window lengths reported on the evaluation set.
    pub eval_windows: Vec<usize>,
    pub vc_pooling: VcPooling,
}

impl Default for RoundConfig {
    fn default() -> Self {
        let mut model_a = TrainConfig::default();
        model_a.augment.crop_size = Some(32);
        model_a.seed = 1;
        let mut model_b = TrainConfig::default();
        model_b.augment.crop_size = Some(48);
        model_b.seed = 2;
        Self {
            round_index: 1,
            model_a,
            model_b,
            tta: TtaConfig::default(),
            pseudo: PseudoLabelConfig::default(),
            strategy: Strategy::Mean,
            init: InitMode::FineTune,
            eval_windows: vec![8, 16],
            vc_pooling: VcPooling::Windows,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_a == self.model_b {
            return Err(Error::validation(
                "the two teacher configurations must differ in at least one field",
            ));
        }
        if self.model_a.feature_dim() != self.model_b.feature_dim() {
            // both teachers must consume the same frame representation
            return Err(Error::validation("teachers must use the same feature set"));
        }
        self.model_a.validate()?;
        self.model_b.validate()?;
        self.tta.validate()?;
        self.pseudo.validate()?;
        if self.eval_windows.contains(&0) {
            return Err(Error::validation("VC window lengths must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RoundConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("round config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copy for round `k` (1-based) with per-round seeds.
    pub fn for_round(&self, k: usize) -> RoundConfig {
        let mut cfg = self.clone();
        cfg.round_index = k;
        cfg.model_a.seed = round_seed(self.model_a.seed, k);
        cfg.model_b.seed = round_seed(self.model_b.seed, k);
        cfg
    }
}

/// Seed for round `k`, a fixed mix of the base seed and the round index.
pub fn round_seed(base: u64, round: usize) -> u64 {
    // splitmix64 finaliser
    let mut z = base ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundSummary {
    pub round_index: usize,
    pub training_frames: usize,
    pub pseudo_frames: usize,
    /// Fraction of unlabeled pixels that received a pseudo label.
    pub pseudo_coverage: Option<f64>,
    pub loss_curve_a: Vec<f64>,
    pub loss_curve_b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RoundArtifacts {
    pub dir: PathBuf,
    pub model_a: ModelParams,
    pub model_b: ModelParams,
    pub prob_paths: Vec<PathBuf>,
    pub pseudo_paths: Vec<PathBuf>,
    pub pseudo: DatasetManifest,
    pub merged: DatasetManifest,
    pub merged_path: PathBuf,
    pub summary: RoundSummary,
    /// `(row label, report)` for model A, model B and the ensemble, when an
    /// evaluation set was supplied.
    pub reports: Vec<(String, MetricReport)>,
}

/// Frames with ground truth used to score each round's teachers.
pub struct EvalSet {
    pub class_count: usize,
    pub videos: Vec<EvalVideo>,
}

pub struct EvalVideo {
    pub id: String,
    pub frames: Vec<(crate::image::Image, LabelMap)>,
}

impl EvalSet {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let mut videos = Vec::new();
        for video in &manifest.videos {
            let mut frames = Vec::new();
            for frame in &video.frames {
                let tag = || format!("{}/{}", video.id, frame.id);
                let label = frame.label.as_ref().ok_or_else(|| {
                    Error::validation("evaluation frames need ground truth").at_stage("eval", tag())
                })?;
                let img = load_image(&frame.image).map_err(|e| e.at_stage("eval", tag()))?;
                let lab = load_label_map(label).map_err(|e| e.at_stage("eval", tag()))?;
                frames.push((img, lab));
            }
            videos.push(EvalVideo {
                id: video.id.clone(),
                frames,
            });
        }
        Ok(Self {
            class_count: manifest.class_count,
            videos,
        })
    }
}

/// Union of two manifests with disjoint video ids. The result is a training
/// split and keeps each frame's label provenance.
pub fn merge_datasets(labeled: &DatasetManifest, pseudo: &DatasetManifest) -> Result<DatasetManifest> {
    if labeled.class_count != pseudo.class_count {
        return Err(Error::validation(format!(
            "cannot merge manifests with {} and {} classes",
            labeled.class_count, pseudo.class_count
        )));
    }
    let ids: HashSet<&str> = labeled.videos.iter().map(|v| v.id.as_str()).collect();
    if let Some(v) = pseudo.videos.iter().find(|v| ids.contains(v.id.as_str())) {
        return Err(Error::validation(format!(
            "video id {:?} appears in both manifests",
            v.id
        )));
    }
    let mut merged = labeled.clone();
    merged.split = Split::Train;
    merged.videos.extend(pseudo.videos.iter().cloned());
    Ok(merged)
}

/// The manifest minus pseudo-labeled frames (and videos left empty).
fn without_pseudo(m: &DatasetManifest) -> DatasetManifest {
    let mut out = m.clone();
    for v in &mut out.videos {
        v.frames.retain(|f| f.kind != LabelKind::Pseudo);
    }
    out.videos.retain(|v| !v.frames.is_empty());
    out
}

fn teacher_output(
    a: &ModelParams,
    b: &ModelParams,
    img: &crate::image::Image,
    cfg: &RoundConfig,
) -> Result<(ProbMap, ProbMap, ProbMap)> {
    let pa = tta_aggregate(a, img, &cfg.tta)?;
    let pb = tta_aggregate(b, img, &cfg.tta)?;
    let fused = ensemble(&[pa.clone(), pb.clone()], cfg.strategy)?;
    Ok((pa, pb, fused))
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, |f| Ok(std::io::Write::write_all(f, text.as_bytes())?))
}

fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    write_atomic(path, |f| write_params(params, std::io::BufWriter::new(f)))
}

/// Scores teachers A, B and their ensemble (all with TTA) on `eval`.
pub fn evaluate_teachers(
    a: &ModelParams,
    b: &ModelParams,
    eval: &EvalSet,
    cfg: &RoundConfig,
) -> Result<Vec<(String, MetricReport)>> {
    let mut pairs: [Vec<VideoPair>; 3] = Default::default();
    for video in &eval.videos {
        let preds = video
            .frames
            .par_iter()
            .enumerate()
            .map(|(t, (img, _))| {
                let (pa, pb, fused) = teacher_output(a, b, img, cfg)
                    .map_err(|e| e.at_stage("eval", format!("{}/{t}", video.id)))?;
                Ok([argmax_label(&pa), argmax_label(&pb), argmax_label(&fused)])
            })
            .collect::<Result<Vec<_>>>()?;
        let gts: Vec<LabelMap> = video.frames.iter().map(|(_, l)| l.clone()).collect();
        for (k, bucket) in pairs.iter_mut().enumerate() {
            bucket.push(VideoPair {
                preds: preds.iter().map(|p| p[k].clone()).collect(),
                gts: gts.clone(),
            });
        }
    }
    ["Model A", "Model B", "Ensemble"]
        .into_iter()
        .zip(pairs.iter())
        .map(|(name, videos)| {
            let r = evaluate(videos, eval.class_count, &cfg.eval_windows, cfg.vc_pooling)?;
            Ok((name.to_string(), r))
        })
        .collect()
}

/// One round: train both teachers on `labeled`, pseudo-label `unlabeled`,
/// and write the merged manifest. Pseudo frames already in `labeled` are
/// replaced, not accumulated. Retraining on the merged set is the next
/// round's job.
pub fn run_round(
    labeled: &DatasetManifest,
    unlabeled: &DatasetManifest,
    cfg: &RoundConfig,
    out_dir: &Path,
    init: Option<(&ModelParams, &ModelParams)>,
    eval: Option<&EvalSet>,
) -> Result<RoundArtifacts> {
    cfg.validate()?;
    if labeled.class_count != unlabeled.class_count {
        return Err(Error::validation("labeled and unlabeled class counts differ"));
    }
    if let Some((v, f)) = unlabeled.frames().find(|(_, f)| f.kind != LabelKind::None) {
        return Err(Error::validation(format!(
            "unlabeled manifest: video {:?} frame {} already has a label",
            v.id, f.id
        )));
    }
    if labeled.labeled_frame_count() == 0 {
        return Err(Error::validation("labeled manifest has no labeled frames"));
    }

    fs::create_dir_all(out_dir)?;
    let dir = fs::canonicalize(out_dir)?;

    let (init_a, init_b) = match init {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let (out_a, out_b) = rayon::join(
        || train(labeled, &cfg.model_a, init_a).map_err(|e| e.at_stage("train", "model_a")),
        || train(labeled, &cfg.model_b, init_b).map_err(|e| e.at_stage("train", "model_b")),
    );
    let (out_a, out_b) = (out_a?, out_b?);
    save_params(&dir.join("model_a.segw"), &out_a.params)?;
    save_params(&dir.join("model_b.segw"), &out_b.params)?;

    let jobs: Vec<(&Video, &FrameRecord)> = unlabeled.frames().collect();
    let results = jobs
        .par_iter()
        .map(|(video, frame)| {
            let tag = format!("{}/{}", video.id, frame.id);
            let stem = frame_stem(frame.id);
            let prob_path = dir.join("probs").join(&video.id).join(format!("{stem}.segp"));
            let label_path = dir.join("pseudo").join(&video.id).join(format!("{stem}.pgm"));
            let img = load_image(&frame.image).map_err(|e| e.at_stage("load", tag.clone()))?;
            let (_, _, fused) = teacher_output(&out_a.params, &out_b.params, &img, cfg)
                .map_err(|e| e.at_stage("tta", tag.clone()))?;
            save_prob_map(&prob_path, &fused).map_err(|e| e.at_stage("ensemble", tag.clone()))?;
            let pseudo = pseudo_label(&fused, &cfg.pseudo);
            save_label_map(&label_path, &pseudo).map_err(|e| e.at_stage("pseudo-label", tag))?;
            let labeled_px = pseudo.len() as f64 * pseudo.coverage();
            Ok((prob_path, label_path, labeled_px, pseudo.len()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pseudo = DatasetManifest::new(labeled.class_count, Split::Train);
    let mut idx = 0;
    for video in &unlabeled.videos {
        let frames = video
            .frames
            .iter()
            .map(|f| {
                let rec = FrameRecord {
                    id: f.id,
                    image: f.image.clone(),
                    label: Some(results[idx].1.clone()),
                    kind: LabelKind::Pseudo,
                };
                idx += 1;
                rec
            })
            .collect();
        pseudo.videos.push(Video {
            id: video.id.clone(),
            frames,
        });
    }
    let merged = merge_datasets(&without_pseudo(labeled), &pseudo)?;
    pseudo.save(&dir.join("pseudo.json"))?;
    let merged_path = dir.join("merged.json");
    merged.save(&merged_path)?;

    let total_px: usize = results.iter().map(|r| r.3).sum();
    let summary = RoundSummary {
        round_index: cfg.round_index,
        training_frames: labeled.labeled_frame_count(),
        pseudo_frames: results.len(),
        pseudo_coverage: (total_px > 0)
            .then(|| results.iter().map(|r| r.2).sum::<f64>() / total_px as f64),
        loss_curve_a: out_a.loss_curve,
        loss_curve_b: out_b.loss_curve,
    };
    save_json(&dir.join("summary.json"), &summary)?;

    let reports = match eval {
        Some(eval) => {
            let reports = evaluate_teachers(&out_a.params, &out_b.params, eval, cfg)?;
            for (name, report) in &reports {
                let file = name.to_lowercase().replace(' ', "_");
                save_json(&dir.join("reports").join(format!("{file}.json")), report)?;
            }
            let (labels, rows): (Vec<_>, Vec<_>) = reports.iter().cloned().unzip();
            let table = emit_report(&rows, &labels)?;
            write_atomic(&dir.join("report.txt"), |f| {
                Ok(std::io::Write::write_all(f, table.as_bytes())?)
            })?;
            reports
        }
        None => Vec::new(),
    };

    Ok(RoundArtifacts {
        dir,
        model_a: out_a.params,
        model_b: out_b.params,
        prob_paths: results.iter().map(|r| r.0.clone()).collect(),
        pseudo_paths: results.iter().map(|r| r.1.clone()).collect(),
        pseudo,
        merged,
        merged_path,
        summary,
        reports,
    })
}

/// Runs `rounds` rounds under `out_dir/round_XX`, feeding each round's merged
/// manifest into the next. Round seeds come from [`round_seed`].
pub fn run_loop(
    labeled: &DatasetManifest,
    unlabeled: &DatasetManifest,
    base_cfg: &RoundConfig,
    rounds: usize,
    out_dir: &Path,
    eval: Option<&EvalSet>,
) -> Result<Vec<RoundArtifacts>> {
    if rounds == 0 {
        return Err(Error::validation("at least one round is required"));
    }
    base_cfg.validate()?;
    let mut history: Vec<RoundArtifacts> = Vec::with_capacity(rounds);
    for k in 1..=rounds {
        let cfg = base_cfg.for_round(k);
        let train_set = history.last().map_or(labeled, |r| &r.merged);
        let init = match (base_cfg.init, history.last()) {
            (InitMode::FineTune, Some(prev)) => Some((&prev.model_a, &prev.model_b)),
            _ => None,
        };
        let round_dir = out_dir.join(format!("round_{k:02}"));
        let artifacts = run_round(train_set, unlabeled, &cfg, &round_dir, init, eval).map_err(
            |e| Error::Round {
                round: k,
                source: Box::new(e),
            },
        )?;
        log::info!(
            "round {k}: pseudo coverage {:?}, {} merged frames",
            artifacts.summary.pseudo_coverage,
            artifacts.merged.frame_count()
        );
        history.push(artifacts);
    }
    Ok(history)
}
