//! Dataset manifests: which videos and frames exist, where their files live,
//! and whether each label is ground truth or a pseudo label.
//!
//! On disk a manifest is JSON and every path is relative to the manifest's
//! own directory. In memory, loaded paths are resolved against that directory
//! so manifests from different places can be merged; [`DatasetManifest::save`]
//! relativises them again.

use std::collections::HashSet;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Provenance of a frame's label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    True,
    Pseudo,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub id: u32,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<PathBuf>,
    pub kind: LabelKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Video {
    pub id: String,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub class_count: usize,
    pub split: Split,
    pub videos: Vec<Video>,
}

impl DatasetManifest {
    pub fn new(class_count: usize, split: Split) -> Self {
        Self {
            class_count,
            split,
            videos: Vec::new(),
        }
    }

    /// Parses manifest text. Relative paths are joined onto `base_dir`.
    /// Frames are sorted by id; out-of-order input is logged as a warning.
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: DatasetManifest = serde_json::from_str(text)
            .map_err(|e| Error::format(format!("manifest: {e}")))?;
        for video in &mut m.videos {
            for frame in &mut video.frames {
                frame.image = resolve(base_dir, &frame.image, &video.id, frame.id)?;
                if let Some(label) = &frame.label {
                    frame.label = Some(resolve(base_dir, label, &video.id, frame.id)?);
                }
            }
            if !video.frames.windows(2).all(|w| w[0].id <= w[1].id) {
                log::warn!("video {}: frames listed out of order, re-sorting", video.id);
                video.frames.sort_by_key(|f| f.id);
            }
        }
        m.validate()?;
        Ok(m)
    }

    /// Structural checks: class count, unique path-safe ids, strictly
    /// increasing frame ids and label/kind consistency.
    pub fn validate(&self) -> Result<()> {
        if !(2..=255).contains(&self.class_count) {
            return Err(Error::validation(format!(
                "manifest: class_count must be in [2, 255], got {}",
                self.class_count
            )));
        }
        let mut seen = HashSet::new();
        for video in &self.videos {
            check_video_id(&video.id)?;
            if !seen.insert(video.id.as_str()) {
                return Err(Error::validation(format!(
                    "manifest: duplicate video id {:?}",
                    video.id
                )));
            }
            for pair in video.frames.windows(2) {
                if pair[0].id >= pair[1].id {
                    return Err(Error::validation(format!(
                        "manifest: video {:?} frame ids not strictly increasing at {}",
                        video.id, pair[1].id
                    )));
                }
            }
            for frame in &video.frames {
                match (frame.kind, &frame.label) {
                    (LabelKind::None, Some(_)) => {
                        return Err(Error::validation(format!(
                            "manifest: video {:?} frame {}: kind \"none\" must not have a label",
                            video.id, frame.id
                        )))
                    }
                    (LabelKind::True | LabelKind::Pseudo, None) => {
                        return Err(Error::validation(format!(
                            "manifest: video {:?} frame {}: labeled frame is missing \"label\"",
                            video.id, frame.id
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Checks that every referenced image and label file exists.
    pub fn validate_files(&self) -> Result<()> {
        for (video, frame) in self.frames() {
            for path in std::iter::once(&frame.image).chain(frame.label.as_ref()) {
                if !path.is_file() {
                    return Err(Error::validation(format!(
                        "manifest: video {:?} frame {}: missing file {}",
                        video.id,
                        frame.id,
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serialises with every absolute path made relative to `dir`.
    pub fn to_json_string(&self, dir: &Path) -> Result<String> {
        let mut out = self.clone();
        for video in &mut out.videos {
            for frame in &mut video.frames {
                frame.image = relativize(&frame.image, dir);
                frame.label = frame.label.as_deref().map(|p| relativize(p, dir));
            }
        }
        let mut text = serde_json::to_string_pretty(&out)
            .map_err(|e| Error::format(format!("manifest: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let dir = absolute_dir(path)?;
        let text = self.to_json_string(&dir)?;
        crate::io::write_atomic(path, |f| Ok(std::io::Write::write_all(f, text.as_bytes())?))
    }

    /// All `(video, frame)` pairs in manifest order.
    pub fn frames(&self) -> impl Iterator<Item = (&Video, &FrameRecord)> {
        self.videos
            .iter()
            .flat_map(|v| v.frames.iter().map(move |f| (v, f)))
    }

    pub fn frame_count(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }

    pub fn labeled_frame_count(&self) -> usize {
        self.frames().filter(|(_, f)| f.label.is_some()).count()
    }
}

/// Reads, resolves and validates a manifest, including file existence.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    let dir = absolute_dir(path)?;
    let m = DatasetManifest::from_json_str(&text, &dir)?;
    m.validate_files()?;
    Ok(m)
}

/// Stable file stem for a frame: zero-padded id.
pub fn frame_stem(frame_id: u32) -> String {
    format!("{frame_id:06}")
}

fn absolute_dir(path: &Path) -> Result<PathBuf> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    Ok(fs::canonicalize(parent)?)
}

fn resolve(base: &Path, p: &Path, video: &str, frame: u32) -> Result<PathBuf> {
    if p.is_absolute() {
        return Err(Error::validation(format!(
            "manifest: video {video:?} frame {frame}: path {} must be relative to the manifest",
            p.display()
        )));
    }
    Ok(normalize(&base.join(p)))
}

/// Drops `.` and folds `..` without touching the filesystem.
fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => match out.components().next_back() {
                Some(Component::Normal(_)) => {
                    out.pop();
                }
                Some(Component::RootDir | Component::Prefix(_)) => {}
                _ => out.push(c),
            },
            other => out.push(other),
        }
    }
    out
}

fn relativize(p: &Path, dir: &Path) -> PathBuf {
    if p.is_absolute() {
        pathdiff::diff_paths(p, dir).unwrap_or_else(|| p.to_path_buf())
    } else {
        p.to_path_buf()
    }
}

fn check_video_id(id: &str) -> Result<()> {
    let mut comps = Path::new(id).components();
    let ok = matches!(comps.next(), Some(Component::Normal(_))) && comps.next().is_none();
    if ok && !id.contains(['/', '\\']) {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "manifest: video id {id:?} must be a single plain path component"
        )))
    }
}
