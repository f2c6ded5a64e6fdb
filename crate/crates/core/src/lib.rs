//! Tooling for a recyclable semi-supervised video scene parsing loop.
//!
//! The crate is organised around two on-disk currencies: [`ProbMap`], the
//! per-pixel class probabilities produced by a segmenter, and [`LabelMap`],
//! a hard class raster where [`IGNORE`] marks pixels that carry no label.
//!
//! * [`tta`] runs a [`Segmenter`](tta::Segmenter) over several scales and
//!   mirrored inputs and averages the soft outputs.
//! * [`ensemble`] fuses the outputs of several models and turns them into
//!   thresholded pseudo labels.
//! * [`train`] holds the losses, the toy linear segmenter and its trainer.
//! * [`pipeline`] drives train, pseudo-label, merge and retrain rounds.
//! * [`metrics`] computes mIoU, frequency-weighted IoU and video consistency.

pub mod error;
pub mod ensemble;
pub mod image;
pub mod io;
pub mod labelmap;
pub mod manifest;
pub mod mapping;
pub mod metrics;
pub mod pipeline;
pub mod probmap;
pub mod report;
pub mod synthetic;
pub mod train;
pub mod tta;

pub use error::{Error, Result};
pub use labelmap::{LabelMap, IGNORE};
pub use manifest::{DatasetManifest, FrameRecord, LabelKind, Split, Video};
pub use mapping::ClassMapping;
pub use probmap::ProbMap;
