use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use segcycle::ensemble::{argmax_label, ensemble, pseudo_label, remap_labels, PseudoLabelConfig, Strategy};
use segcycle::io::{
    load_image, load_label_map, load_prob_map, save_label_map, save_prob_map, write_atomic,
};
use segcycle::manifest::{frame_stem, load_manifest, Split};
use segcycle::metrics::{evaluate, MetricReport, VcPooling, VideoPair};
use segcycle::pipeline::{emit_report, merge_datasets, run_loop, EvalSet, RoundConfig};
use segcycle::synthetic::{generate, write_dataset, SyntheticConfig};
use segcycle::train::{read_params, train, write_params, TrainConfig};
use segcycle::tta::{default_scales, tta_aggregate, Scale, TtaConfig};
use segcycle::{ClassMapping, Error, Result};

#[derive(Parser)]
#[command(name = "segcycle", version, about = "Recyclable semi-supervised segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-scale / flip inference, one SEGP file per frame.
    Tta {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Comma-separated scale factors such as 512/896,1.0
        #[arg(long, value_delimiter = ',')]
        scales: Vec<Scale>,
        #[arg(long)]
        flip: bool,
        /// Treat scales as fractions of this long-side length.
        #[arg(long)]
        base_size: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fuse several SEGP maps.
    Ensemble {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "mean")]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold a SEGP map into a PGM pseudo label.
    Pseudolabel {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.4)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite label ids through a `source target` table.
    Remap {
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of source classes; inferred from the table when omitted.
        #[arg(long)]
        source_classes: Option<usize>,
    },
    /// Train the linear segmenter on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from these parameters instead of zeros.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run train -> pseudo-label -> merge rounds.
    Loop {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Held-out manifest with ground truth, scored every round.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Validation manifest to fold into the labeled set.
        #[arg(long, requires = "include_val")]
        val: Option<PathBuf>,
        #[arg(long)]
        include_val: bool,
    },
    /// Score predictions against a ground-truth manifest.
    Metrics {
        /// Holds <video>/<frame>.pgm (or .segp) predictions.
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "8,16")]
        vc: Vec<usize>,
        /// Average VC per video before averaging across videos.
        #[arg(long)]
        per_video: bool,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write per-class IoU as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value = "Prediction")]
        label: String,
    },
    /// Render saved JSON reports as one table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// Row labels; defaults to the file stems.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
    },
    /// Generate a synthetic labeled / unlabeled / held-out dataset.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        videos: usize,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.15)]
        noise: f32,
        /// RGB colour cast of the unlabeled and held-out domain.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.15,0.15,0.15")]
        target_cast: Vec<f32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |f| Ok(std::io::Write::write_all(f, text.as_bytes())?))
}

fn load_prediction(pred_dir: &Path, video: &str, frame: u32) -> Result<segcycle::LabelMap> {
    let stem = frame_stem(frame);
    let pgm = pred_dir.join(video).join(format!("{stem}.pgm"));
    if pgm.is_file() {
        return load_label_map(&pgm);
    }
    let segp = pred_dir.join(video).join(format!("{stem}.segp"));
    if segp.is_file() {
        return Ok(argmax_label(&load_prob_map(&segp)?));
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("no prediction {} (.pgm or .segp)", pgm.with_extension("").display()),
    )))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tta {
            model,
            frames,
            scales,
            flip,
            base_size,
            out_dir,
        } => {
            let params = read_params(std::fs::File::open(&model)?)?;
            let manifest = load_manifest(&frames)?;
            let cfg = TtaConfig {
                scales: if scales.is_empty() { default_scales() } else { scales },
                flip,
                base_size,
            };
            cfg.validate()?;
            for (video, frame) in manifest.frames() {
                let tag = format!("{}/{}", video.id, frame.id);
                let img = load_image(&frame.image).map_err(|e| e.at_stage("load", tag.as_str()))?;
                let pm = tta_aggregate(&params, &img, &cfg).map_err(|e| e.at_stage("tta", tag.as_str()))?;
                let path = out_dir.join(&video.id).join(format!("{}.segp", frame_stem(frame.id)));
                save_prob_map(&path, &pm)?;
            }
        }
        Command::Ensemble {
            inputs,
            strategy,
            out,
        } => {
            let maps = inputs
                .iter()
                .map(|p| load_prob_map(p))
                .collect::<Result<Vec<_>>>()?;
            save_prob_map(&out, &ensemble(&maps, strategy)?)?;
        }
        Command::Pseudolabel {
            input,
            threshold,
            out,
        } => {
            let cfg = PseudoLabelConfig::new(threshold)?;
            save_label_map(&out, &pseudo_label(&load_prob_map(&input)?, &cfg))?;
        }
        Command::Remap {
            mapping,
            input,
            out,
            source_classes,
        } => {
            let mapping = ClassMapping::load(&mapping, source_classes)?;
            save_label_map(&out, &remap_labels(&load_label_map(&input)?, &mapping)?)?;
        }
        Command::Train {
            manifest,
            config,
            init,
            out,
        } => {
            let manifest = load_manifest(&manifest)?;
            let cfg: TrainConfig = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .map_err(|e| Error::Format(format!("train config: {e}")))?,
                None => TrainConfig::default(),
            };
            let init = init
                .map(|p| read_params(std::fs::File::open(p)?))
                .transpose()?;
            let outcome = train(&manifest, &cfg, init.as_ref())?;
            if let Some(last) = outcome.loss_curve.last() {
                log::info!("final batch loss {last:.6}");
            }
            write_atomic(&out, |f| write_params(&outcome.params, std::io::BufWriter::new(f)))?;
        }
        Command::Loop {
            labeled,
            unlabeled,
            rounds,
            config,
            out_dir,
            eval,
            val,
            include_val,
        } => {
            let mut labeled = load_manifest(&labeled)?;
            if include_val {
                if let Some(val) = val {
                    labeled = merge_datasets(&labeled, &load_manifest(&val)?)?;
                }
            }
            let unlabeled = load_manifest(&unlabeled)?;
            let cfg = match config {
                Some(p) => RoundConfig::load(&p)?,
                None => RoundConfig::default(),
            };
            let eval = eval
                .map(|p| EvalSet::load(&load_manifest(&p)?))
                .transpose()?;
            let history = run_loop(&labeled, &unlabeled, &cfg, rounds, &out_dir, eval.as_ref())?;
            for round in &history {
                println!(
                    "round {}: {} pseudo frames, coverage {}",
                    round.summary.round_index,
                    round.summary.pseudo_frames,
                    round
                        .summary
                        .pseudo_coverage
                        .map_or("-".to_string(), |c| format!("{c:.4}"))
                );
                if !round.reports.is_empty() {
                    let (labels, rows): (Vec<_>, Vec<_>) = round.reports.iter().cloned().unzip();
                    print!("{}", emit_report(&rows, &labels)?);
                }
            }
        }
        Command::Metrics {
            pred_dir,
            gt_manifest,
            vc,
            per_video,
            json,
            csv,
            label,
        } => {
            let gt = load_manifest(&gt_manifest)?;
            let mut videos = Vec::new();
            for video in &gt.videos {
                let mut pair = VideoPair {
                    preds: Vec::new(),
                    gts: Vec::new(),
                };
                for frame in &video.frames {
                    let Some(label_path) = &frame.label else { continue };
                    pair.gts.push(load_label_map(label_path)?);
                    pair.preds.push(load_prediction(&pred_dir, &video.id, frame.id)?);
                }
                videos.push(pair);
            }
            let pooling = if per_video {
                VcPooling::PerVideo
            } else {
                VcPooling::Windows
            };
            let report = evaluate(&videos, gt.class_count, &vc, pooling)?;
            print!("{}", emit_report(std::slice::from_ref(&report), &[label])?);
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Format(e.to_string()))?;
                write_text(&path, &(text + "\n"))?;
            }
            if let Some(path) = csv {
                write_text(&path, &report.per_class_csv())?;
            }
        }
        Command::Report { inputs, labels } => {
            let reports = inputs
                .iter()
                .map(|p| {
                    serde_json::from_str::<MetricReport>(&std::fs::read_to_string(p)?)
                        .map_err(|e| Error::Format(format!("{}: {e}", p.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            let labels = if labels.is_empty() {
                inputs
                    .iter()
                    .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
                    .collect()
            } else {
                labels
            };
            print!("{}", emit_report(&reports, &labels)?);
        }
        Command::Synth {
            out_dir,
            videos,
            frames,
            size,
            classes,
            noise,
            target_cast,
            seed,
        } => {
            let cast: [f32; 3] = target_cast
                .try_into()
                .map_err(|_| Error::Validation("--target-cast needs three values".into()))?;
            let base = SyntheticConfig {
                class_count: classes,
                height: size,
                width: size,
                videos,
                frames_per_video: frames,
                noise,
                cast: [0.0; 3],
                seed,
            };
            let target = SyntheticConfig { cast, ..base.clone() };
            let sets = [
                ("labeled", "l", &base, 0, Split::Train, true),
                ("unlabeled", "u", &target, 1, Split::Test, false),
                ("heldout", "h", &target, 2, Split::Val, true),
            ];
            for (name, prefix, cfg, offset, split, with_labels) in sets {
                let cfg = SyntheticConfig {
                    seed: seed.wrapping_mul(10).wrapping_add(offset),
                    ..cfg.clone()
                };
                let data = generate(&cfg, prefix)?;
                write_dataset(&out_dir.join(name), &data, classes, split, with_labels)?;
                println!("{}", out_dir.join(name).join("manifest.json").display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
