//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use segcycle::ensemble::{argmax_label, ensemble, pseudo_label, PseudoLabelConfig, Strategy};
use segcycle::io::{read_label_map, read_prob_map, write_label_map, write_prob_map};
use segcycle::metrics::{
    evaluate, video_consistency, window_scores, ConfusionMatrix, MetricReport, VcAccumulator, VcPooling,
    VideoPair,
};
use segcycle::pipeline::{run_loop, EvalSet};
use segcycle::report::emit_report;
use segcycle::train::{cross_entropy_loss, dice_loss, joint_loss, LossWeights, ModelParams, SoftPrediction};
use segcycle::tta::{hflip_prob, resize_prob, tta_aggregate, Scale, Segmenter, TtaConfig};
use segcycle::{Error, LabelMap, ProbMap, IGNORE};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    } else {
        Ok(took)
    }
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = common::rng(1);
    let pairs: Vec<(LabelMap, LabelMap)> = (0..200)
        .map(|_| {
            let gt = common::random_labels(&mut rng, 16, 16, 5, 0.1);
            let pred = common::random_labels(&mut rng, 16, 16, 5, 0.0);
            (pred, gt)
        })
        .collect();
    let mut total = ConfusionMatrix::new(5).unwrap();
    let mut worst: f64 = 0.0;
    for pair in &pairs {
        let mut cm = ConfusionMatrix::new(5).unwrap();
        cm.accumulate(&pair.0, &pair.1).unwrap();
        total = total.merge(&cm).unwrap();
        let (om, ow) = common::oracle_iou(std::slice::from_ref(pair), 5);
        worst = worst.max((cm.miou().unwrap() - om).abs()).max((cm.weighted_iou().unwrap() - ow).abs());
    }
    let (om, ow) = common::oracle_iou(&pairs, 5);
    worst = worst.max((total.miou().unwrap() - om).abs()).max((total.weighted_iou().unwrap() - ow).abs());
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    let took = within(Duration::from_secs(5), start)?;
    Ok(format!("max deviation {worst:.1e} over 200 frames, {took:.2?}"))
}

fn vc_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = common::rng(2);
    let mut worst: f64 = 0.0;
    let mut windows = 0;
    let mut vc1_global = (ConfusionMatrix::new(4).unwrap(), VcAccumulator::new(1).unwrap());
    for v in 0..50 {
        let frames = rng.random_range(6..=20);
        let ignore = if v % 2 == 0 { 0.1 } else { 0.0 };
        let (p, g) = common::random_video(&mut rng, frames, 8, 8, 4, 0.8, 0.85, ignore);
        for n in [2, 4] {
            let lib = window_scores(&p, &g, n).unwrap();
            let oracle = common::oracle_vc_windows(&p, &g, n);
            ensure!(lib.len() == oracle.len(), "video {v} n={n}: window counts differ");
            for (a, b) in lib.iter().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
            if !oracle.is_empty() {
                let mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
                worst = worst.max((video_consistency(&p, &g, n).unwrap() - mean).abs());
            }
            windows += oracle.len();
        }
        // VC1 against per-frame pixel accuracy on non-ignore ground truth
        let per_frame: Vec<f64> = p
            .iter()
            .zip(&g)
            .map(|(p, g)| {
                let mut cm = ConfusionMatrix::new(4).unwrap();
                cm.accumulate(p, g).unwrap();
                cm.pixel_accuracy().unwrap()
            })
            .collect();
        let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
        worst = worst.max((video_consistency(&p, &g, 1).unwrap() - mean).abs());
        if ignore == 0.0 {
            for (p, g) in p.iter().zip(&g) {
                vc1_global.0.accumulate(p, g).unwrap();
            }
            vc1_global.1.add_video(&p, &g).unwrap();
        }
    }
    let pooled = vc1_global.1.finish(VcPooling::Windows).unwrap();
    worst = worst.max((pooled - vc1_global.0.pixel_accuracy().unwrap()).abs());
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    let took = within(Duration::from_secs(5), start)?;
    Ok(format!("{windows} windows, max deviation {worst:.1e}, {took:.2?}"))
}

fn identity_suite() -> Outcome {
    let mut rng = common::rng(3);
    let videos: Vec<VideoPair> = (0..3)
        .map(|_| {
            let (_, gts) = common::random_video(&mut rng, 20, 4, 4, 3, 0.9, 1.0, 0.1);
            VideoPair { preds: gts.clone(), gts }
        })
        .collect();
    let r = evaluate(&videos, 3, &[8, 16], VcPooling::Windows).map_err(|e| e.to_string())?;
    let values = [r.miou, r.weighted_iou.unwrap(), r.vc[&8], r.vc[&16]];
    ensure!(values == [1.0; 4], "got {values:?}");
    Ok("mIoU = WeightIoU = VC8 = VC16 = 1.0".into())
}

fn gradient_checks() -> Outcome {
    let mut rng = common::rng(4);
    let (mut worst_rel, mut worst_abs): (f64, f64) = (0.0, 0.0);
    for case in 0..20 {
        let k = 2 + case % 4;
        let (z, gt) = common::loss_fixture(&mut rng, k);
        let pred = |z: &[f64]| SoftPrediction::from_logits(4, 4, k, z);
        let p = pred(&z);
        let w = LossWeights::default();
        let checks = [
            common::finite_difference_check(
                |z| cross_entropy_loss(&pred(z), &gt).unwrap().loss,
                &z,
                &cross_entropy_loss(&p, &gt).unwrap().grad,
                &gt,
                1e-5,
                1e-7,
            ),
            common::finite_difference_check(
                |z| dice_loss(&pred(z), &gt).unwrap().loss,
                &z,
                &dice_loss(&p, &gt).unwrap().grad,
                &gt,
                1e-5,
                1e-7,
            ),
            common::finite_difference_check(
                |z| joint_loss(&pred(z), &gt, w).unwrap().loss,
                &z,
                &joint_loss(&p, &gt, w).unwrap().grad,
                &gt,
                1e-5,
                1e-7,
            ),
        ];
        for (name, c) in ["CE", "Dice", "joint"].iter().zip(&checks) {
            ensure!(c.ignore_inert, "case {case} {name}: ignored pixel has non-zero gradient");
            ensure!(c.max_rel < 1e-4, "case {case} {name}: relative error {:e}", c.max_rel);
            ensure!(c.max_abs_tiny < 1e-9, "case {case} {name}: tiny-entry error {:e}", c.max_abs_tiny);
            worst_rel = worst_rel.max(c.max_rel);
            worst_abs = worst_abs.max(c.max_abs_tiny);
        }
    }
    Ok(format!("max relative error {worst_rel:.1e}, ignored pixels exactly zero"))
}

fn tta_degenerate() -> Outcome {
    let mut rng = common::rng(5);
    for _ in 0..10 {
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let img = common::random_image(&mut rng, h, w);
        let weights = (0..3 * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let model = ModelParams::new(3, 5, weights, vec![0.0; 3]).unwrap();
        let cfg = TtaConfig { scales: vec![Scale::new(1, 1).unwrap()], flip: false, base_size: None };
        let raw = model.segment(&img).unwrap();
        ensure!(tta_aggregate(&model, &img, &cfg).unwrap() == raw, "single-scale TTA differs from raw output");
        let pm = common::random_prob_map(&mut rng, h, w, 4);
        ensure!(hflip_prob(&hflip_prob(&pm)) == pm, "hflip is not an involution");
        ensure!(resize_prob(&pm, h, w).unwrap() == pm, "identity resize changed values");
    }
    Ok("degenerate TTA, hflip involution and identity resize bit-exact".into())
}

fn threshold_law() -> Outcome {
    let mut rng = common::rng(6);
    let taus = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    for _ in 0..100 {
        let k = rng.random_range(2..6);
        let pm = common::random_prob_map(&mut rng, 8, 8, k);
        let fractions: Vec<f64> = taus
            .iter()
            .map(|&t| 1.0 - pseudo_label(&pm, &PseudoLabelConfig::new(t).unwrap()).coverage())
            .collect();
        ensure!(fractions.windows(2).all(|w| w[0] <= w[1]), "ignore fraction not monotone: {fractions:?}");
    }
    let cfg = PseudoLabelConfig::new(0.4).unwrap();
    let a = pseudo_label(&ProbMap::new(1, 1, 3, vec![0.5, 0.3, 0.2]).unwrap(), &cfg);
    let b = pseudo_label(&ProbMap::new(1, 1, 3, vec![0.35, 0.33, 0.32]).unwrap(), &cfg);
    ensure!(a.data() == [0], "(0.5, 0.3, 0.2) gave {:?}", a.data());
    ensure!(b.data() == [IGNORE], "(0.35, 0.33, 0.32) gave {:?}", b.data());
    Ok("monotone over 100 maps; worked examples hold".into())
}

fn ensemble_agreement() -> Outcome {
    let mut rng = common::rng(7);
    let mut pixels = 0;
    for _ in 0..100 {
        let (h, w, k) = (6, 6, rng.random_range(2..6));
        // shared argmax with a clear margin in both maps
        let top: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..k)).collect();
        let make = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut wts = Vec::new();
            for &t in &top {
                let mut px: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
                px[t] = px.iter().copied().fold(0.0, f64::max) + rng.random_range(0.05..1.0);
                wts.extend(px);
            }
            ProbMap::from_pixel_weights(h, w, k, &wts).unwrap()
        };
        let a = make(&mut rng);
        let b = make(&mut rng);
        for strategy in [Strategy::Mean, Strategy::Max] {
            let fused = argmax_label(&ensemble(&[a.clone(), b.clone()], strategy).unwrap());
            ensure!(fused == argmax_label(&a), "{strategy:?} changed an agreed argmax");
        }
        pixels += h * w;
    }
    Ok(format!("{pixels} pixels, mean and max strategies"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = common::synth_data(dir.path(), 0, 4, 5);
    ensure!(data.labeled.frame_count() == 20 && data.unlabeled.frame_count() == 20, "fixture size");
    let eval = EvalSet::load(&data.heldout).map_err(|e| e.to_string())?;
    let rounds = run_loop(&data.labeled, &data.unlabeled, &common::e2e_round_config(), 2, &dir.path().join("runs"), Some(&eval))
        .map_err(|e| e.to_string())?;
    let ens = |k: usize| rounds[k].reports.iter().find(|(l, _)| l == "Ensemble").unwrap().1.miou;
    let (before, after) = (ens(0), ens(1));
    let took = within(Duration::from_secs(60), start)?;
    ensure!(after - before >= 0.01, "held-out mIoU {before:.4} -> {after:.4}, gain {:.4}", after - before);
    let cov: Vec<String> = rounds
        .iter()
        .map(|r| format!("{:.3}", r.summary.pseudo_coverage.unwrap_or(0.0)))
        .collect();
    Ok(format!(
        "held-out mIoU {before:.4} -> {after:.4} (+{:.4}), pseudo coverage {}, {took:.2?}",
        after - before,
        cov.join(" -> ")
    ))
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_segcycle"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let p = |rel: &str| root.join(rel).to_string_lossy().into_owned();
    run_cli(&["synth", "--out-dir", &p("data"), "--videos", "2", "--frames", "4", "--size", "24", "--seed", "5"])?;
    std::fs::write(
        root.join("round.json"),
        r#"{"model_a": {"iterations": 40, "learning_rate": 0.2, "seed": 1, "augment": {"crop_size": 16}},
            "model_b": {"iterations": 40, "learning_rate": 0.2, "seed": 2, "augment": {"crop_size": 24}},
            "eval_windows": [2, 4]}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["run1", "run2"] {
        outputs.push(run_cli(&[
            "loop", "--labeled", &p("data/labeled/manifest.json"), "--unlabeled", &p("data/unlabeled/manifest.json"),
            "--eval", &p("data/heldout/manifest.json"), "--rounds", "2", "--config", &p("round.json"),
            "--out-dir", &p(run),
        ])?);
    }
    let a = common::hash_tree(&root.join("run1"));
    let b = common::hash_tree(&root.join("run2"));
    ensure!(!a.is_empty(), "no artifacts written");
    ensure!(a == b, "artifact trees differ: {:?}", diff(&a, &b));
    ensure!(outputs[0] == outputs[1], "console output differs");
    Ok(format!("{} files, identical SHA-256 across two runs", a.len()))
}

fn diff(a: &BTreeMap<String, String>, b: &BTreeMap<String, String>) -> Vec<String> {
    a.keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .cloned()
        .collect()
}

fn format_round_trips() -> Outcome {
    let mut rng = common::rng(8);
    for _ in 0..100 {
        let (h, w, k) = (rng.random_range(1..12), rng.random_range(1..12), rng.random_range(2..8));
        let pm = common::random_prob_map(&mut rng, h, w, k);
        let mut buf = Vec::new();
        write_prob_map(&pm, &mut buf).unwrap();
        let back = read_prob_map(buf.as_slice()).map_err(|e| e.to_string())?;
        ensure!(
            back.data().iter().zip(pm.data()).all(|(a, b)| a.to_bits() == b.to_bits()) && back == pm,
            "SEGP round trip changed a {h}x{w}x{k} map"
        );
        let lm = LabelMap::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap();
        let mut buf = Vec::new();
        write_label_map(&lm, &mut buf).unwrap();
        ensure!(read_label_map(buf.as_slice()).map_err(|e| e.to_string())? == lm, "PGM round trip changed labels");
    }
    let mut good = Vec::new();
    write_prob_map(&ProbMap::uniform(2, 2, 3).unwrap(), &mut good).unwrap();
    let mut corrupt = Vec::new();
    let mut m = good.clone();
    m[1] = b'Z';
    corrupt.push(m);
    let mut v = good.clone();
    v[4] = 2;
    corrupt.push(v);
    corrupt.push(good[..19].to_vec());
    corrupt.push(good[..good.len() - 1].to_vec());
    for bad in &corrupt {
        ensure!(matches!(read_prob_map(bad.as_slice()), Err(Error::Format(_))), "corrupt SEGP accepted");
    }
    for bad in [&b"P6\n1 1\n255\n\x00\x00\x00"[..], b"P5\n1 1\n15\n\x00", b"P5\n2 2\n255\n\x00"] {
        ensure!(matches!(read_label_map(bad), Err(Error::Format(_))), "corrupt PGM accepted");
    }
    Ok("100 SEGP + 100 PGM bit-exact; 7 corrupt headers rejected as format errors".into())
}

/// One video of `frames` 100x100 frames with constant ground truth; one
/// frame mispredicts `wrong` pixels.
fn vc_fixture(frames: usize, wrong: usize) -> f64 {
    let gt = LabelMap::filled(100, 100, 1).unwrap();
    let mut bad = vec![1u8; 10_000];
    bad[..wrong].iter_mut().for_each(|v| *v = 0);
    let mut preds = vec![gt.clone(); frames];
    preds[frames / 2] = LabelMap::new(100, 100, bad).unwrap();
    video_consistency(&preds, &vec![gt; frames], frames).unwrap()
}

fn report_rendering() -> Outcome {
    let cm = ConfusionMatrix::from_counts(2, vec![12594, 3703, 3703, 12594]).unwrap();
    let mut ensemble_row = MetricReport::from_confusion(&cm).unwrap();
    ensemble_row.weighted_iou = None;
    ensemble_row.vc.insert(8, vc_fixture(8, 684));
    ensemble_row.vc.insert(16, vc_fixture(16, 949));
    let mut single = ensemble_row.clone();
    single.miou = 0.6;
    let table = emit_report(&[single, ensemble_row], &["Model A", "Ensemble"]).map_err(|e| e.to_string())?;
    let header = table.lines().next().unwrap_or_default();
    ensure!(
        header.split_whitespace().collect::<Vec<_>>() == ["Method", "mIoU", "VC8", "VC16"],
        "header {header:?}"
    );
    let row = table.lines().find(|l| l.starts_with("Ensemble")).ok_or("no Ensemble row")?;
    let cells: Vec<&str> = row.split_whitespace().collect();
    ensure!(cells == ["Ensemble", "0.6297", "0.9316", "0.9051"], "row {row:?}");
    Ok(format!("{row:?}"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("metric oracle equivalence", metric_oracle),
        ("VC oracle equivalence", vc_oracle),
        ("identity suite", identity_suite),
        ("loss gradient checks", gradient_checks),
        ("TTA degenerate case", tta_degenerate),
        ("pseudo-label threshold law", threshold_law),
        ("ensemble agreement law", ensemble_agreement),
        ("end-to-end recyclable loop", end_to_end),
        ("loop determinism", determinism),
        ("format round trips", format_round_trips),
        ("report rendering", report_rendering),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
