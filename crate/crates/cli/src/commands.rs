//! Subcommand implementations. Each writes its report to `out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mpoxmamba::gradcheck::{model_gradcheck, op_suite, GradCheckReport};
use mpoxmamba::model::checkpoint::{self, Checkpoint};
use mpoxmamba::model::grad_cam::{grad_cam, overlay};
use mpoxmamba::model::{budget, Ablation, Budget, ModelConfig};
use mpoxmamba::ops::activation::softmax_lastdim;
use mpoxmamba::ssm::{selective_scan, SsmParams};
use mpoxmamba::train::dataset::{image_to_tensor, read_rgb};
use mpoxmamba::train::report::{write_history_json, write_metrics_csv};
use mpoxmamba::train::{cross_validate, evaluate, evaluate_metrics, load_dataset};
use mpoxmamba::{Error, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Precision, RunConfig};
use crate::CliError;

type Res = Result<(), CliError>;

/// Gradient-check tolerance on the relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Overlay opacity of the heatmap.
pub const CAM_ALPHA: f64 = 0.4;

#[derive(Clone, Debug)]
pub struct SummaryReport {
    pub budget: Budget,
    pub params: usize,
    pub macs: usize,
    pub flops: usize,
}

pub fn summary_report(model: &ModelConfig) -> Result<SummaryReport, CliError> {
    let b = budget(model)?;
    Ok(SummaryReport {
        params: b.params(),
        macs: b.macs(),
        flops: b.flops(),
        budget: b,
    })
}

fn mega(v: usize) -> f64 {
    v as f64 / 1e6
}

fn giga(v: usize) -> f64 {
    v as f64 / 1e9
}

pub fn summary(cfg: &RunConfig, ladder: bool, out: &mut dyn Write) -> Res {
    let r = summary_report(&cfg.model)?;
    let s = cfg.model.input_size;
    writeln!(out, "input {}x{s}x{s}, {} classes", cfg.model.in_channels, cfg.model.num_classes)?;
    writeln!(out, "{:<14} {:>14} {:>10} {:>14}", "layer", "output", "params", "MACs")?;
    for row in &r.budget.rows {
        let [c, h, w] = row.output;
        writeln!(
            out,
            "{:<14} {:>14} {:>10} {:>14}",
            row.name,
            format!("{c}x{h}x{w}"),
            row.cost.params,
            row.cost.macs
        )?;
    }
    writeln!(out, "params: {} ({:.3} M)", r.params, mega(r.params))?;
    writeln!(out, "MACs:   {} ({:.3} G)", r.macs, giga(r.macs))?;
    writeln!(out, "FLOPs:  {} ({:.3} G, 2 per MAC)", r.flops, giga(r.flops))?;
    if ladder {
        writeln!(out)?;
        writeln!(out, "{:<10} {:>10} {:>10}", "variant", "params M", "GMACs")?;
        for a in Ablation::ALL {
            let v = summary_report(&cfg.model.clone().with_ablation(a))?;
            writeln!(out, "{:<10} {:>10.3} {:>10.3}", a.name(), mega(v.params), giga(v.macs))?;
        }
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &mut dyn Write) -> Res {
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg, out),
        Precision::F64 => train_as::<f64>(cfg, out),
    }
}

fn data_root(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.data_root
        .as_deref()
        .ok_or_else(|| CliError::Usage("a dataset is required (--data or data.root)".into()))
}

fn train_as<T: Scalar>(cfg: &RunConfig, out: &mut dyn Write) -> Res {
    let root = data_root(cfg)?;
    let (index, data) = load_dataset::<T>(root, cfg.model.input_size)?;
    let counts = index.class_counts();
    writeln!(out, "dataset {}: {} images", root.display(), index.len())?;
    for (name, n) in index.classes.iter().zip(&counts) {
        writeln!(out, "  {name}: {n}")?;
    }
    let model = ModelConfig {
        num_classes: index.classes.len(),
        ..cfg.model.clone()
    };
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::Io { context: format!("creating {}", cfg.output_dir.display()), source: e })?;
    let mut write_err = None;
    let folds = cross_validate(&model, &data, &cfg.train, |fold, r| {
        let ev = r.eval.as_ref();
        let line = format!(
            "fold {fold} epoch {:>3} loss {:.4} train-oa {:6.2} val-loss {:.4} val-oa {:6.2}",
            r.epoch,
            r.train.loss,
            r.train.oa,
            ev.map_or(f64::NAN, |e| e.loss),
            ev.map_or(f64::NAN, |e| e.oa),
        );
        if let Err(e) = writeln!(out, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let histories: Vec<_> = folds.iter().map(|f| f.history.clone()).collect();
    for f in &folds {
        let path = cfg.output_dir.join(format!("fold{}.mpxm", f.history.fold));
        checkpoint::save(&f.model, &index.classes, &path)?;
        write_history_json(&cfg.output_dir, &f.history)?;
    }
    let csv = cfg.output_dir.join("metrics.csv");
    write_metrics_csv(&csv, &histories)?;
    let finals: Vec<_> = histories.iter().filter_map(|h| h.epochs.last()?.eval.clone()).collect();
    if !finals.is_empty() {
        let n = finals.len() as f64;
        writeln!(
            out,
            "mean over {} folds: OA {:.2}  Se {:.2}  Sp {:.2}",
            finals.len(),
            finals.iter().map(|r| r.oa).sum::<f64>() / n,
            finals.iter().map(|r| r.se_macro).sum::<f64>() / n,
            finals.iter().map(|r| r.sp_macro).sum::<f64>() / n,
        )?;
    }
    writeln!(out, "wrote {}", csv.display())?;
    Ok(())
}

fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, CliError> {
    Ok(checkpoint::load::<T>(path)?)
}

pub fn eval(cfg: &RunConfig, ckpt: &Path, out: &mut dyn Write) -> Res {
    match cfg.precision {
        Precision::F32 => eval_as::<f32>(cfg, ckpt, out),
        Precision::F64 => eval_as::<f64>(cfg, ckpt, out),
    }
}

fn eval_as<T: Scalar>(cfg: &RunConfig, ckpt: &Path, out: &mut dyn Write) -> Res {
    let Checkpoint { model, class_names } = load_checkpoint::<T>(ckpt)?;
    let root = data_root(cfg)?;
    let (index, data) = load_dataset::<T>(root, model.config.input_size)?;
    if index.classes != class_names {
        return Err(Error::Dataset(format!(
            "dataset classes {:?} differ from checkpoint classes {class_names:?}",
            index.classes
        ))
        .into());
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let rec = evaluate(&model, &data, &all, cfg.train.batch_size)?;
    let m = evaluate_metrics(&rec.confusion)?;
    let (oa, se, sp) = m.headline();
    writeln!(out, "samples {}  loss {:.4}", data.len(), rec.loss)?;
    writeln!(out, "OA {oa:.2}  Se {se:.2}  Sp {sp:.2}")?;
    writeln!(out, "{:<16} {:>8} {:>8}", "class", "Se", "Sp")?;
    for (name, c) in class_names.iter().zip(&m.per_class) {
        writeln!(out, "{name:<16} {:>8.2} {:>8.2}", c.sensitivity, c.specificity)?;
    }
    writeln!(out, "macro            {:>8.2} {:>8.2}", m.se_macro, m.sp_macro)?;
    writeln!(out, "confusion (rows = truth):")?;
    for row in &rec.confusion.counts {
        writeln!(out, "  {}", row.iter().map(u64::to_string).collect::<Vec<_>>().join(" "))?;
    }
    Ok(())
}

pub fn default_cam_path(image: &Path) -> PathBuf {
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    PathBuf::from(format!("{stem}_cam.png"))
}

pub fn infer(cfg: &RunConfig, ckpt: &Path, image: &Path, cam_out: Option<&Path>, out: &mut dyn Write) -> Res {
    match cfg.precision {
        Precision::F32 => infer_as::<f32>(ckpt, image, cam_out, out),
        Precision::F64 => infer_as::<f64>(ckpt, image, cam_out, out),
    }
}

fn infer_as<T: Scalar>(ckpt: &Path, image: &Path, cam_out: Option<&Path>, out: &mut dyn Write) -> Res {
    let Checkpoint { model, class_names } = load_checkpoint::<T>(ckpt)?;
    let rgb = read_rgb(image)?;
    let s = model.config.input_size;
    let input: Tensor<T> = image_to_tensor(&rgb, s);
    let logits = model.predict(&input.clone().reshape(&[1, 3, s, s])?)?;
    let probs = softmax_lastdim(&logits)?.to_f64_vec();
    let best = logits.argmax_rows()?[0];
    let name = |i: usize| class_names.get(i).cloned().unwrap_or_else(|| format!("class{i}"));
    writeln!(out, "prediction: {} ({:.4})", name(best), probs[best])?;
    for (i, p) in probs.iter().enumerate() {
        writeln!(out, "  {:<16} {p:.6}", name(i))?;
    }
    if let Some(path) = cam_out {
        let cam = grad_cam(&model, &input, best)?;
        let blended = overlay(&rgb, &cam.heatmap, CAM_ALPHA)?;
        blended.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        writeln!(out, "grad-cam overlay: {}", path.display())?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub length: usize,
    pub median: Duration,
    /// Median time relative to the previous row's.
    pub ratio: Option<f64>,
}

/// Times `repeats` selective scans of `[len, d_inner]` inputs per length after
/// one untimed warm-up run, keeping the median.
pub fn bench_scan(lengths: &[usize], d_inner: usize, d_state: usize, repeats: usize, seed: u64) -> Result<Vec<BenchRow>, CliError> {
    if lengths.is_empty() {
        return Err(CliError::Usage("--lengths needs at least one value".into()));
    }
    if let Some(l) = lengths.iter().find(|&&l| l < 64) {
        return Err(CliError::Usage(format!("bench lengths must be >= 64, got {l}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<BenchRow> = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let mut fill = |shape: &[usize], lo: f64, hi: f64| {
            let n: usize = shape.iter().product();
            Tensor::<f64>::from_f64(shape, &(0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>())
        };
        let params = SsmParams::new(
            fill(&[d_inner, d_state], -2.0, -0.1)?,
            fill(&[len, d_state], -1.0, 1.0)?,
            fill(&[len, d_state], -1.0, 1.0)?,
            fill(&[len, d_inner], 0.001, 0.1)?,
            fill(&[d_inner], -1.0, 1.0)?,
        )?;
        let x = fill(&[len, d_inner], -1.0, 1.0)?;
        selective_scan(&x, &params)?;
        let mut times: Vec<Duration> = (0..repeats.max(1))
            .map(|_| {
                let t = Instant::now();
                let y = selective_scan(&x, &params);
                let elapsed = t.elapsed();
                y.map(|y| {
                    std::hint::black_box(y);
                    elapsed
                })
            })
            .collect::<Result<_, _>>()?;
        times.sort();
        let median = times[times.len() / 2];
        let ratio = rows.last().map(|p| median.as_secs_f64() / p.median.as_secs_f64());
        rows.push(BenchRow { length: len, median, ratio });
    }
    Ok(rows)
}

pub fn bench(op: &str, lengths: &[usize], out: &mut dyn Write) -> Res {
    if op != "scan" {
        return Err(CliError::Usage(format!("unknown bench op {op:?} (only \"scan\")")));
    }
    let rows = bench_scan(lengths, 64, 16, 5, 0)?;
    writeln!(out, "selective scan, d_inner 64, state 16, median of 5 (1 warm-up run excluded)")?;
    writeln!(out, "{:>8} {:>12} {:>8}", "length", "median ms", "ratio")?;
    for r in rows {
        let ratio = r.ratio.map_or("-".to_string(), |v| format!("{v:.3}"));
        writeln!(out, "{:>8} {:>12.3} {:>8}", r.length, r.median.as_secs_f64() * 1e3, ratio)?;
    }
    Ok(())
}

fn report_line(out: &mut dyn Write, name: &str, r: &GradCheckReport) -> std::io::Result<()> {
    let verdict = if r.passed() { "ok" } else { "FAILED" };
    writeln!(out, "{name:<28} {:>5} coords  max rel err {:.3e}  {verdict}", r.entries.len(), r.max_rel_error())
}

pub fn gradcheck(seed: u64, samples: usize, out: &mut dyn Write) -> Res {
    let mut failed = Vec::new();
    for (name, r) in op_suite(seed, GRADCHECK_TOLERANCE)? {
        report_line(out, &name, &r)?;
        if !r.passed() {
            failed.push(name);
        }
    }
    let cfg = ModelConfig {
        input_size: 32,
        ..ModelConfig::default().scaled(8)
    };
    let r = model_gradcheck(cfg, samples, seed, GRADCHECK_TOLERANCE)?;
    report_line(out, "model (width/8, 32x32)", &r)?;
    if !r.passed() {
        failed.push("model".into());
    }
    if failed.is_empty() {
        writeln!(out, "all gradients within {GRADCHECK_TOLERANCE:e}")?;
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))).into())
    }
}
