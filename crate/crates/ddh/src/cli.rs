//! The `ddh` command-line tool: synthetic data generation, ROI
//! extraction, teacher/student training, enrollment, matching,
//! evaluation, ablations, timing, and gradient checking.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data/file error,
//! 3 numeric failure.

use crate::config::{Settings, CONFIG_KEYS};
use crate::dataset::{export_dataset, gen_synthetic, load_dataset, split, Dataset};
use crate::error::{Error, Result};
use crate::gray::{decode_gray, encode_png, resize};
use crate::hash::{binarize_row, load_gallery, save_gallery, verify, Gallery, HashCode};
use crate::nn::grad_check::{run_suite, GradCheckConfig};
use crate::nn::{
    build_network, load_checkpoint, save_checkpoint, Network, NetworkSpec, OptimizerState,
};
use crate::pipeline::{
    ablation_suite, encode_and_enroll, encode_dataset, evaluate, train_student, train_teacher,
    write_ablation_csv, RunReport, DEFAULT_INPUT_SIZE, PAPER_ITERATIONS,
};
use crate::roi::{extract_roi, load_keypoint_csv, AxisMode, RoiOptions};
use crate::tensor::Tensor;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(
    name = "ddh",
    version,
    about = "Deep distillation hashing for palmprint identification and verification",
    after_help = format!("Config file keys (key=value, # comments):\n{CONFIG_KEYS}")
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitSel {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisModeArg {
    Primary,
    Perpendicular,
}

impl From<AxisModeArg> for AxisMode {
    fn from(a: AxisModeArg) -> AxisMode {
        match a {
            AxisModeArg::Primary => AxisMode::Primary,
            AxisModeArg::Perpendicular => AxisMode::Perpendicular,
        }
    }
}

/// Flags shared by the training-style commands. Values merge as
/// defaults, then the `--config` file, then explicit flags.
#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    /// key=value config file (see --help for keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// master rng seed
    #[arg(long)]
    seed: Option<u64>,
    /// training steps
    #[arg(long)]
    iterations: Option<u64>,
    /// use the full 10,000-iteration schedule
    #[arg(long)]
    paper_iters: bool,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// adam | sgd
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    batch_classes: Option<usize>,
    #[arg(long)]
    batch_per_class: Option<usize>,
    /// hashing-loss margin t
    #[arg(long)]
    margin: Option<f64>,
    /// quantization weight w
    #[arg(long)]
    quant_weight: Option<f64>,
    /// relative-loss weight
    #[arg(long)]
    alpha: Option<f64>,
    /// hard-loss weight
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// square input resolution
    #[arg(long)]
    image_size: Option<usize>,
    /// per-class train fraction
    #[arg(long)]
    train_fraction: Option<f64>,
    /// squared | euclidean
    #[arg(long)]
    hashing_distance: Option<String>,
    #[arg(long)]
    rela_squared: Option<bool>,
    #[arg(long)]
    rela_mean: Option<bool>,
    #[arg(long)]
    enable_dir: Option<bool>,
    #[arg(long)]
    enable_rela: Option<bool>,
    #[arg(long)]
    enable_hard: Option<bool>,
    #[arg(long)]
    enable_hinton: Option<bool>,
    #[arg(long)]
    log_every: Option<u64>,
}

impl TrainArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        macro_rules! flag {
            ($field:ident, $key:literal) => {
                if let Some(v) = &self.$field {
                    s.set($key, &v.to_string())?;
                }
            };
        }
        flag!(seed, "seed");
        flag!(iterations, "iterations");
        flag!(learning_rate, "learning_rate");
        flag!(optimizer, "optimizer");
        flag!(batch_classes, "batch_classes");
        flag!(batch_per_class, "batch_per_class");
        flag!(margin, "margin");
        flag!(quant_weight, "quant_weight");
        flag!(alpha, "alpha");
        flag!(beta, "beta");
        flag!(temperature, "temperature");
        flag!(image_size, "image_size");
        flag!(train_fraction, "train_fraction");
        flag!(hashing_distance, "hashing_distance");
        flag!(rela_squared, "rela_squared");
        flag!(rela_mean, "rela_mean");
        flag!(enable_dir, "enable_dir");
        flag!(enable_rela, "enable_rela");
        flag!(enable_hard, "enable_hard");
        flag!(enable_hinton, "enable_hinton");
        flag!(log_every, "log_every");
        if self.paper_iters {
            s.iterations = PAPER_ITERATIONS;
        }
        Ok(s)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic palm-texture dataset as root/<class>/<n>.png
    Gen {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        /// square image size in pixels
        #[arg(long, default_value_t = DEFAULT_INPUT_SIZE)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract ROIs for every row of a keypoint CSV
    Roi {
        /// CSV rows: image_path,x0,y0,...,x13,y13
        #[arg(long)]
        labels: PathBuf,
        /// base directory for relative image paths (default: CSV's directory)
        #[arg(long)]
        images_root: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        out_size: usize,
        /// zero-pad samples that fall outside the image
        #[arg(long)]
        pad: bool,
        #[arg(long, value_enum, default_value_t = AxisModeArg::Primary)]
        axis_mode: AxisModeArg,
    },
    /// Train the teacher network with the supervised hashing objective
    TrainTeacher {
        /// dataset directory (root/<class>/<image>)
        #[arg(long)]
        data: PathBuf,
        /// output checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// report path (default: <out>.report.txt)
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the student network under a frozen teacher
    TrainStudent {
        #[arg(long)]
        data: PathBuf,
        /// teacher checkpoint
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Encode images to hash codes (CSV of label,hex)
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitSel::All)]
        split: SplitSel,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Encode images and build a gallery file
    Enroll {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitSel::Train)]
        split: SplitSel,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Identify one probe image against a gallery
    Identify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// One-to-one verification of two images
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image_a: PathBuf,
        #[arg(long)]
        image_b: PathBuf,
        /// accept iff hamming distance <= threshold
        #[arg(long)]
        threshold: u32,
    },
    /// Evaluate a checkpoint: identification accuracy, EER, ROC export
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// output directory for report.txt and roc.csv
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitSel::Test)]
        split: SplitSel,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train and evaluate every loss configuration on identical splits
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// output CSV path
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Timing table: model size, parameters, extraction and matching time
    Bench {
        #[arg(long, default_value_t = DEFAULT_INPUT_SIZE)]
        size: usize,
        /// matcher gallery size
        #[arg(long, default_value_t = 1_000_000)]
        gallery_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Verify analytic gradients against central finite differences
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// random instances per loss
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

/// Parses `argv` and runs the selected subcommand, returning the process
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { classes, per_class, size, seed, out } => {
            let ds = gen_synthetic(classes, per_class, size, seed)?;
            export_dataset(&ds, &out)?;
            println!("wrote {} images ({classes} classes x {per_class}) to {}", ds.len(), out.display());
            Ok(())
        }
        Command::Roi { labels, images_root, out, out_size, pad, axis_mode } => {
            cmd_roi(&labels, images_root.as_deref(), &out, out_size, pad, axis_mode.into())
        }
        Command::TrainTeacher { data, out, report, train } => {
            let settings = train.settings()?;
            let (train_set, _) = load_split(&data, &settings)?;
            let cfg = settings.train_config();
            let started = Instant::now();
            let (net, run_report) = train_teacher(&cfg, &train_set)?;
            finish_training(&net, &run_report, &out, report.as_deref(), started, "teacher")
        }
        Command::TrainStudent { data, teacher, out, report, train } => {
            let settings = train.settings()?;
            let (train_set, _) = load_split(&data, &settings)?;
            let cfg = settings.train_config();
            let (teacher_net, _) = load_checkpoint(&teacher)?;
            let started = Instant::now();
            let (net, run_report) = train_student(&cfg, &train_set, &teacher_net)?;
            finish_training(&net, &run_report, &out, report.as_deref(), started, "student")
        }
        Command::Encode { checkpoint, data, out, split: sel, train } => {
            let (net, _) = load_checkpoint(&checkpoint)?;
            let settings = train.settings()?;
            let ds = select_split(&data, &settings, sel, net.spec().input.0)?;
            let codes = encode_dataset(&net, &ds)?;
            let mut text = String::from("label,code\n");
            for (label, code) in &codes {
                text.push_str(&format!("{label},{}\n", code.to_hex()));
            }
            std::fs::write(&out, text)?;
            println!("encoded {} images to {}", codes.len(), out.display());
            Ok(())
        }
        Command::Enroll { checkpoint, data, out, split: sel, train } => {
            let (net, _) = load_checkpoint(&checkpoint)?;
            let settings = train.settings()?;
            let ds = select_split(&data, &settings, sel, net.spec().input.0)?;
            let gallery = encode_and_enroll(&net, &ds)?;
            save_gallery(&gallery, &out)?;
            println!("enrolled {} entries to {}", gallery.len(), out.display());
            Ok(())
        }
        Command::Identify { checkpoint, gallery, image } => {
            let (net, _) = load_checkpoint(&checkpoint)?;
            let gallery = load_gallery(&gallery)?;
            let code = encode_image(&net, &image)?;
            let hit = gallery.identify(&code)?;
            println!("label={} distance={} entry_id={}", hit.label, hit.distance, hit.entry_id);
            Ok(())
        }
        Command::Verify { checkpoint, image_a, image_b, threshold } => {
            let (net, _) = load_checkpoint(&checkpoint)?;
            let a = encode_image(&net, &image_a)?;
            let b = encode_image(&net, &image_b)?;
            let (accept, distance) = verify(&a, &b, threshold)?;
            println!("accept={accept} distance={distance}");
            Ok(())
        }
        Command::Eval { checkpoint, gallery, data, out, split: sel, train } => {
            let (net, _) = load_checkpoint(&checkpoint)?;
            let gallery: Gallery = load_gallery(&gallery)?;
            let settings = train.settings()?;
            let ds = select_split(&data, &settings, sel, net.spec().input.0)?;
            std::fs::create_dir_all(&out)?;
            let roc_path = out.join("roc.csv");
            let outcome = evaluate(&net, &gallery, &ds, Some(&roc_path))?;
            let mut report = RunReport {
                seed: settings.seed,
                iterations: settings.iterations,
                metrics: Some(outcome.metrics),
                timings: Some(outcome.timings),
                ..RunReport::default()
            };
            report.config_echo.push(("roc_csv".into(), roc_path.display().to_string()));
            std::fs::write(out.join("report.txt"), report.to_key_values())?;
            print!("{}", report.to_key_values());
            Ok(())
        }
        Command::Ablate { data, out, train } => {
            let settings = train.settings()?;
            let ds = load_dataset(&data, Some(settings.image_size))?;
            let outcome = ablation_suite(&settings.train_config(), &ds, &settings.split_spec())?;
            write_ablation_csv(&outcome.rows, &out)?;
            println!("teacher,{:.9e},{:.9e}", outcome.teacher_accuracy, outcome.teacher_eer);
            for row in &outcome.rows {
                println!("{},{:.9e},{:.9e}", row.config, row.accuracy, row.eer);
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Bench { size, gallery_size, seed } => cmd_bench(size, gallery_size, seed),
        Command::GradCheck { seed, instances } => {
            let cfg = GradCheckConfig { instances, ..GradCheckConfig::default() };
            let outcomes = run_suite(seed, &cfg)?;
            let mut worst = 0.0f64;
            for o in &outcomes {
                println!(
                    "loss={} instances={} coords={} max_rel_err={:.3e}",
                    o.objective, o.instances, o.coords_checked, o.max_rel_err
                );
                worst = worst.max(o.max_rel_err);
            }
            println!("max_rel_err={worst:.3e} tolerance={:.0e}", cfg.tolerance);
            if worst < cfg.tolerance {
                Ok(())
            } else {
                Err(Error::Numeric(format!(
                    "gradient check failed: max relative error {worst:.3e} >= {:.0e}",
                    cfg.tolerance
                )))
            }
        }
    }
}

fn load_split(data: &Path, settings: &Settings) -> Result<(Dataset, Dataset)> {
    let ds = load_dataset(data, Some(settings.image_size))?;
    split(&ds, &settings.split_spec())
}

fn select_split(data: &Path, settings: &Settings, sel: SplitSel, input_size: usize) -> Result<Dataset> {
    let ds = load_dataset(data, Some(input_size))?;
    match sel {
        SplitSel::All => Ok(ds),
        SplitSel::Train => Ok(split(&ds, &settings.split_spec())?.0),
        SplitSel::Test => Ok(split(&ds, &settings.split_spec())?.1),
    }
}

fn encode_image(net: &Network, path: &Path) -> Result<HashCode> {
    let (h, w, _) = net.spec().input;
    let image = resize(&decode_gray(path)?, h, w)?;
    let batch = Tensor::from_vec(vec![1, h, w, 1], image.data().to_vec())?;
    let features = net.forward(&batch)?;
    binarize_row(&features, 0)
}

fn finish_training(
    net: &Network,
    report: &RunReport,
    out: &Path,
    report_path: Option<&Path>,
    started: Instant,
    what: &str,
) -> Result<()> {
    let opt = OptimizerState::new(crate::nn::OptMethod::Adam, 0.0);
    save_checkpoint(net, &opt, out)?;
    let report_path = report_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("report.txt"));
    std::fs::write(&report_path, report.to_key_values())?;
    let final_loss = report.loss_samples.last().map(|s| s.total).unwrap_or(f64::NAN);
    println!(
        "trained {what} ({} parameters) in {:.1}s, final loss {:.4}; checkpoint {}, report {}",
        net.parameter_count(),
        started.elapsed().as_secs_f64(),
        final_loss,
        out.display(),
        report_path.display()
    );
    Ok(())
}

fn cmd_roi(
    labels: &Path,
    images_root: Option<&Path>,
    out: &Path,
    out_size: usize,
    pad: bool,
    axis_mode: AxisMode,
) -> Result<()> {
    let records = load_keypoint_csv(labels)?;
    let base = images_root
        .map(Path::to_path_buf)
        .or_else(|| labels.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(out)?;
    let opts = RoiOptions { out_size, zero_pad: pad, axis_mode };
    for (i, rec) in records.iter().enumerate() {
        let image_path = if rec.image_path.is_absolute() {
            rec.image_path.clone()
        } else {
            base.join(&rec.image_path)
        };
        let image = decode_gray(&image_path)?;
        let roi = extract_roi(&image, &rec.keypoints, &opts).map_err(|e| {
            Error::Geometry(format!("{}: {e}", rec.image_path.display()))
        })?;
        let stem = rec
            .image_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image");
        encode_png(&roi, out.join(format!("{i:04}_{stem}_roi.png")))?;
    }
    println!("extracted {} ROIs to {}", records.len(), out.display());
    Ok(())
}

fn cmd_bench(size: usize, gallery_size: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = [
        ("teacher", NetworkSpec::teacher(size)),
        ("student", NetworkSpec::student(size)),
    ];
    println!("input_size={size} gallery_size={gallery_size}");
    println!("{:<28}{:>14}{:>14}{:>14}", "metric", "teacher", "student", "ddh");
    let mut rows: Vec<[String; 3]> = vec![];
    let mut extraction = [0.0f64; 2];
    let mut model_size = [0u64; 2];
    let mut params = [0usize; 2];
    for (i, (_, spec)) in specs.iter().enumerate() {
        let net = build_network(spec, seed)?;
        params[i] = net.parameter_count();
        let tmp = std::env::temp_dir().join(format!("ddh-bench-{}-{i}.ckpt", std::process::id()));
        save_checkpoint(&net, &OptimizerState::new(crate::nn::OptMethod::Adam, 0.001), &tmp)?;
        model_size[i] = std::fs::metadata(&tmp)?.len();
        let _ = std::fs::remove_file(&tmp);
        // feature extraction time, averaged over a small batch
        let n = 8;
        let data: Vec<f64> = (0..n * size * size).map(|_| rng.random_range(0.0..1.0)).collect();
        let batch = Tensor::from_vec(vec![n, size, size, 1], data)?;
        net.forward(&batch)?; // warm up
        let t = Instant::now();
        let reps = 3;
        for _ in 0..reps {
            net.forward(&batch)?;
        }
        extraction[i] = t.elapsed().as_secs_f64() * 1e3 / (reps * n) as f64;
    }
    // matching time is architecture-independent: time identify() over a
    // random gallery
    let mut gallery = Gallery::new();
    for i in 0..gallery_size {
        gallery.enroll(format!("s{}", i % 1000), HashCode(std::array::from_fn(|_| rng.random())));
    }
    let probes: Vec<HashCode> = (0..4).map(|_| HashCode(std::array::from_fn(|_| rng.random()))).collect();
    let t = Instant::now();
    for p in &probes {
        gallery.identify(p)?;
    }
    let per_pair_us = t.elapsed().as_secs_f64() * 1e6 / (probes.len() * gallery_size) as f64;
    let scan_ms = t.elapsed().as_secs_f64() * 1e3 / probes.len() as f64;

    rows.push(["model_size_bytes".into(), model_size[0].to_string(), model_size[1].to_string()]);
    rows.push(["total_parameters".into(), params[0].to_string(), params[1].to_string()]);
    rows.push([
        "feature_extraction_ms".into(),
        format!("{:.3}", extraction[0]),
        format!("{:.3}", extraction[1]),
    ]);
    rows.push([
        "feature_matching_us_per_pair".into(),
        format!("{per_pair_us:.5}"),
        format!("{per_pair_us:.5}"),
    ]);
    rows.push(["full_scan_ms".into(), format!("{scan_ms:.2}"), format!("{scan_ms:.2}")]);
    rows.push(["iterations".into(), "2000".into(), "2000".into()]);
    for r in rows {
        // ddh shares the student architecture, so its column repeats
        println!("{:<28}{:>14}{:>14}{:>14}", r[0], r[1], r[2], r[2]);
    }
    Ok(())
}
