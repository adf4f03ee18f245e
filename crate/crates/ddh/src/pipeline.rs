//! Training and evaluation protocol: the teacher trains first on the
//! supervised hashing objective, its weights freeze, and the student
//! trains on the combined objective guided by the teacher's per-batch
//! features. Trained networks encode galleries and evaluate with
//! Hamming-distance identification and verification.

use crate::dataset::{sample_pair_batch, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{collect_scores, eer, export_roc, identification_accuracy};
use crate::hash::{binarize_row, Gallery, HashCode};
use crate::losses::{LossBreakdown, LossConfig};
use crate::nn::{
    build_network, optimizer_step, FeatureObjective, Network, NetworkSpec, OptMethod,
    OptimizerState,
};
use crate::objective::{DhnObjective, DistillSwitches, StudentObjective};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Default training input resolution. The teacher/student layer stacks
/// also run at 64 and beyond; 32 keeps a full experiment suite in the
/// minutes range on a plain CPU.
pub const DEFAULT_INPUT_SIZE: usize = 32;
pub const DEFAULT_ITERATIONS: u64 = 2_000;
pub const PAPER_ITERATIONS: u64 = 10_000;

/// Everything a training run depends on.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub teacher: NetworkSpec,
    pub student: NetworkSpec,
    pub loss: LossConfig,
    pub optimizer: OptMethod,
    pub learning_rate: f64,
    pub iterations: u64,
    pub batch_classes: usize,
    pub batch_per_class: usize,
    pub seed: u64,
    /// Which distillation terms the student objective includes.
    pub switches: DistillSwitches,
    /// Record a loss sample every this many iterations.
    pub log_every: u64,
}

impl TrainConfig {
    /// Defaults for a given square input size.
    pub fn for_input(input_size: usize) -> Self {
        TrainConfig {
            teacher: NetworkSpec::teacher(input_size),
            student: NetworkSpec::student(input_size),
            loss: LossConfig::default(),
            optimizer: OptMethod::Adam,
            learning_rate: 0.001,
            iterations: DEFAULT_ITERATIONS,
            batch_classes: 8,
            batch_per_class: 4,
            seed: 0,
            switches: DistillSwitches::full(),
            log_every: 50,
        }
    }

    pub fn input_size(&self) -> usize {
        self.teacher.input.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".to_string()));
        }
        if self.batch_classes < 2 || self.batch_per_class < 2 {
            return Err(Error::Config(
                "batches need at least 2 classes and 2 items per class".to_string(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.teacher.validate()?;
        self.student.validate()?;
        Ok(())
    }

    fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("config.input_size".into(), self.input_size().to_string()),
            ("config.optimizer".into(), format!("{:?}", self.optimizer).to_lowercase()),
            ("config.learning_rate".into(), self.learning_rate.to_string()),
            ("config.iterations".into(), self.iterations.to_string()),
            ("config.batch_classes".into(), self.batch_classes.to_string()),
            ("config.batch_per_class".into(), self.batch_per_class.to_string()),
            ("config.margin".into(), self.loss.margin.to_string()),
            ("config.quant_weight".into(), self.loss.quant_weight.to_string()),
            ("config.alpha".into(), self.loss.alpha.to_string()),
            ("config.beta".into(), self.loss.beta.to_string()),
            ("config.enable_dir".into(), self.switches.direct.to_string()),
            ("config.enable_rela".into(), self.switches.relative.to_string()),
            ("config.enable_hard".into(), self.switches.hard.to_string()),
            ("config.enable_hinton".into(), self.switches.hinton.to_string()),
        ]
    }
}

/// One logged objective sample.
#[derive(Debug, Clone, Copy)]
pub struct LossSample {
    pub iteration: u64,
    pub total: f64,
    pub breakdown: LossBreakdown,
}

/// Final verification/identification metrics.
#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    pub identification_accuracy: f64,
    pub eer: f64,
    pub threshold_star: f64,
    pub genuine_count: usize,
    pub imposter_count: usize,
}

/// Wall-clock measurements.
#[derive(Debug, Clone, Copy)]
pub struct Timings {
    pub feature_extraction_ms_per_image: f64,
    pub matching_us_per_pair: f64,
}

/// Record of a training or evaluation run.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub seed: u64,
    pub iterations: u64,
    pub loss_samples: Vec<LossSample>,
    pub metrics: Option<Metrics>,
    pub timings: Option<Timings>,
    pub config_echo: Vec<(String, String)>,
}

impl RunReport {
    /// Serializes as plain-text `key=value` lines.
    pub fn write_key_values(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "seed={}", self.seed)?;
        writeln!(w, "iterations={}", self.iterations)?;
        if let Some(m) = &self.metrics {
            writeln!(w, "accuracy={:.9e}", m.identification_accuracy)?;
            writeln!(w, "eer={:.9e}", m.eer)?;
            writeln!(w, "threshold_star={:.9e}", m.threshold_star)?;
            writeln!(w, "genuine_count={}", m.genuine_count)?;
            writeln!(w, "imposter_count={}", m.imposter_count)?;
        }
        if let Some(t) = &self.timings {
            writeln!(w, "feature_extraction_ms_per_image={:.6}", t.feature_extraction_ms_per_image)?;
            writeln!(w, "matching_us_per_pair={:.6}", t.matching_us_per_pair)?;
        }
        for (k, v) in &self.config_echo {
            writeln!(w, "{k}={v}")?;
        }
        for s in &self.loss_samples {
            writeln!(
                w,
                "loss_iter_{:06}=total:{:.6};hashing:{:.6};quantization:{:.6};relative:{:.6};hard:{:.6};direct:{:.6};hinton:{:.6}",
                s.iteration,
                s.total,
                s.breakdown.hashing,
                s.breakdown.quantization,
                s.breakdown.relative,
                s.breakdown.hard,
                s.breakdown.direct,
                s.breakdown.hinton
            )?;
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> String {
        let mut buf = Vec::new();
        self.write_key_values(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8 report")
    }
}

fn check_train_inputs(cfg: &TrainConfig, spec: &NetworkSpec, train: &Dataset) -> Result<()> {
    cfg.validate()?;
    let (h, w) = train
        .image_shape()
        .ok_or_else(|| Error::Data("training set is empty".to_string()))?;
    if (h, w, 1) != spec.input {
        return Err(Error::Input(format!(
            "dataset images {h}x{w} do not match network input {:?}",
            spec.input
        )));
    }
    Ok(())
}

/// The shared deterministic training loop. When `teacher` is set, the
/// objective is the student composite; otherwise plain supervised DHN.
fn train_network(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    train: &Dataset,
    teacher: Option<&Network>,
) -> Result<(Network, RunReport)> {
    check_train_inputs(cfg, spec, train)?;
    let mut net = build_network(spec, cfg.seed)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate);
    let mut report = RunReport {
        seed: cfg.seed,
        iterations: cfg.iterations,
        config_echo: cfg.echo(),
        ..RunReport::default()
    };
    // with no active distillation term the teacher pass is pure waste;
    // skipping it also makes the alpha = beta = 0 run reproduce plain
    // DHN training bit for bit
    let needs_teacher = teacher.is_some()
        && ((cfg.switches.relative && cfg.loss.alpha != 0.0)
            || (cfg.switches.hard && cfg.loss.beta != 0.0)
            || cfg.switches.direct
            || cfg.switches.hinton);
    for iter in 0..cfg.iterations {
        let batch = sample_pair_batch(
            train,
            cfg.batch_classes,
            cfg.batch_per_class,
            cfg.seed,
            iter,
        )?;
        let objective: Box<dyn FeatureObjective> = if needs_teacher {
            let teacher_features = teacher
                .expect("needs_teacher implies teacher")
                .forward(&batch.images)
                .map_err(|e| Error::Numeric(format!("iteration {iter} (teacher): {e}")))?;
            Box::new(StudentObjective {
                teacher_features,
                labels: batch.pair_labels,
                cfg: cfg.loss,
                switches: cfg.switches,
            })
        } else {
            Box::new(DhnObjective {
                labels: batch.pair_labels,
                cfg: cfg.loss,
            })
        };
        let (loss, breakdown, grads) = net
            .gradients(&batch.images, objective.as_ref())
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("iteration {iter}: {msg}")),
                other => other,
            })?;
        optimizer_step(&mut net, &grads, &mut opt)?;
        if iter % cfg.log_every == 0 || iter + 1 == cfg.iterations {
            report.loss_samples.push(LossSample {
                iteration: iter,
                total: loss,
                breakdown,
            });
        }
    }
    Ok((net, report))
}

/// Trains the teacher network on the supervised hashing objective.
pub fn train_teacher(cfg: &TrainConfig, train: &Dataset) -> Result<(Network, RunReport)> {
    train_network(&cfg.teacher, cfg, train, None)
}

/// Trains the student network under the frozen teacher. The teacher is
/// only read; its parameters are bit-identical before and after.
pub fn train_student(
    cfg: &TrainConfig,
    train: &Dataset,
    teacher: &Network,
) -> Result<(Network, RunReport)> {
    if teacher.spec().code_width != cfg.student.code_width {
        return Err(Error::Spec(format!(
            "teacher code width {} does not match student code width {}",
            teacher.spec().code_width,
            cfg.student.code_width
        )));
    }
    train_network(&cfg.student, cfg, train, Some(teacher))
}

const ENCODE_CHUNK: usize = 64;

/// Encodes every dataset item and returns the codes in dataset order.
pub fn encode_dataset(net: &Network, ds: &Dataset) -> Result<Vec<(String, HashCode)>> {
    if ds.is_empty() {
        return Err(Error::Input("cannot encode an empty dataset".to_string()));
    }
    let mut codes = Vec::with_capacity(ds.len());
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(ENCODE_CHUNK) {
        let batch = ds.batch_of(chunk)?;
        let features = net.forward(&batch)?;
        for (row, &i) in chunk.iter().enumerate() {
            codes.push((ds.items()[i].label.clone(), binarize_row(&features, row)?));
        }
    }
    Ok(codes)
}

/// Encodes and enrolls a dataset: one gallery entry per item, insertion
/// order equal to dataset order.
pub fn encode_and_enroll(net: &Network, ds: &Dataset) -> Result<Gallery> {
    let mut gallery = Gallery::new();
    for (label, code) in encode_dataset(net, ds)? {
        gallery.enroll(label, code);
    }
    Ok(gallery)
}

/// Evaluation result: metrics plus timing measurements.
#[derive(Debug, Clone, Copy)]
pub struct EvalOutcome {
    pub metrics: Metrics,
    pub timings: Timings,
}

/// Runs identification and verification of `test` against the gallery,
/// optionally exporting the ROC curve as CSV.
pub fn evaluate(
    net: &Network,
    gallery: &Gallery,
    test: &Dataset,
    roc_path: Option<&Path>,
) -> Result<EvalOutcome> {
    if gallery.is_empty() || test.is_empty() {
        return Err(Error::Input("evaluate needs a nonempty gallery and test set".to_string()));
    }
    let start = Instant::now();
    let probes = encode_dataset(net, test)?;
    let extract_ms = start.elapsed().as_secs_f64() * 1e3 / test.len() as f64;

    let start = Instant::now();
    let scores = collect_scores(gallery, &probes)?;
    let pairs = (probes.len() * gallery.len()) as f64;
    let matching_us = start.elapsed().as_secs_f64() * 1e6 / pairs;

    let accuracy = identification_accuracy(gallery, &probes)?;
    let (eer_value, threshold_star) = eer(&scores)?;
    if let Some(path) = roc_path {
        export_roc(&scores, path)?;
    }
    Ok(EvalOutcome {
        metrics: Metrics {
            identification_accuracy: accuracy,
            eer: eer_value,
            threshold_star,
            genuine_count: scores.genuine.len(),
            imposter_count: scores.imposter.len(),
        },
        timings: Timings {
            feature_extraction_ms_per_image: extract_ms,
            matching_us_per_pair: matching_us,
        },
    })
}

/// One ablation row: a loss configuration and its metrics.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub config: String,
    pub accuracy: f64,
    pub eer: f64,
}

/// Ablation output: the four student rows plus the teacher reference.
#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub teacher_accuracy: f64,
    pub teacher_eer: f64,
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_CONFIGS: [(&str, DistillSwitches); 4] = [
    ("L_DHN", DistillSwitches { direct: false, relative: false, hard: false, hinton: false }),
    ("L_DHN+L_dir", DistillSwitches { direct: true, relative: false, hard: false, hinton: false }),
    ("L_DHN+L_rela", DistillSwitches { direct: false, relative: true, hard: false, hinton: false }),
    (
        "L_DHN+L_rela+L_hard",
        DistillSwitches { direct: false, relative: true, hard: true, hinton: false },
    ),
];

/// Trains the teacher once, then one student per loss configuration on
/// identical splits and seeds, and evaluates everything on the held-out
/// half. Rows run on worker threads; each run is internally
/// deterministic, so the table is reproducible regardless of scheduling.
pub fn ablation_suite(
    cfg: &TrainConfig,
    ds: &Dataset,
    split_spec: &SplitSpec,
) -> Result<AblationOutcome> {
    cfg.validate()?;
    let (train, test) = crate::dataset::split(ds, split_spec)?;
    let (teacher, _) = train_teacher(cfg, &train)?;
    let teacher_gallery = encode_and_enroll(&teacher, &train)?;
    let teacher_eval = evaluate(&teacher, &teacher_gallery, &test, None)?;

    let mut rows: Vec<Option<AblationRow>> = vec![None; ABLATION_CONFIGS.len()];
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (slot, (name, switches)) in rows.iter_mut().zip(ABLATION_CONFIGS.iter()) {
            let mut row_cfg = cfg.clone();
            row_cfg.switches = *switches;
            let (teacher, train, test) = (&teacher, &train, &test);
            handles.push(scope.spawn(move || -> Result<()> {
                let (student, _) = train_student(&row_cfg, train, teacher)?;
                let gallery = encode_and_enroll(&student, train)?;
                let outcome = evaluate(&student, &gallery, test, None)?;
                *slot = Some(AblationRow {
                    config: name.to_string(),
                    accuracy: outcome.metrics.identification_accuracy,
                    eer: outcome.metrics.eer,
                });
                Ok(())
            }));
        }
        for h in handles {
            h.join().map_err(|_| Error::State("ablation worker panicked".to_string()))??;
        }
        Ok(())
    })?;

    Ok(AblationOutcome {
        teacher_accuracy: teacher_eval.metrics.identification_accuracy,
        teacher_eer: teacher_eval.metrics.eer,
        rows: rows.into_iter().map(|r| r.expect("all rows filled")).collect(),
    })
}

/// Writes the ablation table as CSV with header `config,accuracy,eer`.
pub fn write_ablation_csv(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("config,accuracy,eer\n");
    for r in rows {
        out.push_str(&format!("{},{:.9e},{:.9e}\n", r.config, r.accuracy, r.eer));
    }
    std::fs::write(path, out)?;
    Ok(())
}
