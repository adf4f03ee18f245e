//! Acceptance suite. Each test prints one `criterion N: PASS/FAIL` line
//! (run with `cargo test --test acceptance -- --nocapture` to see them
//! on success) and enforces its stated tolerance and runtime budget.

use ddh::dataset::{gen_synthetic, load_dataset, split, SplitSpec};
use ddh::eval::{eer, ScoreSet};
use ddh::hash::{hamming, Gallery, HashCode, CODE_BITS};
use ddh::nn::grad_check::{run_suite, GradCheckConfig};
use ddh::objective::DistillSwitches;
use ddh::pipeline::{encode_and_enroll, evaluate, train_student, train_teacher, TrainConfig};
use ddh::roi::{extract_roi, roi_frame, AxisMode, KeypointSet, RoiOptions, Vec2};
use ddh::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

fn artifacts_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!("criterion {criterion}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_1_gradient_suite() {
    let started = Instant::now();
    let cfg = GradCheckConfig {
        instances: 20,
        coords_per_instance: 60,
        ..GradCheckConfig::default()
    };
    let outcomes = run_suite(314159, &cfg).unwrap();
    let worst = outcomes.iter().map(|o| o.max_rel_err).fold(0.0, f64::max);
    let losses: Vec<&str> = outcomes.iter().map(|o| o.objective).collect();
    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && elapsed < 60.0 && losses.len() == 7;
    report(
        "1 (gradient suite)",
        pass,
        &format!("max rel err {worst:.3e} over {losses:?}, {elapsed:.1}s"),
    );
}

/// Brute-force EER written straight from the definition (recounts the
/// raw lists at every threshold; virtual point at -1).
fn eer_bruteforce(scores: &ScoreSet) -> (f64, f64) {
    let n_gen = scores.genuine.len() as f64;
    let n_imp = scores.imposter.len() as f64;
    let far = |t: i64| {
        if t < 0 {
            0.0
        } else {
            scores.imposter.iter().filter(|&&d| (d as i64) <= t).count() as f64 / n_imp
        }
    };
    let frr = |t: i64| {
        if t < 0 {
            1.0
        } else {
            scores.genuine.iter().filter(|&&d| (d as i64) > t).count() as f64 / n_gen
        }
    };
    for t in 0..=CODE_BITS as i64 {
        let (f, r) = (far(t), frr(t));
        if f == r {
            return (f, t as f64);
        }
        if f > r {
            let (pf, pr) = (far(t - 1), frr(t - 1));
            let s = (pr - pf) / ((f - pf) - (r - pr));
            return (pf + s * (f - pf), (t - 1) as f64 + s);
        }
    }
    unreachable!("FAR/FRR must cross");
}

#[test]
fn criterion_2_eer_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(271828);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n_gen = rng.random_range(1..=1000);
        let n_imp = rng.random_range(1..=1000);
        let scores = ScoreSet {
            genuine: (0..n_gen).map(|_| rng.random_range(0..=70)).collect(),
            imposter: (0..n_imp).map(|_| rng.random_range(30..=128)).collect(),
        };
        let (got, _) = eer(&scores).unwrap();
        let (want, _) = eer_bruteforce(&scores);
        worst = worst.max((got - want).abs());
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst < 1e-9 && elapsed < 10.0;
    report(
        "2 (EER oracle equivalence)",
        pass,
        &format!("max |eer - oracle| {worst:.2e} on 200 score sets, {elapsed:.2}s"),
    );
}

#[test]
fn criterion_3_matcher_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1618);
    let mut galleries_ok = true;
    for _ in 0..100 {
        let n = rng.random_range(1..=1000);
        let mut gallery = Gallery::new();
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let code = HashCode(std::array::from_fn(|_| rng.random()));
            gallery.enroll(format!("s{}", i % 53), code);
            entries.push(code);
        }
        let probe = HashCode(std::array::from_fn(|_| rng.random()));
        let got = gallery.identify(&probe).unwrap();
        // naive per-bit exhaustive scan
        let mut best = (u32::MAX, 0usize);
        for (i, code) in entries.iter().enumerate() {
            let d = (0..CODE_BITS).filter(|&b| code.bit(b) != probe.bit(b)).count() as u32;
            if d < best.0 {
                best = (d, i);
            }
        }
        galleries_ok &= got.distance == best.0 && got.entry_id == best.1;
    }
    let mut metric_ok = true;
    for _ in 0..10_000 {
        let a = HashCode(std::array::from_fn(|_| rng.random()));
        let b = HashCode(std::array::from_fn(|_| rng.random()));
        let c = HashCode(std::array::from_fn(|_| rng.random()));
        let (ab, bc, ac) = (hamming(&a, &b), hamming(&b, &c), hamming(&a, &c));
        metric_ok &= ab == hamming(&b, &a);
        metric_ok &= hamming(&a, &a) == 0;
        metric_ok &= (a == b) == (ab == 0);
        metric_ok &= ac <= ab + bc;
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = galleries_ok && metric_ok && elapsed < 10.0;
    report(
        "3 (matcher oracle + metric)",
        pass,
        &format!("100 galleries vs naive scan, 10000 metric triples, {elapsed:.2}s"),
    );
}

struct SeedOutcome {
    seed: u64,
    teacher_acc: f64,
    dhn_acc: f64,
    rela_acc: f64,
    ddh_acc: f64,
    teacher_first_loss: f64,
    teacher_last_loss: f64,
}

fn run_seed(seed: u64) -> SeedOutcome {
    let mut cfg = TrainConfig::for_input(32);
    cfg.seed = seed;
    cfg.iterations = 2000;
    let ds = gen_synthetic(50, 10, 32, seed).unwrap();
    let (train, test) = split(&ds, &SplitSpec { train_fraction: 0.5, seed }).unwrap();

    let (teacher, teacher_report) = train_teacher(&cfg, &train).unwrap();
    let teacher_gallery = encode_and_enroll(&teacher, &train).unwrap();
    let teacher_acc = evaluate(&teacher, &teacher_gallery, &test, None)
        .unwrap()
        .metrics
        .identification_accuracy;

    let mut student_acc = |switches: DistillSwitches| -> f64 {
        let mut row_cfg = cfg.clone();
        row_cfg.switches = switches;
        let (student, _) = train_student(&row_cfg, &train, &teacher).unwrap();
        let gallery = encode_and_enroll(&student, &train).unwrap();
        evaluate(&student, &gallery, &test, None)
            .unwrap()
            .metrics
            .identification_accuracy
    };
    let dhn_acc = student_acc(DistillSwitches::none());
    let rela_acc = student_acc(DistillSwitches {
        relative: true,
        ..DistillSwitches::none()
    });
    let ddh_acc = student_acc(DistillSwitches::full());

    let first = teacher_report.loss_samples.first().unwrap().total;
    let last_window: Vec<f64> = teacher_report
        .loss_samples
        .iter()
        .rev()
        .take(3)
        .map(|s| s.total)
        .collect();
    SeedOutcome {
        seed,
        teacher_acc,
        dhn_acc,
        rela_acc,
        ddh_acc,
        teacher_first_loss: first,
        teacher_last_loss: last_window.iter().sum::<f64>() / last_window.len() as f64,
    }
}

#[test]
fn criteria_4_and_5_distillation_and_ablation_direction() {
    let started = Instant::now();
    let seeds: Vec<u64> = vec![1, 2, 3, 4, 5];
    let queue = Mutex::new(seeds);
    let outcomes: Mutex<Vec<SeedOutcome>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..2 {
            scope.spawn(|| loop {
                let seed = match queue.lock().unwrap().pop() {
                    Some(s) => s,
                    None => break,
                };
                let outcome = run_seed(seed);
                outcomes.lock().unwrap().push(outcome);
            });
        }
    });
    let mut outcomes = outcomes.into_inner().unwrap();
    outcomes.sort_by_key(|o| o.seed);
    for o in &outcomes {
        println!(
            "seed {}: teacher {:.3} | DDH {:.3} | +rela {:.3} | student-only {:.3} \
             (teacher loss {:.1} -> {:.1})",
            o.seed, o.teacher_acc, o.ddh_acc, o.rela_acc, o.dhn_acc,
            o.teacher_first_loss, o.teacher_last_loss
        );
        // supervised training must reduce the smoothed objective
        assert!(o.teacher_last_loss < o.teacher_first_loss);
    }
    let n = outcomes.len() as f64;
    let mean = |f: fn(&SeedOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    let teacher = mean(|o| o.teacher_acc);
    let ddh = mean(|o| o.ddh_acc);
    let rela = mean(|o| o.rela_acc);
    let dhn = mean(|o| o.dhn_acc);
    let elapsed = started.elapsed().as_secs_f64();

    let pass4 = teacher >= ddh && ddh >= dhn && (ddh - dhn) > 0.0 && elapsed < 1800.0;
    report(
        "4 (distillation efficacy)",
        pass4,
        &format!(
            "mean accuracy teacher {teacher:.4} >= DDH {ddh:.4} >= student-only {dhn:.4}, \
             gain {:.4}, {elapsed:.0}s",
            ddh - dhn
        ),
    );
    let pass5 = dhn <= rela && rela <= ddh;
    report(
        "5 (ablation direction)",
        pass5,
        &format!("mean accuracy L_DHN {dhn:.4} <= +L_rela {rela:.4} <= +L_rela+L_hard {ddh:.4}"),
    );
}

#[test]
fn criterion_6_reduction_identity() {
    let mut cfg = TrainConfig::for_input(16);
    cfg.iterations = 60;
    cfg.batch_classes = 3;
    cfg.batch_per_class = 2;
    cfg.seed = 9;
    cfg.loss.alpha = 0.0;
    cfg.loss.beta = 0.0;
    let ds = gen_synthetic(5, 6, 16, 29).unwrap();
    let (teacher, _) = train_teacher(&cfg, &ds).unwrap();
    let (distilled, _) = train_student(&cfg, &ds, &teacher).unwrap();
    let mut plain_cfg = cfg.clone();
    plain_cfg.teacher = cfg.student.clone();
    let (plain, _) = train_teacher(&plain_cfg, &ds).unwrap();
    let identical = distilled
        .params()
        .iter()
        .zip(plain.params())
        .all(|(a, b)| a.value.data() == b.value.data());
    report(
        "6 (reduction identity)",
        identical,
        "alpha = beta = 0 training is bit-identical to plain DHN training",
    );
}

#[test]
fn criterion_7_roi_geometry() {
    // worked frame example: L = 100 gives side 60 = (3/5)L and center
    // offset 40 = (2/5)L
    let mut pts = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(8.0, -6.0),
        Vec2::new(14.0, -9.0),
        Vec2::new(20.0, -10.0),
        Vec2::new(30.0, -12.0),
        Vec2::new(40.0, -12.0),
        Vec2::new(50.0, -10.0),
        Vec2::new(60.0, -12.0),
        Vec2::new(70.0, -12.0),
        Vec2::new(80.0, -10.0),
        Vec2::new(88.0, -9.0),
        Vec2::new(94.0, -6.0),
        Vec2::new(100.0, 0.0),
        Vec2::new(50.0, 80.0),
    ];
    let frame = roi_frame(&KeypointSet::new(pts.clone()).unwrap(), AxisMode::Primary).unwrap();
    let frame_ok = (frame.side - 60.0).abs() < 1e-12
        && (frame.center.x - 50.0).abs() < 1e-12
        && (frame.center.y - 30.0).abs() < 1e-12;

    // similarity equivariance on a smooth analytic scene
    let scene = |x: f64, y: f64| {
        0.5 + 0.2 * (0.09 * x).sin() * (0.06 * y).cos() + 0.12 * (0.04 * (x - 0.5 * y)).cos()
    };
    let render = |h: usize, w: usize, f: &dyn Fn(f64, f64) -> f64| {
        let mut data = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                data[r * w + c] = f(c as f64 + 0.5, r as f64 + 0.5).clamp(0.0, 1.0);
            }
        }
        Tensor::from_vec(vec![h, w], data).unwrap()
    };
    for p in &mut pts {
        *p = Vec2::new(p.x + 40.0, p.y + 50.0);
    }
    let kps = KeypointSet::new(pts).unwrap();
    let image = render(200, 200, &scene);
    let opts = RoiOptions { out_size: 64, ..Default::default() };
    let roi_a = extract_roi(&image, &kps, &opts).unwrap();
    let (theta, k, t) = (0.35f64, 1.2f64, Vec2::new(18.0, 9.0));
    let (sin, cos) = theta.sin_cos();
    let image_b = render(320, 320, &|x: f64, y: f64| {
        let (ux, uy) = (x - t.x, y - t.y);
        scene((ux * cos + uy * sin) / k, (-ux * sin + uy * cos) / k)
    });
    let roi_b = extract_roi(&image_b, &kps.transformed(theta, k, t), &opts).unwrap();
    let mean_abs = roi_a
        .data()
        .iter()
        .zip(roi_b.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / roi_a.len() as f64;

    let pass = frame_ok && mean_abs < 0.02;
    report(
        "7 (ROI geometry)",
        pass,
        &format!("frame ratios exact, equivariance mean abs diff {mean_abs:.5} < 0.02"),
    );
}

#[test]
fn criterion_8_matching_throughput() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut gallery = Gallery::new();
    for i in 0..1_000_000usize {
        gallery.enroll(format!("s{}", i % 997), HashCode(std::array::from_fn(|_| rng.random())));
    }
    let probe = HashCode(std::array::from_fn(|_| rng.random()));
    let started = Instant::now();
    let hit = gallery.identify(&probe).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let pass = elapsed < 1.0 && hit.distance <= 128;
    report(
        "8 (matching throughput)",
        pass,
        &format!("identify over 1,000,000 codes in {:.1} ms", elapsed * 1e3),
    );
}

#[test]
fn criterion_9_corpus_protocol_harness() {
    // With DDH_POLYU_DIR set, runs the full-scale protocol on the
    // supplied corpus (numeric agreement with published tables is
    // explicitly not asserted). Otherwise a small synthetic stand-in
    // corpus exercises the same end-to-end path: directory ingestion,
    // per-class half split, teacher then student training, enrollment,
    // and the three-row report.
    let dir = artifacts_dir();
    let (data_dir, iterations) = match std::env::var("DDH_POLYU_DIR") {
        Ok(p) => (PathBuf::from(p), 2000),
        Err(_) => {
            let stand_in = dir.join("standin_corpus");
            if !stand_in.exists() {
                // 12 images per class, as in a two-session corpus where
                // half of each class enrolls
                let ds = gen_synthetic(8, 12, 32, 99).unwrap();
                ddh::dataset::export_dataset(&ds, &stand_in).unwrap();
            }
            (stand_in, 300)
        }
    };
    let ds = load_dataset(&data_dir, Some(32)).unwrap();
    let split_spec = SplitSpec { train_fraction: 0.5, seed: 7 };
    let (train, test) = split(&ds, &split_spec).unwrap();
    let mut cfg = TrainConfig::for_input(32);
    cfg.seed = 7;
    cfg.iterations = iterations;

    let (teacher, _) = train_teacher(&cfg, &train).unwrap();
    let evaluate_net = |net: &ddh::nn::Network| {
        let gallery = encode_and_enroll(net, &train).unwrap();
        let out = evaluate(net, &gallery, &test, None).unwrap();
        (out.metrics.identification_accuracy, out.metrics.eer)
    };
    let (teacher_acc, teacher_eer) = evaluate_net(&teacher);
    let mut run = |switches: DistillSwitches| {
        let mut c = cfg.clone();
        c.switches = switches;
        let (student, _) = train_student(&c, &train, &teacher).unwrap();
        evaluate_net(&student)
    };
    let (student_acc, student_eer) = run(DistillSwitches::none());
    let (ddh_acc, ddh_eer) = run(DistillSwitches::full());

    let report_path = dir.join("protocol_report.csv");
    let table = format!(
        "model,accuracy,eer\nstudent,{student_acc:.9e},{student_eer:.9e}\nddh,{ddh_acc:.9e},{ddh_eer:.9e}\nteacher,{teacher_acc:.9e},{teacher_eer:.9e}\n"
    );
    std::fs::write(&report_path, &table).unwrap();
    let rows = table.lines().count();
    let in_range = [teacher_acc, student_acc, ddh_acc, teacher_eer, student_eer, ddh_eer]
        .iter()
        .all(|v| (0.0..=1.0).contains(v));
    let pass = rows == 4 && in_range;
    report(
        "9 (corpus protocol harness)",
        pass,
        &format!(
            "report {} (student {student_acc:.3}/{student_eer:.3}, ddh {ddh_acc:.3}/{ddh_eer:.3}, \
             teacher {teacher_acc:.3}/{teacher_eer:.3})",
            report_path.display()
        ),
    );
}
