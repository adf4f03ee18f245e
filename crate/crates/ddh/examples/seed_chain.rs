//! Runs the teacher/student chain for one seed and prints each stage's
//! outcome. Usage: cargo run --release -p ddh --example seed_chain -- <seed>

use ddh::dataset::{gen_synthetic, split, SplitSpec};
use ddh::objective::DistillSwitches;
use ddh::pipeline::{encode_and_enroll, evaluate, train_student, train_teacher, TrainConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut cfg = TrainConfig::for_input(32);
    cfg.seed = seed;
    cfg.iterations = 2000;
    let ds = gen_synthetic(50, 10, 32, seed).unwrap();
    let (train, test) = split(&ds, &SplitSpec { train_fraction: 0.5, seed }).unwrap();

    let (teacher, report) = match train_teacher(&cfg, &train) {
        Ok(x) => x,
        Err(e) => {
            println!("seed {seed}: teacher FAILED: {e}");
            return;
        }
    };
    let first = report.loss_samples.first().unwrap().total;
    let last = report.loss_samples.last().unwrap().total;
    let gallery = encode_and_enroll(&teacher, &train).unwrap();
    let t_acc = evaluate(&teacher, &gallery, &test, None).unwrap().metrics.identification_accuracy;
    println!("seed {seed}: teacher acc {t_acc:.3} (loss {first:.0} -> {last:.1})");

    for (name, switches) in [
        ("student-only", DistillSwitches::none()),
        ("+rela", DistillSwitches { relative: true, ..DistillSwitches::none() }),
        ("ddh", DistillSwitches::full()),
    ] {
        let mut c = cfg.clone();
        c.switches = switches;
        match train_student(&c, &train, &teacher) {
            Ok((student, _)) => {
                let g = encode_and_enroll(&student, &train).unwrap();
                let acc = evaluate(&student, &g, &test, None)
                    .unwrap()
                    .metrics
                    .identification_accuracy;
                println!("seed {seed}: {name} acc {acc:.3}");
            }
            Err(e) => println!("seed {seed}: {name} FAILED: {e}"),
        }
    }
}
