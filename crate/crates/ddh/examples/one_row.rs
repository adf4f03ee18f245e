//! Trains a single student configuration for one seed and prints its
//! test accuracy. Usage: one_row <seed> <none|rela|full>

use ddh::dataset::{gen_synthetic, split, SplitSpec};
use ddh::objective::DistillSwitches;
use ddh::pipeline::{encode_and_enroll, evaluate, train_student, train_teacher, TrainConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let which = std::env::args().nth(2).unwrap_or_else(|| "rela".into());
    let mut cfg = TrainConfig::for_input(32);
    cfg.seed = seed;
    cfg.iterations = 2000;
    let ds = gen_synthetic(50, 10, 32, seed).unwrap();
    let (train, test) = split(&ds, &SplitSpec { train_fraction: 0.5, seed }).unwrap();
    let (teacher, _) = train_teacher(&cfg, &train).unwrap();
    cfg.switches = match which.as_str() {
        "none" => DistillSwitches::none(),
        "rela" => DistillSwitches { relative: true, ..DistillSwitches::none() },
        _ => DistillSwitches::full(),
    };
    let (student, _) = train_student(&cfg, &train, &teacher).unwrap();
    let g = encode_and_enroll(&student, &train).unwrap();
    let acc = evaluate(&student, &g, &test, None).unwrap().metrics.identification_accuracy;
    println!("seed {seed} {which}: acc {acc:.3}");
}
