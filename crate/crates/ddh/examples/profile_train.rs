//! Rough per-phase timing of the training step at the default scale.
//! Run: cargo run --release -p ddh --example profile_train

use ddh::dataset::{gen_synthetic, sample_pair_batch};
use ddh::losses::LossConfig;
use ddh::nn::{build_network, optimizer_step, NetworkSpec, OptMethod, OptimizerState};
use ddh::objective::DhnObjective;
use std::time::Instant;

fn main() {
    let size = 32;
    let ds = gen_synthetic(50, 10, size, 1).unwrap();
    let batch = sample_pair_batch(&ds, 8, 4, 1, 0).unwrap();
    for (name, spec) in [
        ("teacher", NetworkSpec::teacher(size)),
        ("student", NetworkSpec::student(size)),
    ] {
        let mut net = build_network(&spec, 1).unwrap();
        let mut opt = OptimizerState::new(OptMethod::Adam, 0.001);
        let obj = DhnObjective {
            labels: batch.pair_labels.clone(),
            cfg: LossConfig::default(),
        };
        let reps = 50;

        let t = Instant::now();
        for _ in 0..reps {
            net.forward(&batch.images).unwrap();
        }
        let fwd = t.elapsed().as_secs_f64() / reps as f64;

        let t = Instant::now();
        for _ in 0..reps {
            net.gradients(&batch.images, &obj).unwrap();
        }
        let grad = t.elapsed().as_secs_f64() / reps as f64;

        let (_, _, grads) = net.gradients(&batch.images, &obj).unwrap();
        let t = Instant::now();
        for _ in 0..reps {
            optimizer_step(&mut net, &grads, &mut opt).unwrap();
        }
        let step = t.elapsed().as_secs_f64() / reps as f64;

        println!(
            "{name}: forward {:.2} ms, forward+backward {:.2} ms, optimizer {:.2} ms -> full iter ~{:.2} ms",
            fwd * 1e3,
            grad * 1e3,
            step * 1e3,
            (grad + step) * 1e3
        );
    }
}
