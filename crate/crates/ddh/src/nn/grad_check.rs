//! Central finite-difference verification of analytic gradients.
//!
//! The checker composes each loss with a small random network, discards
//! draws that sit near any non-differentiable point (hashing margin,
//! hinge boundaries, |h| = 0, tied extremes, relu zeros, pooling ties),
//! and compares backprop gradients against `(L(p+h) - L(p-h)) / 2h` on a
//! random subset of parameters. Only the forward pass is used on the
//! numeric side, so the comparison is independent of the backward code
//! it validates.

use super::{build_network, Activation, FeatureObjective, LayerSpec, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, PairLabels};
use crate::objective::{
    DhnObjective, DirectObjective, HardObjective, HashingObjective, QuantizationObjective,
    RelativeObjective, TotalObjective,
};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Independent random (network, batch) draws per objective.
    pub instances: usize,
    /// Parameter coordinates probed per instance.
    pub coords_per_instance: usize,
    /// Central-difference step.
    pub step: f64,
    /// Discard draws with any kink closer than this.
    pub kink_exclusion: f64,
    /// Pass threshold on the max relative error.
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            instances: 20,
            coords_per_instance: 60,
            step: 1e-4,
            kink_exclusion: 1e-3,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    pub objective: &'static str,
    pub instances: usize,
    pub coords_checked: usize,
    pub max_rel_err: f64,
}

impl GradCheckOutcome {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Relative error with a unit floor: `|a - n| / max(|a|, |n|, 1)`.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn check_spec(code_width: usize) -> NetworkSpec {
    use LayerSpec as L;
    NetworkSpec {
        input: (5, 5, 1),
        layers: vec![
            L::Conv { kernel: (3, 3), channels: 2, stride: 1 },
            L::Activation(Activation::Relu),
            L::MaxPool { window: 2 },
            L::FullyConnected { width: 6 },
            L::Activation(Activation::Tanh),
            L::FullyConnected { width: code_width },
        ],
        code_width,
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, spec: &NetworkSpec) -> Tensor {
    let (h, w, c) = spec.input;
    let data: Vec<f64> = (0..n * h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(vec![n, h, w, c], data).unwrap()
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::from_vec(vec![n, d], data).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> PairLabels {
    // two classes, at least two members each so genuine pairs exist
    loop {
        let classes: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let ones = classes.iter().filter(|&&c| c == 1).count();
        if ones >= 2 && n - ones >= 2 {
            return PairLabels::from_labels(&classes);
        }
    }
}

/// The losses covered by the verification suite.
pub const CHECKED_LOSSES: [&str; 7] = [
    "hashing",
    "quantization",
    "dhn",
    "direct",
    "relative",
    "hard",
    "total",
];

fn build_objective(
    name: &str,
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
) -> Box<dyn FeatureObjective> {
    // margin 2.0 keeps both hinge branches of the hashing loss exercised
    // at feature magnitudes of order one
    let cfg = LossConfig { margin: 2.0, ..LossConfig::default() };
    match name {
        "hashing" => Box::new(HashingObjective { labels: random_labels(rng, n), cfg }),
        "quantization" => Box::new(QuantizationObjective),
        "dhn" => Box::new(DhnObjective { labels: random_labels(rng, n), cfg }),
        "direct" => Box::new(DirectObjective { teacher_features: random_features(rng, n, d) }),
        "relative" => Box::new(RelativeObjective {
            teacher_features: random_features(rng, n, d),
            cfg,
        }),
        "hard" => Box::new(HardObjective {
            teacher_features: random_features(rng, n, d),
            labels: random_labels(rng, n),
        }),
        "total" => Box::new(TotalObjective {
            teacher_features: random_features(rng, n, d),
            labels: random_labels(rng, n),
            cfg,
        }),
        other => unreachable!("unknown objective {other}"),
    }
}

/// Checks one objective against central differences on `cfg.instances`
/// clean random draws.
pub fn check_loss(name: &'static str, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = check_spec(4);
    let batch_n = 5;
    let mut max_rel = 0.0f64;
    let mut coords_total = 0usize;
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < cfg.instances {
        attempts += 1;
        if attempts > cfg.instances * 200 {
            return Err(Error::Numeric(format!(
                "could not find a kink-free instance for {name} after {attempts} attempts"
            )));
        }
        let net_seed: u64 = rng.random();
        let mut net = build_network(&spec, net_seed)?;
        let batch = random_batch(&mut rng, batch_n, &spec);
        let objective = build_objective(name, &mut rng, batch_n, spec.code_width);
        if net.nonsmooth_margin(&batch)? <= cfg.kink_exclusion {
            continue;
        }
        let features = net.forward(&batch)?;
        if objective.kink_margin(&features)? <= cfg.kink_exclusion {
            continue;
        }
        let checked = check_instance(&mut net, &batch, objective.as_ref(), cfg, &mut rng, &mut max_rel)?;
        coords_total += checked;
        done += 1;
    }
    Ok(GradCheckOutcome {
        objective: name,
        instances: done,
        coords_checked: coords_total,
        max_rel_err: max_rel,
    })
}

fn check_instance(
    net: &mut Network,
    batch: &Tensor,
    objective: &dyn FeatureObjective,
    cfg: &GradCheckConfig,
    rng: &mut ChaCha8Rng,
    max_rel: &mut f64,
) -> Result<usize> {
    let (_, _, grads) = net.gradients(batch, objective)?;
    let total_coords: usize = net.params().iter().map(|p| p.value.len()).sum();
    let count = cfg.coords_per_instance.min(total_coords);
    for _ in 0..count {
        let flat = rng.random_range(0..total_coords);
        let (pi, ci) = locate(net, flat);
        let analytic = grads.entries[pi].1.data()[ci];
        let original = net.params()[pi].value.data()[ci];

        net.param_mut(pi).data_mut()[ci] = original + cfg.step;
        let plus = objective.eval(&net.forward(batch)?)?.0;
        net.param_mut(pi).data_mut()[ci] = original - cfg.step;
        let minus = objective.eval(&net.forward(batch)?)?.0;
        net.param_mut(pi).data_mut()[ci] = original;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let err = rel_err(analytic, numeric);
        if err > *max_rel {
            *max_rel = err;
        }
    }
    Ok(count)
}

fn locate(net: &Network, mut flat: usize) -> (usize, usize) {
    for (pi, p) in net.params().iter().enumerate() {
        if flat < p.value.len() {
            return (pi, flat);
        }
        flat -= p.value.len();
    }
    unreachable!("flat index within total parameter count");
}

/// Runs the whole suite: every loss against central differences.
pub fn run_suite(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<GradCheckOutcome>> {
    CHECKED_LOSSES
        .iter()
        .enumerate()
        .map(|(i, name)| check_loss(name, seed.wrapping_add(i as u64 * 7919), cfg))
        .collect()
}
