//! Adapters that expose each loss as a [`FeatureObjective`] over the
//! network's output features. Distillation objectives own a snapshot of
//! the teacher's features for the batch; gradients never flow to them.

use crate::error::Result;
use crate::losses::{
    self, dhn_loss_grad, direct_distill_loss_grad, hard_distill_loss_grad,
    hashing_loss_grad, hinton_distill_loss_grad, pairwise_distances, quantization_loss_grad,
    relative_distill_loss_grad, total_student_loss_grad, LossBreakdown, LossConfig, PairLabels,
};
use crate::nn::FeatureObjective;
use crate::tensor::Tensor;

pub struct HashingObjective {
    pub labels: PairLabels,
    pub cfg: LossConfig,
}

impl FeatureObjective for HashingObjective {
    fn label(&self) -> &'static str {
        "hashing"
    }

    fn eval(&self, features: &Tensor) -> Result<(f64, LossBreakdown, Tensor)> {
        let (v, g) = hashing_loss_grad(features, &self.labels, self.cfg.margin, self.cfg.hashing_distance)?;
        Ok((v, LossBreakdown { hashing: v, ..Default::default() }, g))
    }

    fn kink_margin(&self, features: &Tensor) -> Result<f64> {
        hashing_margin(features, &self.labels, &self.cfg)
    }
}

pub struct QuantizationObjective;

impl FeatureObjective for QuantizationObjective {
    fn label(&self) -> &'static str {
        "quantization"
    }

    fn eval(&self, features: &Tensor) -> Result<(f64, LossBreakdown, Tensor)> {
        let (v, g) = quantization_loss_grad(features)?;
        Ok((v, LossBreakdown { quantization: v, ..Default::default() }, g))
    }

    fn kink_margin(&self, features: &Tensor) -> Result<f64> {
        Ok(quantization_margin(features))
    }
}

pub struct DhnObjective {
    pub labels: PairLabels,
    pub cfg: LossConfig,
}

impl FeatureObjective for DhnObjective {
    fn label(&self) -> &'static str {
        "dhn"
    }

    fn eval(&self, features: &Tensor) -> Result<(f64, LossBreakdown, Tensor)> {
        let (v, b, g) = dhn_loss_grad(features, &self.labels, &self.cfg)?;
        Ok((v, b, g))
    }

    fn kink_margin(&self, features: &Tensor) -> Result<f64> {
        Ok(hashing_margin(features, &self.labels, &self.cfg)?.min(quantization_margin(features)))
    }
}

pub struct DirectObjective {
    pub teacher_features: Tensor,
}

impl FeatureObjective for DirectObjective {
    fn label(&self) -> &'static str {
        "direct"
    }

    fn eval(&self, features: &Tensor) -> Result<(f64, LossBreakdown, Tensor)> {
        let (v, g) = direct_distill_loss_grad(&self.teacher_features, features)?;
        Ok((v, LossBreakdown { direct: v, ..Default::default() }, g))
    }

    fn kink_margin(&self, features: &Tensor) -> Result<f64> {
        let n = features.dim(0);
        let mut margin = f64::INFINITY;
        for i in 0..n {
            let d: f64 = self
                .teacher_features
                .row(i)
                .iter()
                .zip(features.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            margin = margin.min(d);
        }
        Ok(margin)
    }
}

pub struct RelativeObjective {
    pub teacher_features: Tensor,
    pub cfg: LossConfig,
}

impl FeatureObjective for RelativeObjective {
    fn label(&self) -> &'static str {
        "relative"
    }

    fn eval(&self, features: &Tensor) -> Result<(f64, LossBreakdown, Tensor)> {
        let (v, g) = relative_distill_loss_grad(&self.teacher_features, features, &self.cfg)?;
        Ok((v, LossBreakdown { relative: v, ..Default::default() }, g))
    }

    fn kink_margin(&self, features: &Tensor) -> Result<f64> {
        relative_margin(&self.teacher_features, features, &self.cfg)
    }
}

pub struct HardObjective {
    pub teacher_features: Tensor,
    pub labels: PairLabels,
}

impl FeatureObjective for HardObjective {
    fn label(&self) -> &'static str {
        "hard"
    }

    fn eval(&self, features: &Tensor) -> Result<(f64, LossBreakdown, Tensor)> {
        let (v, g) = hard_distill_loss_grad(&self.teacher_features, features, &self.labels)?;
        Ok((v, LossBreakdown { hard: v, ..Default::default() }, g))
    }

    fn kink_margin(&self, features: &Tensor) -> Result<f64> {
        hard_margin(&self.teacher_features, features, &self.labels)
    }
}

pub struct TotalObjective {
    pub teacher_features: Tensor,
    pub labels: PairLabels,
    pub cfg: LossConfig,
}

impl FeatureObjective for TotalObjective {
    fn label(&self) -> &'static str {
        "total"
    }

    fn eval(&self, features: &Tensor) -> Result<(f64, LossBreakdown, Tensor)> {
        total_student_loss_grad(features, &self.teacher_features, &self.labels, &self.cfg)
    }

    fn kink_margin(&self, features: &Tensor) -> Result<f64> {
        let mut m = hashing_margin(features, &self.labels, &self.cfg)?
            .min(quantization_margin(features));
        if self.cfg.alpha != 0.0 {
            m = m.min(relative_margin(&self.teacher_features, features, &self.cfg)?);
        }
        if self.cfg.beta != 0.0 {
            m = m.min(hard_margin(&self.teacher_features, features, &self.labels)?);
        }
        Ok(m)
    }
}

/// Which distillation terms the composite training objective includes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DistillSwitches {
    pub direct: bool,
    pub relative: bool,
    pub hard: bool,
    pub hinton: bool,
}

impl DistillSwitches {
    pub fn none() -> Self {
        Self::default()
    }

    /// The full objective: relative and hard terms enabled.
    pub fn full() -> Self {
        DistillSwitches {
            relative: true,
            hard: true,
            ..Self::default()
        }
    }
}

/// The student's training objective: DHN loss on the student features
/// plus the enabled distillation terms against the frozen teacher.
/// A term contributes only when its switch is on and its weight nonzero,
/// so disabling everything reproduces plain DHN training exactly.
pub struct StudentObjective {
    pub teacher_features: Tensor,
    pub labels: PairLabels,
    pub cfg: LossConfig,
    pub switches: DistillSwitches,
}

impl FeatureObjective for StudentObjective {
    fn label(&self) -> &'static str {
        "student"
    }

    fn eval(&self, features: &Tensor) -> Result<(f64, LossBreakdown, Tensor)> {
        let (mut total, mut breakdown, mut grad) = dhn_loss_grad(features, &self.labels, &self.cfg)?;
        if self.switches.relative && self.cfg.alpha != 0.0 {
            let (v, g) = relative_distill_loss_grad(&self.teacher_features, features, &self.cfg)?;
            breakdown.relative = v;
            total += self.cfg.alpha * v;
            axpy(self.cfg.alpha, &g, &mut grad);
        }
        if self.switches.hard && self.cfg.beta != 0.0 {
            let (v, g) = hard_distill_loss_grad(&self.teacher_features, features, &self.labels)?;
            breakdown.hard = v;
            total += self.cfg.beta * v;
            axpy(self.cfg.beta, &g, &mut grad);
        }
        if self.switches.direct {
            let (v, g) = direct_distill_loss_grad(&self.teacher_features, features)?;
            breakdown.direct = v;
            total += v;
            axpy(1.0, &g, &mut grad);
        }
        if self.switches.hinton {
            let (v, g) =
                hinton_distill_loss_grad(&self.teacher_features, features, self.cfg.temperature)?;
            breakdown.hinton = v;
            total += v;
            axpy(1.0, &g, &mut grad);
        }
        Ok((total, breakdown, grad))
    }
}

fn axpy(a: f64, x: &Tensor, y: &mut Tensor) {
    for (yv, xv) in y.data_mut().iter_mut().zip(x.data()) {
        *yv += a * xv;
    }
}

fn hashing_margin(features: &Tensor, labels: &PairLabels, cfg: &LossConfig) -> Result<f64> {
    let d = pairwise_distances(features)?;
    let mut margin = f64::INFINITY;
    for (i, j) in labels.pairs() {
        let dist = match cfg.hashing_distance {
            losses::HashingDistance::Squared => d.squared(i, j),
            losses::HashingDistance::Euclidean => d.euclid(i, j),
        };
        if !labels.is_genuine(i, j) {
            margin = margin.min((dist - cfg.margin).abs());
        }
        if cfg.hashing_distance == losses::HashingDistance::Euclidean {
            margin = margin.min(d.euclid(i, j));
        }
    }
    Ok(margin)
}

fn quantization_margin(features: &Tensor) -> f64 {
    let mut margin = f64::INFINITY;
    for i in 0..features.dim(0) {
        let row = features.row(i);
        let mut norm_sq = 0.0;
        for &h in row {
            margin = margin.min(h.abs());
            norm_sq += (h.abs() - 1.0).powi(2);
        }
        margin = margin.min(norm_sq.sqrt());
    }
    margin
}

fn relative_margin(teacher: &Tensor, student: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let dt = pairwise_distances(teacher)?;
    let ds = pairwise_distances(student)?;
    let n = student.dim(0);
    let mut margin = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            if !cfg.rela_squared {
                margin = margin.min((dt.euclid(i, j) - ds.euclid(i, j)).abs());
            }
            margin = margin.min(ds.euclid(i, j));
        }
    }
    Ok(margin)
}

fn hard_margin(teacher: &Tensor, student: &Tensor, labels: &PairLabels) -> Result<f64> {
    let dt = pairwise_distances(teacher)?;
    let ds = pairwise_distances(student)?;
    let mut margin = f64::INFINITY;

    // distances per class split, student side, with top-2 gaps for ties
    let extremes = |genuine: bool| -> (Option<(f64, f64)>, Option<(f64, f64)>) {
        // returns ((max1, max2), (min1, min2)) of the student distances
        let mut maxes: Vec<f64> = Vec::new();
        for (i, j) in labels.pairs() {
            if labels.is_genuine(i, j) == genuine {
                maxes.push(ds.euclid(i, j));
            }
        }
        if maxes.is_empty() {
            return (None, None);
        }
        maxes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let max_pair = if maxes.len() >= 2 {
            Some((maxes[maxes.len() - 1], maxes[maxes.len() - 2]))
        } else {
            Some((maxes[0], f64::NEG_INFINITY))
        };
        let min_pair = if maxes.len() >= 2 {
            Some((maxes[0], maxes[1]))
        } else {
            Some((maxes[0], f64::INFINITY))
        };
        (max_pair, min_pair)
    };

    let teacher_extreme = |genuine: bool, want_min: bool| -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, j) in labels.pairs() {
            if labels.is_genuine(i, j) == genuine {
                let v = dt.euclid(i, j);
                best = Some(match best {
                    None => v,
                    Some(b) => {
                        if want_min {
                            b.min(v)
                        } else {
                            b.max(v)
                        }
                    }
                });
            }
        }
        best
    };

    let (gen_max, _) = extremes(true);
    if let (Some((max1, max2)), Some(tmin)) = (gen_max, teacher_extreme(true, true)) {
        margin = margin.min((max1 - tmin).abs()); // hinge boundary
        if max2.is_finite() {
            margin = margin.min(max1 - max2); // arg-max tie
        }
        margin = margin.min(max1); // zero-distance kink on the active pair
    }
    let (_, imp_min) = extremes(false);
    if let (Some((min1, min2)), Some(tmax)) = (imp_min, teacher_extreme(false, false)) {
        margin = margin.min((tmax - min1).abs());
        if min2.is_finite() {
            margin = margin.min(min2 - min1);
        }
        margin = margin.min(min1);
    }
    Ok(margin)
}
