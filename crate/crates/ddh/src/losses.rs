//! The training objective family: contrastive hashing loss, quantization
//! loss, and the distillation losses that transfer a frozen teacher's
//! pairwise feature geometry to a student.
//!
//! Every loss is a pure function of one or two feature batches (rank-2
//! tensors, one row per item) plus pair labels. Each has a `*_grad`
//! variant returning the analytic gradient with respect to the *student*
//! features; teacher features are always treated as constants. Losses are
//! sums over items/pairs, not means.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Symmetric genuine/imposter pair labels for a batch of `n` items.
///
/// `S[i][j] = true` when items `i` and `j` share a class. The diagonal is
/// never consulted; pair iteration is over `i < j`.
#[derive(Debug, Clone)]
pub struct PairLabels {
    n: usize,
    genuine: Vec<bool>,
}

impl PairLabels {
    /// Derives pair labels from per-item class labels.
    pub fn from_labels<L: PartialEq>(labels: &[L]) -> Self {
        let n = labels.len();
        let mut genuine = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                genuine[i * n + j] = i != j && labels[i] == labels[j];
            }
        }
        PairLabels { n, genuine }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_genuine(&self, i: usize, j: usize) -> bool {
        debug_assert_ne!(i, j);
        self.genuine[i * self.n + j]
    }

    /// All unordered pairs `(i, j)` with `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }

    pub fn genuine_pair_count(&self) -> usize {
        self.pairs().filter(|&(i, j)| self.is_genuine(i, j)).count()
    }

    pub fn imposter_pair_count(&self) -> usize {
        self.pairs().filter(|&(i, j)| !self.is_genuine(i, j)).count()
    }
}

/// Which distance enters the contrastive hashing loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HashingDistance {
    /// Squared Euclidean distance (default; margin 180 is calibrated for
    /// squared distances of 128-wide codes in [-1, 1]).
    #[default]
    Squared,
    Euclidean,
}

/// Weights and switches for the full objective.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Margin `t` separating imposter pairs in the hashing loss.
    pub margin: f64,
    /// Weight `w` of the quantization term inside the DHN loss.
    pub quant_weight: f64,
    /// Weight `alpha` of the relative distillation term.
    pub alpha: f64,
    /// Weight `beta` of the hard-pair distillation term.
    pub beta: f64,
    /// Softmax temperature for the soft-label baseline.
    pub temperature: f64,
    /// Distance used by the hashing loss.
    pub hashing_distance: HashingDistance,
    /// Square the per-pair distance gap in the relative loss instead of
    /// taking its absolute value.
    pub rela_squared: bool,
    /// Average the relative loss over pairs instead of summing.
    pub rela_mean: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 180.0,
            quant_weight: 0.01,
            alpha: 1.0,
            beta: 0.8,
            temperature: 4.0,
            hashing_distance: HashingDistance::Squared,
            rela_squared: false,
            rela_mean: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Input(format!("margin must be > 0, got {}", self.margin)));
        }
        if self.quant_weight < 0.0 || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Input(
                "loss weights must be nonnegative".to_string(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Input(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Pairwise distances over a feature batch: squared Euclidean and
/// Euclidean, both symmetric with zero diagonal.
#[derive(Debug, Clone)]
pub struct DistanceMatrices {
    n: usize,
    sq: Vec<f64>,
    euclid: Vec<f64>,
}

impl DistanceMatrices {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn squared(&self, i: usize, j: usize) -> f64 {
        self.sq[i * self.n + j]
    }

    pub fn euclid(&self, i: usize, j: usize) -> f64 {
        self.euclid[i * self.n + j]
    }
}

/// Raw (unweighted) values of each objective term.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub hashing: f64,
    pub quantization: f64,
    pub relative: f64,
    pub hard: f64,
    pub direct: f64,
    pub hinton: f64,
}

fn require_batch(features: &Tensor, what: &str) -> Result<(usize, usize)> {
    if features.rank() != 2 {
        return Err(Error::Input(format!(
            "{what} must be rank-2 [n, d], got shape {:?}",
            features.shape()
        )));
    }
    Ok((features.dim(0), features.dim(1)))
}

fn require_same_shape(teacher: &Tensor, student: &Tensor) -> Result<(usize, usize)> {
    let t = require_batch(teacher, "teacher features")?;
    let s = require_batch(student, "student features")?;
    if t != s {
        return Err(Error::Input(format!(
            "teacher shape {:?} does not match student shape {:?}",
            teacher.shape(),
            student.shape()
        )));
    }
    Ok(s)
}

fn require_labels(labels: &PairLabels, n: usize) -> Result<()> {
    if labels.n() != n {
        return Err(Error::Input(format!(
            "pair labels cover {} items but batch has {n}",
            labels.n()
        )));
    }
    Ok(())
}

/// Squared Euclidean and Euclidean distances between all batch rows.
pub fn pairwise_distances(features: &Tensor) -> Result<DistanceMatrices> {
    let (n, _) = require_batch(features, "features")?;
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 items, got {n}")));
    }
    let mut sq = vec![0.0; n * n];
    for i in 0..n {
        let ri = features.row(i);
        for j in i + 1..n {
            let rj = features.row(j);
            let d: f64 = ri.iter().zip(rj).map(|(a, b)| (a - b) * (a - b)).sum();
            sq[i * n + j] = d;
            sq[j * n + i] = d;
        }
    }
    let euclid = sq.iter().map(|&d| d.sqrt()).collect();
    Ok(DistanceMatrices { n, sq, euclid })
}

/// Contrastive hashing loss over all pairs `i < j`:
/// genuine pairs contribute `D/2`, imposter pairs `max(t - D, 0)/2`.
pub fn hashing_loss(
    features: &Tensor,
    labels: &PairLabels,
    margin: f64,
    distance: HashingDistance,
) -> Result<f64> {
    hashing_loss_grad(features, labels, margin, distance).map(|(v, _)| v)
}

pub fn hashing_loss_grad(
    features: &Tensor,
    labels: &PairLabels,
    margin: f64,
    distance: HashingDistance,
) -> Result<(f64, Tensor)> {
    let (n, d) = require_batch(features, "features")?;
    require_labels(labels, n)?;
    if !(margin > 0.0) {
        return Err(Error::Input(format!("margin must be > 0, got {margin}")));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![n, d]);
    for i in 0..n {
        for j in i + 1..n {
            let mut dsq = 0.0;
            for k in 0..d {
                let diff = features.row(i)[k] - features.row(j)[k];
                dsq += diff * diff;
            }
            let dist = match distance {
                HashingDistance::Squared => dsq,
                HashingDistance::Euclidean => dsq.sqrt(),
            };
            // dL/dD for this pair; None when the margin hinge is inactive.
            let pull = if labels.is_genuine(i, j) {
                loss += 0.5 * dist;
                Some(0.5)
            } else if dist < margin {
                loss += 0.5 * (margin - dist);
                Some(-0.5)
            } else {
                None
            };
            if let Some(dl_dd) = pull {
                // dD/dh_i per component; subgradient 0 at coincident rows
                // for the Euclidean variant.
                let scale = match distance {
                    HashingDistance::Squared => 2.0 * dl_dd,
                    HashingDistance::Euclidean => {
                        if dsq > 0.0 {
                            dl_dd / dsq.sqrt()
                        } else {
                            0.0
                        }
                    }
                };
                for k in 0..d {
                    let diff = features.row(i)[k] - features.row(j)[k];
                    grad.row_mut(i)[k] += scale * diff;
                    grad.row_mut(j)[k] -= scale * diff;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Quantization loss: per item, the Euclidean norm of `|h| - 1`,
/// summed over the batch. Zero exactly when every component is +-1.
pub fn quantization_loss(features: &Tensor) -> Result<f64> {
    quantization_loss_grad(features).map(|(v, _)| v)
}

pub fn quantization_loss_grad(features: &Tensor) -> Result<(f64, Tensor)> {
    let (n, d) = require_batch(features, "features")?;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![n, d]);
    for i in 0..n {
        let row = features.row(i);
        let norm_sq: f64 = row.iter().map(|&h| (h.abs() - 1.0).powi(2)).sum();
        let norm = norm_sq.sqrt();
        loss += norm;
        if norm > 0.0 {
            for k in 0..d {
                let h = row[k];
                // subgradient 0 at h == 0
                let sign = if h > 0.0 {
                    1.0
                } else if h < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad.row_mut(i)[k] = (h.abs() - 1.0) / norm * sign;
            }
        }
    }
    Ok((loss, grad))
}

/// Combined supervised objective: hashing loss plus `w` times the
/// quantization loss.
pub fn dhn_loss(features: &Tensor, labels: &PairLabels, cfg: &LossConfig) -> Result<f64> {
    dhn_loss_grad(features, labels, cfg).map(|(v, _, _)| v)
}

pub fn dhn_loss_grad(
    features: &Tensor,
    labels: &PairLabels,
    cfg: &LossConfig,
) -> Result<(f64, LossBreakdown, Tensor)> {
    cfg.validate()?;
    let (h, mut grad) = hashing_loss_grad(features, labels, cfg.margin, cfg.hashing_distance)?;
    let (q, qgrad) = quantization_loss_grad(features)?;
    let w = cfg.quant_weight;
    if w != 0.0 {
        for (g, qg) in grad.data_mut().iter_mut().zip(qgrad.data()) {
            *g += w * qg;
        }
    }
    let breakdown = LossBreakdown {
        hashing: h,
        quantization: q,
        ..LossBreakdown::default()
    };
    Ok((h + w * q, breakdown, grad))
}

/// Temperature-softened softmax rows (the soft-label baseline).
/// Each output row is a probability vector.
pub fn soft_labels(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    let (n, c) = require_batch(logits, "logits")?;
    if !(temperature > 0.0) {
        return Err(Error::Input(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let mut out = Tensor::zeros(vec![n, c]);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in 0..c {
            let e = ((row[k] - max) / temperature).exp();
            out.row_mut(i)[k] = e;
            sum += e;
        }
        for k in 0..c {
            out.row_mut(i)[k] /= sum;
        }
    }
    Ok(out)
}

/// Direct distillation: per item, the Euclidean distance between the
/// teacher feature and the student feature, summed over the batch.
pub fn direct_distill_loss(teacher: &Tensor, student: &Tensor) -> Result<f64> {
    direct_distill_loss_grad(teacher, student).map(|(v, _)| v)
}

pub fn direct_distill_loss_grad(teacher: &Tensor, student: &Tensor) -> Result<(f64, Tensor)> {
    let (n, d) = require_same_shape(teacher, student)?;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![n, d]);
    for i in 0..n {
        let t = teacher.row(i);
        let s = student.row(i);
        let norm_sq: f64 = t.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm = norm_sq.sqrt();
        loss += norm;
        if norm > 0.0 {
            for k in 0..d {
                grad.row_mut(i)[k] = (s[k] - t[k]) / norm;
            }
        }
    }
    Ok((loss, grad))
}

/// Relative distillation: per pair `i < j`, the gap between the teacher's
/// and the student's Euclidean feature distances (absolute value, or
/// squared with `rela_squared`), summed (or averaged with `rela_mean`).
pub fn relative_distill_loss(teacher: &Tensor, student: &Tensor, cfg: &LossConfig) -> Result<f64> {
    relative_distill_loss_grad(teacher, student, cfg).map(|(v, _)| v)
}

pub fn relative_distill_loss_grad(
    teacher: &Tensor,
    student: &Tensor,
    cfg: &LossConfig,
) -> Result<(f64, Tensor)> {
    let (n, d) = require_same_shape(teacher, student)?;
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 items, got {n}")));
    }
    let dt = pairwise_distances(teacher)?;
    let ds = pairwise_distances(student)?;
    let n_pairs = n * (n - 1) / 2;
    let scale = if cfg.rela_mean {
        1.0 / n_pairs as f64
    } else {
        1.0
    };
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![n, d]);
    for i in 0..n {
        for j in i + 1..n {
            let t_ij = dt.euclid(i, j);
            let s_ij = ds.euclid(i, j);
            let gap = t_ij - s_ij;
            // dL/d(s_ij)
            let dl_ds = if cfg.rela_squared {
                loss += scale * gap * gap;
                scale * 2.0 * (s_ij - t_ij)
            } else {
                loss += scale * gap.abs();
                // subgradient 0 at gap == 0
                if s_ij > t_ij {
                    scale
                } else if s_ij < t_ij {
                    -scale
                } else {
                    0.0
                }
            };
            if dl_ds != 0.0 && s_ij > 0.0 {
                for k in 0..d {
                    let diff = (student.row(i)[k] - student.row(j)[k]) / s_ij;
                    grad.row_mut(i)[k] += dl_ds * diff;
                    grad.row_mut(j)[k] -= dl_ds * diff;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Location of an extreme pairwise distance: pair index and value.
#[derive(Debug, Clone, Copy)]
struct ExtremePair {
    i: usize,
    j: usize,
    value: f64,
}

fn extreme_pair<F>(
    labels: &PairLabels,
    genuine: bool,
    dist: &DistanceMatrices,
    better: F,
) -> Option<ExtremePair>
where
    F: Fn(f64, f64) -> bool,
{
    let mut best: Option<ExtremePair> = None;
    for (i, j) in labels.pairs() {
        if labels.is_genuine(i, j) != genuine {
            continue;
        }
        let value = dist.euclid(i, j);
        // strict comparison keeps the first pair in scan order on ties
        match &best {
            Some(b) if !better(value, b.value) => {}
            _ => best = Some(ExtremePair { i, j, value }),
        }
    }
    best
}

/// Hard-pair distillation: hinges the student's worst genuine distance
/// against the teacher's best, and the teacher's worst imposter distance
/// against the student's best. Empty pair sets contribute zero.
pub fn hard_distill_loss(teacher: &Tensor, student: &Tensor, labels: &PairLabels) -> Result<f64> {
    hard_distill_loss_grad(teacher, student, labels).map(|(v, _)| v)
}

pub fn hard_distill_loss_grad(
    teacher: &Tensor,
    student: &Tensor,
    labels: &PairLabels,
) -> Result<(f64, Tensor)> {
    let (n, d) = require_same_shape(teacher, student)?;
    require_labels(labels, n)?;
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 items, got {n}")));
    }
    let dt = pairwise_distances(teacher)?;
    let ds = pairwise_distances(student)?;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![n, d]);

    let mut add_pair_grad = |i: usize, j: usize, sign: f64| {
        let s_ij = ds.euclid(i, j);
        if s_ij > 0.0 {
            for k in 0..d {
                let diff = (student.row(i)[k] - student.row(j)[k]) / s_ij;
                grad.row_mut(i)[k] += sign * diff;
                grad.row_mut(j)[k] -= sign * diff;
            }
        }
    };

    // genuine term: max student genuine distance vs min teacher genuine
    let s_gen_max = extreme_pair(labels, true, &ds, |a, b| a > b);
    let t_gen_min = extreme_pair(labels, true, &dt, |a, b| a < b);
    if let (Some(s), Some(t)) = (s_gen_max, t_gen_min) {
        let arg = s.value - t.value;
        if arg > 0.0 {
            loss += arg;
            add_pair_grad(s.i, s.j, 1.0);
        }
    }

    // imposter term: max teacher imposter distance vs min student imposter
    let t_imp_max = extreme_pair(labels, false, &dt, |a, b| a > b);
    let s_imp_min = extreme_pair(labels, false, &ds, |a, b| a < b);
    if let (Some(t), Some(s)) = (t_imp_max, s_imp_min) {
        let arg = t.value - s.value;
        if arg > 0.0 {
            loss += arg;
            add_pair_grad(s.i, s.j, -1.0);
        }
    }

    Ok((loss, grad))
}

/// Full student objective: DHN loss on the student batch plus
/// `alpha` times the relative loss and `beta` times the hard loss.
/// Returns the weighted total and the raw per-term values.
pub fn total_student_loss(
    student: &Tensor,
    teacher: &Tensor,
    labels: &PairLabels,
    cfg: &LossConfig,
) -> Result<(f64, LossBreakdown)> {
    total_student_loss_grad(student, teacher, labels, cfg).map(|(v, b, _)| (v, b))
}

pub fn total_student_loss_grad(
    student: &Tensor,
    teacher: &Tensor,
    labels: &PairLabels,
    cfg: &LossConfig,
) -> Result<(f64, LossBreakdown, Tensor)> {
    require_same_shape(teacher, student)?;
    let (dhn, mut breakdown, mut grad) = dhn_loss_grad(student, labels, cfg)?;
    let mut total = dhn;
    // zero weights skip the term entirely so that alpha = beta = 0
    // reproduces plain DHN training bit for bit
    if cfg.alpha != 0.0 {
        let (rela, rgrad) = relative_distill_loss_grad(teacher, student, cfg)?;
        breakdown.relative = rela;
        total += cfg.alpha * rela;
        for (g, r) in grad.data_mut().iter_mut().zip(rgrad.data()) {
            *g += cfg.alpha * r;
        }
    }
    if cfg.beta != 0.0 {
        let (hard, hgrad) = hard_distill_loss_grad(teacher, student, labels)?;
        breakdown.hard = hard;
        total += cfg.beta * hard;
        for (g, h) in grad.data_mut().iter_mut().zip(hgrad.data()) {
            *g += cfg.beta * h;
        }
    }
    Ok((total, breakdown, grad))
}

/// Soft-label distillation baseline: cross-entropy between the teacher's
/// and the student's temperature-softened feature distributions, summed
/// over the batch. The gradient flows only to the student.
pub fn hinton_distill_loss(teacher: &Tensor, student: &Tensor, temperature: f64) -> Result<f64> {
    hinton_distill_loss_grad(teacher, student, temperature).map(|(v, _)| v)
}

pub fn hinton_distill_loss_grad(
    teacher: &Tensor,
    student: &Tensor,
    temperature: f64,
) -> Result<(f64, Tensor)> {
    let (n, c) = require_same_shape(teacher, student)?;
    let qt = soft_labels(teacher, temperature)?;
    let qs = soft_labels(student, temperature)?;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![n, c]);
    for i in 0..n {
        for k in 0..c {
            let p = qt.row(i)[k];
            let q = qs.row(i)[k].max(1e-300);
            loss -= p * q.ln();
            grad.row_mut(i)[k] = (qs.row(i)[k] - p) / temperature;
        }
    }
    Ok((loss, grad))
}
