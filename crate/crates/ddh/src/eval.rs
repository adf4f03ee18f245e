//! Verification and identification metrics: genuine/imposter score
//! collection, FAR/FRR curves, equal error rate, rank-1 identification
//! accuracy, and ROC export.

use crate::error::{Error, Result};
use crate::hash::{hamming, Gallery, HashCode, CODE_BITS};
use std::io::Write;
use std::path::Path;

/// Genuine and imposter Hamming-distance score lists.
#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    pub genuine: Vec<u32>,
    pub imposter: Vec<u32>,
}

impl ScoreSet {
    fn check_nonempty(&self) -> Result<()> {
        if self.genuine.is_empty() || self.imposter.is_empty() {
            return Err(Error::Input(format!(
                "need both genuine and imposter scores, got {} and {}",
                self.genuine.len(),
                self.imposter.len()
            )));
        }
        Ok(())
    }
}

/// FAR/FRR at one integer decision threshold (accept iff distance <=
/// threshold).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub threshold: u32,
    pub far: f64,
    pub frr: f64,
}

/// Matches every probe against every gallery entry; a distance is
/// genuine iff the labels are equal.
pub fn collect_scores(gallery: &Gallery, probes: &[(String, HashCode)]) -> Result<ScoreSet> {
    if gallery.is_empty() || probes.is_empty() {
        return Err(Error::Input(
            "collect_scores needs a nonempty gallery and probe list".to_string(),
        ));
    }
    let mut scores = ScoreSet::default();
    for (label, code) in probes {
        for entry in gallery.entries() {
            let d = hamming(code, &entry.code);
            if &entry.label == label {
                scores.genuine.push(d);
            } else {
                scores.imposter.push(d);
            }
        }
    }
    Ok(scores)
}

/// FAR/FRR at every threshold 0..=128. FAR is the fraction of imposter
/// distances <= threshold; FRR is the fraction of genuine distances >
/// threshold. FAR is nondecreasing, FRR nonincreasing.
pub fn far_frr_curve(scores: &ScoreSet) -> Result<Vec<RatePoint>> {
    scores.check_nonempty()?;
    let mut genuine_hist = [0u64; CODE_BITS + 1];
    let mut imposter_hist = [0u64; CODE_BITS + 1];
    for &d in &scores.genuine {
        genuine_hist[d as usize] += 1;
    }
    for &d in &scores.imposter {
        imposter_hist[d as usize] += 1;
    }
    let n_gen = scores.genuine.len() as u64;
    let n_imp = scores.imposter.len() as f64;
    let mut points = Vec::with_capacity(CODE_BITS + 1);
    let mut gen_cum = 0u64;
    let mut imp_cum = 0u64;
    for t in 0..=CODE_BITS {
        gen_cum += genuine_hist[t];
        imp_cum += imposter_hist[t];
        points.push(RatePoint {
            threshold: t as u32,
            far: imp_cum as f64 / n_imp,
            frr: (n_gen - gen_cum) as f64 / n_gen as f64,
        });
    }
    Ok(points)
}

/// Equal error rate and its operating threshold.
///
/// Scans the integer-threshold curve (with a virtual point at threshold
/// -1 where FAR = 0 and FRR = 1): returns the exact rate when FAR equals
/// FRR at an integer threshold, otherwise interpolates linearly between
/// the two thresholds where FAR - FRR changes sign.
pub fn eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let curve = far_frr_curve(scores)?;
    let mut prev = RatePoint {
        threshold: 0,
        far: 0.0,
        frr: 1.0,
    };
    let mut prev_t = -1.0f64;
    for p in &curve {
        if p.far == p.frr {
            return Ok((p.far, p.threshold as f64));
        }
        if p.far > p.frr {
            // sign change between prev and p; linear crossing
            let df = p.far - prev.far;
            let dr = p.frr - prev.frr;
            let denom = df - dr;
            debug_assert!(denom > 0.0);
            let s = (prev.frr - prev.far) / denom; // in (0, 1)
            let t_star = prev_t + s * (p.threshold as f64 - prev_t);
            let rate = prev.far + s * df;
            return Ok((rate, t_star));
        }
        prev = *p;
        prev_t = p.threshold as f64;
    }
    // FAR(128) = 1 and FRR(128) = 0, so the scan always terminates above
    unreachable!("FAR - FRR must change sign by threshold 128");
}

/// Fraction of probes whose nearest gallery entry has the probe's label.
pub fn identification_accuracy(gallery: &Gallery, probes: &[(String, HashCode)]) -> Result<f64> {
    if gallery.is_empty() || probes.is_empty() {
        return Err(Error::Input(
            "identification needs a nonempty gallery and probe list".to_string(),
        ));
    }
    let mut hits = 0usize;
    for (label, code) in probes {
        if &gallery.identify(code)?.label == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / probes.len() as f64)
}

/// Writes the ROC as CSV: header `threshold,far,frr` and one row per
/// threshold 0..=128, rates in scientific notation with 10 significant
/// digits.
pub fn export_roc(scores: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let curve = far_frr_curve(scores)?;
    let mut out = String::with_capacity(curve.len() * 32);
    out.push_str("threshold,far,frr\n");
    for p in &curve {
        out.push_str(&format!("{},{:.9e},{:.9e}\n", p.threshold, p.far, p.frr));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
