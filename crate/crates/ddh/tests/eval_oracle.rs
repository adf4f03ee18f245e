//! Oracle tests for the evaluation metrics: the equal error rate must
//! match an independent brute-force threshold sweep, and curve points
//! must match direct recounting.

use ddh::eval::{eer, far_frr_curve, ScoreSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force EER: recount FAR/FRR from the raw lists at every integer
/// threshold (with the virtual point at -1 where FAR = 0, FRR = 1) and
/// interpolate the crossing linearly. Written directly from the
/// definition, independent of the histogram/prefix-sum implementation.
fn eer_oracle(scores: &ScoreSet) -> (f64, f64) {
    let n_gen = scores.genuine.len() as f64;
    let n_imp = scores.imposter.len() as f64;
    let far_at = |t: i64| -> f64 {
        if t < 0 {
            return 0.0;
        }
        scores.imposter.iter().filter(|&&d| d as i64 <= t).count() as f64 / n_imp
    };
    let frr_at = |t: i64| -> f64 {
        if t < 0 {
            return 1.0;
        }
        scores.genuine.iter().filter(|&&d| d as i64 > t).count() as f64 / n_gen
    };
    for t in 0..=128i64 {
        let (far, frr) = (far_at(t), frr_at(t));
        if far == frr {
            return (far, t as f64);
        }
        if far > frr {
            let (pf, pr) = (far_at(t - 1), frr_at(t - 1));
            let s = (pr - pf) / ((far - pf) - (frr - pr));
            let t_star = (t - 1) as f64 + s;
            return (pf + s * (far - pf), t_star);
        }
    }
    unreachable!("curve must cross by threshold 128");
}

fn random_scores(rng: &mut ChaCha8Rng) -> ScoreSet {
    // genuine distances skew low, imposter high, with overlap
    let n_gen = rng.random_range(1..=1000);
    let n_imp = rng.random_range(1..=1000);
    let genuine = (0..n_gen)
        .map(|_| {
            let base: f64 = rng.random_range(0.0..60.0);
            (base + rng.random_range(0.0..20.0)) as u32
        })
        .collect();
    let imposter = (0..n_imp)
        .map(|_| {
            let base: f64 = rng.random_range(20.0..128.0);
            base as u32
        })
        .collect();
    ScoreSet { genuine, imposter }
}

#[test]
fn eer_matches_bruteforce_oracle_on_200_random_sets() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xEE5);
    for case in 0..200 {
        let scores = random_scores(&mut rng);
        let (got_rate, got_t) = eer(&scores).unwrap();
        let (want_rate, want_t) = eer_oracle(&scores);
        assert!(
            (got_rate - want_rate).abs() < 1e-9,
            "case {case}: eer {got_rate} vs oracle {want_rate}"
        );
        assert!(
            (got_t - want_t).abs() < 1e-9,
            "case {case}: threshold {got_t} vs oracle {want_t}"
        );
        assert!((0.0..=1.0).contains(&got_rate));
    }
    assert!(
        started.elapsed().as_secs_f64() < 10.0,
        "oracle comparison took {:?}",
        started.elapsed()
    );
}

#[test]
fn eer_handles_degenerate_overlap() {
    // identical multisets: the curve crosses at exactly 0.5
    let s = ScoreSet {
        genuine: vec![0, 4, 9, 9, 50],
        imposter: vec![0, 4, 9, 9, 50],
    };
    let (rate, _) = eer(&s).unwrap();
    assert!((rate - 0.5).abs() < 1e-12);
    // everything at zero distance on both sides
    let s = ScoreSet {
        genuine: vec![0, 0],
        imposter: vec![0],
    };
    let (rate, t) = eer(&s).unwrap();
    let (orate, ot) = eer_oracle(&s);
    assert!((rate - orate).abs() < 1e-12);
    assert!((t - ot).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Monotonicity of the curve on arbitrary score sets.
    #[test]
    fn curve_monotone(
        genuine in prop::collection::vec(0u32..=128, 1..200),
        imposter in prop::collection::vec(0u32..=128, 1..200),
    ) {
        let s = ScoreSet { genuine, imposter };
        let curve = far_frr_curve(&s).unwrap();
        prop_assert_eq!(curve.len(), 129);
        for w in curve.windows(2) {
            prop_assert!(w[1].far >= w[0].far);
            prop_assert!(w[1].frr <= w[0].frr);
        }
        prop_assert_eq!(curve[128].far, 1.0);
        prop_assert_eq!(curve[128].frr, 0.0);
    }

    /// The EER value depends only on the rank structure of the scores:
    /// remapping all distances through a strictly increasing map leaves
    /// the crossing rates (and the EER) unchanged.
    #[test]
    fn eer_rank_relabel_invariant(
        genuine in prop::collection::vec(0u32..=40, 1..120),
        imposter in prop::collection::vec(10u32..=60, 1..120),
        stretch in 1u32..3,
        offset in 0u32..6,
    ) {
        let s = ScoreSet { genuine: genuine.clone(), imposter: imposter.clone() };
        // strictly increasing integer map bounded within [0, 128]
        let relabel = |d: u32| -> u32 { d * stretch + offset };
        let s2 = ScoreSet {
            genuine: genuine.iter().map(|&d| relabel(d)).collect(),
            imposter: imposter.iter().map(|&d| relabel(d)).collect(),
        };
        let (a, _) = eer(&s).unwrap();
        let (b, _) = eer(&s2).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "eer {} vs relabeled {}", a, b);
    }
}
