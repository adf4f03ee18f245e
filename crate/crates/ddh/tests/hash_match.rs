//! Property and oracle tests for binarization, Hamming distance, and
//! gallery identification.

use ddh::hash::{binarize, hamming, Gallery, HashCode, CODE_BITS, CODE_BYTES};
use ddh::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_code(rng: &mut ChaCha8Rng) -> HashCode {
    HashCode(std::array::from_fn(|_| rng.random()))
}

/// Naive per-bit scan, no XOR/popcount.
fn naive_identify(entries: &[(String, HashCode)], probe: &HashCode) -> (String, u32, usize) {
    let mut best: Option<(String, u32, usize)> = None;
    for (id, (label, code)) in entries.iter().enumerate() {
        let mut d = 0u32;
        for bit in 0..CODE_BITS {
            if code.bit(bit) != probe.bit(bit) {
                d += 1;
            }
        }
        match &best {
            Some((_, bd, _)) if *bd <= d => {}
            _ => best = Some((label.clone(), d, id)),
        }
    }
    best.expect("nonempty gallery")
}

#[test]
fn identify_matches_naive_scan_on_random_galleries() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let n = rng.random_range(1..=1000);
        let mut gallery = Gallery::new();
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let label = format!("s{}", i % 37);
            let code = random_code(&mut rng);
            gallery.enroll(label.clone(), code);
            entries.push((label, code));
        }
        for _ in 0..5 {
            let probe = random_code(&mut rng);
            let got = gallery.identify(&probe).unwrap();
            let (label, distance, id) = naive_identify(&entries, &probe);
            assert_eq!(got.label, label);
            assert_eq!(got.distance, distance);
            assert_eq!(got.entry_id, id);
        }
    }
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn hamming_metric_properties_on_10000_triples() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let a = random_code(&mut rng);
        let b = random_code(&mut rng);
        let c = random_code(&mut rng);
        let ab = hamming(&a, &b);
        let ba = hamming(&b, &a);
        assert_eq!(ab, ba);
        assert_eq!(hamming(&a, &a), 0);
        if a != b {
            assert!(ab > 0);
        }
        assert!(ab <= 128);
        // triangle inequality
        assert!(hamming(&a, &c) <= ab + hamming(&b, &c));
    }
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn random_probes_identify_at_chance() {
    // balanced gallery of random codes, random probes: rank-1 accuracy
    // sits at 1/C by symmetry (3-sigma binomial bound)
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let classes = 8usize;
    let per_class = 32usize;
    let mut gallery = Gallery::new();
    let mut slots: Vec<usize> = (0..classes * per_class).collect();
    // enrollment order independent of class structure
    use rand::seq::SliceRandom;
    slots.shuffle(&mut rng);
    for s in slots {
        gallery.enroll(format!("c{}", s % classes), random_code(&mut rng));
    }
    let trials = 600;
    let mut hits = 0;
    for t in 0..trials {
        let probe = random_code(&mut rng);
        let want = format!("c{}", t % classes);
        if gallery.identify(&probe).unwrap().label == want {
            hits += 1;
        }
    }
    let acc = hits as f64 / trials as f64;
    let p = 1.0 / classes as f64;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    assert!(
        (acc - p).abs() <= 3.0 * sigma,
        "accuracy {acc} outside {p} +- {:.4}",
        3.0 * sigma
    );
}

#[test]
fn million_code_scan_under_one_second() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut gallery = Gallery::new();
    for i in 0..1_000_000usize {
        gallery.enroll(format!("s{}", i % 1000), random_code(&mut rng));
    }
    let probe = random_code(&mut rng);
    let started = std::time::Instant::now();
    let hit = gallery.identify(&probe).unwrap();
    let elapsed = started.elapsed();
    assert!(hit.distance <= 128);
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "identify over 1M codes took {elapsed:?}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// binarize-then-hamming equals counting sign disagreements of the
    /// real feature vectors (zero counts as nonnegative).
    #[test]
    fn hamming_counts_sign_disagreements(
        a in prop::collection::vec(-1.0f64..1.0, CODE_BITS),
        b in prop::collection::vec(-1.0f64..1.0, CODE_BITS),
    ) {
        let ta = Tensor::from_vec(vec![CODE_BITS], a.clone()).unwrap();
        let tb = Tensor::from_vec(vec![CODE_BITS], b.clone()).unwrap();
        let d = hamming(&binarize(&ta).unwrap(), &binarize(&tb).unwrap());
        let expected = a.iter().zip(&b).filter(|(x, y)| (**x >= 0.0) != (**y >= 0.0)).count() as u32;
        prop_assert_eq!(d, expected);
    }

    /// Hamming distance to the bitwise complement is always 128.
    #[test]
    fn complement_is_full_distance(bytes in prop::array::uniform16(0u8..)) {
        let a = HashCode(bytes);
        let b = HashCode(std::array::from_fn(|i| !bytes[i]));
        prop_assert_eq!(hamming(&a, &b), CODE_BITS as u32);
        let mut buf = [0u8; CODE_BYTES];
        buf.copy_from_slice(&bytes);
        prop_assert_eq!(hamming(&a, &HashCode(buf)), 0);
    }
}
