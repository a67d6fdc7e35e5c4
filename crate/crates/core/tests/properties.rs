use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use topiccp::calibrate::{calibrate_permutation, CalibrateConfig};
use topiccp::corpus::{Corpus, Document, Vocabulary};
use topiccp::cpstat::{lr_statistic, Interval};
use topiccp::lda::{fit_lda, LdaConfig, TopicCounts};
use topiccp::lsa::{lsa_detect, lsa_embed, LsaDetectConfig, LsaEmbedding, LsaOptions};
use topiccp::polya::MleConfig;
use topiccp::segment::{mwbs, sample_intervals, ScoredInterval, ScoredIntervalSet};

fn random_counts(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<u32>> {
    (0..n).map(|_| (0..k).map(|_| rng.random_range(0..12)).collect()).collect()
}

fn vocab(v: usize) -> Vocabulary {
    Vocabulary::new((0..v).map(|i| format!("w{i}")).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mwbs_ignores_item_order(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(5..60);
        let mut items: Vec<ScoredInterval> = (0..rng.random_range(0..30))
            .map(|_| {
                let s = rng.random_range(0..len - 1);
                let e = rng.random_range(s + 1..len);
                let interval = Interval::new(s, e).unwrap();
                ScoredInterval { interval, location: interval.midpoint(), score: rng.random_range(0..4) as f64 + 1.0, threshold: 0.0 }
            })
            .collect();
        let a = mwbs(0, len - 1, &ScoredIntervalSet { items: items.clone(), seed: 0, num_sampled: 0 });
        items.shuffle(&mut rng);
        let b = mwbs(0, len - 1, &ScoredIntervalSet { items, seed: 0, num_sampled: 0 });
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sampled_intervals_respect_bounds(len in 10usize..200, count in 0usize..50, seed in 0u64..1000) {
        let delta = len / 3 + 2;
        let ivs = sample_intervals(len, count, delta, seed).unwrap();
        prop_assert_eq!(ivs.len(), count);
        for iv in &ivs {
            prop_assert!(iv.end < len && iv.len() >= delta);
        }
        prop_assert_eq!(ivs, sample_intervals(len, count, delta, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn statistic_ignores_order_within_halves(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(6..30);
        let rows = random_counts(&mut rng, n, 3);
        let t = (n - 1) / 2;
        let mut shuffled = rows.clone();
        shuffled[..=t].shuffle(&mut rng);
        shuffled[t + 1..].shuffle(&mut rng);
        let iv = Interval::new(0, n - 1).unwrap();
        let cfg = MleConfig::default();
        let a = lr_statistic(&TopicCounts::from_rows(3, rows).unwrap(), iv, &cfg).unwrap().value;
        let b = lr_statistic(&TopicCounts::from_rows(3, shuffled).unwrap(), iv, &cfg).unwrap().value;
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn top_quantile_dominates_median(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = TopicCounts::from_rows(3, random_counts(&mut rng, 80, 3)).unwrap();
        let base = CalibrateConfig { num_intervals: 15, seed, ..CalibrateConfig::default() };
        let mid = calibrate_permutation(&z, &base).unwrap();
        let top = calibrate_permutation(&z, &CalibrateConfig { eta: 1.0, ..base }).unwrap();
        for (a, b) in mid.entries().iter().zip(top.entries()) {
            prop_assert_eq!(a.0, b.0);
            prop_assert!(b.1 >= a.1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn lsa_detection_ignores_component_signs(seed in 0u64..10_000, flips in proptest::collection::vec(any::<bool>(), 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<f64> = (0..150 * 3).map(|i| rng.random::<f64>() + if i / 3 >= 75 { 0.8 } else { 0.0 }).collect();
        let make = |sign: &dyn Fn(usize) -> f64| LsaEmbedding {
            k: 3,
            doc_vectors: nalgebra::DMatrix::from_fn(150, 3, |r, c| sign(c) * base[r * 3 + c]),
            left_vectors: nalgebra::DMatrix::zeros(0, 3),
            singular_values: vec![1.0; 3],
        };
        let cfg = LsaDetectConfig { calibration_intervals: 20, num_intervals: Some(200), seed, ..LsaDetectConfig::default() };
        let a = lsa_detect(&make(&|_| 1.0), &cfg).unwrap().result.changepoints;
        let b = lsa_detect(&make(&|c| if flips[c] { -1.0 } else { 1.0 }), &cfg).unwrap().result.changepoints;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn embedding_follows_document_order(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs: Vec<Vec<u32>> = (0..40).map(|_| (0..rng.random_range(3..20)).map(|_| rng.random_range(0..12)).collect()).collect();
        let mut order: Vec<usize> = (0..40).collect();
        order.shuffle(&mut rng);
        let build = |ids: &[usize]| {
            let d = ids.iter().enumerate().map(|(t, &i)| Document { time_index: t as i64, token_ids: docs[i].clone() }).collect();
            Corpus::new(vocab(12), d).unwrap()
        };
        let opts = LsaOptions::default();
        let a = lsa_embed(&build(&(0..40).collect::<Vec<_>>()), 4, &opts).unwrap();
        let b = lsa_embed(&build(&order), 4, &opts).unwrap();
        for (x, y) in a.singular_values.iter().zip(&b.singular_values) {
            prop_assert!((x - y).abs() <= 1e-9 * a.singular_values[0]);
        }
        // well-separated singular values have unique vectors; compare those
        for c in 0..4 {
            let gap = (0..a.singular_values.len()).filter(|&j| j != c).map(|j| (a.singular_values[j] - a.singular_values[c]).abs()).fold(f64::INFINITY, f64::min);
            if gap < 1e-3 * a.singular_values[0] {
                continue;
            }
            for (pos, &i) in order.iter().enumerate() {
                prop_assert!((a.doc_vectors[(i, c)] - b.doc_vectors[(pos, c)]).abs() <= 1e-6 * a.singular_values[0]);
            }
        }
    }
}

#[test]
fn lda_recovers_disjoint_topics() {
    // topic 0 on words 0..5, topic 1 on words 5..10, each document mostly one topic
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let docs: Vec<Document> = (0..200)
        .map(|t| {
            let main = t % 2;
            let token_ids = (0..60)
                .map(|_| {
                    let topic = if rng.random::<f64>() < 0.9 { main } else { 1 - main };
                    (topic * 5 + rng.random_range(0..5)) as u32
                })
                .collect();
            Document { time_index: t as i64, token_ids }
        })
        .collect();
    let corpus = Corpus::new(vocab(10), docs).unwrap();
    let model = fit_lda(&corpus, 2, &LdaConfig::default()).unwrap();
    let truth: [Vec<f64>; 2] = [
        (0..10).map(|w| if w < 5 { 0.2 } else { 0.0 }).collect(),
        (0..10).map(|w| if w >= 5 { 0.2 } else { 0.0 }).collect(),
    ];
    let tv = |a: &[f64], b: &[f64]| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let cols: Vec<&[f64]> = model.phi.columns().collect();
    let straight = tv(cols[0], &truth[0]).max(tv(cols[1], &truth[1]));
    let swapped = tv(cols[0], &truth[1]).max(tv(cols[1], &truth[0]));
    assert!(straight.min(swapped) <= 0.1, "{straight} {swapped}");
}
