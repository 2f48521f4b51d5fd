//! Property tests against brute-force oracles.

use proptest::prelude::*;

use structcal::decode::{forward_backward, kbest_viterbi, normalized_confidence, span_marginal};
use structcal::events::{build_span_events, extract_spans};
use structcal::features::{featurize, FeatureSchema};
use structcal::forecast::{fit_gbdt, fit_platt, GbdtConfig};
use structcal::metrics::compute_ece;
use structcal::rescore::{rescore_spans, RescoreConfig, ScoredEntity};
use structcal::types::{Entity, EntityPayload, Instance, LabelSet, Lattice, McSampleSet, Task};

fn shaped_lattice(len: usize, c: usize) -> impl Strategy<Value = Lattice> {
    (
        prop::collection::vec(prop::collection::vec(-4.0..4.0f64, c), len),
        prop::collection::vec(prop::collection::vec(-3.0..3.0f64, c), c),
    )
        .prop_map(|(u, t)| Lattice::new(u, t).unwrap())
}

fn lattice_strategy(max_len: usize, max_c: usize) -> impl Strategy<Value = Lattice> {
    (1..=max_len, 1..=max_c).prop_flat_map(|(len, c)| shaped_lattice(len, c))
}

/// Lattices over the five BIO labels of [`bio`].
fn bio_lattice(max_len: usize) -> impl Strategy<Value = Lattice> {
    (1..=max_len).prop_flat_map(|len| shaped_lattice(len, 5))
}

/// Several samples sharing one shape.
fn sample_sets(max_len: usize, c: usize, max_m: usize) -> impl Strategy<Value = Vec<Lattice>> {
    (1..=max_len).prop_flat_map(move |len| prop::collection::vec(shaped_lattice(len, c), 1..=max_m))
}

/// Every label sequence with its score, in decoding order.
fn enumerate(lattice: &Lattice) -> Vec<(Vec<usize>, f64)> {
    let (len, c) = (lattice.len(), lattice.num_labels());
    let mut out = Vec::new();
    for mut code in 0..c.pow(len as u32) {
        let mut path = vec![0; len];
        for slot in path.iter_mut().rev() {
            *slot = code % c;
            code /= c;
        }
        let mut s = lattice.unary_rows()[0][path[0]];
        for t in 1..len {
            s += lattice.transition_rows()[path[t - 1]][path[t]] + lattice.unary_rows()[t][path[t]];
        }
        out.push((path, s));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

fn bio() -> LabelSet {
    LabelSet::bio(&["PER", "LOC"]).unwrap()
}

proptest! {
    #[test]
    fn kbest_matches_enumeration(lattice in lattice_strategy(5, 4), k in 1usize..12) {
        let all = enumerate(&lattice);
        let got = kbest_viterbi(&lattice, k).unwrap();
        prop_assert_eq!(got.len(), k.min(all.len()));
        for (d, (path, score)) in got.iter().zip(&all) {
            prop_assert_eq!(&d.labels, path);
            prop_assert!((d.log_score - score).abs() < 1e-9);
        }
    }

    #[test]
    fn partition_bounds_best_path(lattice in lattice_strategy(6, 4)) {
        let (_, log_z) = forward_backward(&lattice);
        let best = kbest_viterbi(&lattice, 1).unwrap();
        prop_assert!(log_z >= best[0].log_score - 1e-12);
    }

    #[test]
    fn unit_span_marginal_is_the_table_entry(lattice in lattice_strategy(6, 4), pick in any::<prop::sample::Index>()) {
        let (table, _) = forward_backward(&lattice);
        let c = lattice.num_labels();
        let i = pick.index(lattice.len() * c);
        let (t, y) = (i / c, i % c);
        let p = span_marginal(&lattice, t, t + 1, &[y]).unwrap();
        prop_assert!((p - table.get(t, y)).abs() < 1e-12);
    }

    #[test]
    fn marginal_rows_sum_to_one(lattice in lattice_strategy(8, 5)) {
        let (table, _) = forward_backward(&lattice);
        for row in table.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicating_samples_keeps_confidence(
        lattices in sample_sets(4, 3, 3),
    ) {
        let len = lattices[0].len();
        let entity = Entity { payload: EntityPayload::Sequence(vec![0; len]), rank: 1 };
        let once = McSampleSet::new(lattices.clone()).unwrap();
        let twice = McSampleSet::new(lattices.iter().chain(&lattices).cloned().collect()).unwrap();
        let a = normalized_confidence(&once, &entity).unwrap();
        let b = normalized_confidence(&twice, &entity).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn sample_order_does_not_change_features(
        lattices in sample_sets(4, 5, 4),
        shift in 0usize..4,
    ) {
        let len = lattices[0].len();
        let instance = Instance { id: "p".into(), tokens: vec!["w".into(); len], task: Task::SpanNer, gold: None };
        let entity = Entity {
            payload: EntityPayload::Span { span: structcal::types::Span::new(0, 1, "PER"), tags: vec![1] },
            rank: 1,
        };
        let mut rotated = lattices.clone();
        rotated.rotate_left(shift % lattices.len());
        let schema = FeatureSchema::rank_var_len();
        let a = featurize(&instance, &McSampleSet::new(lattices).unwrap(), &entity, &schema, None).unwrap();
        let b = featurize(&instance, &McSampleSet::new(rotated).unwrap(), &entity, &schema, None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn span_coverage_grows_with_k(lattice in bio_lattice(6), gold_tags in prop::collection::vec(0usize..5, 6)) {
        let labels = bio();
        let gold: std::collections::BTreeSet<_> =
            extract_spans(&gold_tags[..lattice.len()], &labels).into_iter().collect();
        let decodes = kbest_viterbi(&lattice, 8).unwrap();
        let mut last = 0;
        for k in 1..=8 {
            let set = build_span_events("x", &decodes[..k.min(decodes.len())], &labels, Some(&gold));
            prop_assert!(set.positive_count() >= last);
            last = set.positive_count();
            let again = build_span_events("x", &decodes[..k.min(decodes.len())], &labels, Some(&gold));
            prop_assert_eq!(&set, &again);
        }
        let top1 = build_span_events("x", &decodes[..1], &labels, None);
        let map: Vec<_> = extract_spans(&decodes[0].labels, &labels);
        let got: Vec<_> = top1.events.iter().filter_map(|e| e.entity.as_span().cloned()).collect();
        prop_assert_eq!(got, map);
    }

    #[test]
    fn ece_is_bounded_and_order_free(
        pairs in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..60),
        shift in 0usize..60,
    ) {
        let (ece, stats) = compute_ece(&pairs, 20).unwrap();
        prop_assert!((0.0..=1.0).contains(&ece));
        prop_assert_eq!(stats.bins.iter().map(|b| b.count).sum::<usize>(), pairs.len());
        let mut rotated = pairs.clone();
        rotated.rotate_left(shift % pairs.len());
        let (again, _) = compute_ece(&rotated, 20).unwrap();
        prop_assert!((ece - again).abs() < 1e-12);
    }

    #[test]
    fn platt_is_monotone_in_its_input(
        scores in prop::collection::vec(0.0..1.0f64, 20..80),
        seed in any::<u64>(),
    ) {
        let labels: Vec<bool> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| (seed.rotate_left(i as u32) & 0xff) as f64 / 255.0 < *s)
            .collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let f = fit_platt(&scores, &labels).unwrap();
        if f.a > 0.0 {
            prop_assert!(f.predict(0.2) < f.predict(0.8));
        }
    }

    #[test]
    fn gbdt_is_reproducible(rows in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, any::<bool>()), 10..60)) {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
        let y: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let config = GbdtConfig { n_trees: 10, subsample: 0.7, seed: 3, ..GbdtConfig::default() };
        prop_assert_eq!(fit_gbdt(&x, &y, &config).unwrap(), fit_gbdt(&x, &y, &config).unwrap());
    }

    #[test]
    fn rescored_spans_come_from_the_input(
        lattice in bio_lattice(6),
        confidences in prop::collection::vec(0.0..1.0f64, 64),
    ) {
        let labels = bio();
        let decodes = kbest_viterbi(&lattice, 4).unwrap();
        let set = build_span_events("x", &decodes, &labels, None);
        let scored: Vec<ScoredEntity> = set
            .events
            .iter()
            .zip(&confidences)
            .map(|(e, &confidence)| ScoredEntity { entity: e.entity.clone(), confidence })
            .collect();
        let kept = rescore_spans(&scored, &RescoreConfig::default()).unwrap();
        for span in &kept {
            prop_assert!(scored.iter().any(|s| s.entity.as_span() == Some(span)));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(!a.overlaps(b));
            }
        }
    }
}
