//! Property tests for the crate-wide invariants.

use std::collections::BTreeSet;
use std::io::Cursor;

use ndarray::Array2;
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use intentforge::augment::{augment, AugmentConfig, AugmentKind};
use intentforge::cluster::{kmeans, target_distribution};
use intentforge::contrastive::{contrastive_loss, instance_cl_loss};
use intentforge::corpus::{parse_corpus, select_task1_utterances, write_corpus, Corpus, Dialogue, Speaker, Utterance};
use intentforge::encoder::{embed, featurize, init_params};
use intentforge::metrics::{accuracy, ari, nmi};
use intentforge::neighborhood::{build_adjacency, AdjacencyMatrix, BatchPlan};

fn word_strategy() -> impl Strategy<Value = String> {
    "[a-z]{1,8}"
}

fn text_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(word_strategy(), 1..6).prop_map(|words| words.join(" "))
}

fn dialogue_strategy(id: usize) -> impl Strategy<Value = Dialogue> {
    prop::collection::vec(
        (
            text_strategy(),
            prop::bool::ANY,
            prop::option::of("[A-Z][a-z]{2,6}"),
            prop::bool::ANY,
        ),
        1..5,
    )
    .prop_map(move |turns| {
        let dialogue_id = format!("d{id}");
        let turns = turns
            .into_iter()
            .enumerate()
            .map(|(t, (text, is_agent, intent, inform))| Utterance {
                id: format!("{dialogue_id}:{t}"),
                dialogue_id: dialogue_id.clone(),
                turn_index: t,
                speaker: if is_agent {
                    Speaker::Agent
                } else {
                    Speaker::Customer
                },
                text,
                dialogue_acts: if inform {
                    vec!["InformIntent".to_string()]
                } else {
                    vec![]
                },
                intents: intent.into_iter().collect(),
            })
            .collect();
        Dialogue {
            id: dialogue_id,
            turns,
        }
    })
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    prop::collection::vec(Just(()), 1..6).prop_flat_map(|slots| {
        let dialogues: Vec<_> = (0..slots.len()).map(dialogue_strategy).collect();
        dialogues.prop_map(|dialogues| Corpus {
            dialogues,
            source_path: "generated".to_string(),
            dropped_empty_turns: 0,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_round_trips_through_the_line_format(corpus in corpus_strategy()) {
        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf).unwrap();
        let reparsed = parse_corpus(Cursor::new(buf), "generated").unwrap();
        prop_assert_eq!(&corpus.dialogues, &reparsed.dialogues);
    }

    #[test]
    fn task_filter_partitions_the_corpus(corpus in corpus_strategy()) {
        let selected: BTreeSet<String> = select_task1_utterances(&corpus)
            .iter()
            .map(|u| u.id.clone())
            .collect();
        let complement: BTreeSet<String> = corpus
            .utterances()
            .filter(|u| u.intents.is_empty())
            .map(|u| u.id.clone())
            .collect();
        let all: BTreeSet<String> = corpus.utterances().map(|u| u.id.clone()).collect();
        prop_assert!(selected.is_disjoint(&complement));
        let union: BTreeSet<String> = selected.union(&complement).cloned().collect();
        prop_assert_eq!(union, all);
        // Idempotence: filtering only the selected turns selects all of them.
        let refiltered = select_task1_utterances(&corpus)
            .iter()
            .filter(|u| !u.intents.is_empty())
            .count();
        prop_assert_eq!(refiltered, selected.len());
    }

    #[test]
    fn featurizer_outputs_are_unit_or_zero(text in ".{0,40}") {
        let v = featurize(&text, 64);
        let norm = v.dot(&v).sqrt();
        prop_assert!(norm.abs() < 1e-9 || (norm - 1.0).abs() < 1e-9);
        prop_assert_eq!(v.clone(), featurize(&text, 64));
    }

    #[test]
    fn substitution_preserves_and_dropout_reduces_token_count(
        text in text_strategy(),
        rate in 0.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let n = text.split_whitespace().count();
        let vocab = vec!["xx".to_string(), "yy".to_string()];
        let substitute = AugmentConfig { kind: AugmentKind::Substitute, rate, vocab };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = augment(&text, &substitute, &mut rng).unwrap();
        prop_assert_eq!(out.split_whitespace().count(), n);

        let dropout = AugmentConfig { kind: AugmentKind::Dropout, rate, vocab: vec![] };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = augment(&text, &dropout, &mut rng).unwrap();
        let removed = ((rate * n as f64).ceil() as usize).min(n.saturating_sub(1));
        prop_assert_eq!(out.split_whitespace().count(), n - removed);
    }

    #[test]
    fn adjacency_is_symmetric_with_partner_guarantee(
        m in 1usize..6,
        seed in 0u64..500,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let members: Vec<usize> = (0..m).map(|i| i * 7).collect();
        let sampled_neighbor: Vec<usize> =
            (0..m).map(|_| rng.gen_range(0..40usize)).collect();
        let labels: Vec<Option<String>> = (0..m)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    Some(format!("L{}", rng.gen_range(0..3u8)))
                } else {
                    None
                }
            })
            .collect();
        let plan = BatchPlan { members, sampled_neighbor, labels };
        let adj = build_adjacency(&plan);
        for i in 0..adj.size() {
            prop_assert!(!adj.get(i, i));
            prop_assert!(adj.positive_count(i) >= 1);
            for j in 0..adj.size() {
                prop_assert_eq!(adj.get(i, j), adj.get(j, i));
            }
        }
    }

    #[test]
    fn embedding_rows_stay_unit_norm(
        texts in prop::collection::vec(text_strategy(), 1..6),
        seed in 0u64..100,
    ) {
        let params = init_params(seed, 64, 8, 4);
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let rows = embed(&params, &refs).unwrap();
        for row in rows.rows() {
            let norm = row.dot(&row).sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn target_rows_always_normalize(
        n in 1usize..8,
        k in 2usize..5,
        seed in 0u64..100,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let mut q = Array2::<f64>::zeros((n, k));
        for mut row in q.rows_mut() {
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = rng.gen_range(0.01..1.0);
                sum += *v;
            }
            row /= sum;
        }
        let p = target_distribution(&q);
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn clustering_metrics_ignore_label_names(
        labels in prop::collection::vec((0usize..4, 0usize..3), 2..40),
    ) {
        let pred: Vec<usize> = labels.iter().map(|&(p, _)| p).collect();
        let refs: Vec<usize> = labels.iter().map(|&(_, r)| r).collect();
        let remap_pred = [11usize, 3, 7, 5];
        let remap_ref = [2usize, 9, 4];
        let pred2: Vec<usize> = pred.iter().map(|&p| remap_pred[p]).collect();
        let refs2: Vec<usize> = refs.iter().map(|&r| remap_ref[r]).collect();
        prop_assert!((accuracy(&pred, &refs).unwrap() - accuracy(&pred2, &refs2).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&pred, &refs).unwrap() - nmi(&pred2, &refs2).unwrap()).abs() < 1e-12);
        prop_assert!((ari(&pred, &refs).unwrap() - ari(&pred2, &refs2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn kmeans_inertia_matches_its_assignments(
        seed in 0u64..50,
        k in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let n = 30;
        let data: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let values = Array2::from_shape_vec((n, 2), data).unwrap();
        let model = kmeans(&values, k, seed, 3).unwrap();
        let mut recomputed = 0.0;
        for (row, &assignment) in values.rows().into_iter().zip(&model.assignments) {
            let c = model.centroids.row(assignment);
            recomputed += row
                .iter()
                .zip(c.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            // Assigned centroid is the nearest one.
            for other in model.centroids.rows() {
                let d_other: f64 = row
                    .iter()
                    .zip(other.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let d_own: f64 = row
                    .iter()
                    .zip(c.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                prop_assert!(d_own <= d_other + 1e-9);
            }
        }
        prop_assert!((recomputed - model.inertia).abs() < 1e-6);
    }

    #[test]
    fn batch_permutation_leaves_contrastive_total_unchanged(
        seed in 0u64..100,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        use rand::Rng;
        let n = 6;
        let mut rows = Array2::<f64>::zeros((n, 4));
        for mut row in rows.rows_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let norm = row.dot(&row).sqrt().max(1e-6);
            row /= norm;
        }
        let mut adj = AdjacencyMatrix::partner_only(n);
        adj.set(rng.gen_range(0..n), rng.gen_range(0..n));
        let base = contrastive_loss(&rows, &adj, 0.7).unwrap().total;

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut permuted_rows = Array2::<f64>::zeros((n, 4));
        for (to, &from) in perm.iter().enumerate() {
            permuted_rows.row_mut(to).assign(&rows.row(from));
        }
        let mut permuted_adj = AdjacencyMatrix::new(n);
        for a in 0..n {
            for b in 0..n {
                if adj.get(perm[a], perm[b]) {
                    permuted_adj.set(a, b);
                }
            }
        }
        let permuted = contrastive_loss(&permuted_rows, &permuted_adj, 0.7).unwrap().total;
        prop_assert!((base - permuted).abs() < 1e-9);
    }

    #[test]
    fn per_instance_contrastive_terms_stay_positive(seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let m = rng.gen_range(2..5usize);
        let mut rows = Array2::<f64>::zeros((2 * m, 3));
        for mut row in rows.rows_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let norm = row.dot(&row).sqrt().max(1e-6);
            row /= norm;
        }
        let report = instance_cl_loss(&rows, 0.4).unwrap();
        prop_assert!(report.per_instance.iter().all(|&l| l > 0.0));
        let mean = report.per_instance.iter().sum::<f64>() / report.per_instance.len() as f64;
        prop_assert!((report.total - mean).abs() < 1e-9);
    }
}
