//! Seeded synthetic fixtures: Gaussian blobs in embedding space and a small
//! templated dialogue corpus with three ground-truth intents. Used by tests
//! and smoke runs; everything is deterministic given the seed.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Dialogue, Speaker, Utterance};

/// Standard normal draw via Box-Muller.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Isotropic Gaussian blobs around the given centers.
pub fn gaussian_blobs(
    n_per_cluster: usize,
    centers: &Array2<f64>,
    std_dev: f64,
    seed: u64,
) -> (Array2<f64>, Vec<usize>) {
    let k = centers.nrows();
    let d = centers.ncols();
    let n = n_per_cluster * k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        for i in 0..n_per_cluster {
            let row_idx = c * n_per_cluster + i;
            for j in 0..d {
                values[[row_idx, j]] = centers[[c, j]] + std_dev * normal(&mut rng);
            }
            labels.push(c);
        }
    }
    (values, labels)
}

/// Three well-separated 16-D blobs, 100 points each.
pub fn blobs_16d_fixture(seed: u64) -> (Array2<f64>, Vec<usize>) {
    let d = 16;
    let mut centers = Array2::<f64>::zeros((3, d));
    centers[[0, 0]] = 8.0;
    centers[[1, 1]] = 8.0;
    centers[[2, 2]] = 8.0;
    gaussian_blobs(100, &centers, 1.0, seed)
}

const TOPICS: [(&str, [&str; 8]); 3] = [
    (
        "CheckBalance",
        [
            "balance", "account", "funds", "money", "statement", "deposit", "savings", "amount",
        ],
    ),
    (
        "ReplaceCard",
        [
            "card", "lost", "stolen", "replace", "block", "credit", "freeze", "pin",
        ],
    ),
    (
        "ApplyLoan",
        [
            "loan", "mortgage", "rate", "apply", "borrow", "interest", "payment", "term",
        ],
    ),
];

const FILLERS: [&str; 20] = [
    "please", "can", "you", "help", "me", "i", "need", "to", "the", "my", "with", "today", "now",
    "thanks", "hello", "would", "like", "about", "question", "have",
];

/// Shape of the templated intent corpus.
#[derive(Debug, Clone, Copy)]
pub struct IntentCorpusSpec {
    pub dialogues: usize,
    /// Turns alternate customer/agent starting with the customer.
    pub turns_per_dialogue: usize,
    pub topic_tokens_per_turn: usize,
    pub filler_tokens_per_turn: usize,
}

impl Default for IntentCorpusSpec {
    fn default() -> Self {
        Self {
            dialogues: 100,
            turns_per_dialogue: 6,
            topic_tokens_per_turn: 2,
            filler_tokens_per_turn: 7,
        }
    }
}

fn turn_text<R: Rng>(spec: &IntentCorpusSpec, topic_vocab: &[&str], rng: &mut R) -> String {
    let mut tokens: Vec<&str> = Vec::new();
    for _ in 0..spec.topic_tokens_per_turn {
        tokens.push(topic_vocab[rng.gen_range(0..topic_vocab.len())]);
    }
    for _ in 0..spec.filler_tokens_per_turn {
        tokens.push(FILLERS[rng.gen_range(0..FILLERS.len())]);
    }
    tokens.shuffle(rng);
    tokens.join(" ")
}

/// A templated dialogue corpus with three intents cycling over dialogues.
///
/// Every customer turn states the dialogue's intent (`intents` set and
/// `dialogue_acts` containing `InformIntent`); agent turns answer in the same
/// topic vocabulary but carry no labels.
pub fn intent_corpus_with(spec: IntentCorpusSpec, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dialogues = Vec::with_capacity(spec.dialogues);
    for d in 0..spec.dialogues {
        let (intent_name, topic_vocab) = TOPICS[d % TOPICS.len()];
        let dialogue_id = format!("syn{d:04}");
        let mut turns = Vec::with_capacity(spec.turns_per_dialogue);
        for t in 0..spec.turns_per_dialogue {
            let customer = t % 2 == 0;
            let text = turn_text(&spec, &topic_vocab, &mut rng);
            turns.push(Utterance {
                id: format!("{dialogue_id}:{t}"),
                dialogue_id: dialogue_id.clone(),
                turn_index: t,
                speaker: if customer {
                    Speaker::Customer
                } else {
                    Speaker::Agent
                },
                text,
                dialogue_acts: if customer {
                    vec!["InformIntent".to_string()]
                } else {
                    vec![]
                },
                intents: if customer {
                    vec![intent_name.to_string()]
                } else {
                    vec![]
                },
            });
        }
        dialogues.push(Dialogue {
            id: dialogue_id,
            turns,
        });
    }
    Corpus {
        dialogues,
        source_path: format!("synthetic(seed={seed})"),
        dropped_empty_turns: 0,
    }
}

/// The default three-intent training fixture.
pub fn intent_corpus(seed: u64) -> Corpus {
    intent_corpus_with(IntentCorpusSpec::default(), seed)
}
