//! Deterministic token-level augmentation for contrastive batches.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    /// Replace chosen token positions with uniform draws from the vocabulary.
    Substitute,
    /// Delete chosen token positions (at least one token always survives).
    Dropout,
    /// Pass the text through unchanged.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub kind: AugmentKind,
    /// Fraction of token positions touched, in [0, 1].
    pub rate: f64,
    /// Replacement vocabulary; required non-empty for `Substitute`.
    pub vocab: Vec<String>,
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            kind: AugmentKind::Identity,
            rate: 0.0,
            vocab: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!(
                "augment rate {} outside [0, 1]",
                self.rate
            )));
        }
        if self.kind == AugmentKind::Substitute && self.vocab.is_empty() {
            return Err(Error::Config(
                "substitute augmentation requires a non-empty vocabulary".to_string(),
            ));
        }
        Ok(())
    }
}

/// Produce one augmented view of `text`. Deterministic given the rng state.
///
/// When no position is touched the input string is returned unchanged
/// (including its original whitespace); otherwise tokens are re-joined with
/// single spaces.
pub fn augment<R: Rng>(text: &str, cfg: &AugmentConfig, rng: &mut R) -> Result<String> {
    cfg.validate()?;
    if cfg.kind == AugmentKind::Identity {
        return Ok(text.to_string());
    }
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let n = tokens.len();
    if n == 0 {
        return Ok(text.to_string());
    }
    let requested = (cfg.rate * n as f64).ceil() as usize;
    match cfg.kind {
        AugmentKind::Identity => unreachable!(),
        AugmentKind::Substitute => {
            if requested == 0 {
                return Ok(text.to_string());
            }
            let count = requested.min(n);
            let mut positions = sample(rng, n, count).into_vec();
            positions.sort_unstable();
            let mut out: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
            for pos in positions {
                let pick = rng.gen_range(0..cfg.vocab.len());
                out[pos] = cfg.vocab[pick].clone();
            }
            Ok(out.join(" "))
        }
        AugmentKind::Dropout => {
            let count = requested.min(n.saturating_sub(1));
            if count == 0 {
                return Ok(text.to_string());
            }
            let mut positions = sample(rng, n, count).into_vec();
            positions.sort_unstable();
            let mut out = Vec::with_capacity(n - count);
            let mut drop_iter = positions.iter().peekable();
            for (i, token) in tokens.iter().enumerate() {
                if drop_iter.peek() == Some(&&i) {
                    drop_iter.next();
                } else {
                    out.push(*token);
                }
            }
            Ok(out.join(" "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vec<String> {
        ["xx", "yy", "zz"].iter().map(|s| s.to_string()).collect()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_rate_is_identity() {
        let cfg = AugmentConfig {
            kind: AugmentKind::Substitute,
            rate: 0.0,
            vocab: vocab(),
        };
        let out = augment("a  b c", &cfg, &mut rng(1)).unwrap();
        assert_eq!(out, "a  b c");
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = AugmentConfig {
            kind: AugmentKind::Substitute,
            rate: 0.5,
            vocab: vocab(),
        };
        let a = augment("a b c d e", &cfg, &mut rng(9)).unwrap();
        let b = augment("a b c d e", &cfg, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn substitute_touches_ceil_rate_positions() {
        // ceil(0.5 * 4) = 2; the vocabulary is disjoint from the input, so
        // exactly two positions differ.
        let cfg = AugmentConfig {
            kind: AugmentKind::Substitute,
            rate: 0.5,
            vocab: vocab(),
        };
        let out = augment("a b c d", &cfg, &mut rng(3)).unwrap();
        let out_tokens: Vec<&str> = out.split_whitespace().collect();
        assert_eq!(out_tokens.len(), 4);
        let differing = out_tokens
            .iter()
            .zip(["a", "b", "c", "d"])
            .filter(|(got, orig)| **got != *orig)
            .count();
        assert_eq!(differing, 2);
    }

    #[test]
    fn substitute_preserves_token_count() {
        let cfg = AugmentConfig {
            kind: AugmentKind::Substitute,
            rate: 1.0,
            vocab: vocab(),
        };
        let out = augment("one two three", &cfg, &mut rng(5)).unwrap();
        assert_eq!(out.split_whitespace().count(), 3);
    }

    #[test]
    fn dropout_removes_exact_count_but_never_all() {
        let cfg = AugmentConfig {
            kind: AugmentKind::Dropout,
            rate: 1.0,
            vocab: Vec::new(),
        };
        let out = augment("a b c d", &cfg, &mut rng(4)).unwrap();
        // min(ceil(1.0 * 4), 4 - 1) = 3 removed, one survivor.
        assert_eq!(out.split_whitespace().count(), 1);

        let half = AugmentConfig {
            kind: AugmentKind::Dropout,
            rate: 0.5,
            vocab: Vec::new(),
        };
        let out = augment("a b c d", &half, &mut rng(4)).unwrap();
        assert_eq!(out.split_whitespace().count(), 2);
    }

    #[test]
    fn empty_text_passes_through() {
        let cfg = AugmentConfig {
            kind: AugmentKind::Dropout,
            rate: 0.5,
            vocab: Vec::new(),
        };
        assert_eq!(augment("", &cfg, &mut rng(2)).unwrap(), "");
    }

    #[test]
    fn substitute_with_empty_vocab_errors() {
        let cfg = AugmentConfig {
            kind: AugmentKind::Substitute,
            rate: 0.5,
            vocab: Vec::new(),
        };
        assert!(augment("a b", &cfg, &mut rng(1)).is_err());
    }

    #[test]
    fn identity_kind_returns_input_verbatim() {
        let out = augment("keep  spacing", &AugmentConfig::identity(), &mut rng(1)).unwrap();
        assert_eq!(out, "keep  spacing");
    }
}
