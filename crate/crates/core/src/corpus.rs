//! Dialogue transcripts: parsing, task filters, and consecutive-pair mining.
//!
//! A corpus file is UTF-8 with one dialogue object per line:
//!
//! ```text
//! {"dialogue_id": "d1", "turns": [{"speaker": "customer", "utterance": "...",
//!   "dialogue_acts": ["InformIntent"], "intents": ["CheckBalance"]}, ...]}
//! ```
//!
//! Unknown fields are ignored; missing `intents`/`dialogue_acts` default to
//! empty lists. Utterance ids are synthesized as `<dialogue_id>:<turn_index>`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token that marks an utterance as stating an intent (the task-2 filter).
pub const INFORM_INTENT_ACT: &str = "InformIntent";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Agent,
    Customer,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::Agent => write!(f, "agent"),
            Speaker::Customer => write!(f, "customer"),
        }
    }
}

/// One dialogue turn admitted to the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub dialogue_id: String,
    pub turn_index: usize,
    pub speaker: Speaker,
    pub text: String,
    pub dialogue_acts: Vec<String>,
    pub intents: Vec<String>,
}

/// An ordered list of turns, indexed 0.. with no gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub source_path: String,
    /// Turns whose text was empty after trimming, dropped at parse time.
    pub dropped_empty_turns: usize,
}

impl Corpus {
    /// All utterances in corpus order.
    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.dialogues.iter().flat_map(|d| d.turns.iter())
    }

    pub fn utterance_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }
}

/// Two turns of one dialogue with consecutive turn indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UtterancePair<'a> {
    pub first: &'a Utterance,
    pub second: &'a Utterance,
}

#[derive(Deserialize)]
struct RawDialogue {
    dialogue_id: String,
    turns: Vec<RawTurn>,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    dialogue_acts: Vec<String>,
    #[serde(default)]
    intents: Vec<String>,
}

#[derive(Serialize)]
struct RawTurnOut<'a> {
    speaker: &'a Speaker,
    utterance: &'a str,
    dialogue_acts: &'a [String],
    intents: &'a [String],
}

#[derive(Serialize)]
struct RawDialogueOut<'a> {
    dialogue_id: &'a str,
    turns: Vec<RawTurnOut<'a>>,
}

fn parse_speaker(raw: &str, line: usize) -> Result<Speaker> {
    match raw.to_ascii_lowercase().as_str() {
        "agent" => Ok(Speaker::Agent),
        "customer" => Ok(Speaker::Customer),
        other => Err(Error::Parse {
            line,
            message: format!("unknown speaker `{other}` (expected agent or customer)"),
        }),
    }
}

/// Parse a line-delimited corpus stream.
///
/// Whitespace-only turns are dropped (counted in `dropped_empty_turns`) and
/// the surviving turns are re-indexed from 0 so the no-gaps invariant holds.
pub fn parse_corpus<R: BufRead>(reader: R, source_path: &str) -> Result<Corpus> {
    let mut dialogues: Vec<Dialogue> = Vec::new();
    let mut dropped = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDialogue = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if dialogues.iter().any(|d| d.id == raw.dialogue_id) {
            return Err(Error::DuplicateDialogue(raw.dialogue_id));
        }
        let mut turns = Vec::with_capacity(raw.turns.len());
        for turn in &raw.turns {
            if turn.utterance.trim().is_empty() {
                dropped += 1;
                continue;
            }
            let turn_index = turns.len();
            turns.push(Utterance {
                id: format!("{}:{}", raw.dialogue_id, turn_index),
                dialogue_id: raw.dialogue_id.clone(),
                turn_index,
                speaker: parse_speaker(&turn.speaker, lineno)?,
                text: turn.utterance.clone(),
                dialogue_acts: turn.dialogue_acts.clone(),
                intents: turn.intents.clone(),
            });
        }
        dialogues.push(Dialogue {
            id: raw.dialogue_id,
            turns,
        });
    }
    Ok(Corpus {
        dialogues,
        source_path: source_path.to_string(),
        dropped_empty_turns: dropped,
    })
}

pub fn read_corpus_file(path: &Path) -> Result<Corpus> {
    let file = File::open(path)?;
    parse_corpus(BufReader::new(file), &path.display().to_string())
}

/// Serialize a corpus back to the line-delimited format.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    for dialogue in &corpus.dialogues {
        let out = RawDialogueOut {
            dialogue_id: &dialogue.id,
            turns: dialogue
                .turns
                .iter()
                .map(|t| RawTurnOut {
                    speaker: &t.speaker,
                    utterance: &t.text,
                    dialogue_acts: &t.dialogue_acts,
                    intents: &t.intents,
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &out)
            .map_err(|e| Error::Invalid(format!("corpus serialization failed: {e}")))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Utterances whose `intents` list is non-empty, in corpus order.
pub fn select_task1_utterances(corpus: &Corpus) -> Vec<&Utterance> {
    corpus
        .utterances()
        .filter(|u| !u.intents.is_empty())
        .collect()
}

/// Utterances whose `dialogue_acts` contains `InformIntent`, in corpus order.
///
/// The match is exact and case-sensitive: the act list is a controlled
/// vocabulary, not free text.
pub fn select_task2_utterances(corpus: &Corpus) -> Vec<&Utterance> {
    corpus
        .utterances()
        .filter(|u| u.dialogue_acts.iter().any(|a| a == INFORM_INTENT_ACT))
        .collect()
}

/// All (turn t, turn t+1) pairs, never crossing a dialogue boundary.
pub fn consecutive_pairs(corpus: &Corpus) -> Vec<UtterancePair<'_>> {
    let mut pairs = Vec::new();
    for dialogue in &corpus.dialogues {
        for window in dialogue.turns.windows(2) {
            pairs.push(UtterancePair {
                first: &window[0],
                second: &window[1],
            });
        }
    }
    pairs
}
