//! Write the synthetic intent corpus to a file (fixture generation).

use std::io::BufWriter;

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: genfixture <out.jsonl> [seed]");
    let seed: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(42);
    let corpus = intentforge::synth::intent_corpus(seed);
    let file = std::fs::File::create(&path).expect("create output file");
    intentforge::corpus::write_corpus(&corpus, BufWriter::new(file)).expect("write corpus");
    eprintln!("wrote {} dialogues to {path}", corpus.dialogues.len());
}
