//! Synthetic bilingual corpora, CoNLL-U ingestion, MRC construction and
//! dependency-tree geometry.

mod conllu;
mod io;
mod mrc_gen;
mod synth;
mod tree;
mod upos;
mod vocab;

pub use conllu::{format_conllu, load_conllu, parse_conllu, write_conllu, ConlluSentence};
pub use io::{load_pairs, read_jsonl, write_jsonl, write_pairs};
pub use mrc_gen::{make_synthetic_mrc, role_spans, MrcConfig, MrcExample, MrcSplits};
pub use synth::{
    generate_synthetic_parallel, Clause, Lang, Lemma, Lexicon, ParallelSentencePair, Realized,
    Role, StsItem, SynthConfig, SyntheticCorpus, STS_SAME_TEMPLATE, STS_TRANSLATION, STS_UNRELATED,
};
pub use tree::{tree_metrics, ParseTree};
pub use upos::{upos_id, upos_name, NUM_UPOS, UPOS_TAGS};
pub use vocab::{Vocab, CLS, PAD, SEP};
