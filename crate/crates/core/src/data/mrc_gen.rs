use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{Lang, Lemma, Lexicon, ParallelSentencePair, Role};
use super::tree::ParseTree;
use super::upos::{ADP, NOUN};
use crate::{Error, Result};

/// One extractive question over a multi-sentence passage.
///
/// `heads` holds sentence-local heads for every passage token and
/// `sentence_starts` the passage offset of each sentence, so trees can be
/// rebuilt without the source corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrcExample {
    pub id: String,
    pub question: Vec<String>,
    pub passage: Vec<String>,
    pub answer_start: usize,
    pub answer_end: usize,
    pub lang: Lang,
    pub role: Role,
    pub sentence_starts: Vec<usize>,
    pub heads: Vec<usize>,
}

impl MrcExample {
    /// `(offset, tree)` for each passage sentence.
    pub fn trees(&self) -> Result<Vec<(usize, ParseTree)>> {
        let n = self.passage.len();
        if self.heads.len() != n {
            return Err(Error::contract(format!(
                "{}: {} heads for {n} tokens",
                self.id,
                self.heads.len()
            )));
        }
        let mut ends: Vec<usize> = self.sentence_starts.iter().skip(1).copied().collect();
        ends.push(n);
        self.sentence_starts
            .iter()
            .zip(ends)
            .map(|(&s, e)| Ok((s, ParseTree::from_heads(&self.heads[s..e])?)))
            .collect()
    }

    /// Whether `(start, end)` in passage coordinates equals a constituent.
    pub fn is_constituent_span(
        &self,
        trees: &[(usize, ParseTree)],
        start: usize,
        end: usize,
    ) -> bool {
        trees.iter().any(|(off, t)| {
            start >= *off && end < off + t.len() && t.is_constituent(start - off, end - off)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrcConfig {
    pub examples: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub max_passage_tokens: usize,
    pub constituent_fraction: f64,
}

impl Default for MrcConfig {
    fn default() -> Self {
        MrcConfig {
            examples: 500,
            min_sentences: 2,
            max_sentences: 4,
            max_passage_tokens: 42,
            constituent_fraction: 0.9,
        }
    }
}

impl MrcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return Err(Error::config("need 1 <= min_sentences <= max_sentences"));
        }
        if !(0.0..=1.0).contains(&self.constituent_fraction) {
            return Err(Error::config("constituent_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Role-bearing argument spans of a sentence, read off its tree.
pub fn role_spans(
    upos: &[usize],
    heads: &[usize],
    lang: Lang,
) -> Result<Vec<(Role, (usize, usize))>> {
    let tree = ParseTree::from_heads(heads)?;
    let root = tree.root();
    let mut core = Vec::new();
    let mut out = Vec::new();
    for c in tree.children(root) {
        if upos[c] != NOUN {
            continue;
        }
        let span = tree
            .subtree_span(c)
            .ok_or_else(|| Error::Tree(format!("argument {c} is not contiguous")))?;
        if tree.children(c).iter().any(|&g| upos[g] == ADP) {
            out.push((Role::Location, span));
        } else {
            core.push((c, span));
        }
    }
    for (c, span) in core.iter().copied() {
        let role = match lang {
            Lang::L1 if c < root => Role::Agent,
            Lang::L1 => Role::Patient,
            Lang::L2 if core[0].0 == c => Role::Agent,
            Lang::L2 => Role::Patient,
        };
        out.push((role, span));
    }
    out.sort();
    Ok(out)
}

/// Widens a constituent answer by one token so that it straddles a boundary.
fn break_constituent(tree: &ParseTree, (s, e): (usize, usize)) -> Option<(usize, usize)> {
    let mut options = Vec::new();
    if e + 1 < tree.len() {
        options.push((s, e + 1));
    }
    if s > 0 {
        options.push((s - 1, e));
    }
    options
        .into_iter()
        .find(|&(a, b)| !tree.is_constituent(a, b))
}

/// Parallel L1/L2 MRC sets built from the same passages and questions.
#[derive(Clone, Debug, PartialEq)]
pub struct MrcSplits {
    pub l1: Vec<MrcExample>,
    pub l2: Vec<MrcExample>,
}

pub fn make_synthetic_mrc(
    pairs: &[ParallelSentencePair],
    lexicon: &Lexicon,
    cfg: &MrcConfig,
    seed: u64,
) -> Result<MrcSplits> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::config("MRC construction needs a nonempty corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l1 = Vec::with_capacity(cfg.examples);
    let mut l2 = Vec::with_capacity(cfg.examples);

    for k in 0..cfg.examples {
        let mut chosen: Vec<usize> = Vec::new();
        for _attempt in 0..1000 {
            let want = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
            chosen.clear();
            let mut verbs = HashSet::new();
            let mut len = 0;
            for _ in 0..50 {
                if chosen.len() == want {
                    break;
                }
                let i = rng.random_range(0..pairs.len());
                let p = &pairs[i];
                let root = p.heads_s.iter().position(|&h| h == 0).unwrap_or(0);
                if len + p.tokens_s.len() > cfg.max_passage_tokens
                    || !verbs.insert(p.tokens_s[root].clone())
                {
                    continue;
                }
                len += p.tokens_s.len();
                chosen.push(i);
            }
            if chosen.len() >= cfg.min_sentences {
                break;
            }
        }
        if chosen.len() < cfg.min_sentences {
            return Err(Error::config(
                "cannot fit the minimum number of sentences into a passage",
            ));
        }
        let target = rng.random_range(0..chosen.len());
        let roles = role_spans(
            &pairs[chosen[target]].upos_s,
            &pairs[chosen[target]].heads_s,
            Lang::L1,
        )?;
        let role = roles[rng.random_range(0..roles.len())].0;
        let inject = rng.random_bool(1.0 - cfg.constituent_fraction);

        for (lang, out) in [(Lang::L1, &mut l1), (Lang::L2, &mut l2)] {
            let mut passage = Vec::new();
            let mut heads = Vec::new();
            let mut starts = Vec::new();
            let mut answer = (0, 0);
            let mut verb = String::new();
            for (n, &i) in chosen.iter().enumerate() {
                let p = &pairs[i];
                let off = passage.len();
                starts.push(off);
                if n == target {
                    let tree = ParseTree::from_heads(p.heads(lang))?;
                    let spans = role_spans(p.upos(lang), p.heads(lang), lang)?;
                    let mut span = spans
                        .iter()
                        .find(|(r, _)| *r == role)
                        .map(|x| x.1)
                        .ok_or_else(|| {
                            Error::Tree(format!(
                                "sentence {} lacks role {role:?} in {lang:?}",
                                p.id
                            ))
                        })?;
                    if inject {
                        span = break_constituent(&tree, span).unwrap_or(span);
                    }
                    answer = (off + span.0, off + span.1);
                    verb = p.tokens(lang)[tree.root()].clone();
                }
                passage.extend(p.tokens(lang).iter().cloned());
                heads.extend_from_slice(p.heads(lang));
            }
            let question = vec![
                lexicon.form(lang, Lemma::Wh(role)).to_string(),
                verb,
                lexicon.form(lang, Lemma::Question).to_string(),
            ];
            out.push(MrcExample {
                id: format!("q{k:05}"),
                question,
                passage,
                answer_start: answer.0,
                answer_end: answer.1,
                lang,
                role,
                sentence_starts: starts,
                heads,
            });
        }
    }
    Ok(MrcSplits { l1, l2 })
}
