use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::upos::{ADJ, ADP, DET, NOUN, PUNCT, VERB};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    L1,
    L2,
}

impl Lang {
    pub fn as_str(self) -> &'static str {
        match self {
            Lang::L1 => "l1",
            Lang::L2 => "l2",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Sizes and rates for the synthetic bilingual corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub adpositions: usize,
    pub adjective_prob: f64,
    pub two_way_fraction: f64,
    pub sts_per_level: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_pairs: 2000,
            heldout_pairs: 200,
            nouns: 40,
            verbs: 16,
            adjectives: 12,
            adpositions: 4,
            adjective_prob: 0.3,
            two_way_fraction: 0.9,
            sts_per_level: 60,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let need = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::config(msg)) };
        need(self.nouns >= 4, "synthetic grammar needs at least 4 nouns")?;
        need(self.verbs >= 4, "synthetic grammar needs at least 4 verbs")?;
        need(self.adjectives >= 1, "synthetic grammar needs an adjective")?;
        need(
            self.adpositions >= 1,
            "synthetic grammar needs an adposition",
        )?;
        need(self.train_pairs >= 1, "train_pairs must be positive")?;
        need(self.heldout_pairs >= 2, "heldout_pairs must be at least 2")?;
        need(
            self.sts_per_level <= self.heldout_pairs,
            "sts_per_level cannot exceed heldout_pairs",
        )?;
        need(
            (0.0..=1.0).contains(&self.adjective_prob),
            "adjective_prob must lie in [0, 1]",
        )?;
        need(
            (0.0..=1.0).contains(&self.two_way_fraction),
            "two_way_fraction must lie in [0, 1]",
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lemma {
    Noun(usize),
    Verb(usize),
    Adj(usize),
    Det(usize),
    Adp(usize),
    Wh(Role),
    Period,
    Question,
}

/// Argument roles a question can target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Agent,
    Patient,
    Location,
}

const ROLES: [Role; 3] = [Role::Agent, Role::Patient, Role::Location];
const DETERMINERS: usize = 2;

/// Word forms of both languages and the bijection between them.
#[derive(Clone, Debug)]
pub struct Lexicon {
    forms: [BTreeMap<Lemma, String>; 2],
    lemmas: [HashMap<String, Lemma>; 2],
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub adpositions: usize,
}

fn coin(
    rng: &mut ChaCha8Rng,
    onsets: &[&str],
    vowels: &[&str],
    syllables: usize,
    used: &mut HashSet<String>,
) -> String {
    loop {
        let w: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    onsets.choose(rng).unwrap(),
                    vowels.choose(rng).unwrap()
                )
            })
            .collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

impl Lexicon {
    pub fn new(cfg: &SynthConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c65_7869_636f_6e00);
        let alphabets: [(&[&str], &[&str]); 2] = [
            (
                &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t"],
                &["a", "e", "i", "o", "u"],
            ),
            (
                &["f", "h", "j", "v", "w", "x", "z", "ch", "sh"],
                &["a", "e", "i", "o", "u", "y"],
            ),
        ];
        let mut inventory = Vec::new();
        inventory.extend((0..cfg.nouns).map(Lemma::Noun));
        inventory.extend((0..cfg.verbs).map(Lemma::Verb));
        inventory.extend((0..cfg.adjectives).map(Lemma::Adj));
        inventory.extend((0..DETERMINERS).map(Lemma::Det));
        inventory.extend((0..cfg.adpositions).map(Lemma::Adp));
        inventory.extend(ROLES.map(Lemma::Wh));

        let mut used = HashSet::new();
        let mut forms: [BTreeMap<Lemma, String>; 2] = Default::default();
        for (lang, (onsets, vowels)) in alphabets.iter().enumerate() {
            for &lemma in &inventory {
                let syllables = match lemma {
                    Lemma::Det(_) | Lemma::Adp(_) | Lemma::Wh(_) => 1,
                    _ => 2,
                };
                let w = coin(&mut rng, onsets, vowels, syllables, &mut used);
                forms[lang].insert(lemma, w);
            }
            forms[lang].insert(Lemma::Period, ".".into());
            forms[lang].insert(Lemma::Question, "?".into());
        }
        let lemmas = [0, 1].map(|l| forms[l].iter().map(|(k, v)| (v.clone(), *k)).collect());
        Lexicon {
            forms,
            lemmas,
            nouns: cfg.nouns,
            verbs: cfg.verbs,
            adjectives: cfg.adjectives,
            adpositions: cfg.adpositions,
        }
    }

    pub fn form(&self, lang: Lang, lemma: Lemma) -> &str {
        &self.forms[lang.index()][&lemma]
    }

    pub fn lemma(&self, lang: Lang, form: &str) -> Option<Lemma> {
        self.lemmas[lang.index()].get(form).copied()
    }

    /// Maps an L1 form to its L2 counterpart.
    pub fn translate(&self, l1_form: &str) -> Option<&str> {
        self.lemma(Lang::L1, l1_form)
            .map(|l| self.form(Lang::L2, l))
    }

    /// Every form of `lang`, in lemma order.
    pub fn forms(&self, lang: Lang) -> impl Iterator<Item = &str> {
        self.forms[lang.index()].values().map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Np {
    det: usize,
    adj: Option<usize>,
    noun: usize,
}

/// Language-neutral content of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Clause {
    subj: Np,
    verb: usize,
    obj: Option<Np>,
    loc: Option<(usize, Np)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Det,
    Adj,
    Noun,
    Adp,
    Verb,
    Punct,
}

type Slot = (u8, Part);

struct Tok {
    slot: Slot,
    lemma: Lemma,
    upos: usize,
    head: Option<Slot>,
}

/// One sentence in one language with gold annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Realized {
    pub tokens: Vec<String>,
    pub upos: Vec<usize>,
    pub heads: Vec<usize>,
    slots: Vec<Slot>,
}

const VERB_SLOT: Slot = (0, Part::Verb);

fn np_tokens(np: &Np, role: u8, lang: Lang, out: &mut Vec<Tok>) {
    let noun = (role, Part::Noun);
    let det = Tok {
        slot: (role, Part::Det),
        lemma: Lemma::Det(np.det),
        upos: DET,
        head: Some(noun),
    };
    let n = Tok {
        slot: noun,
        lemma: Lemma::Noun(np.noun),
        upos: NOUN,
        head: Some(VERB_SLOT),
    };
    let adj = np.adj.map(|a| Tok {
        slot: (role, Part::Adj),
        lemma: Lemma::Adj(a),
        upos: ADJ,
        head: Some(noun),
    });
    out.push(det);
    match lang {
        Lang::L1 => {
            out.extend(adj);
            out.push(n);
        }
        Lang::L2 => {
            out.push(n);
            out.extend(adj);
        }
    }
}

impl Clause {
    fn random(rng: &mut ChaCha8Rng, lex: &Lexicon, adjective_prob: f64) -> Self {
        let np = |rng: &mut ChaCha8Rng| Np {
            det: rng.random_range(0..DETERMINERS),
            adj: rng
                .random_bool(adjective_prob)
                .then(|| rng.random_range(0..lex.adjectives)),
            noun: rng.random_range(0..lex.nouns),
        };
        let template = rng.random_range(0..4u8);
        let subj = np(rng);
        let verb = rng.random_range(0..lex.verbs);
        let obj = (template & 1 == 1).then(|| np(rng));
        let loc = (template & 2 == 2).then(|| (rng.random_range(0..lex.adpositions), np(rng)));
        Clause {
            subj,
            verb,
            obj,
            loc,
        }
    }

    /// Same structure with some content lemmas replaced; at least one is
    /// replaced and at least one kept.
    fn substitute(&self, rng: &mut ChaCha8Rng, lex: &Lexicon) -> Self {
        let slots = 2 + self.obj.is_some() as usize + self.loc.is_some() as usize;
        loop {
            let mask: Vec<bool> = (0..slots).map(|_| rng.random_bool(0.5)).collect();
            if mask.iter().all(|&m| m) || mask.iter().all(|&m| !m) {
                continue;
            }
            let mut c = self.clone();
            let mut m = mask.into_iter();
            let other = |v: usize, n: usize, rng: &mut ChaCha8Rng| (v + rng.random_range(1..n)) % n;
            if m.next().unwrap() {
                c.verb = other(c.verb, lex.verbs, rng);
            }
            if m.next().unwrap() {
                c.subj.noun = other(c.subj.noun, lex.nouns, rng);
            }
            if let Some(o) = c.obj.as_mut() {
                if m.next().unwrap() {
                    o.noun = other(o.noun, lex.nouns, rng);
                }
            }
            if let Some((_, l)) = c.loc.as_mut() {
                if m.next().unwrap() {
                    l.noun = other(l.noun, lex.nouns, rng);
                }
            }
            return c;
        }
    }

    pub fn realize(&self, lex: &Lexicon, lang: Lang) -> Realized {
        let mut toks = Vec::new();
        let verb = Tok {
            slot: VERB_SLOT,
            lemma: Lemma::Verb(self.verb),
            upos: VERB,
            head: None,
        };
        let pp = |toks: &mut Vec<Tok>| {
            if let Some((adp, np)) = &self.loc {
                let adp = Tok {
                    slot: (3, Part::Adp),
                    lemma: Lemma::Adp(*adp),
                    upos: ADP,
                    head: Some((3, Part::Noun)),
                };
                match lang {
                    Lang::L1 => {
                        toks.push(adp);
                        np_tokens(np, 3, lang, toks);
                    }
                    Lang::L2 => {
                        np_tokens(np, 3, lang, toks);
                        toks.push(adp);
                    }
                }
            }
        };
        np_tokens(&self.subj, 1, lang, &mut toks);
        match lang {
            Lang::L1 => {
                toks.push(verb);
                if let Some(o) = &self.obj {
                    np_tokens(o, 2, lang, &mut toks);
                }
                pp(&mut toks);
            }
            Lang::L2 => {
                pp(&mut toks);
                if let Some(o) = &self.obj {
                    np_tokens(o, 2, lang, &mut toks);
                }
                toks.push(verb);
            }
        }
        toks.push(Tok {
            slot: (0, Part::Punct),
            lemma: Lemma::Period,
            upos: PUNCT,
            head: Some(VERB_SLOT),
        });

        let slots: Vec<Slot> = toks.iter().map(|t| t.slot).collect();
        let position = |s: Slot| {
            slots
                .iter()
                .position(|&x| x == s)
                .expect("head slot present")
        };
        Realized {
            tokens: toks
                .iter()
                .map(|t| lex.form(lang, t.lemma).to_string())
                .collect(),
            upos: toks.iter().map(|t| t.upos).collect(),
            heads: toks
                .iter()
                .map(|t| t.head.map_or(0, |h| position(h) + 1))
                .collect(),
            slots,
        }
    }
}

/// An aligned bilingual sentence with gold syntax on both sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelSentencePair {
    pub id: usize,
    pub tokens_s: Vec<String>,
    pub tokens_t: Vec<String>,
    pub upos_s: Vec<usize>,
    pub upos_t: Vec<usize>,
    pub heads_s: Vec<usize>,
    pub heads_t: Vec<usize>,
    /// `(source index, target index)` pairs, 0-based.
    pub alignment: Vec<(usize, usize)>,
    pub two_way_only: bool,
}

impl ParallelSentencePair {
    fn from_clause(id: usize, clause: &Clause, lex: &Lexicon, two_way_only: bool) -> Self {
        let s = clause.realize(lex, Lang::L1);
        let t = clause.realize(lex, Lang::L2);
        let alignment = s
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, slot)| t.slots.iter().position(|x| x == slot).map(|j| (i, j)))
            .collect();
        ParallelSentencePair {
            id,
            tokens_s: s.tokens,
            tokens_t: t.tokens,
            upos_s: s.upos,
            upos_t: t.upos,
            heads_s: s.heads,
            heads_t: t.heads,
            alignment,
            two_way_only,
        }
    }

    pub fn tokens(&self, lang: Lang) -> &[String] {
        match lang {
            Lang::L1 => &self.tokens_s,
            Lang::L2 => &self.tokens_t,
        }
    }

    pub fn upos(&self, lang: Lang) -> &[usize] {
        match lang {
            Lang::L1 => &self.upos_s,
            Lang::L2 => &self.upos_t,
        }
    }

    pub fn heads(&self, lang: Lang) -> &[usize] {
        match lang {
            Lang::L1 => &self.heads_s,
            Lang::L2 => &self.heads_t,
        }
    }
}

/// A cross-lingual similarity item with a gold score on a 0–5 scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StsItem {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub lexicon: Lexicon,
    pub train: Vec<ParallelSentencePair>,
    pub heldout: Vec<ParallelSentencePair>,
    pub sts: Vec<StsItem>,
}

pub const STS_TRANSLATION: f64 = 5.0;
pub const STS_SAME_TEMPLATE: f64 = 3.0;
pub const STS_UNRELATED: f64 = 0.0;

/// Generates the bilingual corpus, the held-out split and the similarity set.
pub fn generate_synthetic_parallel(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let lexicon = Lexicon::new(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = |n: usize,
                 offset: usize,
                 rng: &mut ChaCha8Rng|
     -> (Vec<Clause>, Vec<ParallelSentencePair>) {
        let clauses: Vec<Clause> = (0..n)
            .map(|_| Clause::random(rng, &lexicon, cfg.adjective_prob))
            .collect();
        let pairs = clauses
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let flag = rng.random_bool(cfg.two_way_fraction);
                ParallelSentencePair::from_clause(offset + i, c, &lexicon, flag)
            })
            .collect();
        (clauses, pairs)
    };
    let (_, train) = pairs(cfg.train_pairs, 0, &mut rng);
    let (held_clauses, heldout) = pairs(cfg.heldout_pairs, cfg.train_pairs, &mut rng);

    let mut sts = Vec::with_capacity(3 * cfg.sts_per_level);
    for i in 0..cfg.sts_per_level {
        let c = &held_clauses[i];
        let source = c.realize(&lexicon, Lang::L1).tokens;
        sts.push(StsItem {
            source: source.clone(),
            target: c.realize(&lexicon, Lang::L2).tokens,
            score: STS_TRANSLATION,
        });
        sts.push(StsItem {
            source: source.clone(),
            target: c
                .substitute(&mut rng, &lexicon)
                .realize(&lexicon, Lang::L2)
                .tokens,
            score: STS_SAME_TEMPLATE,
        });
        let j = (i + rng.random_range(1..cfg.heldout_pairs)) % cfg.heldout_pairs;
        sts.push(StsItem {
            source,
            target: held_clauses[j].realize(&lexicon, Lang::L2).tokens,
            score: STS_UNRELATED,
        });
    }
    Ok(SyntheticCorpus {
        lexicon,
        train,
        heldout,
        sts,
    })
}
