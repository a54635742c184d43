//! Extractive span prediction over the semantic pathway and its
//! source-language fine-tuning.

mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MrcExample, Vocab};
use crate::disentangler::SiameseDisentangler;
use crate::encoder::ToyEncoder;
use crate::nn::Linear;
use crate::tensor::{ParamId, ParamStore, Tape, Var};
use crate::{Error, Result};

pub use train::{train_stage2, AccessCounter, Stage2Log, Stage2Options};

pub const MAX_ANSWER_LEN: usize = 10;

/// Per-token semantic vectors: the mean directions μ_α, `[n, d]`.
pub fn semantic_features(
    tape: &mut Tape,
    model: &SiameseDisentangler,
    store: &ParamStore,
    e: Var,
) -> Var {
    model.semantic_means(tape, store, e)
}

/// Linear map from a feature row to `(start, end)` logits.
#[derive(Clone, Debug)]
pub struct SpanHead {
    linear: Linear,
    dim: usize,
}

impl SpanHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SpanHead {
            linear: Linear::new(store, name, dim, 2, rng)?,
            dim,
        })
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        let linear = Linear::from_store(store, name)?;
        if linear.fan_out(store) != 2 {
            return Err(Error::Checkpoint(format!("{name} must produce 2 logits")));
        }
        let dim = linear.fan_in(store);
        Ok(SpanHead { linear, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.linear.ids().to_vec()
    }

    /// `[n, 2]` logits.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, features: Var) -> Var {
        self.linear.forward(tape, store, features)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Highest-scoring `(s, e)` with `s <= e`, `e - s < max_answer_len` and
/// both positions inside `mask`; ties go to the earliest pair.
pub fn predict_span(
    start: &[f64],
    end: &[f64],
    mask: &[bool],
    max_answer_len: usize,
) -> Result<SpanPrediction> {
    if start.len() != mask.len() || end.len() != mask.len() {
        return Err(Error::contract("logits and mask lengths differ"));
    }
    let mut best: Option<SpanPrediction> = None;
    for s in (0..mask.len()).filter(|&s| mask[s]) {
        for e in s..mask.len().min(s + max_answer_len) {
            if !mask[e] {
                continue;
            }
            let score = start[s] + end[e];
            if best.is_none_or(|b| score > b.score) {
                best = Some(SpanPrediction {
                    start: s,
                    end: e,
                    score,
                });
            }
        }
    }
    best.ok_or_else(|| Error::contract("no valid answer position in the mask"))
}

/// Cross-entropy of the gold start plus that of the gold end, from `[n, 2]` logits.
pub fn loss_span(tape: &mut Tape, logits: Var, gold_start: usize, gold_end: usize) -> Result<Var> {
    let n = tape.value(logits).rows();
    if gold_start > gold_end || gold_end >= n {
        return Err(Error::contract(format!(
            "gold span ({gold_start}, {gold_end}) outside {n} positions"
        )));
    }
    let t = tape.transpose(logits);
    let logp = tape.log_softmax(t);
    let picked = tape.select(logp, &[gold_start, n + gold_end]);
    let s = tape.sum(picked);
    Ok(tape.neg(s))
}

/// Exact match and token-overlap F1 of inclusive spans.
pub fn em_f1(pred: (usize, usize), gold: (usize, usize)) -> (f64, f64) {
    let em = (pred == gold) as u8 as f64;
    let lo = pred.0.max(gold.0);
    let hi = pred.1.min(gold.1);
    if hi < lo {
        return (em, 0.0);
    }
    let overlap = (hi - lo + 1) as f64;
    let p = overlap / (pred.1 - pred.0 + 1) as f64;
    let r = overlap / (gold.1 - gold.0 + 1) as f64;
    (em, 2.0 * p * r / (p + r))
}

/// Mean EM and F1 over aligned predictions and gold spans.
pub fn mean_em_f1(preds: &[SpanPrediction], examples: &[MrcExample]) -> Result<(f64, f64)> {
    if preds.len() != examples.len() || preds.is_empty() {
        return Err(Error::contract("one prediction per example"));
    }
    let (em, f1) = preds
        .iter()
        .zip(examples)
        .fold((0.0, 0.0), |(a, b), (p, x)| {
            let (e, f) = em_f1((p.start, p.end), (x.answer_start, x.answer_end));
            (a + e, b + f)
        });
    let n = preds.len() as f64;
    Ok((em / n, f1 / n))
}

/// A line of the predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub score: f64,
}

impl PredictionRecord {
    pub fn new(example: &MrcExample, p: &SpanPrediction) -> Self {
        PredictionRecord {
            example_id: example.id.clone(),
            start: p.start,
            end: p.end,
            text: example.passage[p.start..=p.end].join(" "),
            score: p.score,
        }
    }
}

/// `[CLS] question [SEP] passage [SEP]` ids and the passage offset.
pub fn encode_example(vocab: &Vocab, ex: &MrcExample) -> Result<(Vec<usize>, usize)> {
    let cls = vocab.token(crate::data::CLS).to_string();
    let sep = vocab.token(crate::data::SEP).to_string();
    let mut tokens = Vec::with_capacity(ex.question.len() + ex.passage.len() + 3);
    tokens.push(cls);
    tokens.extend(ex.question.iter().cloned());
    tokens.push(sep.clone());
    let offset = tokens.len();
    tokens.extend(ex.passage.iter().cloned());
    tokens.push(sep);
    Ok((vocab.encode(&tokens)?, offset))
}

/// Either the full pipeline (encoder, frozen disentangler, head on μ_α) or
/// the comparison baseline with the head reading encoder outputs directly.
#[derive(Clone, Debug)]
pub struct MrcModel {
    pub encoder: ToyEncoder,
    pub disentangler: Option<SiameseDisentangler>,
    pub head: SpanHead,
}

impl MrcModel {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        encoder: ToyEncoder,
        disentangler: Option<SiameseDisentangler>,
        rng: &mut R,
    ) -> Result<Self> {
        let (name, dim) = match &disentangler {
            Some(d) => ("span_head", d.config().latent_dim),
            None => ("baseline.span_head", encoder.dim()),
        };
        let head = SpanHead::new(store, name, dim, rng)?;
        Ok(MrcModel {
            encoder,
            disentangler,
            head,
        })
    }

    /// `[n, 2]` logits over the whole input sequence.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let e = self.encoder.encode_on(tape, store, ids)?;
        let features = match &self.disentangler {
            Some(d) => semantic_features(tape, d, store, e),
            None => e,
        };
        Ok(self.head.forward(tape, store, features))
    }

    pub fn predict(
        &self,
        store: &ParamStore,
        vocab: &Vocab,
        ex: &MrcExample,
    ) -> Result<SpanPrediction> {
        let (ids, offset) = encode_example(vocab, ex)?;
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, store, &ids)?;
        let v = tape.value(logits);
        let n = ex.passage.len();
        let start: Vec<f64> = (offset..offset + n).map(|i| v.row(i)[0]).collect();
        let end: Vec<f64> = (offset..offset + n).map(|i| v.row(i)[1]).collect();
        predict_span(&start, &end, &vec![true; n], MAX_ANSWER_LEN)
    }

    pub fn predict_all(
        &self,
        store: &ParamStore,
        vocab: &Vocab,
        examples: &[MrcExample],
    ) -> Result<Vec<SpanPrediction>> {
        examples
            .iter()
            .map(|x| self.predict(store, vocab, x))
            .collect()
    }
}
