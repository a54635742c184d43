use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_example, loss_span, MrcModel};
use crate::data::{Lang, MrcExample, Vocab};
use crate::tensor::{Adam, ParamStore, Tape};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Options {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub freeze_encoder: bool,
    pub seed: u64,
}

/// Counts the training examples read per language.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounter {
    pub l1: usize,
    pub l2: usize,
}

impl AccessCounter {
    fn touch(&mut self, lang: Lang) {
        match lang {
            Lang::L1 => self.l1 += 1,
            Lang::L2 => self.l2 += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Log {
    /// Mean span loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub access: AccessCounter,
    pub disentangler_hash: Option<u64>,
}

/// Fine-tunes the span head (and the encoder unless frozen) on source
/// language examples. The disentangler is frozen and its parameter hash is
/// verified after every epoch.
pub fn train_stage2(
    model: &MrcModel,
    store: &mut ParamStore,
    vocab: &Vocab,
    examples: &[MrcExample],
    opts: &Stage2Options,
) -> Result<Stage2Log> {
    if examples.is_empty() {
        return Err(Error::config("stage 2 needs training examples"));
    }
    if opts.batch_size == 0 || !(opts.lr > 0.0) {
        return Err(Error::config(
            "batch size and learning rate must be positive",
        ));
    }
    if let Some(x) = examples.iter().find(|x| x.lang != Lang::L1) {
        return Err(Error::config(format!(
            "{}: stage 2 trains on source-language data only",
            x.id
        )));
    }
    if let Some(d) = &model.disentangler {
        d.set_frozen(store, true);
    }
    model.encoder.set_frozen(store, opts.freeze_encoder);
    let frozen_hash = model.disentangler.as_ref().map(|d| d.hash(store));

    let encoded: Vec<(Vec<usize>, usize)> = examples
        .iter()
        .map(|x| encode_example(vocab, x))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(opts.lr);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut access = AccessCounter::default();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let mut tape = Tape::new();
            let mut terms = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let x = &examples[i];
                access.touch(x.lang);
                let (ids, offset) = &encoded[i];
                let logits = model.logits(&mut tape, store, ids)?;
                let passage = tape.slice(logits, 0, *offset, x.passage.len());
                terms.push(loss_span(&mut tape, passage, x.answer_start, x.answer_end)?);
            }
            let stacked = tape.concat(&terms, 0);
            let sum = tape.sum(stacked);
            let loss = tape.scale(sum, 1.0 / chunk.len() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::numeric(
                    "loss_span",
                    format!("non-finite loss in epoch {epoch}"),
                ));
            }
            total += value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            adam.step(store, &grads)?;
        }
        epoch_losses.push(total / examples.len() as f64);
        if let (Some(d), Some(h)) = (&model.disentangler, frozen_hash) {
            if d.hash(store) != h {
                return Err(Error::contract(format!(
                    "disentangler parameters changed in epoch {epoch}"
                )));
            }
        }
    }
    Ok(Stage2Log {
        epoch_losses,
        access,
        disentangler_hash: frozen_hash,
    })
}
