//! A small contextual encoder standing in for a pretrained multilingual model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PAD;
use crate::nn::{lookup, randn, Activation, Linear, Mlp};
use crate::tensor::{Adam, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub blocks: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            dim: 64,
            blocks: 2,
            max_len: 48,
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    query: ParamId,
    key: ParamId,
    value: ParamId,
    out: ParamId,
    ff: Mlp,
}

/// Token and position embeddings followed by residual single-head
/// self-attention blocks, each with a feed-forward sublayer.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    cfg: EncoderConfig,
    embed: ParamId,
    position: ParamId,
    blocks: Vec<Block>,
}

const PREFIX: &str = "encoder";

impl ToyEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.dim == 0 || cfg.max_len == 0 || cfg.vocab_size == 0 {
            return Err(Error::config("encoder dimensions must be positive"));
        }
        let e = cfg.dim;
        let embed = store.add(
            format!("{PREFIX}.embed"),
            randn(&[cfg.vocab_size, e], 1.0, rng),
        )?;
        let position = store.add(
            format!("{PREFIX}.position"),
            randn(&[cfg.max_len, e], 0.5, rng),
        )?;
        let std = (1.0 / e as f64).sqrt();
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let name = |p: &str| format!("{PREFIX}.block{b}.{p}");
            blocks.push(Block {
                query: store.add(name("query"), randn(&[e, e], std, rng))?,
                key: store.add(name("key"), randn(&[e, e], std, rng))?,
                value: store.add(name("value"), randn(&[e, e], std, rng))?,
                out: store.add(name("out"), randn(&[e, e], std, rng))?,
                ff: Mlp::new(store, &name("ff"), &[e, 2 * e, e], Activation::Tanh, rng)?,
            });
        }
        Ok(ToyEncoder {
            cfg,
            embed,
            position,
            blocks,
        })
    }

    /// Rebinds to parameters already present in `store` (after loading a checkpoint).
    pub fn from_store(store: &ParamStore, cfg: EncoderConfig) -> Result<Self> {
        let embed = lookup(store, &format!("{PREFIX}.embed"))?;
        let position = lookup(store, &format!("{PREFIX}.position"))?;
        if store.get(embed).shape() != [cfg.vocab_size, cfg.dim]
            || store.get(position).shape() != [cfg.max_len, cfg.dim]
        {
            return Err(Error::Checkpoint(
                "encoder shapes disagree with the configuration".into(),
            ));
        }
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let name = |p: &str| format!("{PREFIX}.block{b}.{p}");
                Ok(Block {
                    query: lookup(store, &name("query"))?,
                    key: lookup(store, &name("key"))?,
                    value: lookup(store, &name("value"))?,
                    out: lookup(store, &name("out"))?,
                    ff: Mlp::from_store(store, &name("ff"), 2, Activation::Tanh)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ToyEncoder {
            cfg,
            embed,
            position,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed, self.position];
        for b in &self.blocks {
            ids.extend([b.query, b.key, b.value, b.out]);
            ids.extend(b.ff.ids());
        }
        ids
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embed
    }

    pub fn set_frozen(&self, store: &mut ParamStore, frozen: bool) {
        for id in self.param_ids() {
            store.set_frozen(id, frozen);
        }
    }

    pub fn is_frozen(&self, store: &ParamStore) -> bool {
        self.param_ids().iter().all(|&id| store.is_frozen(id))
    }

    pub fn hash(&self, store: &ParamStore) -> u64 {
        store.hash_of(&self.param_ids())
    }

    pub fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.len() > self.cfg.max_len {
            return Err(Error::TooLong {
                len: ids.len(),
                max: self.cfg.max_len,
            });
        }
        if ids.is_empty() {
            return Err(Error::contract("cannot encode an empty sequence"));
        }
        match ids.iter().find(|&&i| i >= self.cfg.vocab_size) {
            Some(&id) => Err(Error::OutOfVocab {
                id,
                vocab: self.cfg.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Per-token vectors `[n, E]` recorded on `tape`.
    pub fn encode_on(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        self.check_ids(ids)?;
        let n = ids.len();
        let table = tape.param(store, self.embed);
        let tok = tape.embedding(table, ids);
        let pos_table = tape.param(store, self.position);
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.embedding(pos_table, &positions);
        let mut x = tape.add(tok, pos);
        let scale = 1.0 / (self.cfg.dim as f64).sqrt();
        for b in &self.blocks {
            let p = |tape: &mut Tape, id| tape.param(store, id);
            let (wq, wk, wv, wo) = (
                p(tape, b.query),
                p(tape, b.key),
                p(tape, b.value),
                p(tape, b.out),
            );
            let q = tape.matmul(x, wq);
            let k = tape.matmul(x, wk);
            let v = tape.matmul(x, wv);
            let kt = tape.transpose(k);
            let s = tape.matmul(q, kt);
            let s = tape.scale(s, scale);
            let a = tape.softmax(s);
            let ctx = tape.matmul(a, v);
            let att = tape.matmul(ctx, wo);
            x = tape.add(x, att);
            let ff = b.ff.forward(tape, store, x);
            x = tape.add(x, ff);
        }
        Ok(x)
    }

    /// Per-token vectors `[n, E]` without gradient tracking.
    pub fn encode(&self, store: &ParamStore, ids: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.encode_on(&mut tape, store, ids)?;
        Ok(tape.value(v).clone())
    }

    /// Masked-token pretraining on `sentences`: a random 15% of positions are
    /// replaced by `[PAD]` and predicted through the tied embedding matrix.
    pub fn warm_start<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        sentences: &[Vec<usize>],
        steps: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if sentences.is_empty() {
            return Err(Error::config("warm start needs sentences"));
        }
        let head = Linear::new(
            store,
            &format!("{PREFIX}.mlm_head"),
            self.cfg.dim,
            self.cfg.dim,
            rng,
        )?;
        let mut adam = Adam::new(lr);
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let ids = &sentences[rng.random_range(0..sentences.len())];
            let mut masked = ids.clone();
            let mut targets = Vec::new();
            for (i, m) in masked.iter_mut().enumerate() {
                if rng.random_bool(0.15) {
                    targets.push((i, *m));
                    *m = PAD;
                }
            }
            if targets.is_empty() {
                let i = rng.random_range(0..ids.len());
                targets.push((i, ids[i]));
                masked[i] = PAD;
            }
            let mut tape = Tape::new();
            let x = self.encode_on(&mut tape, store, &masked)?;
            let h = head.forward(&mut tape, store, x);
            let h = tape.tanh(h);
            let table = tape.param(store, self.embed);
            let tt = tape.transpose(table);
            let logits = tape.matmul(h, tt);
            let logp = tape.log_softmax(logits);
            let v = self.cfg.vocab_size;
            let flat: Vec<usize> = targets.iter().map(|&(i, t)| i * v + t).collect();
            let picked = tape.select(logp, &flat);
            let nll = tape.mean(picked);
            let loss = tape.neg(nll);
            losses.push(tape.value(loss).item());
            let grads = tape.backward(loss)?;
            adam.step(store, &grads)?;
        }
        Ok(losses)
    }
}
