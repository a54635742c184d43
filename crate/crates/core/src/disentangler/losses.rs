use serde::{Deserialize, Serialize};

use super::{LatentOutputs, LossKind, LossSet, SiameseDisentangler};
use crate::data::ParseTree;
use crate::distributions::{kl_gauss_standard, kl_vmf_uniform, NoiseSource};
use crate::tensor::{ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

use super::train::EncodedPair;

/// A minibatch of encoded parallel pairs.
pub type PairBatch<'a> = [&'a EncodedPair];

fn zero(tape: &mut Tape) -> Var {
    tape.constant(Tensor::scalar(0.0))
}

fn add_all(tape: &mut Tape, terms: &[Var]) -> Var {
    let mut it = terms.iter().copied();
    match it.next() {
        None => zero(tape),
        Some(first) => it.fold(first, |acc, t| tape.add(acc, t)),
    }
}

/// −Σ log softmax(decoder([y; z]))[w] over the words of each sentence.
fn bow_nll(
    tape: &mut Tape,
    model: &SiameseDisentangler,
    store: &ParamStore,
    y: Var,
    z: Var,
    sentences: &[&[usize]],
) -> Result<Var> {
    let v = model.cfg.vocab_size;
    let mut flat = Vec::new();
    for (b, s) in sentences.iter().enumerate() {
        for &w in s.iter() {
            if w >= v {
                return Err(Error::OutOfVocab { id: w, vocab: v });
            }
            flat.push(b * v + w);
        }
    }
    let logits = model.decode_logits(tape, store, y, z);
    let logp = tape.log_softmax(logits);
    let picked = tape.select(logp, &flat);
    let s = tape.sum(picked);
    Ok(tape.neg(s))
}

/// Each language's bag of words decoded from its own pooled `[y; z]`.
pub fn loss_reconstruction(
    tape: &mut Tape,
    model: &SiameseDisentangler,
    store: &ParamStore,
    ls: &LatentOutputs,
    lt: &LatentOutputs,
    xs: &[&[usize]],
    xt: &[&[usize]],
) -> Result<Var> {
    let a = bow_nll(tape, model, store, ls.y_pooled, ls.z_pooled, xs)?;
    let b = bow_nll(tape, model, store, lt.y_pooled, lt.z_pooled, xt)?;
    Ok(tape.add(a, b))
}

/// Source words from `[y_t; z_s]` plus target words from `[y_s; z_t]`.
pub fn loss_crl(
    tape: &mut Tape,
    model: &SiameseDisentangler,
    store: &ParamStore,
    ls: &LatentOutputs,
    lt: &LatentOutputs,
    xs: &[&[usize]],
    xt: &[&[usize]],
) -> Result<Var> {
    let a = bow_nll(tape, model, store, lt.y_pooled, ls.z_pooled, xs)?;
    let b = bow_nll(tape, model, store, ls.y_pooled, lt.z_pooled, xt)?;
    Ok(tape.add(a, b))
}

/// Summed per-token KL of both posteriors to their priors, both languages.
pub fn loss_kl(tape: &mut Tape, ls: &LatentOutputs, lt: &LatentOutputs) -> Result<Var> {
    let mut terms = Vec::with_capacity(4);
    for l in [ls, lt] {
        let d = tape.value(l.mu_alpha).cols();
        terms.push(kl_gauss_standard(tape, l.mu_beta, l.sigma2));
        terms.push(kl_vmf_uniform(tape, l.kappa, d)?);
    }
    Ok(add_all(tape, &terms))
}

#[derive(Clone, Copy, Debug)]
pub struct SdlOutcome {
    pub loss: Var,
    /// Pairs without an eligible negative in the batch.
    pub skipped: usize,
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Margin loss against the hardest in-batch negatives. Candidates are the
/// other pairs flagged `two_way`; a pair with none is skipped and counted.
pub fn loss_sdl(tape: &mut Tape, ys: Var, yt: Var, two_way: &[bool], margin: f64) -> SdlOutcome {
    let (vs, vt) = (tape.value(ys).clone(), tape.value(yt).clone());
    let b = vs.rows();
    assert_eq!(two_way.len(), b, "one flag per pair");
    let argmax = |f: &dyn Fn(usize) -> f64, cands: &[usize]| {
        let mut best = cands[0];
        for &c in &cands[1..] {
            if f(c) > f(best) {
                best = c;
            }
        }
        best
    };
    let (mut idx, mut nt, mut ns) = (Vec::new(), Vec::new(), Vec::new());
    let mut skipped = 0;
    for p in 0..b {
        let cands: Vec<usize> = (0..b).filter(|&c| c != p && two_way[c]).collect();
        if cands.is_empty() {
            skipped += 1;
            continue;
        }
        idx.push(p);
        nt.push(argmax(&|c| cos(vs.row(p), vt.row(c)), &cands));
        ns.push(argmax(&|c| cos(vs.row(c), vt.row(p)), &cands));
    }
    if idx.is_empty() {
        return SdlOutcome {
            loss: zero(tape),
            skipped,
        };
    }
    let ysb = tape.embedding(ys, &idx);
    let ytb = tape.embedding(yt, &idx);
    let ytn = tape.embedding(yt, &nt);
    let ysn = tape.embedding(ys, &ns);
    let pos = tape.cosine(ysb, ytb);
    let c1 = tape.cosine(ysb, ytn);
    let c2 = tape.cosine(ysn, ytb);
    let mut hinge = |c: Var| {
        let d = tape.sub(c, pos);
        let m = tape.add_const(d, margin);
        let r = tape.relu(m);
        tape.sum(r)
    };
    let h1 = hinge(c1);
    let h2 = hinge(c2);
    SdlOutcome {
        loss: tape.add(h1, h2),
        skipped,
    }
}

fn check_lengths(lengths: &[usize], rows: usize) -> Result<()> {
    if lengths.iter().sum::<usize>() != rows {
        return Err(Error::contract(format!(
            "sentence lengths sum to {}, but there are {rows} token rows",
            lengths.iter().sum::<usize>()
        )));
    }
    Ok(())
}

/// Σ over sentences of the mean position cross-entropy of f([e_i; z]).
pub fn loss_wpl(
    tape: &mut Tape,
    model: &SiameseDisentangler,
    store: &ParamStore,
    e: Var,
    z_h: Var,
    lengths: &[usize],
) -> Result<Var> {
    let classes = model.cfg.max_len;
    check_lengths(lengths, tape.value(e).rows())?;
    if let Some(&n) = lengths.iter().find(|&&n| n > classes) {
        return Err(Error::TooLong {
            len: n,
            max: classes,
        });
    }
    let h = tape.concat(&[e, z_h], 1);
    let logits = model.position_logits(tape, store, h);
    let logp = tape.log_softmax(logits);
    let mut flat = Vec::new();
    let mut weights = Vec::new();
    let mut row = 0;
    for &n in lengths {
        for i in 0..n {
            flat.push(row * classes + i);
            weights.push(1.0 / n as f64);
            row += 1;
        }
    }
    let picked = tape.select(logp, &flat);
    let w = tape.constant(Tensor::vector(weights));
    let weighted = tape.mul(picked, w);
    let s = tape.sum(weighted);
    Ok(tape.neg(s))
}

/// Σ over tokens of the tag cross-entropy of g([e_i; z]).
pub fn loss_pos(
    tape: &mut Tape,
    model: &SiameseDisentangler,
    store: &ParamStore,
    e: Var,
    z_h: Var,
    tags: &[&[usize]],
) -> Result<Var> {
    let m = model.cfg.num_tags;
    let lengths: Vec<usize> = tags.iter().map(|t| t.len()).collect();
    check_lengths(&lengths, tape.value(e).rows())?;
    let mut flat = Vec::new();
    for (row, &t) in tags.iter().flat_map(|s| s.iter()).enumerate() {
        if t >= m {
            return Err(Error::contract(format!(
                "tag id {t} outside the {m}-tag inventory"
            )));
        }
        flat.push(row * m + t);
    }
    let h = tape.concat(&[e, z_h], 1);
    let logits = model.tag_logits(tape, store, h);
    let logp = tape.log_softmax(logits);
    let picked = tape.select(logp, &flat);
    let s = tape.sum(picked);
    Ok(tape.neg(s))
}

/// Depth plus distance probe losses, with `d_B` the squared distance after
/// projection by `B` and the depth term taken in absolute value.
pub fn loss_stl(
    tape: &mut Tape,
    model: &SiameseDisentangler,
    store: &ParamStore,
    e: Var,
    z_h: Var,
    trees: &[&ParseTree],
) -> Result<Var> {
    let lengths: Vec<usize> = trees.iter().map(|t| t.len()).collect();
    check_lengths(&lengths, tape.value(e).rows())?;
    let h = tape.concat(&[e, z_h], 1);
    let proj = model.probe_project(tape, store, h);
    structural_probe_loss(tape, proj, trees)
}

/// Σ_i |depth_i − ‖p_i‖²| + Σ_{i≠j} |d_T(i, j) − ‖p_i − p_j‖²| for projected
/// token rows `proj` stacked sentence by sentence.
pub fn structural_probe_loss(tape: &mut Tape, proj: Var, trees: &[&ParseTree]) -> Result<Var> {
    let lengths: Vec<usize> = trees.iter().map(|t| t.len()).collect();
    check_lengths(&lengths, tape.value(proj).rows())?;
    let mut terms = Vec::with_capacity(2 * trees.len());
    let mut off = 0;
    for t in trees {
        let n = t.len();
        let p = tape.slice(proj, 0, off, n);
        off += n;
        let p2 = tape.mul(p, p);
        let sq = tape.sum_axis(p2, 1);
        let depths = tape.constant(Tensor::new(
            vec![n, 1],
            t.depths().iter().map(|&d| d as f64).collect(),
        )?);
        let dd = tape.sub(depths, sq);
        let da = tape.abs(dd);
        terms.push(tape.sum(da));
        if n < 2 {
            continue;
        }
        let pt = tape.transpose(p);
        let gram = tape.matmul(p, pt);
        let ones = tape.constant(Tensor::full(&[1, n], 1.0));
        let rows = tape.matmul(sq, ones);
        let cols = tape.transpose(rows);
        let rc = tape.add(rows, cols);
        let g2 = tape.scale(gram, 2.0);
        let db = tape.sub(rc, g2);
        let (mut flat, mut gold) = (Vec::with_capacity(n * n), Vec::with_capacity(n * n));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    flat.push(i * n + j);
                    gold.push(t.distance(i, j) as f64);
                }
            }
        }
        let dbs = tape.select(db, &flat);
        let dt = tape.constant(Tensor::vector(gold));
        let diff = tape.sub(dt, dbs);
        let a = tape.abs(diff);
        terms.push(tape.sum(a));
    }
    Ok(add_all(tape, &terms))
}

/// Per-component values of one objective evaluation, already divided by the
/// batch size; `total` is their sum. Disabled components are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub total: f64,
    pub rl: Option<f64>,
    pub kl: Option<f64>,
    pub crl: Option<f64>,
    pub sdl: Option<f64>,
    pub wpl: Option<f64>,
    pub pos: Option<f64>,
    pub stl: Option<f64>,
    pub sdl_skipped: usize,
}

impl LossReport {
    pub fn get(&self, kind: LossKind) -> Option<f64> {
        match kind {
            LossKind::Rl => self.rl,
            LossKind::Kl => self.kl,
            LossKind::Crl => self.crl,
            LossKind::Sdl => self.sdl,
            LossKind::Wpl => self.wpl,
            LossKind::Pos => self.pos,
            LossKind::Stl => self.stl,
        }
    }

    fn set(&mut self, kind: LossKind, v: f64) {
        let slot = match kind {
            LossKind::Rl => &mut self.rl,
            LossKind::Kl => &mut self.kl,
            LossKind::Crl => &mut self.crl,
            LossKind::Sdl => &mut self.sdl,
            LossKind::Wpl => &mut self.wpl,
            LossKind::Pos => &mut self.pos,
            LossKind::Stl => &mut self.stl,
        };
        *slot = Some(v);
    }

    pub fn component_sum(&self) -> f64 {
        LossKind::ALL.iter().filter_map(|&k| self.get(k)).sum()
    }
}

pub(crate) fn stack_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let cols = parts.first().map(|t| t.cols()).unwrap_or(0);
    let mut data = Vec::with_capacity(parts.iter().map(|t| t.numel()).sum());
    let mut rows = 0;
    for t in parts {
        if t.cols() != cols {
            return Err(Error::contract("token vectors disagree in width"));
        }
        data.extend_from_slice(t.data());
        rows += t.rows();
    }
    Tensor::new(vec![rows, cols], data)
}

/// The enabled terms summed with unit weights and divided by the batch size.
pub fn total_loss(
    tape: &mut Tape,
    model: &SiameseDisentangler,
    store: &ParamStore,
    batch: &PairBatch<'_>,
    losses: &LossSet,
    noise: &mut NoiseSource,
) -> Result<(Var, LossReport)> {
    let cfg = model.config();
    losses.validate(cfg.variant, cfg.siamese)?;
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let es = stack_rows(&batch.iter().map(|p| &p.e_s).collect::<Vec<_>>())?;
    let et = stack_rows(&batch.iter().map(|p| &p.e_t).collect::<Vec<_>>())?;
    let len_s: Vec<usize> = batch.iter().map(|p| p.ids_s.len()).collect();
    let len_t: Vec<usize> = batch.iter().map(|p| p.ids_t.len()).collect();
    let es = tape.constant(es);
    let et = tape.constant(et);
    let ls = model.infer(tape, store, es, &len_s, noise)?;
    let lt = model.infer(tape, store, et, &len_t, noise)?;
    let xs: Vec<&[usize]> = batch.iter().map(|p| p.ids_s.as_slice()).collect();
    let xt: Vec<&[usize]> = batch.iter().map(|p| p.ids_t.as_slice()).collect();

    let mut report = LossReport::default();
    let mut terms = Vec::new();
    let inv = 1.0 / batch.len() as f64;
    for kind in losses.iter() {
        let v = match kind {
            LossKind::Rl => loss_reconstruction(tape, model, store, &ls, &lt, &xs, &xt)?,
            LossKind::Kl => loss_kl(tape, &ls, &lt)?,
            LossKind::Crl => loss_crl(tape, model, store, &ls, &lt, &xs, &xt)?,
            LossKind::Sdl => {
                let flags: Vec<bool> = batch.iter().map(|p| p.two_way).collect();
                let out = loss_sdl(tape, ls.y_pooled, lt.y_pooled, &flags, cfg.margin);
                report.sdl_skipped = out.skipped;
                out.loss
            }
            LossKind::Wpl => {
                let a = loss_wpl(tape, model, store, ls.e, ls.z_h, &len_s)?;
                let b = loss_wpl(tape, model, store, lt.e, lt.z_h, &len_t)?;
                tape.add(a, b)
            }
            LossKind::Pos => {
                let ts: Vec<&[usize]> = batch.iter().map(|p| p.upos_s.as_slice()).collect();
                let tt: Vec<&[usize]> = batch.iter().map(|p| p.upos_t.as_slice()).collect();
                let a = loss_pos(tape, model, store, ls.e, ls.z_h, &ts)?;
                let b = loss_pos(tape, model, store, lt.e, lt.z_h, &tt)?;
                tape.add(a, b)
            }
            LossKind::Stl => {
                let ts: Vec<&ParseTree> = batch.iter().map(|p| &p.tree_s).collect();
                let tt: Vec<&ParseTree> = batch.iter().map(|p| &p.tree_t).collect();
                let a = loss_stl(tape, model, store, ls.e, ls.z_h, &ts)?;
                let b = loss_stl(tape, model, store, lt.e, lt.z_h, &tt)?;
                tape.add(a, b)
            }
        };
        report.set(kind, tape.value(v).item() * inv);
        terms.push(v);
    }
    let sum = add_all(tape, &terms);
    let total = tape.scale(sum, inv);
    report.total = tape.value(total).item();
    Ok((total, report))
}
