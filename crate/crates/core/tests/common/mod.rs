//! Tiny disentangler fixtures and hand-rolled loss oracles shared by the
//! loss tests and the acceptance target.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2dm::data::ParseTree;
use s2dm::disentangler::{DisentanglerConfig, EncodedPair, LatentOutputs, SiameseDisentangler};
use s2dm::distributions::NoiseSource;
use s2dm::tensor::{ParamStore, Tape, Tensor};

pub const E: usize = 5;
pub const V: usize = 11;
pub const D: usize = 4;

pub fn config() -> DisentanglerConfig {
    DisentanglerConfig {
        latent_dim: D,
        hidden: 6,
        position_hidden: 5,
        max_len: 8,
        probe_rank: 3,
        ..DisentanglerConfig::new(E, V)
    }
}

pub fn model(seed: u64, cfg: DisentanglerConfig) -> (ParamStore, SiameseDisentangler) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = SiameseDisentangler::new(&mut store, cfg, &mut rng).unwrap();
    (store, m)
}

fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> ParseTree {
    // Random recursive tree with a random root position, relabelled.
    let root = rng.random_range(0..n);
    let mut order: Vec<usize> = (0..n).filter(|&i| i != root).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut heads = vec![0; n];
    let mut placed = vec![root];
    for &i in &order {
        let parent = placed[rng.random_range(0..placed.len())];
        heads[i] = parent + 1;
        placed.push(i);
    }
    ParseTree::from_heads(&heads).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect(),
    )
    .unwrap()
}

/// Pairs with the given source/target lengths, random token vectors, ids,
/// tags and trees.
pub fn pairs(seed: u64, lengths: &[(usize, usize)]) -> Vec<EncodedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths
        .iter()
        .enumerate()
        .map(|(k, &(ns, nt))| EncodedPair {
            id: k,
            ids_s: (0..ns).map(|_| rng.random_range(0..V)).collect(),
            ids_t: (0..nt).map(|_| rng.random_range(0..V)).collect(),
            e_s: random_tensor(&mut rng, ns, E),
            e_t: random_tensor(&mut rng, nt, E),
            upos_s: (0..ns).map(|_| rng.random_range(0..17)).collect(),
            upos_t: (0..nt).map(|_| rng.random_range(0..17)).collect(),
            tree_s: random_tree(&mut rng, ns),
            tree_t: random_tree(&mut rng, nt),
            two_way: true,
        })
        .collect()
}

pub fn stack(parts: &[&Tensor]) -> Tensor {
    let cols = parts[0].cols();
    let rows: usize = parts.iter().map(|t| t.rows()).sum();
    Tensor::new(
        vec![rows, cols],
        parts
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect(),
    )
    .unwrap()
}

/// Both sides' latents on `tape`, drawing from `noise` source side first.
pub fn infer_both(
    tape: &mut Tape,
    model: &SiameseDisentangler,
    store: &ParamStore,
    batch: &[EncodedPair],
    noise: &mut NoiseSource,
) -> (LatentOutputs, LatentOutputs) {
    let es = tape.constant(stack(&batch.iter().map(|p| &p.e_s).collect::<Vec<_>>()));
    let et = tape.constant(stack(&batch.iter().map(|p| &p.e_t).collect::<Vec<_>>()));
    let ls: Vec<usize> = batch.iter().map(|p| p.ids_s.len()).collect();
    let lt: Vec<usize> = batch.iter().map(|p| p.ids_t.len()).collect();
    let a = model.infer(tape, store, es, &ls, noise).unwrap();
    let b = model.infer(tape, store, et, &lt, noise).unwrap();
    (a, b)
}

/// Noise draws for one `infer_both` call.
pub fn record_noise(
    model: &SiameseDisentangler,
    store: &ParamStore,
    batch: &[EncodedPair],
    seed: u64,
) -> Vec<Tensor> {
    let mut noise = NoiseSource::recording(seed);
    let mut tape = Tape::new();
    infer_both(&mut tape, model, store, batch, &mut noise);
    noise.into_draws()
}

pub fn param(store: &ParamStore, name: &str) -> Tensor {
    store.get(store.id(name).unwrap()).clone()
}

pub fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n_in, n_out) = (w.rows(), w.cols());
    assert_eq!(x.len(), n_in);
    (0..n_out)
        .map(|j| {
            b.data()[j]
                + (0..n_in)
                    .map(|i| x[i] * w.data()[i * n_out + j])
                    .sum::<f64>()
        })
        .collect()
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

pub fn mlp(store: &ParamStore, name: &str, layers: usize, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in 0..layers {
        h = affine(
            &h,
            &param(store, &format!("{name}.{l}.w")),
            &param(store, &format!("{name}.{l}.b")),
        );
        if l + 1 < layers {
            h.iter_mut().for_each(|v| *v = v.tanh());
        }
    }
    h
}

/// Bag-of-words NLL of each sentence from its `[y_b; z_b]` row.
pub fn bow_oracle(store: &ParamStore, y: &Tensor, z: &Tensor, sentences: &[&[usize]]) -> f64 {
    let (w, b) = (
        param(store, "s2dm.decoder.w"),
        param(store, "s2dm.decoder.b"),
    );
    sentences
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let lp = log_softmax(&affine(&concat(y.row(k), z.row(k)), &w, &b));
            -s.iter().map(|&t| lp[t]).sum::<f64>()
        })
        .sum()
}

/// KL(vMF(κ) on S^{d-1} || uniform) by Simpson quadrature in θ, where the
/// density of θ is proportional to e^{κ cos θ} sin^{d-2} θ.
pub fn kl_vmf_quadrature(kappa: f64, d: usize) -> f64 {
    let n = 4000;
    let h = std::f64::consts::PI / n as f64;
    let simpson = |f: &dyn Fn(f64) -> f64| {
        let mut s = f(0.0) + f(std::f64::consts::PI);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        s * h / 3.0
    };
    let base = |t: f64| t.sin().powi(d as i32 - 2);
    let tilt = |t: f64| (kappa * (t.cos() - 1.0)).exp() * base(t);
    let z_kappa = simpson(&tilt);
    let z_zero = simpson(&base);
    let mean_cos = simpson(&|t| t.cos() * tilt(t)) / z_kappa;
    kappa * mean_cos - kappa - (z_kappa / z_zero).ln()
}

pub fn kl_oracle(mu_beta: &Tensor, sigma2: &Tensor, kappa: &Tensor) -> f64 {
    let gauss: f64 = mu_beta
        .data()
        .iter()
        .zip(sigma2.data())
        .map(|(m, s)| 0.5 * (s + m * m - 1.0 - s.ln()))
        .sum();
    let vmf: f64 = kappa
        .data()
        .iter()
        .map(|&k| kl_vmf_quadrature(k, mu_beta.cols()))
        .sum();
    gauss + vmf
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
        * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Margin loss with exhaustive hardest-negative search: for every pair all
/// eligible candidates are scored and the best kept.
pub fn sdl_oracle(ys: &Tensor, yt: &Tensor, flags: &[bool], margin: f64) -> (f64, usize) {
    let b = ys.rows();
    let (mut total, mut skipped) = (0.0, 0);
    for p in 0..b {
        let cands: Vec<usize> = (0..b).filter(|&c| c != p && flags[c]).collect();
        if cands.is_empty() {
            skipped += 1;
            continue;
        }
        let mut best_t = f64::NEG_INFINITY;
        let mut best_s = f64::NEG_INFINITY;
        for &c in &cands {
            best_t = best_t.max(cos(ys.row(p), yt.row(c)));
            best_s = best_s.max(cos(ys.row(c), yt.row(p)));
        }
        let pos = cos(ys.row(p), yt.row(p));
        total += (margin - pos + best_t).max(0.0) + (margin - pos + best_s).max(0.0);
    }
    (total, skipped)
}

pub fn wpl_oracle(store: &ParamStore, e: &Tensor, zh: &Tensor, lengths: &[usize]) -> f64 {
    let mut off = 0;
    let mut total = 0.0;
    for &n in lengths {
        let mut s = 0.0;
        for i in 0..n {
            let lp = log_softmax(&mlp(
                store,
                "s2dm.position",
                3,
                &concat(e.row(off + i), zh.row(off + i)),
            ));
            s -= lp[i];
        }
        total += s / n as f64;
        off += n;
    }
    total
}

pub fn pos_oracle(store: &ParamStore, e: &Tensor, zh: &Tensor, tags: &[usize]) -> f64 {
    let (w, b) = (param(store, "s2dm.tagger.w"), param(store, "s2dm.tagger.b"));
    (0..tags.len())
        .map(|i| -log_softmax(&affine(&concat(e.row(i), zh.row(i)), &w, &b))[tags[i]])
        .sum()
}

/// Path lengths by breadth-first search over the undirected head graph.
pub fn bfs_distances(heads: &[usize]) -> Vec<Vec<usize>> {
    let n = heads.len();
    let mut adj = vec![Vec::new(); n];
    for (i, &h) in heads.iter().enumerate() {
        if h > 0 {
            adj[i].push(h - 1);
            adj[h - 1].push(i);
        }
    }
    (0..n)
        .map(|s| {
            let mut d = vec![usize::MAX; n];
            d[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if d[v] == usize::MAX {
                        d[v] = d[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            d
        })
        .collect()
}

/// Structural probe loss over every ordered token pair of every sentence.
pub fn stl_oracle(store: &ParamStore, e: &Tensor, zh: &Tensor, heads: &[&[usize]]) -> f64 {
    let b = param(store, "s2dm.probe");
    let project = |h: &[f64]| -> Vec<f64> {
        (0..b.rows())
            .map(|r| b.row(r).iter().zip(h).map(|(x, y)| x * y).sum())
            .collect()
    };
    let mut off = 0;
    let mut total = 0.0;
    for hs in heads {
        let n = hs.len();
        let dist = bfs_distances(hs);
        let root = hs.iter().position(|&h| h == 0).unwrap();
        let p: Vec<Vec<f64>> = (0..n)
            .map(|i| project(&concat(e.row(off + i), zh.row(off + i))))
            .collect();
        for i in 0..n {
            let sq: f64 = p[i].iter().map(|x| x * x).sum();
            total += (dist[root][i] as f64 - sq).abs();
            for j in 0..n {
                if i != j {
                    let db: f64 = p[i].iter().zip(&p[j]).map(|(a, c)| (a - c) * (a - c)).sum();
                    total += (dist[i][j] as f64 - db).abs();
                }
            }
        }
        off += n;
    }
    total
}

/// `(name, library value, oracle value)` for every loss on one fixture.
pub fn loss_oracle_pairs(seed: u64) -> Vec<(&'static str, f64, f64)> {
    use s2dm::disentangler::{
        loss_crl, loss_kl, loss_pos, loss_reconstruction, loss_sdl, loss_stl, loss_wpl,
    };
    let (store, model) = model(seed, config());
    let batch = pairs(seed + 100, &[(3, 4), (4, 3), (2, 5)]);
    let draws = record_noise(&model, &store, &batch, seed + 200);
    let mut tape = Tape::new();
    let (ls, lt) = infer_both(
        &mut tape,
        &model,
        &store,
        &batch,
        &mut NoiseSource::replay(draws),
    );
    let xs: Vec<&[usize]> = batch.iter().map(|p| p.ids_s.as_slice()).collect();
    let xt: Vec<&[usize]> = batch.iter().map(|p| p.ids_t.as_slice()).collect();
    let v = |tape: &Tape, x: s2dm::tensor::Var| tape.value(x).clone();
    let (ys, zs, yt, zt) = (
        v(&tape, ls.y_pooled),
        v(&tape, ls.z_pooled),
        v(&tape, lt.y_pooled),
        v(&tape, lt.z_pooled),
    );
    let mut out = Vec::new();

    let rl = loss_reconstruction(&mut tape, &model, &store, &ls, &lt, &xs, &xt).unwrap();
    out.push((
        "rl",
        tape.value(rl).item(),
        bow_oracle(&store, &ys, &zs, &xs) + bow_oracle(&store, &yt, &zt, &xt),
    ));
    let crl = loss_crl(&mut tape, &model, &store, &ls, &lt, &xs, &xt).unwrap();
    out.push((
        "crl",
        tape.value(crl).item(),
        bow_oracle(&store, &yt, &zs, &xs) + bow_oracle(&store, &ys, &zt, &xt),
    ));
    let kl = loss_kl(&mut tape, &ls, &lt).unwrap();
    let want: f64 = [&ls, &lt]
        .iter()
        .map(|l| {
            kl_oracle(
                tape.value(l.mu_beta),
                tape.value(l.sigma2),
                tape.value(l.kappa),
            )
        })
        .sum();
    out.push(("kl", tape.value(kl).item(), want));
    let flags = [true, false, true];
    let sdl = loss_sdl(&mut tape, ls.y_pooled, lt.y_pooled, &flags, 0.4);
    out.push((
        "sdl",
        tape.value(sdl.loss).item(),
        sdl_oracle(&ys, &yt, &flags, 0.4).0,
    ));

    let (mut wpl, mut wpl_want, mut pos, mut pos_want, mut stl, mut stl_want) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (l, source) in [(&ls, true), (&lt, false)] {
        let (e, zh) = (v(&tape, l.e), v(&tape, l.z_h));
        let tags: Vec<&[usize]> = batch
            .iter()
            .map(|p| {
                if source {
                    p.upos_s.as_slice()
                } else {
                    p.upos_t.as_slice()
                }
            })
            .collect();
        let trees: Vec<&ParseTree> = batch
            .iter()
            .map(|p| if source { &p.tree_s } else { &p.tree_t })
            .collect();
        let flat: Vec<usize> = tags.iter().flat_map(|t| t.iter().copied()).collect();
        let heads: Vec<&[usize]> = trees.iter().map(|t| t.heads()).collect();
        let w = loss_wpl(&mut tape, &model, &store, l.e, l.z_h, &l.lengths).unwrap();
        wpl += tape.value(w).item();
        wpl_want += wpl_oracle(&store, &e, &zh, &l.lengths);
        let p = loss_pos(&mut tape, &model, &store, l.e, l.z_h, &tags).unwrap();
        pos += tape.value(p).item();
        pos_want += pos_oracle(&store, &e, &zh, &flat);
        let s = loss_stl(&mut tape, &model, &store, l.e, l.z_h, &trees).unwrap();
        stl += tape.value(s).item();
        stl_want += stl_oracle(&store, &e, &zh, &heads);
    }
    out.push(("wpl", wpl, wpl_want));
    out.push(("pos", pos, pos_want));
    out.push(("stl", stl, stl_want));
    out
}
