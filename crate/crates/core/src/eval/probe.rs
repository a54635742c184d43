use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::spearman;
use crate::data::ParseTree;
use crate::disentangler::structural_probe_loss;
use crate::nn::randn;
use crate::tensor::{Adam, ParamStore, Tape, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct ProbeOptions {
    pub rank: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            rank: 64,
            steps: 200,
            lr: 1e-2,
            batch_size: 32,
            seed: 0,
        }
    }
}

fn check(vectors: &[Tensor], trees: &[ParseTree]) -> Result<()> {
    if vectors.len() != trees.len() || vectors.is_empty() {
        return Err(Error::contract(
            "probe needs one tree per nonempty vector block",
        ));
    }
    for (v, t) in vectors.iter().zip(trees) {
        if v.rows() != t.len() {
            return Err(Error::contract(format!(
                "{} token vectors for a {}-token tree",
                v.rows(),
                t.len()
            )));
        }
    }
    Ok(())
}

/// Per-column root mean square over all rows (1 for all-zero columns).
fn column_rms(vectors: &[Tensor], m: usize) -> Vec<f64> {
    let mut acc = vec![0.0; m];
    let mut rows = 0;
    for v in vectors {
        for i in 0..v.rows() {
            for (a, x) in acc.iter_mut().zip(v.row(i)) {
                *a += x * x;
            }
        }
        rows += v.rows();
    }
    acc.into_iter()
        .map(|a| {
            let r = (a / rows as f64).sqrt();
            if r > 0.0 {
                r
            } else {
                1.0
            }
        })
        .collect()
}

fn scale_columns(v: &Tensor, inv: &[f64]) -> Tensor {
    let mut out = v.clone();
    let m = inv.len();
    for (k, x) in out.data_mut().iter_mut().enumerate() {
        *x *= inv[k % m];
    }
    out
}

/// Fits a `[rank, m]` structural probe to per-token vectors with Adam on the
/// depth-plus-distance objective, averaged over sentences. Columns are
/// rescaled to unit RMS while fitting; the returned matrix applies to the
/// raw vectors.
pub fn fit_probe(vectors: &[Tensor], trees: &[ParseTree], opts: &ProbeOptions) -> Result<Tensor> {
    check(vectors, trees)?;
    let m = vectors[0].cols();
    if vectors.iter().any(|v| v.cols() != m) {
        return Err(Error::contract("probe vectors disagree in width"));
    }
    let inv: Vec<f64> = column_rms(vectors, m).iter().map(|r| 1.0 / r).collect();
    let scaled: Vec<Tensor> = vectors.iter().map(|v| scale_columns(v, &inv)).collect();
    let vectors = &scaled;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = ParamStore::new();
    let b = store.add(
        "probe",
        randn(&[opts.rank, m], (1.0 / m as f64).sqrt(), &mut rng),
    )?;
    let mut adam = Adam::new(opts.lr);
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    let mut cursor = order.len();
    for _ in 0..opts.steps {
        let mut picked = Vec::with_capacity(opts.batch_size);
        while picked.len() < opts.batch_size.min(vectors.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }
        let rows: Vec<&Tensor> = picked.iter().map(|&i| &vectors[i]).collect();
        let batch_trees: Vec<&ParseTree> = picked.iter().map(|&i| &trees[i]).collect();
        let mut tape = Tape::new();
        let h = tape.constant(crate::disentangler::stack_rows(&rows)?);
        let bv = tape.param(&store, b);
        let bt = tape.transpose(bv);
        let proj = tape.matmul(h, bt);
        let loss = structural_probe_loss(&mut tape, proj, &batch_trees)?;
        let loss = tape.scale(loss, 1.0 / picked.len() as f64);
        let grads = tape.backward(loss)?;
        adam.step(&mut store, &grads)?;
    }
    let mut fitted = store.get(b).clone();
    let mut scaled_back = fitted.clone();
    for r in 0..opts.rank {
        for (j, w) in inv.iter().enumerate() {
            scaled_back.data_mut()[r * m + j] = fitted.row(r)[j] * w;
        }
    }
    std::mem::swap(&mut fitted, &mut scaled_back);
    Ok(fitted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeQuality {
    pub depth_spearman: f64,
    pub distance_spearman: f64,
    /// Set when a ranking was constant and its correlation reported as 0.
    pub degenerate: bool,
    pub tokens: usize,
    pub pairs: usize,
}

/// Spearman correlations of predicted against gold depths (over tokens) and
/// distances (over within-sentence pairs `i < j`).
pub fn probe_scores(
    pred_depth: &[f64],
    gold_depth: &[f64],
    pred_dist: &[f64],
    gold_dist: &[f64],
) -> Result<ProbeQuality> {
    let mut degenerate = false;
    let mut rho = |a: &[f64], b: &[f64]| match spearman(a, b) {
        Ok(r) => Ok(r),
        Err(Error::Undefined(_)) => {
            degenerate = true;
            Ok(0.0)
        }
        Err(e) => Err(e),
    };
    let depth_spearman = rho(pred_depth, gold_depth)?;
    let distance_spearman = rho(pred_dist, gold_dist)?;
    Ok(ProbeQuality {
        depth_spearman,
        distance_spearman,
        degenerate,
        tokens: pred_depth.len(),
        pairs: pred_dist.len(),
    })
}

/// Applies a fitted probe `b` to held-out vectors and scores it.
pub fn probe_quality(b: &Tensor, vectors: &[Tensor], trees: &[ParseTree]) -> Result<ProbeQuality> {
    check(vectors, trees)?;
    let (k, m) = (b.rows(), b.cols());
    let (mut pd, mut gd, mut pp, mut gp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (v, t) in vectors.iter().zip(trees) {
        if v.cols() != m {
            return Err(Error::contract(format!(
                "probe expects width {m}, got {}",
                v.cols()
            )));
        }
        let proj: Vec<Vec<f64>> = (0..v.rows())
            .map(|i| {
                (0..k)
                    .map(|r| b.row(r).iter().zip(v.row(i)).map(|(x, y)| x * y).sum())
                    .collect()
            })
            .collect();
        for (i, p) in proj.iter().enumerate() {
            pd.push(p.iter().map(|x| x * x).sum());
            gd.push(t.depths()[i] as f64);
            for j in i + 1..proj.len() {
                pp.push(p.iter().zip(&proj[j]).map(|(x, y)| (x - y) * (x - y)).sum());
                gp.push(t.distance(i, j) as f64);
            }
        }
    }
    probe_scores(&pd, &gd, &pp, &gp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn exact_predictions_score_one() {
        let q = probe_scores(
            &[0.0, 1.0, 2.0],
            &[0.0, 1.0, 2.0],
            &[1.0, 2.0, 1.0, 3.0],
            &[1.0, 2.0, 1.0, 3.0],
        )
        .unwrap();
        assert!((q.depth_spearman - 1.0).abs() < 1e-12);
        assert!((q.distance_spearman - 1.0).abs() < 1e-12);
        assert!(!q.degenerate);
    }

    #[test]
    fn constant_predictions_are_flagged() {
        let q = probe_scores(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(q.depth_spearman, 0.0);
        assert!(q.degenerate);
    }

    /// Row i marks the tokens on the path from i up to (excluding) the root,
    /// so squared norms are depths and squared differences are tree distances.
    fn path_features(t: &ParseTree, width: usize) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..t.len())
            .map(|i| {
                let mut v = vec![0.0; width];
                let mut k = i;
                while t.heads()[k] != 0 {
                    v[k] = 1.0;
                    k = t.heads()[k] - 1;
                }
                v
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn path_features_are_an_exact_probe_target() {
        let t = ParseTree::from_heads(&[2, 0, 2, 5, 3]).unwrap();
        let v = path_features(&t, 6);
        let q = probe_quality(
            &Tensor::new(
                vec![6, 6],
                (0..36).map(|k| (k % 7 == 0) as u8 as f64).collect(),
            )
            .unwrap(),
            &[v],
            &[t],
        )
        .unwrap();
        assert!(
            (q.depth_spearman - 1.0).abs() < 1e-12 && (q.distance_spearman - 1.0).abs() < 1e-12
        );
    }

    #[test]
    fn fitted_probe_recovers_tree_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trees: Vec<ParseTree> = (0..60)
            .map(|_| {
                let n = rng.random_range(3..9);
                let heads: Vec<usize> = (0..n)
                    .map(|i| if i == 0 { 0 } else { rng.random_range(1..=i) })
                    .collect();
                ParseTree::from_heads(&heads).unwrap()
            })
            .collect();
        let vectors: Vec<Tensor> = trees.iter().map(|t| path_features(t, 8)).collect();
        let b = fit_probe(
            &vectors[..40],
            &trees[..40],
            &ProbeOptions {
                rank: 8,
                ..ProbeOptions::default()
            },
        )
        .unwrap();
        let q = probe_quality(&b, &vectors[40..], &trees[40..]).unwrap();
        assert!(q.depth_spearman > 0.9 && q.distance_spearman > 0.9, "{q:?}");
    }

    #[test]
    fn probe_recovers_an_embedded_tree_geometry() {
        let trees: Vec<ParseTree> = [vec![0, 1, 2], vec![2, 0, 2, 3], vec![0, 1, 1, 3]]
            .iter()
            .map(|h| ParseTree::from_heads(h).unwrap())
            .collect();
        // Depth one-hot features carry enough to rank depths.
        let vectors: Vec<Tensor> = trees
            .iter()
            .map(|t| {
                let rows: Vec<Vec<f64>> = t
                    .depths()
                    .iter()
                    .map(|&d| (0..4).map(|j| (j == d) as u8 as f64).collect())
                    .collect();
                Tensor::from_rows(&rows).unwrap()
            })
            .collect();
        let opts = ProbeOptions {
            rank: 4,
            steps: 300,
            ..ProbeOptions::default()
        };
        let b = fit_probe(&vectors, &trees, &opts).unwrap();
        let q = probe_quality(&b, &vectors, &trees).unwrap();
        assert!(q.depth_spearman > 0.9, "{q:?}");
    }
}
