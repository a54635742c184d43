//! Analysis metrics: STS correlation, retrieval, structural probes,
//! constituent consistency and PCA export.

mod consistency;
mod pca;
mod probe;
mod stats;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use consistency::constituent_consistency;
pub use pca::{pca_2d, pca_export, Pca2};
pub use probe::{fit_probe, probe_quality, probe_scores, ProbeOptions, ProbeQuality};
pub use stats::{cosine, pearson, ranks, spearman};

use crate::{Error, Result};

/// One metric value with the cohort it was measured on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub langs: String,
    /// `y`, `z` or `span`.
    pub vector: String,
    pub model: String,
    pub samples: usize,
}

impl EvalReport {
    pub fn new(
        metric: impl Into<String>,
        value: f64,
        langs: impl Into<String>,
        vector: impl Into<String>,
        model: impl Into<String>,
        samples: usize,
    ) -> Result<Self> {
        let metric = metric.into();
        if samples == 0 {
            return Err(Error::contract(format!("{metric}: no samples")));
        }
        if !value.is_finite() {
            return Err(Error::numeric("eval", format!("{metric} is {value}")));
        }
        Ok(EvalReport {
            metric,
            value,
            langs: langs.into(),
            vector: vector.into(),
            model: model.into(),
            samples,
        })
    }
}

pub fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    crate::data::write_jsonl(path, reports)
}

/// Pearson correlation between `cosine(u_i, v_i)` and the gold scores.
pub fn sts_pearson(pairs: &[(Vec<f64>, Vec<f64>)], gold: &[f64]) -> Result<f64> {
    if pairs.len() != gold.len() {
        return Err(Error::contract(format!(
            "{} pairs for {} scores",
            pairs.len(),
            gold.len()
        )));
    }
    if pairs.len() < 3 {
        return Err(Error::contract("STS needs at least 3 pairs"));
    }
    let sims: Vec<f64> = pairs.iter().map(|(u, v)| cosine(u, v)).collect();
    pearson(&sims, gold)
}

/// Fraction of sources whose cosine-nearest target is the aligned one.
/// Ties count as misses unless the true target is the first maximum.
pub fn retrieval_accuracy(sources: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if sources.len() != targets.len() || sources.is_empty() {
        return Err(Error::contract(
            "retrieval needs equal nonempty aligned sets",
        ));
    }
    let hits = sources
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            let mut best = (0, f64::NEG_INFINITY);
            for (j, t) in targets.iter().enumerate() {
                let c = cosine(s, t);
                if c > best.1 {
                    best = (j, c);
                }
            }
            best.0 == *i
        })
        .count();
    Ok(hits as f64 / sources.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(i: usize, n: usize) -> Vec<f64> {
        (0..n).map(|j| (i == j) as u8 as f64).collect()
    }

    #[test]
    fn sts_tracks_gold_sign() {
        let gold = [0.0, 3.0, 5.0];
        let angles = [1.2, 0.6, 0.0];
        let pairs: Vec<_> = angles
            .iter()
            .map(|&a: &f64| (vec![1.0, 0.0], vec![a.cos(), a.sin()]))
            .collect();
        assert!(sts_pearson(&pairs, &gold).unwrap() > 0.9);
        let flipped: Vec<f64> = gold.iter().map(|g| -g).collect();
        assert!(sts_pearson(&pairs, &flipped).unwrap() < -0.9);
        assert!(matches!(
            sts_pearson(&pairs, &[1.0, 1.0, 1.0]),
            Err(Error::Undefined(_))
        ));
        assert!(sts_pearson(&pairs[..2], &gold[..2]).is_err());
    }

    #[test]
    fn sts_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..50)
            .map(|_| {
                let u = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                (u, v)
            })
            .collect();
        let gold: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..5.0)).collect();
        let sims: Vec<f64> = pairs
            .iter()
            .map(|(u, v)| {
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                dot / (u.iter().map(|a| a * a).sum::<f64>() * v.iter().map(|a| a * a).sum::<f64>())
                    .sqrt()
            })
            .collect();
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let (ms, mg) = (mean(&sims), mean(&gold));
        let cov: f64 = sims
            .iter()
            .zip(&gold)
            .map(|(a, b)| (a - ms) * (b - mg))
            .sum();
        let vs: f64 = sims.iter().map(|a| (a - ms).powi(2)).sum();
        let vg: f64 = gold.iter().map(|b| (b - mg).powi(2)).sum();
        let oracle = cov / (vs * vg).sqrt();
        assert!((sts_pearson(&pairs, &gold).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn retrieval_edge_cases() {
        let v: Vec<Vec<f64>> = (0..5).map(|i| unit(i, 5)).collect();
        assert_eq!(retrieval_accuracy(&v, &v).unwrap(), 1.0);
        let mut shifted = v.clone();
        shifted.rotate_left(1);
        assert_eq!(retrieval_accuracy(&v, &shifted).unwrap(), 0.0);
        assert!(retrieval_accuracy(&v, &v[..4]).is_err());
    }

    #[test]
    fn reports_reject_empty_cohorts() {
        assert!(EvalReport::new("em", 0.5, "l1-l2", "span", "s2dm", 0).is_err());
        assert!(EvalReport::new("em", f64::NAN, "l1-l2", "span", "s2dm", 3).is_err());
        assert!(EvalReport::new("em", 0.5, "l1-l2", "span", "s2dm", 3).is_ok());
    }
}
