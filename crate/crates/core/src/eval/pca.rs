use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Two leading principal components of row vectors.
#[derive(Clone, Debug)]
pub struct Pca2 {
    pub coords: Vec<[f64; 2]>,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Unit loadings of the two components; the largest-magnitude entry of
    /// each is positive.
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
}

pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<Pca2> {
    let n = vectors.len();
    if n < 3 {
        return Err(Error::contract("PCA needs at least 3 vectors"));
    }
    let d = vectors[0].len();
    if d < 2 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::contract(
            "PCA vectors must share a width of at least 2",
        ));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    if cov.trace() <= 1e-300 {
        return Err(Error::Undefined("PCA of zero-variance data".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let component = |k: usize| {
        let mut c: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let big = c
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if big < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        c
    };
    let components = [component(0), component(1)];
    let coords = (0..n)
        .map(|i| {
            let row = x.row(i);
            [0, 1].map(|k| row.iter().zip(&components[k]).map(|(a, b)| a * b).sum())
        })
        .collect();
    Ok(Pca2 {
        coords,
        eigenvalues: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        components,
        mean,
    })
}

/// Writes `label,lang,pc1,pc2` rows for the projected vectors.
pub fn pca_export(vectors: &[Vec<f64>], labels: &[(String, String)], path: &Path) -> Result<Pca2> {
    if labels.len() != vectors.len() {
        return Err(Error::contract("one label per vector"));
    }
    let pca = pca_2d(vectors)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(["label", "lang", "pc1", "pc2"])
        .map_err(io)?;
    for ((label, lang), c) in labels.iter().zip(&pca.coords) {
        w.write_record([
            label.as_str(),
            lang.as_str(),
            &c[0].to_string(),
            &c[1].to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(pca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn planar_centered_points_are_rotated() {
        let pts = vec![
            vec![1.0, 2.0],
            vec![-1.0, 0.5],
            vec![0.5, -1.5],
            vec![-0.5, -1.0],
        ];
        let pca = pca_2d(&pts).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert!(
                    (dist(&pts[i], &pts[j]) - dist(&pca.coords[i], &pca.coords[j])).abs() < 1e-9
                );
            }
        }
        for c in &pca.components {
            let big = c
                .iter()
                .copied()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn duplicated_clouds_project_identically() {
        let base = vec![
            vec![0.0, 1.0, 2.0],
            vec![3.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![2.0, 0.0, 5.0],
        ];
        let mut all = base.clone();
        all.extend(base.iter().cloned());
        let pca = pca_2d(&all).unwrap();
        for i in 0..base.len() {
            assert_eq!(pca.coords[i], pca.coords[i + base.len()]);
        }
    }

    #[test]
    fn reconstruction_error_equals_eigen_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let a: f64 = rng.random_range(-3.0..3.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                vec![
                    a,
                    0.5 * a + b,
                    rng.random_range(-0.3..0.3),
                    b - a,
                    rng.random_range(-0.1..0.1),
                ]
            })
            .collect();
        let pca = pca_2d(&pts).unwrap();
        let mut err = 0.0;
        for (p, c) in pts.iter().zip(&pca.coords) {
            for j in 0..5 {
                let rec = pca.mean[j] + c[0] * pca.components[0][j] + c[1] * pca.components[1][j];
                err += (p[j] - rec).powi(2);
            }
        }
        let tail: f64 = pca.eigenvalues[2..].iter().sum::<f64>() * 99.0;
        assert!((err - tail).abs() < 1e-8, "{err} vs {tail}");
    }

    #[test]
    fn degenerate_inputs() {
        assert!(pca_2d(&vec![vec![1.0, 1.0]; 4]).is_err());
        assert!(pca_2d(&[vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn csv_has_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca.csv");
        let pts = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]];
        let labels: Vec<(String, String)> = (0..3)
            .map(|i| (format!("s{i}"), "l1".to_string()))
            .collect();
        pca_export(&pts, &labels, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("label,lang,pc1,pc2\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
