//! Two-component PCA.

use nalgebra::{DMatrix, SymmetricEigen};

use super::Projector;
use crate::error::{Error, Result};

/// Projects centred data onto its top two principal directions. Each
/// direction's largest-magnitude loading is made positive, so the output is
/// deterministic. The seed is unused.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Pca;

impl Projector for Pca {
    fn name(&self) -> &str {
        "pca"
    }

    fn fit_transform(&self, data: &[&[f64]], _seed: u64) -> Result<Vec<[f64; 2]>> {
        let n = data.len();
        if n < 3 {
            return Err(Error::DegenerateData(format!(
                "PCA needs at least 3 points, got {n}"
            )));
        }
        let d = data[0].len();
        if data.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("PCA rows differ in length".into()));
        }
        let mut mean = vec![0.0; d];
        for r in data {
            mean.iter_mut().zip(*r).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let x = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
        if x.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateData("all points coincide".into()));
        }
        let cov = x.transpose() * &x / (n as f64);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let axes: Vec<Vec<f64>> = order
            .iter()
            .take(2)
            .map(|&c| {
                let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
                let pivot = v
                    .iter()
                    .copied()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                    .map(|(_, x)| x)
                    .unwrap_or(1.0);
                if pivot < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                v
            })
            .collect();
        let coord = |i: usize, axis: Option<&Vec<f64>>| match axis {
            Some(a) => x.row(i).iter().zip(a).map(|(p, q)| p * q).sum(),
            None => 0.0,
        };
        Ok((0..n)
            .map(|i| [coord(i, axes.first()), coord(i, axes.get(1))])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn planar_data_keeps_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = [1.0, 2.0, -1.0];
        let w = [0.5, -0.3, 0.8];
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                (0..3).map(|k| 0.7 + a * u[k] + b * w[k]).collect()
            })
            .collect();
        let xy = Pca.fit_transform(&rows(&pts), 0).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d3: f64 = (0..3)
                    .map(|k| (pts[i][k] - pts[j][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let d2 = ((xy[i][0] - xy[j][0]).powi(2) + (xy[i][1] - xy[j][1]).powi(2)).sqrt();
                assert!((d3 - d2).abs() <= 1e-6, "{d3} vs {d2}");
            }
        }
    }

    #[test]
    fn shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [3, 7, 50] {
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let a = Pca.fit_transform(&rows(&pts), 4).unwrap();
            let b = Pca.fit_transform(&rows(&pts), 4).unwrap();
            assert_eq!(a.len(), n);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sign_convention_makes_dominant_loading_positive() {
        // Points spread along -x: the first axis must still point to +x.
        let pts = vec![
            vec![-2.0, 0.0],
            vec![0.0, 0.1],
            vec![2.0, -0.1],
            vec![4.0, 0.0],
        ];
        let xy = Pca.fit_transform(&rows(&pts), 0).unwrap();
        assert!(xy[3][0] > xy[0][0]);
    }

    #[test]
    fn degenerate_inputs() {
        let same = vec![vec![1.0, 2.0]; 4];
        assert!(matches!(
            Pca.fit_transform(&rows(&same), 0),
            Err(Error::DegenerateData(_))
        ));
        let two = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            Pca.fit_transform(&rows(&two), 0),
            Err(Error::DegenerateData(_))
        ));
    }
}
