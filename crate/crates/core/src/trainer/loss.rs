//! Multi-view InfoNCE.
//!
//! For B view pairs with embeddings `z1[i]`, `z2[i]` and temperature τ,
//!
//! ```text
//! L = -(1/B) Σ_i log( exp(s_ii) / Σ_j exp(s_ij) ),   s_ij = cos(z1[i], z2[j]) / τ
//! ```
//!
//! Row log-sum-exps subtract the row maximum first; at τ = 0.05 the raw
//! exponentials overflow.

use crate::encoder::{dot, Embedding};
use crate::error::{Error, Result};

/// Cosine similarity of unit vectors (their dot product, clamped to [-1, 1]).
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> f64 {
    a.dot(b).clamp(-1.0, 1.0)
}

/// Which anchors the loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// First views anchor, second views are candidates.
    #[default]
    OneWay,
    /// Mean of both anchoring directions.
    Symmetric,
}

/// Row-major B×B matrix of `dot(z1[i], z2[j]) / tau`.
pub fn logits(z1: &[&[f64]], z2: &[&[f64]], tau: f64) -> Vec<f64> {
    let b = z1.len();
    let mut s = Vec::with_capacity(b * b);
    for a in z1 {
        for c in z2 {
            s.push(dot(a, c) / tau);
        }
    }
    s
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// One-directional loss over a B×B logit matrix.
pub fn info_nce_from_logits(s: &[f64], b: usize) -> f64 {
    let total: f64 = (0..b)
        .map(|i| {
            let row = &s[i * b..(i + 1) * b];
            log_sum_exp(row) - row[i]
        })
        .sum();
    total / b as f64
}

/// Loss and its gradient with respect to every logit.
pub fn info_nce_with_grad(s: &[f64], b: usize, direction: Direction) -> (f64, Vec<f64>) {
    let one_way = |s: &[f64]| -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; b * b];
        let mut total = 0.0;
        for i in 0..b {
            let row = &s[i * b..(i + 1) * b];
            let lse = log_sum_exp(row);
            total += lse - row[i];
            for j in 0..b {
                let p = (row[j] - lse).exp();
                grad[i * b + j] = (p - if i == j { 1.0 } else { 0.0 }) / b as f64;
            }
        }
        (total / b as f64, grad)
    };
    match direction {
        Direction::OneWay => one_way(s),
        Direction::Symmetric => {
            let (l1, g1) = one_way(s);
            let t = transpose(s, b);
            let (l2, g2t) = one_way(&t);
            let g2 = transpose(&g2t, b);
            let grad = g1.iter().zip(&g2).map(|(a, c)| 0.5 * (a + c)).collect();
            (0.5 * (l1 + l2), grad)
        }
    }
}

fn transpose(s: &[f64], b: usize) -> Vec<f64> {
    let mut t = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            t[j * b + i] = s[i * b + j];
        }
    }
    t
}

fn check_batch(z1: &[Embedding], z2: &[Embedding], tau: f64) -> Result<()> {
    if z1.len() != z2.len() || z1.is_empty() {
        return Err(Error::Dimension(format!(
            "InfoNCE needs two non-empty batches of equal size, got {} and {}",
            z1.len(),
            z2.len()
        )));
    }
    let d = z1[0].dim();
    if z1.iter().chain(z2).any(|z| z.dim() != d) {
        return Err(Error::Dimension("embeddings differ in dimension".into()));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// One-directional InfoNCE with cosine similarity.
pub fn info_nce_loss(z1: &[Embedding], z2: &[Embedding], tau: f64) -> Result<f64> {
    info_nce_loss_directed(z1, z2, tau, Direction::OneWay)
}

pub fn info_nce_loss_directed(
    z1: &[Embedding],
    z2: &[Embedding],
    tau: f64,
    direction: Direction,
) -> Result<f64> {
    check_batch(z1, z2, tau)?;
    let a: Vec<&[f64]> = z1.iter().map(|z| z.values.as_slice()).collect();
    let c: Vec<&[f64]> = z2.iter().map(|z| z.values.as_slice()).collect();
    let s = logits(&a, &c, tau);
    let b = z1.len();
    Ok(match direction {
        Direction::OneWay => info_nce_from_logits(&s, b),
        Direction::Symmetric => info_nce_with_grad(&s, b, direction).0,
    })
}

/// `log(B) - loss`, the mutual-information lower bound certified by a loss.
pub fn mi_lower_bound(loss: f64, batch_size: usize) -> f64 {
    (batch_size as f64).ln() - loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(v: &[f64]) -> Embedding {
        Embedding::normalized(v.to_vec())
    }

    /// Direct evaluation of the defining formula, no stabilization.
    fn naive(z1: &[Embedding], z2: &[Embedding], tau: f64) -> f64 {
        let b = z1.len();
        let mut total = 0.0;
        for i in 0..b {
            let num = (z1[i].dot(&z2[i]) / tau).exp();
            let den: f64 = (0..b).map(|j| (z1[i].dot(&z2[j]) / tau).exp()).sum();
            total += -(num / den).ln();
        }
        total / b as f64
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Vec<Embedding> {
        (0..b)
            .map(|_| {
                e(&(0..d)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect::<Vec<_>>())
            })
            .collect()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&e(&[1.0, 0.0]), &e(&[1.0, 0.0])), 1.0);
        assert_eq!(cosine_similarity(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])), 0.0);
        let c = cosine_similarity(&e(&[1.0, 1.0]), &e(&[1.0, 0.0]));
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
    }

    #[test]
    fn single_pair_is_exactly_zero() {
        let z = [e(&[0.3, 0.4, 0.5])];
        let w = [e(&[-0.1, 0.9, 0.2])];
        assert_eq!(info_nce_loss(&z, &w, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_pairs_oracle() {
        let z1 = [e(&[1.0, 0.0]), e(&[0.0, 1.0])];
        let l = info_nce_loss(&z1, &z1, 1.0).unwrap();
        let oracle = (1.0 + (-1.0f64).exp()).ln();
        assert!((l - oracle).abs() < 1e-12);
        assert!((l - 0.313_261_69).abs() < 1e-8);
        assert!((naive(&z1, &z1, 1.0) - l).abs() < 1e-12);
    }

    #[test]
    fn identical_batch_is_log_b() {
        let z = vec![e(&[0.6, 0.8]); 4];
        for tau in [0.05, 0.5, 1.0, 3.0] {
            let l = info_nce_loss(&z, &z, tau).unwrap();
            assert!((l - 4f64.ln()).abs() < 1e-12);
            assert!(mi_lower_bound(l, 4).abs() < 1e-12);
        }
    }

    #[test]
    fn mi_bound_examples() {
        assert!((mi_lower_bound(0.0, 64) - 4.158_883_08).abs() < 1e-8);
        assert_eq!(mi_lower_bound(0.0, 1), 0.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let a = [e(&[1.0, 0.0])];
        assert!(matches!(
            info_nce_loss(&a, &[], 1.0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            info_nce_loss(&[], &[], 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn stable_at_small_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_batch(&mut rng, 8, 16);
        // Diagonal logits reach 1/τ = 1000, past exp's overflow point.
        assert!(!naive(&z, &z, 0.001).is_finite());
        let l = info_nce_loss(&z, &z, 0.001).unwrap();
        assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = 5;
        let s: Vec<f64> = (0..b * b).map(|_| rng.random_range(-3.0..3.0)).collect();
        for dir in [Direction::OneWay, Direction::Symmetric] {
            let (_, g) = info_nce_with_grad(&s, b, dir);
            for k in 0..b * b {
                let mut p = s.clone();
                let mut m = s.clone();
                p[k] += 1e-6;
                m[k] -= 1e-6;
                let num =
                    (info_nce_with_grad(&p, b, dir).0 - info_nce_with_grad(&m, b, dir).0) / 2e-6;
                assert!((num - g[k]).abs() < 1e-8, "{dir:?} {k}: {num} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn symmetric_equals_mean_of_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z1 = random_batch(&mut rng, 6, 5);
        let z2 = random_batch(&mut rng, 6, 5);
        let sym = info_nce_loss_directed(&z1, &z2, 0.3, Direction::Symmetric).unwrap();
        let ab = info_nce_loss(&z1, &z2, 0.3).unwrap();
        let ba = info_nce_loss(&z2, &z1, 0.3).unwrap();
        assert!((sym - 0.5 * (ab + ba)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bounds_hold(seed in 0u64..10_000, b in 1usize..16, tau in 0.02f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z1 = random_batch(&mut rng, b, 8);
            let z2 = random_batch(&mut rng, b, 8);
            let l = info_nce_loss(&z1, &z2, tau).unwrap();
            prop_assert!(l >= -1e-12);
            prop_assert!(l <= (b as f64).ln() + 2.0 / tau + 1e-9);
            prop_assert!(mi_lower_bound(l, b) <= (b as f64).ln() + 1e-12);
        }

        #[test]
        fn permutation_invariant(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = 7;
            let z1 = random_batch(&mut rng, b, 6);
            let z2 = random_batch(&mut rng, b, 6);
            let mut perm: Vec<usize> = (0..b).collect();
            for i in (1..b).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let p1: Vec<Embedding> = perm.iter().map(|&i| z1[i].clone()).collect();
            let p2: Vec<Embedding> = perm.iter().map(|&i| z2[i].clone()).collect();
            let a = info_nce_loss(&z1, &z2, 0.1).unwrap();
            let c = info_nce_loss(&p1, &p2, 0.1).unwrap();
            prop_assert!((a - c).abs() < 1e-12);
        }

        #[test]
        fn temperature_folds_into_logits(seed in 0u64..10_000, tau in 0.05f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z1 = random_batch(&mut rng, 5, 4);
            let z2 = random_batch(&mut rng, 5, 4);
            let a: Vec<&[f64]> = z1.iter().map(|z| z.values.as_slice()).collect();
            let c: Vec<&[f64]> = z2.iter().map(|z| z.values.as_slice()).collect();
            let scaled: Vec<f64> = logits(&a, &c, 1.0).iter().map(|s| s / tau).collect();
            let direct = info_nce_loss(&z1, &z2, tau).unwrap();
            prop_assert!((direct - info_nce_from_logits(&scaled, 5)).abs() < 1e-12);
        }

        #[test]
        fn raising_a_positive_never_increases_loss(seed in 0u64..10_000, i in 0usize..6, bump in 0.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = 6;
            let s: Vec<f64> = (0..b * b).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut t = s.clone();
            t[i * b + i] += bump;
            prop_assert!(info_nce_from_logits(&t, b) <= info_nce_from_logits(&s, b) + 1e-12);
        }
    }
}
