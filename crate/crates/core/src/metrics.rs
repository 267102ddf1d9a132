//! Evaluation measures: categorical entropy of averaged pose predictions,
//! Gaussian Fréchet distance between point clouds, marginal total variation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport<T> {
    pub mean_probs: Vec<T>,
    /// Shannon entropy of `mean_probs`, in nats.
    pub entropy: T,
}

fn check_row<T: Scalar>(row: &[T], k: usize, i: usize) -> Result<()> {
    if row.len() != k {
        return Err(Error::Argument(format!(
            "row {i} has {} entries, expected {k}",
            row.len()
        )));
    }
    let s: T = row.iter().copied().sum();
    if row.iter().any(|&p| !(p >= T::zero())) || (s - T::one()).abs() > T::lit(1e-6) {
        return Err(Error::Argument(format!(
            "row {i} is not a probability vector"
        )));
    }
    Ok(())
}

/// Entropy `−Σ p̄ ln p̄` of the row mean.
pub fn categorical_entropy<T: Scalar>(rows: &[Vec<T>]) -> Result<EntropyReport<T>> {
    let k = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Argument("entropy needs at least one row".into()))?;
    let mut mean = vec![T::zero(); k];
    for (i, row) in rows.iter().enumerate() {
        check_row(row, k, i)?;
        for (m, &p) in mean.iter_mut().zip(row) {
            *m = *m + p;
        }
    }
    let n = T::from_usize_lossy(rows.len());
    for m in &mut mean {
        *m = *m / n;
    }
    let entropy = mean
        .iter()
        .filter(|&&p| p > T::zero())
        .map(|&p| -p * p.ln())
        .sum::<T>()
        .max(T::zero());
    Ok(EntropyReport {
        mean_probs: mean,
        entropy,
    })
}

/// Total variation `½ Σ |p − q|`.
pub fn marginal_tv<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::Argument(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(T::lit(0.5) * p.iter().zip(q).map(|(&a, &b)| (a - b).abs()).sum::<T>())
}

const FRECHET_RIDGE: f64 = 1e-6;

fn moments(points: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = points.len() as f64;
    let mut mean = DVector::zeros(d);
    for p in points {
        mean += DVector::from_column_slice(p);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let c = DVector::from_column_slice(p) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    cov += DMatrix::identity(d, d) * FRECHET_RIDGE;
    (mean, cov)
}

fn sqrt_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two point sets:
/// `‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2 (Σ_a^{½} Σ_b Σ_a^{½})^{½})`, with
/// both covariances ridged by `1e-6·I`.
pub fn gaussian_frechet<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>]) -> Result<T> {
    let d = a
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Argument("empty sample set".into()))?;
    if d == 0 || a.iter().chain(b).any(|p| p.len() != d) {
        return Err(Error::Argument(
            "sample sets must share a positive dimension".into(),
        ));
    }
    if a.len() < d + 1 || b.len() < d + 1 {
        return Err(Error::Argument(format!(
            "each sample set needs at least {} points, got {} and {}",
            d + 1,
            a.len(),
            b.len()
        )));
    }
    let to64 = |s: &[Vec<T>]| -> Vec<Vec<f64>> {
        s.iter()
            .map(|p| p.iter().map(|v| v.as_f64()).collect())
            .collect()
    };
    let (ma, ca) = moments(&to64(a), d);
    let (mb, cb) = moments(&to64(b), d);
    let ra = sqrt_psd(ca.clone());
    let inner = &ra * &cb * &ra;
    let cross = sqrt_psd((&inner + inner.transpose()) * 0.5);
    let dist = (ma - mb).norm_squared() + (ca + cb - cross * 2.0).trace();
    Ok(T::lit(dist.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn entropy_cases() {
        let u = vec![vec![1.0 / 3.0; 3]; 5];
        assert!((categorical_entropy(&u).unwrap().entropy - 3f64.ln()).abs() < 1e-12);
        let one_hot = vec![vec![0.0, 1.0, 0.0]; 4];
        assert_eq!(categorical_entropy(&one_hot).unwrap().entropy, 0.0);
        let mixed = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = categorical_entropy(&mixed).unwrap();
        assert_eq!(r.mean_probs, vec![0.5, 0.5]);
        assert!((r.entropy - 2f64.ln()).abs() < 1e-15);
        assert!(categorical_entropy::<f64>(&[]).is_err());
        assert!(categorical_entropy(&[vec![0.5, 0.6]]).is_err());
    }

    proptest! {
        #[test]
        fn entropy_bounded_and_permutation_invariant(raw in proptest::collection::vec(0.0f64..1.0, 4)) {
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            let mut p: Vec<f64> = raw.iter().map(|v| v / s).collect();
            p[3] = 1.0 - p[..3].iter().sum::<f64>();
            let e = categorical_entropy(&[p.clone()]).unwrap().entropy;
            prop_assert!(e >= 0.0 && e <= 4f64.ln() + 1e-12);
            let rev: Vec<f64> = p.iter().rev().copied().collect();
            prop_assert!((categorical_entropy(&[rev]).unwrap().entropy - e).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_cases() {
        assert_eq!(marginal_tv(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(marginal_tv(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((marginal_tv(&[0.8f64, 0.2], &[0.5, 0.5]).unwrap() - 0.3).abs() < 1e-15);
        assert!(marginal_tv(&[1.0], &[0.5, 0.5]).is_err());
    }

    fn gaussian_cloud(mean: [f64; 2], n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| {
                let z: Vec<f64> = rng::standard_normal_vec(&mut r, 2);
                vec![mean[0] + z[0], mean[1] + z[1]]
            })
            .collect()
    }

    #[test]
    fn frechet_cases() {
        let a = gaussian_cloud([0.0, 0.0], 50, 1);
        assert!(gaussian_frechet(&a, &a).unwrap().abs() < 1e-9);
        let shifted: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + 3.0, p[1] + 4.0]).collect();
        assert!((gaussian_frechet(&a, &shifted).unwrap() - 25.0).abs() < 1e-6);
        let big_a = gaussian_cloud([0.0, 0.0], 10_000, 2);
        let big_b = gaussian_cloud([3.0, 4.0], 10_000, 3);
        assert!((gaussian_frechet(&big_a, &big_b).unwrap() - 25.0).abs() < 0.5);
        assert!(gaussian_frechet(&a[..2], &a).is_err());
    }

    #[test]
    fn frechet_symmetric() {
        let a = gaussian_cloud([0.0, 1.0], 200, 4);
        let b: Vec<Vec<f64>> = gaussian_cloud([1.0, 0.0], 200, 5)
            .into_iter()
            .map(|p| vec![2.0 * p[0], 0.5 * p[1]])
            .collect();
        let ab = gaussian_frechet(&a, &b).unwrap();
        let ba = gaussian_frechet(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9 * ab.max(1.0));
    }
}
