//! Brute-force verifiers: grid quadrature, density convolution, central
//! finite differences and importance-sampled posterior means.
//!
//! Nothing here reuses the closed forms it is meant to check; the only
//! shared pieces are the clean density evaluation and the schedule.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::scalar::Scalar;
use crate::schedule::DiffusionSchedule;
use crate::worldmodel::PoseLabeledMixture;

#[derive(Debug, Clone, PartialEq)]
pub struct GridIntegral<T> {
    pub value: T,
    /// `|I(n) − I(n/2)|`.
    pub refinement_delta: T,
    /// Set when halving the resolution moves the estimate by ≥ 1e-3.
    pub resolution_warning: bool,
}

fn trapezoid_nd<T: Scalar, F>(f: &F, lo: &[T], hi: &[T], n: usize) -> Result<T>
where
    F: Fn(&[T]) -> T,
{
    let d = lo.len();
    let steps: Vec<T> = lo
        .iter()
        .zip(hi)
        .map(|(&a, &b)| (b - a) / T::from_usize_lossy(n - 1))
        .collect();
    let mut idx = vec![0usize; d];
    let mut x = vec![T::zero(); d];
    let mut total = T::zero();
    loop {
        let mut w = T::one();
        for k in 0..d {
            x[k] = lo[k] + steps[k] * T::from_usize_lossy(idx[k]);
            if idx[k] == 0 || idx[k] == n - 1 {
                w = w * T::lit(0.5);
            }
        }
        let v = f(&x);
        if !v.is_finite() {
            return Err(Error::Numeric {
                t: 0,
                detail: format!("non-finite integrand {v} at {x:?}"),
            });
        }
        total = total + w * v;
        let mut k = 0;
        loop {
            if k == d {
                let vol: T = steps.iter().copied().fold(T::one(), |a, b| a * b);
                return Ok(total * vol);
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Tensor-product trapezoidal rule over the box `[lo, hi]`.
pub fn grid_integrate<T: Scalar, F>(
    f: F,
    lo: &[T],
    hi: &[T],
    points_per_axis: usize,
) -> Result<GridIntegral<T>>
where
    F: Fn(&[T]) -> T,
{
    if points_per_axis < 16 {
        return Err(Error::Argument(format!(
            "grid_integrate needs >= 16 points per axis, got {points_per_axis}"
        )));
    }
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(Error::Argument(
            "box bounds must have equal, nonzero length".into(),
        ));
    }
    if lo.iter().chain(hi).any(|v| !v.is_finite()) || lo.iter().zip(hi).any(|(a, b)| a >= b) {
        return Err(Error::Argument(
            "box bounds must be finite and ordered".into(),
        ));
    }
    let fine = trapezoid_nd(&f, lo, hi, points_per_axis)?;
    let coarse = trapezoid_nd(&f, lo, hi, points_per_axis.div_ceil(2).max(2))?;
    let delta = (fine - coarse).abs();
    Ok(GridIntegral {
        value: fine,
        refinement_delta: delta,
        resolution_warning: delta >= T::lit(1e-3),
    })
}

/// Uniformly spaced 1-D grid.
pub fn linspace<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    let step = (hi - lo) / T::from_usize_lossy(n - 1);
    (0..n).map(|i| lo + step * T::from_usize_lossy(i)).collect()
}

/// Numerically forward-diffuses a clean 1-D density tabulated on a uniform
/// grid: `p_t(y) = ∫ p_0(x) N(y; α_t x, σ_t²) dx`, evaluated on the same grid.
pub fn convolve_density<T: Scalar>(
    grid: &[T],
    clean: &[T],
    schedule: &DiffusionSchedule<T>,
    t: usize,
) -> Result<Vec<T>> {
    if grid.len() != clean.len() || grid.len() < 16 {
        return Err(Error::Argument(
            "grid and density must have equal length >= 16".into(),
        ));
    }
    schedule.check_step(t)?;
    let tail = T::lit(1e-12);
    if clean[0] >= tail || clean[clean.len() - 1] >= tail {
        return Err(Error::Domain(format!(
            "boundary density {} / {} exceeds 1e-12; widen the grid",
            clean[0],
            clean[clean.len() - 1]
        )));
    }
    if t == 0 {
        return Ok(clean.to_vec());
    }
    let h = grid[1] - grid[0];
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let norm = T::one() / (s * (T::lit(2.0) * T::PI()).sqrt());
    let n = grid.len();
    Ok(grid
        .iter()
        .map(|&y| {
            let mut acc = T::zero();
            for (i, (&x0, &p0)) in grid.iter().zip(clean).enumerate() {
                let z = (y - a * x0) / s;
                let w = if i == 0 || i == n - 1 {
                    T::lit(0.5)
                } else {
                    T::one()
                };
                acc = acc + w * p0 * norm * (-T::lit(0.5) * z * z).exp();
            }
            acc * h
        })
        .collect())
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn finite_difference_grad<T: Scalar, F>(f: F, x: &[T], h: T) -> Result<Vec<T>>
where
    F: Fn(&[T]) -> T,
{
    if !(h > T::zero()) {
        return Err(Error::Argument(
            "finite-difference step must be positive".into(),
        ));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric {
                t: 0,
                detail: format!("non-finite sample near {x:?} along axis {i}"),
            });
        }
        grad.push((up - down) / (T::lit(2.0) * h));
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate<T> {
    pub mean: Vec<T>,
    pub std_error: Vec<T>,
    pub effective_sample_size: T,
    /// Effective sample size below 50.
    pub reliability_warning: bool,
}

/// Self-normalized importance sampling of `E[x_0 | x_t]` with the clean
/// mixture as proposal and the Gaussian transition as weight.
pub fn mc_posterior_mean<T: Scalar>(
    m: &PoseLabeledMixture<T>,
    schedule: &DiffusionSchedule<T>,
    t: usize,
    xt: &[T],
    n: usize,
    seed: u64,
) -> Result<McEstimate<T>> {
    if n < 1000 {
        return Err(Error::Argument(format!(
            "mc_posterior_mean needs n >= 1000, got {n}"
        )));
    }
    if t == 0 || t > schedule.num_steps() {
        return Err(Error::Argument(format!("step {t} outside [1, T]")));
    }
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let mut rng = rng::seeded(seed);
    let samples: Vec<Vec<T>> = (0..n).map(|_| m.sample(&mut rng)).collect();
    let logw: Vec<T> = samples
        .iter()
        .map(|x0| {
            let d2 = linalg::squared_distance(xt, &linalg::scale(x0, a));
            -T::lit(0.5) * d2 / (s * s)
        })
        .collect();
    let lmax = logw.iter().copied().fold(T::neg_infinity(), T::max);
    let w: Vec<T> = logw.iter().map(|&l| (l - lmax).exp()).collect();
    let wsum: T = w.iter().copied().sum();
    let w2sum: T = w.iter().map(|&v| v * v).sum();
    let dim = xt.len();
    let mut mean = vec![T::zero(); dim];
    for (x0, &wi) in samples.iter().zip(&w) {
        linalg::axpy(&mut mean, wi / wsum, x0);
    }
    let std_error = (0..dim)
        .map(|k| {
            let v: T = samples
                .iter()
                .zip(&w)
                .map(|(x0, &wi)| {
                    let d = x0[k] - mean[k];
                    wi * wi * d * d
                })
                .sum();
            v.sqrt() / wsum
        })
        .collect();
    let ess = wsum * wsum / w2sum;
    Ok(McEstimate {
        mean,
        std_error,
        effective_sample_size: ess,
        reliability_warning: ess < T::lit(50.0),
    })
}
