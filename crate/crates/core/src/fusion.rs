//! Weighted product of Gaussian experts.
//!
//! `prod_i N(a | mu_i, Lambda_i^-1)^beta_i` is again Gaussian with precision
//! `Lambda = sum_i beta_i Lambda_i` and information vector
//! `eta = sum_i beta_i Lambda_i mu_i`. The normalizer of the unnormalized
//! product is kept as `log_partition`:
//!
//! ```text
//! xi     = sum_i beta_i ( -d/2 ln 2pi + 1/2 ln|Lambda_i| - 1/2 mu_i' Lambda_i mu_i )
//! ln A   = xi + 1/2 eta' Lambda^-1 eta + d/2 ln 2pi - 1/2 ln|Lambda|
//! ```

use nalgebra::{Cholesky, RealField, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experts::ExpertEval;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("no experts to fuse")]
    Empty,
    #[error("{experts} experts but {weights} blend weights")]
    LengthMismatch { experts: usize, weights: usize },
    #[error("blend weights must be finite and non-negative")]
    InvalidWeight,
    #[error("all blend weights are zero")]
    AllZeroWeights,
    #[error("fused precision is not positive definite")]
    NotPositiveDefinite,
}

/// Non-negative expert weights ("temperatures"), at least one strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlendWeights<T>(Vec<T>);

impl<T: num_traits::Float> BlendWeights<T> {
    pub fn new(weights: Vec<T>) -> Result<Self, FusionError> {
        if weights.is_empty() {
            return Err(FusionError::Empty);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(FusionError::InvalidWeight);
        }
        if weights.iter().all(|w| *w == T::zero()) {
            return Err(FusionError::AllZeroWeights);
        }
        Ok(Self(weights))
    }

    /// `1/n` in every component.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform weights need at least one expert");
        let w = T::one() / T::from(n).unwrap();
        Self(vec![w; n])
    }

    /// The `k`-th vertex of the simplex.
    pub fn unit(n: usize, k: usize) -> Self {
        assert!(k < n);
        let mut w = vec![T::zero(); n];
        w[k] = T::one();
        Self(w)
    }

    pub fn sum(&self) -> T {
        self.0.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// True when the weights sum to one within `tol`.
    pub fn on_simplex(&self, tol: T) -> bool {
        (self.sum() - T::one()).abs() <= tol
    }
}

impl<T> BlendWeights<T> {
    pub(crate) fn from_raw(weights: Vec<T>) -> Self {
        Self(weights)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> std::ops::Index<usize> for BlendWeights<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

/// Gaussian resulting from [`fuse`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedGaussian<T: RealField + Copy, const D: usize> {
    pub mu: SVector<T, D>,
    pub lambda: SMatrix<T, D, D>,
    pub log_partition: T,
    /// `ln |lambda|`, cached from the Cholesky factorization.
    pub log_det: T,
}

#[inline]
fn c<T: RealField + Copy>(v: f64) -> T {
    nalgebra::convert(v)
}

fn check<T: RealField + Copy, const D: usize>(
    evals: &[ExpertEval<T, D>],
    beta: &[T],
) -> Result<(), FusionError> {
    if evals.is_empty() {
        return Err(FusionError::Empty);
    }
    if evals.len() != beta.len() {
        return Err(FusionError::LengthMismatch { experts: evals.len(), weights: beta.len() });
    }
    Ok(())
}

/// Sums `beta_i Lambda_i` and `beta_i Lambda_i mu_i`, skipping zero weights.
fn accumulate<T: RealField + Copy, const D: usize>(
    evals: &[ExpertEval<T, D>],
    beta: &[T],
) -> Result<(SMatrix<T, D, D>, SVector<T, D>), FusionError> {
    let mut lambda = SMatrix::<T, D, D>::zeros();
    let mut eta = SVector::<T, D>::zeros();
    let mut any = false;
    for (e, &b) in evals.iter().zip(beta) {
        if !(b >= T::zero()) || !b.is_finite() {
            return Err(FusionError::InvalidWeight);
        }
        if b == T::zero() {
            continue;
        }
        any = true;
        let wl = e.lambda * b;
        eta += wl * e.mu;
        lambda += wl;
    }
    if !any {
        return Err(FusionError::AllZeroWeights);
    }
    Ok((lambda, eta))
}

fn factor<T: RealField + Copy, const D: usize>(
    lambda: SMatrix<T, D, D>,
) -> Result<Cholesky<T, nalgebra::Const<D>>, FusionError> {
    Cholesky::new(lambda).ok_or(FusionError::NotPositiveDefinite)
}

fn log_det_from<T: RealField + Copy, const D: usize>(chol: &Cholesky<T, nalgebra::Const<D>>) -> T {
    let l = chol.l_dirty();
    (0..D).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * c::<T>(2.0)
}

/// Fuses the experts under `beta` into a single Gaussian, including its log-partition.
pub fn fuse<T: RealField + Copy, const D: usize>(
    evals: &[ExpertEval<T, D>],
    beta: &BlendWeights<T>,
) -> Result<FusedGaussian<T, D>, FusionError> {
    check(evals, beta.as_slice())?;
    let (lambda, eta) = accumulate(evals, beta.as_slice())?;
    let chol = factor(lambda)?;
    let mu = chol.solve(&eta);
    let log_det = log_det_from(&chol);

    let half = c::<T>(0.5);
    let ln_2pi = c::<T>((2.0 * std::f64::consts::PI).ln());
    let d = c::<T>(D as f64);
    let mut xi = T::zero();
    for (e, &b) in evals.iter().zip(beta.as_slice()) {
        if b == T::zero() {
            continue;
        }
        let expert_log_det = log_det_from(&factor(e.lambda)?);
        let quad = (e.mu.transpose() * e.lambda * e.mu)[(0, 0)];
        xi += b * (-half * d * ln_2pi + half * expert_log_det - half * quad);
    }
    let log_partition = xi + half * eta.dot(&mu) + half * d * ln_2pi - half * log_det;
    Ok(FusedGaussian { mu, lambda, log_partition, log_det })
}

/// Mean of the fused Gaussian without the partition bookkeeping.
///
/// Bit-identical to `fuse(evals, beta)?.mu`.
pub fn fused_mean<T: RealField + Copy, const D: usize>(
    evals: &[ExpertEval<T, D>],
    beta: &[T],
) -> Result<SVector<T, D>, FusionError> {
    check(evals, beta)?;
    let (lambda, eta) = accumulate(evals, beta)?;
    Ok(factor(lambda)?.solve(&eta))
}

/// The maximizer of the fused log-density, i.e. its mean.
pub fn optimal_action<T: RealField + Copy, const D: usize>(fused: &FusedGaussian<T, D>) -> SVector<T, D> {
    fused.mu
}

/// Exact multivariate normal log-density of `a` under the fused Gaussian.
pub fn log_density<T: RealField + Copy, const D: usize>(fused: &FusedGaussian<T, D>, a: &SVector<T, D>) -> T {
    let half = c::<T>(0.5);
    let diff = a - fused.mu;
    let quad = (diff.transpose() * fused.lambda * diff)[(0, 0)];
    -half * quad + half * fused.log_det - half * c::<T>(D as f64) * c::<T>((2.0 * std::f64::consts::PI).ln())
}

/// Draws from `N(mu, lambda^-1)`; deterministic given `seed`.
pub fn sample_action<T, const D: usize>(fused: &FusedGaussian<T, D>, seed: u64) -> SVector<T, D>
where
    T: RealField + Copy,
    StandardNormal: Distribution<T>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_action_with(fused, &mut rng)
}

/// With `lambda = L L^T`, `x = mu + L^-T z` has covariance `lambda^-1`.
pub fn sample_action_with<T, R, const D: usize>(fused: &FusedGaussian<T, D>, rng: &mut R) -> SVector<T, D>
where
    T: RealField + Copy,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
{
    let z = SVector::<T, D>::from_fn(|_, _| StandardNormal.sample(rng));
    let chol = Cholesky::new(fused.lambda).expect("fused precision is SPD by construction");
    let lt = chol.l().transpose();
    let x = lt.solve_upper_triangular(&z).expect("Cholesky diagonal is positive");
    fused.mu + x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix1, Matrix2, Vector1, Vector2};

    fn e1(mu: f64, lam: f64) -> ExpertEval<f64, 1> {
        ExpertEval::new(Vector1::new(mu), Matrix1::new(lam))
    }

    #[test]
    fn two_scalar_experts() {
        let evals = [e1(0.0, 1.0), e1(2.0, 1.0)];
        let f = fuse(&evals, &BlendWeights::new(vec![1.0, 1.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(f.mu[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.lambda[(0, 0)], 2.0, epsilon = 1e-15);

        // Grid oracle: maximize sum_i beta_i log N(a | mu_i, 1).
        let obj = |a: f64| -0.5 * a * a - 0.5 * (a - 2.0) * (a - 2.0);
        let best = (0..=40_000)
            .map(|k| -2.0 + k as f64 * 1e-4)
            .max_by(|x, y| obj(*x).total_cmp(&obj(*y)))
            .unwrap();
        assert_abs_diff_eq!(f.mu[0], best, epsilon = 1e-4);
    }

    #[test]
    fn unit_weights_select_one_expert() {
        let evals = [
            ExpertEval::new(Vector2::new(1.0, 2.0), Matrix2::new(2.0, 0.3, 0.3, 1.0)),
            ExpertEval::new(Vector2::new(-4.0, 0.5), Matrix2::identity() * 3.0),
        ];
        let f = fuse(&evals, &BlendWeights::unit(2, 1)).unwrap();
        assert_abs_diff_eq!(f.mu, evals[1].mu, epsilon = 1e-14);
        assert_eq!(f.lambda, evals[1].lambda);
    }

    #[test]
    fn mirror_experts_cancel() {
        let lam = Matrix2::new(2.0, 0.5, 0.5, 1.0);
        let evals = [
            ExpertEval::new(Vector2::new(1.5, -0.5), lam),
            ExpertEval::new(Vector2::new(-1.5, 0.5), lam),
        ];
        let f = fuse(&evals, &BlendWeights::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_abs_diff_eq!(f.mu, Vector2::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn optimal_action_is_mean_and_scale_invariant() {
        let evals = [
            ExpertEval::new(Vector2::new(1.0, -3.0), Matrix2::identity()),
            ExpertEval::new(Vector2::new(2.0, 1.0), Matrix2::new(3.0, 1.0, 1.0, 2.0)),
        ];
        let f = fuse(&evals, &BlendWeights::new(vec![0.3, 0.7]).unwrap()).unwrap();
        assert_eq!(optimal_action(&f), f.mu);
        let g = fuse(&evals, &BlendWeights::new(vec![3.0, 7.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(optimal_action(&g), optimal_action(&f), epsilon = 1e-13);
        let single = fuse(&evals[..1], &BlendWeights::new(vec![0.2]).unwrap()).unwrap();
        assert_abs_diff_eq!(optimal_action(&single), Vector2::new(1.0, -3.0), epsilon = 1e-14);
    }

    #[test]
    fn fused_mean_matches_fuse_bitwise() {
        let evals = [
            ExpertEval::new(Vector2::new(1.0, -3.0), Matrix2::identity()),
            ExpertEval::new(Vector2::new(2.0, 1.0), Matrix2::new(3.0, 1.0, 1.0, 2.0)),
        ];
        let beta = BlendWeights::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(fused_mean(&evals, beta.as_slice()).unwrap(), fuse(&evals, &beta).unwrap().mu);
    }

    #[test]
    fn zero_weights_are_skipped() {
        let evals = [e1(1.0, 1.0), e1(5.0, 1.0)];
        let f = fuse(&evals, &BlendWeights::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(f.mu[0], 1.0);
    }

    #[test]
    fn errors() {
        let evals = [e1(1.0, 1.0)];
        assert_eq!(
            fuse(&evals, &BlendWeights::from_raw(vec![1.0, 1.0])),
            Err(FusionError::LengthMismatch { experts: 1, weights: 2 })
        );
        assert_eq!(fuse(&evals, &BlendWeights::from_raw(vec![0.0])), Err(FusionError::AllZeroWeights));
        assert_eq!(BlendWeights::new(vec![0.0_f64, 0.0]), Err(FusionError::AllZeroWeights));
        assert_eq!(BlendWeights::new(vec![-1.0_f64, 2.0]), Err(FusionError::InvalidWeight));
        let none: [ExpertEval<f64, 1>; 0] = [];
        assert_eq!(fused_mean(&none, &[]), Err(FusionError::Empty));
    }

    #[test]
    fn standard_normal_peak() {
        let f = fuse(&[e1(0.0, 1.0)], &BlendWeights::new(vec![1.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(log_density(&f, &Vector1::new(0.0)), -0.918_938_533_204_672_7, epsilon = 1e-12);
        assert!(log_density(&f, &Vector1::new(0.0)) >= log_density(&f, &Vector1::new(0.3)));
    }

    /// Trapezoid rule over `[lo, hi]` with `n` panels.
    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let inner: f64 = (1..n).map(|k| f(lo + k as f64 * h)).sum();
        h * (0.5 * f(lo) + inner + 0.5 * f(hi))
    }

    #[test]
    fn density_and_partition_match_quadrature() {
        let evals = [e1(-1.0, 0.5), e1(2.0, 3.0), e1(0.5, 1.2)];
        let beta = BlendWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let f = fuse(&evals, &beta).unwrap();
        let sd = 1.0 / f.lambda[(0, 0)].sqrt();
        let (lo, hi) = (f.mu[0] - 12.0 * sd, f.mu[0] + 12.0 * sd);

        let mass = trapezoid(|a| log_density(&f, &Vector1::new(a)).exp(), lo, hi, 20_000);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-3);

        // Unnormalized product prod_i N(a | mu_i, 1/lambda_i)^beta_i, evaluated independently.
        let unnorm = |a: f64| {
            evals
                .iter()
                .zip(beta.as_slice())
                .map(|(e, b)| {
                    let (m, l) = (e.mu[0], e.lambda[(0, 0)]);
                    b * (0.5 * l.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * l * (a - m).powi(2))
                })
                .sum::<f64>()
                .exp()
        };
        let z = trapezoid(unnorm, lo, hi, 20_000);
        assert_abs_diff_eq!(f.log_partition.exp() / z, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn sampling_moments() {
        let evals = [ExpertEval::new(Vector2::new(1.0, -2.0), Matrix2::new(2.0, 0.6, 0.6, 1.0))];
        let f = fuse(&evals, &BlendWeights::new(vec![1.0]).unwrap()).unwrap();
        assert_eq!(sample_action(&f, 7), sample_action(&f, 7));

        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<Vector2<f64>> = (0..n).map(|_| sample_action_with(&f, &mut rng)).collect();
        let mean = draws.iter().fold(Vector2::zeros(), |a, d| a + d) / n as f64;
        let cov = draws.iter().fold(Matrix2::zeros(), |a, d| a + (d - mean) * (d - mean).transpose())
            / (n as f64 - 1.0);
        let target = f.lambda.try_inverse().unwrap();
        for i in 0..2 {
            let se = (target[(i, i)] / n as f64).sqrt();
            assert!((mean[i] - f.mu[i]).abs() < 3.0 * se, "component {i}");
        }
        assert!((cov - target).norm() / target.norm() < 0.05);
    }
}
