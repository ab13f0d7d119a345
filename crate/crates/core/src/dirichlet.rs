//! Dirichlet distribution over blend weights: sampling, density, entropy and
//! maximum-likelihood refitting from elite samples.
//!
//! Fitting follows Minka's split parameterization `alpha = s * m`: the mean
//! `m` is updated by a fixed-point iteration with the precision `s` held
//! fixed, then `s` by a Newton step on the profile likelihood with `m` fixed.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::BlendWeights;
use crate::special::{digamma_unchecked, inv_digamma, ln_gamma_unchecked, trigamma_unchecked, SpecialError};

/// Lower clamp on fitted concentrations.
pub const ALPHA_MIN: f64 = 1e-3;
/// Upper clamp on fitted concentrations.
pub const ALPHA_MAX: f64 = 1e4;
/// Inward nudge for samples sitting exactly on the simplex boundary.
pub const BOUNDARY_NUDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DirichletError {
    #[error("concentration parameters must be finite and in (0, {ALPHA_MAX}]")]
    InvalidAlpha,
    #[error("need at least two components")]
    TooFewComponents,
    #[error("weights lie on the simplex boundary")]
    Boundary,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("momentum must lie in [0, 1], got {0}")]
    Momentum(f64),
    #[error(transparent)]
    Special(#[from] SpecialError),
}

#[inline]
fn c<F: Float>(v: f64) -> F {
    F::from(v).unwrap()
}

/// Concentration vector `alpha` of `Dir(beta; alpha)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DirichletParams<F> {
    alpha: Vec<F>,
}

impl<F: Float> DirichletParams<F> {
    pub fn new(alpha: Vec<F>) -> Result<Self, DirichletError> {
        if alpha.len() < 2 {
            return Err(DirichletError::TooFewComponents);
        }
        if alpha.iter().any(|a| !(a.is_finite() && *a > F::zero() && *a <= c(ALPHA_MAX))) {
            return Err(DirichletError::InvalidAlpha);
        }
        Ok(Self { alpha })
    }

    /// `alpha_i = concentration` for all `n` components.
    pub fn symmetric(n: usize, concentration: F) -> Result<Self, DirichletError> {
        Self::new(vec![concentration; n])
    }

    pub fn alpha(&self) -> &[F] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Total concentration `s = sum_i alpha_i`.
    pub fn precision(&self) -> F {
        self.alpha.iter().fold(F::zero(), |a, &b| a + b)
    }

    /// `E[beta] = alpha / s`.
    pub fn mean(&self) -> BlendWeights<F> {
        let s = self.precision();
        BlendWeights::from_raw(self.alpha.iter().map(|&a| a / s).collect())
    }

    fn ln_beta_fn(&self) -> F {
        let ln_gammas = self.alpha.iter().fold(F::zero(), |acc, &a| acc + ln_gamma_unchecked(a));
        ln_gammas - ln_gamma_unchecked(self.precision())
    }
}

/// Draws `beta ~ Dir(alpha)`; deterministic given `seed`.
pub fn dir_sample<F>(params: &DirichletParams<F>, seed: u64) -> BlendWeights<F>
where
    F: Float,
    StandardNormal: Distribution<F>,
    Exp1: Distribution<F>,
    Open01: Distribution<F>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dir_sample_with(params, &mut rng)
}

/// Normalized Gamma draws, formed in log space so tiny concentrations do not
/// underflow to exact zeros.
pub fn dir_sample_with<F, R>(params: &DirichletParams<F>, rng: &mut R) -> BlendWeights<F>
where
    F: Float,
    R: Rng + ?Sized,
    StandardNormal: Distribution<F>,
    Exp1: Distribution<F>,
    Open01: Distribution<F>,
{
    let log_gammas: Vec<F> = params
        .alpha
        .iter()
        .map(|&a| {
            if a >= F::one() {
                Gamma::new(a, F::one()).expect("alpha validated positive").sample(rng).ln()
            } else {
                // Gamma(a) = Gamma(a + 1) * U^(1/a)
                let g = Gamma::new(a + F::one(), F::one()).expect("alpha validated positive").sample(rng);
                let u: F = Open01.sample(rng);
                g.ln() + u.ln() / a
            }
        })
        .collect();
    BlendWeights::from_raw(softmax(&log_gammas))
}

fn softmax<F: Float>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
    let mut w: Vec<F> = logits.iter().map(|&x| (x - max).exp()).collect();
    let tiny = F::min_positive_value();
    let mut sum = F::zero();
    for v in w.iter_mut() {
        if *v < tiny {
            *v = tiny;
        }
        sum = sum + *v;
    }
    w.iter_mut().for_each(|v| *v = *v / sum);
    w
}

/// `ln Dir(beta; alpha)`; `beta` must be strictly inside the simplex.
pub fn dir_log_pdf<F: Float>(params: &DirichletParams<F>, beta: &BlendWeights<F>) -> Result<F, DirichletError> {
    if beta.len() != params.len() {
        return Err(DirichletError::Dimension { expected: params.len(), got: beta.len() });
    }
    if beta.as_slice().iter().any(|&b| !(b > F::zero())) {
        return Err(DirichletError::Boundary);
    }
    let kernel = params
        .alpha
        .iter()
        .zip(beta.as_slice())
        .fold(F::zero(), |acc, (&a, &b)| acc + (a - F::one()) * b.ln());
    Ok(kernel - params.ln_beta_fn())
}

/// Differential entropy `ln B(alpha) + (s - K) psi(s) - sum_i (alpha_i - 1) psi(alpha_i)`.
pub fn dir_entropy<F: Float>(params: &DirichletParams<F>) -> F {
    let s = params.precision();
    let k = c::<F>(params.len() as f64);
    let tail = params
        .alpha
        .iter()
        .fold(F::zero(), |acc, &a| acc + (a - F::one()) * digamma_unchecked(a));
    params.ln_beta_fn() + (s - k) * digamma_unchecked(s) - tail
}

/// Sufficient statistics of a set of simplex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSampleStats<F> {
    pub n_samples: usize,
    pub mean_log: Vec<F>,
    pub mean: Vec<F>,
}

impl<F: Float> SimplexSampleStats<F> {
    pub fn from_samples(samples: &[BlendWeights<F>]) -> Result<Self, DirichletError> {
        let first = samples.first().ok_or(DirichletError::TooFewSamples { needed: 1, got: 0 })?;
        let k = first.len();
        let mut mean_log = vec![F::zero(); k];
        let mut mean = vec![F::zero(); k];
        let nudge = c::<F>(BOUNDARY_NUDGE);
        let renorm = F::one() + nudge * c::<F>(k as f64);
        for s in samples {
            if s.len() != k {
                return Err(DirichletError::Dimension { expected: k, got: s.len() });
            }
            let touches = s.as_slice().iter().any(|&b| !(b > F::zero()));
            for (i, &b) in s.as_slice().iter().enumerate() {
                let b = if touches { (b.max(F::zero()) + nudge) / renorm } else { b };
                mean_log[i] = mean_log[i] + b.ln();
                mean[i] = mean[i] + b;
            }
        }
        let n = c::<F>(samples.len() as f64);
        mean_log.iter_mut().for_each(|v| *v = *v / n);
        mean.iter_mut().for_each(|v| *v = *v / n);
        Ok(Self { n_samples: samples.len(), mean_log, mean })
    }

    /// Average log-likelihood of the samples under `alpha`.
    pub fn log_likelihood(&self, alpha: &[F]) -> F {
        let s = alpha.iter().fold(F::zero(), |a, &b| a + b);
        let mut ll = ln_gamma_unchecked(s);
        for (&a, &l) in alpha.iter().zip(&self.mean_log) {
            ll = ll - ln_gamma_unchecked(a) + (a - F::one()) * l;
        }
        ll
    }
}

/// Result of [`dir_mle_fit`] with the per-iteration likelihood trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletFit<F> {
    pub params: DirichletParams<F>,
    pub iterations: usize,
    /// Average log-likelihood at the initial point and after each iteration.
    pub log_likelihoods: Vec<F>,
}

/// Maximum-likelihood update of the concentration from sample statistics.
pub fn dir_mle_update<F: Float>(
    stats: &SimplexSampleStats<F>,
    init: &DirichletParams<F>,
    max_iters: usize,
    tol: F,
) -> Result<DirichletParams<F>, DirichletError> {
    dir_mle_fit(stats, init, max_iters, tol).map(|fit| fit.params)
}

pub fn dir_mle_fit<F: Float>(
    stats: &SimplexSampleStats<F>,
    init: &DirichletParams<F>,
    max_iters: usize,
    tol: F,
) -> Result<DirichletFit<F>, DirichletError> {
    let k = init.len();
    if stats.mean_log.len() != k {
        return Err(DirichletError::Dimension { expected: k, got: stats.mean_log.len() });
    }
    if stats.n_samples < 2 {
        return Err(DirichletError::TooFewSamples { needed: 2, got: stats.n_samples });
    }
    if stats.mean_log.iter().any(|v| !v.is_finite()) {
        return Err(DirichletError::Boundary);
    }

    let s_max = c::<F>(ALPHA_MAX) * c::<F>(k as f64);
    let s_min = c::<F>(ALPHA_MIN) * c::<F>(k as f64);
    let mut s = init.precision().min(s_max).max(s_min);
    let mut m: Vec<F> = init.alpha.iter().map(|&a| a / init.precision()).collect();
    let alpha_of = |s: F, m: &[F]| -> Vec<F> { m.iter().map(|&mi| s * mi).collect() };

    let mut ll = stats.log_likelihood(&alpha_of(s, &m));
    let mut trace = vec![ll];
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let m_new = mean_step(stats, s, &m)?;
        let s_new = precision_step(stats, s, &m_new, s_min, s_max);

        // Keep the best of the joint and single-block moves so the likelihood
        // never decreases.
        let mut best = (ll, s, m.clone());
        for (cs, cm) in [(s_new, &m_new), (s, &m_new), (s_new, &m)] {
            let cand = stats.log_likelihood(&alpha_of(cs, cm));
            if cand.is_finite() && cand > best.0 {
                best = (cand, cs, cm.clone());
            }
        }
        let (ll_new, s_next, m_next) = best;
        let change = m_next
            .iter()
            .zip(&m)
            .map(|(&a, &b)| (a * s_next - b * s).abs() / (b * s))
            .fold(F::zero(), F::max);
        s = s_next;
        m = m_next;
        ll = ll_new;
        trace.push(ll);
        if change < tol {
            break;
        }
    }
    let alpha = alpha_of(s, &m)
        .into_iter()
        .map(|a| a.max(c(ALPHA_MIN)).min(c(ALPHA_MAX)))
        .collect();
    Ok(DirichletFit { params: DirichletParams::new(alpha)?, iterations, log_likelihoods: trace })
}

/// `alpha_k = psi^-1(mean_log_k - sum_j m_j (mean_log_j - psi(s m_j)))`, renormalized.
fn mean_step<F: Float>(stats: &SimplexSampleStats<F>, s: F, m: &[F]) -> Result<Vec<F>, DirichletError> {
    let tiny = c::<F>(ALPHA_MIN) / s;
    let shift = m
        .iter()
        .zip(&stats.mean_log)
        .fold(F::zero(), |acc, (&mj, &lj)| acc + mj * (lj - digamma_unchecked((s * mj).max(tiny * s))));
    let mut alpha = Vec::with_capacity(m.len());
    for &l in &stats.mean_log {
        alpha.push(inv_digamma(l - shift)?);
    }
    let total = alpha.iter().fold(F::zero(), |a, &b| a + b);
    Ok(alpha.into_iter().map(|a| (a / total).max(tiny)).collect())
}

/// Generalized Newton on `1/s` for the profile likelihood in `s`.
fn precision_step<F: Float>(stats: &SimplexSampleStats<F>, s0: F, m: &[F], s_min: F, s_max: F) -> F {
    let cross = m.iter().zip(&stats.mean_log).fold(F::zero(), |acc, (&mk, &lk)| acc + mk * lk);
    let mut s = s0;
    for _ in 0..20 {
        let mut grad = digamma_unchecked(s) + cross;
        let mut hess = trigamma_unchecked(s);
        for &mk in m {
            let a = s * mk;
            grad = grad - mk * digamma_unchecked(a);
            hess = hess - mk * mk * trigamma_unchecked(a);
        }
        let inv = s.recip() + grad / (s * s * hess);
        let next = if inv > F::zero() && hess < F::zero() {
            inv.recip()
        } else if grad > F::zero() {
            s * c::<F>(2.0)
        } else {
            s * c::<F>(0.5)
        };
        let next = next.max(s_min).min(s_max);
        let done = ((next - s) / s).abs() < c::<F>(1e-10);
        s = next;
        if done {
            break;
        }
    }
    s
}

/// Default iteration budget for [`moment_match`].
pub const MLE_MAX_ITERS: usize = 50;
pub const MLE_TOL: f64 = 1e-6;

/// Refits the Dirichlet to `elites` (warm-started at `prev`) and blends
/// `alpha = momentum * alpha_prev + (1 - momentum) * alpha_fit`.
pub fn moment_match<F: Float>(
    elites: &[BlendWeights<F>],
    prev: &DirichletParams<F>,
    momentum: F,
) -> Result<DirichletParams<F>, DirichletError> {
    if !(momentum >= F::zero() && momentum <= F::one()) {
        return Err(DirichletError::Momentum(momentum.to_f64().unwrap_or(f64::NAN)));
    }
    if elites.len() < 2 {
        return Err(DirichletError::TooFewSamples { needed: 2, got: elites.len() });
    }
    let stats = SimplexSampleStats::from_samples(elites)?;
    let fit = dir_mle_update(&stats, prev, MLE_MAX_ITERS, c(MLE_TOL))?;
    let keep = F::one() - momentum;
    let alpha = prev
        .alpha
        .iter()
        .zip(fit.alpha())
        .map(|(&p, &f)| momentum * p + keep * f)
        .collect();
    DirichletParams::new(alpha)
}
