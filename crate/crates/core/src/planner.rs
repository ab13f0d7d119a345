//! Sampling-based planners: HiPBI (CEM over Dirichlet blend weights) and the
//! MPC-iCEM action-space baseline with colored-noise sampling.
//!
//! Rollouts inside one iteration are independent and run on rayon workers.
//! Each sample derives its own seed from `(seed, sample, iteration)` and the
//! results are ranked by `(score desc, sample index)`, so the output never
//! depends on thread scheduling.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::SVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{dir_sample, moment_match, DirichletError, DirichletParams, ALPHA_MIN};
use crate::env::PlanarEnv;
use crate::experts::{ExpertError, ExpertEval, ExpertSet};
use crate::fusion::{fuse, fused_mean, log_density, sample_action_with, BlendWeights, FusionError};
use crate::seed::split_seed;
use crate::state::State;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("prior has {got} components for {expected} experts")]
    PriorSize { expected: usize, got: usize },
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    #[error("rollout produced a non-finite score")]
    NonFinite,
}

/// Forward model the planners roll out. The environment itself is the usual choice.
pub trait DynamicsModel<const D: usize>: Sync {
    fn step(&self, state: &mut State<f64, D>, action: &SVector<f64, D>);
    /// Per-step cost; the optimality log-likelihood is its negative.
    fn cost(&self, state: &State<f64, D>, action: &SVector<f64, D>) -> f64;
}

impl DynamicsModel<2> for PlanarEnv {
    fn step(&self, state: &mut State<f64, 2>, action: &SVector<f64, 2>) {
        self.step_in_place(state, action);
    }

    fn cost(&self, state: &State<f64, 2>, action: &SVector<f64, 2>) -> f64 {
        PlanarEnv::cost(self, state, action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub n_samples: usize,
    pub n_elites: usize,
    pub n_iters: usize,
    pub lambda_pi: f64,
    pub momentum: f64,
    /// Sample actions from the fused policy instead of taking its mean.
    /// Only honoured when `lambda_pi > 0`.
    pub stochastic_rollouts: bool,
    /// Upper bound on the posterior's mean concentration `sum(alpha) / n`.
    /// Refits on a handful of elites in many dimensions overshoot the
    /// precision; without a cap the search stops exploring after a few cycles.
    pub max_mean_alpha: f64,
    /// Per-component floor applied after each refit, so that no expert's
    /// weight becomes unreachable for later cycles.
    pub min_alpha: f64,
    /// Carry the previous iteration's elites into the next candidate pool.
    pub reuse_elites: bool,
    /// Baseline only: spectral exponent of the sampling noise.
    pub noise_exponent: f64,
    /// Baseline only: symmetric per-dimension clamp on actions.
    pub action_bound: f64,
    /// Baseline only: initial sampling std per dimension.
    pub init_std: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            n_samples: 64,
            n_elites: 8,
            n_iters: 3,
            lambda_pi: 0.0,
            momentum: 0.5,
            stochastic_rollouts: false,
            max_mean_alpha: 20.0,
            min_alpha: ALPHA_MIN,
            reuse_elites: true,
            noise_exponent: 2.0,
            action_bound: 5.0,
            init_std: 2.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: String| Err(PlannerError::Config(m));
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if self.n_elites < 2 || self.n_elites > self.n_samples {
            return bad(format!("need 2 <= n_elites <= n_samples, got {} and {}", self.n_elites, self.n_samples));
        }
        if self.n_iters < 1 {
            return bad("n_iters must be at least 1".into());
        }
        if !(self.lambda_pi >= 0.0 && self.lambda_pi.is_finite()) {
            return bad(format!("lambda_pi must be >= 0, got {}", self.lambda_pi));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1], got {}", self.momentum));
        }
        if !(self.min_alpha >= ALPHA_MIN && self.min_alpha < self.max_mean_alpha) {
            return bad(format!(
                "need {ALPHA_MIN} <= min_alpha < max_mean_alpha, got {} and {}",
                self.min_alpha, self.max_mean_alpha
            ));
        }
        if !(self.noise_exponent >= 0.0 && self.noise_exponent.is_finite()) {
            return bad(format!("noise_exponent must be >= 0, got {}", self.noise_exponent));
        }
        if !(self.action_bound > 0.0) || !(self.init_std > 0.0) {
            return bad("action_bound and init_std must be positive".into());
        }
        Ok(())
    }

    fn stochastic(&self) -> bool {
        self.lambda_pi > 0.0 && self.stochastic_rollouts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<const D: usize> {
    pub states: Vec<State<f64, D>>,
    pub actions: Vec<SVector<f64, D>>,
    pub score: f64,
    pub beta: BlendWeights<f64>,
}

/// Elite statistics of one CEM iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub elite_mean: f64,
    pub elite_best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HipbiPlan {
    pub posterior: DirichletParams<f64>,
    /// Posterior mean; what the controller executes.
    pub executed_beta: BlendWeights<f64>,
    pub best_beta: BlendWeights<f64>,
    pub diagnostics: Vec<IterationStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPlan<const D: usize> {
    /// Best elite sequence, `horizon` long.
    pub actions: Vec<SVector<f64, D>>,
    pub mean: Vec<SVector<f64, D>>,
    pub std: Vec<SVector<f64, D>>,
    pub diagnostics: Vec<IterationStats>,
}

/// Shared rollout loop; `visit` sees every `(state, action)` pair before the step.
#[allow(clippy::too_many_arguments)]
fn simulate<M, const D: usize>(
    model: &M,
    experts: &ExpertSet,
    beta: &BlendWeights<f64>,
    s0: &State<f64, D>,
    horizon: usize,
    lambda_pi: f64,
    mut rng: Option<ChaCha8Rng>,
    mut visit: impl FnMut(&State<f64, D>, &SVector<f64, D>),
) -> Result<f64, PlannerError>
where
    M: DynamicsModel<D> + ?Sized,
{
    let mut state = s0.clone();
    let mut evals: Vec<ExpertEval<f64, D>> = Vec::with_capacity(experts.len());
    let mut score = 0.0;
    for _ in 0..horizon {
        experts.evaluate_into(&state, &mut evals)?;
        let action = if lambda_pi > 0.0 {
            let fused = fuse(&evals, beta)?;
            let a = match rng.as_mut() {
                Some(r) => sample_action_with(&fused, r),
                None => fused.mu,
            };
            score += lambda_pi * log_density(&fused, &a);
            a
        } else {
            fused_mean(&evals, beta.as_slice())?
        };
        score -= model.cost(&state, &action);
        visit(&state, &action);
        model.step(&mut state, &action);
    }
    if score.is_finite() {
        Ok(score)
    } else {
        Err(PlannerError::NonFinite)
    }
}

fn check_beta(experts: &ExpertSet, beta: &BlendWeights<f64>) -> Result<(), PlannerError> {
    if beta.len() != experts.len() {
        return Err(FusionError::LengthMismatch { experts: experts.len(), weights: beta.len() }.into());
    }
    Ok(())
}

/// Rolls the blended policy forward for `horizon` steps with `beta` held fixed.
///
/// The score is `sum_t [-c(s_t, a_t) + lambda_pi ln pi(a_t | beta, s_t)]`.
/// With `lambda_pi > 0` actions are sampled from the fused policy; otherwise
/// the fused mean is used and the seed is irrelevant.
pub fn rollout_hipbi<M, const D: usize>(
    model: &M,
    experts: &ExpertSet,
    beta: &BlendWeights<f64>,
    s0: &State<f64, D>,
    horizon: usize,
    lambda_pi: f64,
    rng_seed: u64,
) -> Result<Rollout<D>, PlannerError>
where
    M: DynamicsModel<D> + ?Sized,
{
    if horizon < 1 {
        return Err(PlannerError::Config("horizon must be at least 1".into()));
    }
    check_beta(experts, beta)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let rng = (lambda_pi > 0.0).then(|| ChaCha8Rng::seed_from_u64(rng_seed));
    let score = simulate(model, experts, beta, s0, horizon, lambda_pi, rng, |s, a| {
        states.push(s.clone());
        actions.push(*a);
    })?;
    let mut last = states.last().cloned().unwrap_or_else(|| s0.clone());
    if let Some(a) = actions.last() {
        model.step(&mut last, a);
    }
    states.push(last);
    Ok(Rollout { states, actions, score, beta: beta.clone() })
}

struct Candidate<P> {
    score: f64,
    index: usize,
    payload: P,
}

/// Orders by score (descending) then sample index; NaN never reaches here.
fn rank<P>(pool: &mut [Candidate<P>]) {
    pool.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
}

fn stats<P>(iteration: usize, elites: &[Candidate<P>]) -> IterationStats {
    let elite_mean = elites.iter().map(|c| c.score).sum::<f64>() / elites.len() as f64;
    IterationStats { iteration, elite_mean, elite_best: elites[0].score }
}

/// One HiPBI planning cycle, warm-started from `prev`.
///
/// Each iteration draws `n_samples` blend weights, scores them by rollout,
/// keeps the best `n_elites` (plus the previous elites when reuse is on) and
/// refits the Dirichlet to them.
pub fn hipbi_plan<M, const D: usize>(
    s0: &State<f64, D>,
    prev: &DirichletParams<f64>,
    cfg: &PlannerConfig,
    model: &M,
    experts: &ExpertSet,
    rng_seed: u64,
) -> Result<HipbiPlan, PlannerError>
where
    M: DynamicsModel<D> + ?Sized,
{
    cfg.validate()?;
    if prev.len() != experts.len() {
        return Err(PlannerError::PriorSize { expected: experts.len(), got: prev.len() });
    }
    let stochastic = cfg.stochastic();
    let lambda_pi = cfg.lambda_pi;
    let score_of = |beta: &BlendWeights<f64>, seed: u64| {
        let rng = stochastic.then(|| ChaCha8Rng::seed_from_u64(seed));
        simulate(model, experts, beta, s0, cfg.horizon, lambda_pi, rng, |_, _| {})
    };

    let mut params = prev.clone();
    let mut elites: Vec<Candidate<BlendWeights<f64>>> = Vec::new();
    let mut diagnostics = Vec::with_capacity(cfg.n_iters);
    for it in 0..cfg.n_iters {
        let it_u = it as u64;
        let fresh: Vec<Candidate<BlendWeights<f64>>> = (0..cfg.n_samples)
            .into_par_iter()
            .map(|j| {
                let beta = dir_sample(&params, split_seed(rng_seed, j as u64, 2 * it_u));
                let score = score_of(&beta, split_seed(rng_seed, j as u64, 2 * it_u + 1))?;
                Ok(Candidate { score, index: j, payload: beta })
            })
            .collect::<Result<_, PlannerError>>()?;
        let mut pool = fresh;
        if cfg.reuse_elites {
            let carried: Vec<Candidate<BlendWeights<f64>>> = if stochastic {
                // fresh noise, so carried elites are scored again
                elites
                    .par_iter()
                    .enumerate()
                    .map(|(k, c)| {
                        let seed = split_seed(rng_seed, (cfg.n_samples + k) as u64, 2 * it_u + 1);
                        Ok(Candidate { score: score_of(&c.payload, seed)?, index: 0, payload: c.payload.clone() })
                    })
                    .collect::<Result<_, PlannerError>>()?
            } else {
                elites.drain(..).map(|c| Candidate { index: 0, ..c }).collect()
            };
            pool.extend(carried.into_iter().enumerate().map(|(k, c)| Candidate { index: cfg.n_samples + k, ..c }));
        }
        rank(&mut pool);
        pool.truncate(cfg.n_elites);
        elites = pool;
        diagnostics.push(stats(it, &elites));
        let betas: Vec<BlendWeights<f64>> = elites.iter().map(|c| c.payload.clone()).collect();
        params = bound_alpha(moment_match(&betas, &params, cfg.momentum)?, cfg.min_alpha, cfg.max_mean_alpha)?;
    }
    Ok(HipbiPlan {
        executed_beta: params.mean(),
        best_beta: elites[0].payload.clone(),
        posterior: params,
        diagnostics,
    })
}

/// Rescales `alpha` so that `sum(alpha) <= max_mean_alpha * n` (keeping the
/// mean), then lifts every component to at least `min_alpha`.
fn bound_alpha(
    params: DirichletParams<f64>,
    min_alpha: f64,
    max_mean_alpha: f64,
) -> Result<DirichletParams<f64>, PlannerError> {
    let cap = max_mean_alpha * params.len() as f64;
    let s = params.precision();
    let scale = if s > cap { cap / s } else { 1.0 };
    if scale == 1.0 && params.alpha().iter().all(|&a| a >= min_alpha) {
        return Ok(params);
    }
    let alpha = params.alpha().iter().map(|a| (a * scale).max(min_alpha)).collect();
    Ok(DirichletParams::new(alpha)?)
}

thread_local! {
    static FFT_CACHE: RefCell<(FftPlanner<f64>, HashMap<usize, Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn inverse_fft(len: usize) -> Arc<dyn Fft<f64>> {
    FFT_CACHE.with(|cache| {
        let (planner, plans) = &mut *cache.borrow_mut();
        plans.entry(len).or_insert_with(|| planner.plan_fft_inverse(len)).clone()
    })
}

/// `dim` independent noise series of length `horizon` with power spectrum
/// proportional to `1 / f^exponent`, each scaled to unit mean square.
///
/// Built in the frequency domain: magnitude `f^(-exponent/2)`, uniform random
/// phases, a real DC term at the lowest frequency's magnitude, then an inverse
/// FFT. Indexed `[dim][t]`.
pub fn colored_noise(horizon: usize, dim: usize, exponent: f64, rng_seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    colored_noise_with(horizon, dim, exponent, &mut rng)
}

fn colored_noise_with<R: Rng>(horizon: usize, dim: usize, exponent: f64, rng: &mut R) -> Vec<Vec<f64>> {
    if horizon <= 1 {
        // one sample has no spectrum to shape
        return (0..dim)
            .map(|_| (0..horizon).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
            .collect();
    }
    let n = horizon;
    let fft = inverse_fft(n);
    (0..dim)
        .map(|_| {
            let mut spec = vec![Complex::new(0.0, 0.0); n];
            // the DC bin gets the lowest frequency's magnitude, so plans can
            // also shift as a whole
            let dc = (1.0 / n as f64).powf(-0.5 * exponent);
            spec[0] = Complex::new(if rng.gen_bool(0.5) { dc } else { -dc }, 0.0);
            for k in 1..=n / 2 {
                let mag = (k as f64 / n as f64).powf(-0.5 * exponent);
                if 2 * k == n {
                    // Nyquist bin must be real
                    spec[k] = Complex::new(if rng.gen_bool(0.5) { mag } else { -mag }, 0.0);
                } else {
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    let z = Complex::from_polar(mag, phase);
                    spec[k] = z;
                    spec[n - k] = z.conj();
                }
            }
            fft.process(&mut spec);
            let rms = (spec.iter().map(|z| z.re * z.re).sum::<f64>() / n as f64).sqrt();
            spec.iter().map(|z| z.re / rms).collect()
        })
        .collect()
}

fn shifted<const D: usize>(prev: &[SVector<f64, D>], horizon: usize) -> Vec<SVector<f64, D>> {
    let tail = prev.get(1..).unwrap_or(&[]);
    let last = prev.last().copied().unwrap_or_else(SVector::zeros);
    (0..horizon).map(|t| tail.get(t).copied().unwrap_or(last)).collect()
}

fn open_loop<M, const D: usize>(model: &M, s0: &State<f64, D>, actions: &[SVector<f64, D>]) -> Result<f64, PlannerError>
where
    M: DynamicsModel<D> + ?Sized,
{
    let mut state = s0.clone();
    let mut score = 0.0;
    for a in actions {
        score -= model.cost(&state, a);
        model.step(&mut state, a);
    }
    if score.is_finite() {
        Ok(score)
    } else {
        Err(PlannerError::NonFinite)
    }
}

/// One MPC-iCEM planning cycle over action sequences.
///
/// The sampling mean starts from `prev_plan` shifted by one step (last action
/// repeated); candidates are `mean + std * colored_noise`, clamped to the
/// action bound. Returns the best elite sequence.
pub fn mpc_icem_plan<M, const D: usize>(
    s0: &State<f64, D>,
    prev_plan: &[SVector<f64, D>],
    cfg: &PlannerConfig,
    model: &M,
    rng_seed: u64,
) -> Result<ActionPlan<D>, PlannerError>
where
    M: DynamicsModel<D> + ?Sized,
{
    cfg.validate()?;
    let h = cfg.horizon;
    let bound = cfg.action_bound;
    let mut mean = shifted(prev_plan, h);
    let mut std = vec![SVector::<f64, D>::repeat(cfg.init_std); h];
    let mut elites: Vec<Candidate<Vec<SVector<f64, D>>>> = Vec::new();
    let mut diagnostics = Vec::with_capacity(cfg.n_iters);
    for it in 0..cfg.n_iters {
        let fresh: Vec<Candidate<Vec<SVector<f64, D>>>> = (0..cfg.n_samples)
            .into_par_iter()
            .map(|j| {
                let noise = colored_noise(h, D, cfg.noise_exponent, split_seed(rng_seed, j as u64, it as u64));
                let actions: Vec<SVector<f64, D>> = (0..h)
                    .map(|t| {
                        SVector::from_fn(|d, _| (mean[t][d] + std[t][d] * noise[d][t]).clamp(-bound, bound))
                    })
                    .collect();
                Ok(Candidate { score: open_loop(model, s0, &actions)?, index: j, payload: actions })
            })
            .collect::<Result<_, PlannerError>>()?;
        let mut pool = fresh;
        if cfg.reuse_elites {
            // open-loop rollouts are deterministic, so carried scores stay valid
            let carried = std::mem::take(&mut elites);
            pool.extend(carried.into_iter().enumerate().map(|(k, c)| Candidate { index: cfg.n_samples + k, ..c }));
        }
        rank(&mut pool);
        pool.truncate(cfg.n_elites);
        elites = pool;
        diagnostics.push(stats(it, &elites));

        let k = elites.len() as f64;
        let keep = cfg.momentum;
        for t in 0..h {
            let m = elites.iter().map(|c| c.payload[t]).sum::<SVector<f64, D>>() / k;
            let var = elites.iter().map(|c| (c.payload[t] - m).map(|x| x * x)).sum::<SVector<f64, D>>() / k;
            mean[t] = mean[t] * keep + m * (1.0 - keep);
            std[t] = std[t] * keep + var.map(f64::sqrt) * (1.0 - keep);
        }
    }
    Ok(ActionPlan { actions: elites[0].payload.clone(), mean, std, diagnostics })
}
