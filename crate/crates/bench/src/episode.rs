//! Single-episode execution.
//!
//! Async mode uses a deterministic latency model. Cycle `k` starts at step
//! `t_k = k * L` from the state observed then, and its result becomes active at
//! step `t_k + L - 1`, just before the next cycle starts. With `L = 1` every
//! result is active on the step it was planned for, which is exactly sync mode.

use hipbi::dirichlet::DirichletParams;
use hipbi::env::{PlanarEnv, PlanarState, ScenarioSpec, Vec2};
use hipbi::experts::{ExpertError, ExpertEval, ExpertSet};
use hipbi::fusion::{fused_mean, BlendWeights, FusionError};
use hipbi::planner::{hipbi_plan, mpc_icem_plan, IterationStats, PlannerConfig, PlannerError};
use hipbi::seed::split_seed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Fixed blend weights, no planning.
    ReactiveFixed,
    Hipbi,
    MpcIcem,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::ReactiveFixed => "reactive_fixed",
            ControllerKind::Hipbi => "hipbi",
            ControllerKind::MpcIcem => "mpc_icem",
        }
    }
}

/// A controller with everything it needs except the scenario-sized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub kind: ControllerKind,
    pub planner: PlannerConfig,
    pub prior_concentration: f64,
    /// Reactive weights; uniform when `None`.
    pub fixed_beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutionMode {
    Sync,
    Async { latency_steps: usize, n_iters: usize },
}

impl ExecutionMode {
    pub fn latency(&self) -> usize {
        match self {
            ExecutionMode::Sync => 1,
            ExecutionMode::Async { latency_steps, .. } => *latency_steps,
        }
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("scenario: {0}")]
    Scenario(#[from] hipbi::env::EnvError),
    #[error("experts: {0}")]
    Expert(#[from] ExpertError),
    #[error("fusion: {0}")]
    Fusion(#[from] FusionError),
    #[error("planner: {0}")]
    Planner(#[from] PlannerError),
    #[error("controller/scenario mismatch: {0}")]
    Mismatch(String),
    #[error("controller produced a non-finite action at step {0}")]
    NonFiniteAction(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSnapshot {
    pub center: [f64; 2],
    pub velocity: [f64; 2],
    pub radius: f64,
}

/// One line of the trace. The last step of an episode has no action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub q: [f64; 2],
    pub qdot: [f64; 2],
    pub action: Option<[f64; 2]>,
    pub beta: Option<Vec<f64>>,
    pub goal: [f64; 2],
    pub obstacles: Vec<ObstacleSnapshot>,
    /// Elite scores of a planning cycle delivered at this step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Vec<IterationStats>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub suc: bool,
    pub safe: bool,
    pub l2d: f64,
    pub ts: usize,
    /// Arena width and height, for plotting.
    pub arena: [f64; 2],
    pub trace: Vec<TraceStep>,
}

fn arr(v: &Vec2) -> [f64; 2] {
    [v.x, v.y]
}

fn snapshot(
    s: &PlanarState,
    action: Option<&Vec2>,
    beta: Option<&BlendWeights<f64>>,
    diagnostics: Option<Vec<IterationStats>>,
) -> TraceStep {
    TraceStep {
        t: s.context.t,
        q: arr(&s.q),
        qdot: arr(&s.qdot),
        action: action.map(arr),
        beta: beta.map(|b| b.as_slice().to_vec()),
        goal: arr(&s.context.goal.unwrap_or_else(Vec2::zeros)),
        obstacles: s
            .context
            .obstacles
            .iter()
            .map(|o| ObstacleSnapshot { center: arr(&o.center), velocity: arr(&o.velocity), radius: o.radius })
            .collect(),
        diagnostics,
    }
}

/// Mutable per-episode controller state.
enum Policy {
    Fixed(BlendWeights<f64>),
    Hipbi {
        cfg: PlannerConfig,
        posterior: DirichletParams<f64>,
        active: BlendWeights<f64>,
        pending: Option<(usize, DirichletParams<f64>, Vec<IterationStats>)>,
    },
    Mpc {
        cfg: PlannerConfig,
        /// Delivered plan and the step its first action belongs to.
        active: Option<(usize, Vec<Vec2>)>,
        pending: Option<(usize, usize, Vec<Vec2>, Vec<IterationStats>)>,
    },
}

struct Runner<'a> {
    env: &'a PlanarEnv,
    experts: &'a ExpertSet,
    mode: ExecutionMode,
    seed: u64,
    evals: Vec<ExpertEval<f64, 2>>,
}

impl Runner<'_> {
    fn blended(&mut self, s: &PlanarState, beta: &BlendWeights<f64>) -> Result<Vec2, EpisodeError> {
        self.experts.evaluate_into(s, &mut self.evals)?;
        Ok(fused_mean(&self.evals, beta.as_slice())?)
    }

    /// Chooses the action at `s`; returns it with the weights used and any
    /// diagnostics delivered at this step.
    fn act(
        &mut self,
        policy: &mut Policy,
        s: &PlanarState,
    ) -> Result<(Vec2, Option<BlendWeights<f64>>, Option<Vec<IterationStats>>), EpisodeError> {
        let t = s.context.t;
        let latency = self.mode.latency();
        let launch = t % latency == 0;
        let cycle_seed = split_seed(self.seed, 0, t as u64);
        match policy {
            Policy::Fixed(beta) => {
                let beta = beta.clone();
                Ok((self.blended(s, &beta)?, Some(beta), None))
            }
            Policy::Hipbi { cfg, posterior, active, pending } => {
                if launch {
                    let plan = hipbi_plan(s, posterior, cfg, self.env, self.experts, cycle_seed)?;
                    *pending = Some((t + latency - 1, plan.posterior, plan.diagnostics));
                }
                let mut diag = None;
                if pending.as_ref().is_some_and(|p| p.0 == t) {
                    let (_, post, d) = pending.take().expect("checked above");
                    *active = post.mean();
                    *posterior = post;
                    diag = Some(d);
                }
                let beta = active.clone();
                Ok((self.blended(s, &beta)?, Some(beta), diag))
            }
            Policy::Mpc { cfg, active, pending } => {
                if launch {
                    // drop the steps that elapsed since the previous plan started,
                    // minus the one the planner shifts by itself
                    let prev: &[Vec2] = match active {
                        Some((_, plan)) => &plan[(latency - 1).min(plan.len() - 1)..],
                        None => &[],
                    };
                    let plan = mpc_icem_plan(s, prev, cfg, self.env, cycle_seed)?;
                    *pending = Some((t + latency - 1, t, plan.actions, plan.diagnostics));
                }
                let mut diag = None;
                if pending.as_ref().is_some_and(|p| p.0 == t) {
                    let (_, start, actions, d) = pending.take().expect("checked above");
                    *active = Some((start, actions));
                    diag = Some(d);
                }
                let a = match active {
                    Some((start, plan)) => {
                        let i = (t - *start).min(plan.len() - 1);
                        plan[i]
                    }
                    None => Vec2::zeros(),
                };
                Ok((a, None, diag))
            }
        }
    }
}

/// Weights for the reactive baseline: `fixed` when given, else uniform.
pub fn reactive_beta(fixed: Option<&[f64]>, n: usize) -> Result<BlendWeights<f64>, EpisodeError> {
    match fixed {
        Some(b) if b.len() != n => Err(EpisodeError::Mismatch(format!("fixed_beta has {} entries for {n} experts", b.len()))),
        Some(b) => Ok(BlendWeights::new(b.to_vec())?),
        None => Ok(BlendWeights::uniform(n)),
    }
}

/// Runs one episode. `experts_for` builds the expert set from the initial state.
pub fn run_episode(
    env: &PlanarEnv,
    spec: &ScenarioSpec,
    experts_for: impl Fn(&PlanarState) -> Result<ExpertSet, ExpertError>,
    controller: &Controller,
    mode: ExecutionMode,
    seed: u64,
    keep_trace: bool,
) -> Result<EpisodeRecord, EpisodeError> {
    let mut state = env.reset(spec)?;
    let experts = experts_for(&state)?;
    let n = experts.len();
    let planner = match mode {
        ExecutionMode::Async { n_iters, .. } => PlannerConfig { n_iters, ..controller.planner.clone() },
        ExecutionMode::Sync => controller.planner.clone(),
    };
    let mut policy = match controller.kind {
        ControllerKind::ReactiveFixed => Policy::Fixed(reactive_beta(controller.fixed_beta.as_deref(), n)?),
        ControllerKind::Hipbi => {
            let prior = DirichletParams::symmetric(n, controller.prior_concentration)
                .map_err(|e| EpisodeError::Mismatch(e.to_string()))?;
            Policy::Hipbi { cfg: planner, active: prior.mean(), posterior: prior, pending: None }
        }
        ControllerKind::MpcIcem => Policy::Mpc { cfg: planner, active: None, pending: None },
    };
    let mut runner = Runner { env, experts: &experts, mode, seed, evals: Vec::with_capacity(n) };

    let max_steps = env.arena.max_steps;
    let mut trace = Vec::new();
    let mut safe = true;
    let mut success_at = None;
    for t in 0..max_steps {
        safe &= !env.in_collision(&state);
        if env.reached_goal(&state) {
            success_at = Some(t);
            break;
        }
        let (a, beta, diag) = runner.act(&mut policy, &state)?;
        if !(a.x.is_finite() && a.y.is_finite()) {
            return Err(EpisodeError::NonFiniteAction(t));
        }
        if keep_trace {
            trace.push(snapshot(&state, Some(&a), beta.as_ref(), diag));
        }
        env.step_in_place(&mut state, &a);
    }
    if success_at.is_none() {
        safe &= !env.in_collision(&state);
    }
    if keep_trace {
        trace.push(snapshot(&state, None, None, None));
    }
    Ok(EpisodeRecord {
        suc: success_at.is_some(),
        safe,
        l2d: state.goal_distance().unwrap_or(0.0),
        ts: success_at.unwrap_or(max_steps),
        arena: [env.arena.width, env.arena.height],
        trace,
    })
}
