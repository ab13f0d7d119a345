//! Best-effort asynchronous execution on a real planner thread.
//!
//! The environment advances every `step_period` regardless of the planner;
//! results are picked up whenever they arrive. Timing depends on the machine,
//! so episodes are not reproducible and nothing here feeds the acceptance numbers.

use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use hipbi::dirichlet::DirichletParams;
use hipbi::env::{PlanarEnv, PlanarState, ScenarioSpec, Vec2};
use hipbi::experts::{ExpertError, ExpertSet};
use hipbi::fusion::fused_mean;
use hipbi::planner::{hipbi_plan, mpc_icem_plan, PlannerConfig, PlannerError};
use hipbi::seed::split_seed;

use crate::episode::{reactive_beta, Controller, ControllerKind, EpisodeError, EpisodeRecord};

enum Delivery {
    Weights(DirichletParams<f64>),
    Actions { start: usize, actions: Vec<Vec2> },
}

enum Request {
    Weights(PlanarState, DirichletParams<f64>),
    Actions(PlanarState, Vec<Vec2>),
}

fn plan(
    req: Request,
    cfg: &PlannerConfig,
    env: &PlanarEnv,
    experts: &ExpertSet,
    seed: u64,
) -> Result<Delivery, PlannerError> {
    match req {
        Request::Weights(s, prev) => {
            let p = hipbi_plan(&s, &prev, cfg, env, experts, split_seed(seed, 0, s.context.t as u64))?;
            Ok(Delivery::Weights(p.posterior))
        }
        Request::Actions(s, prev) => {
            let p = mpc_icem_plan(&s, &prev, cfg, env, split_seed(seed, 0, s.context.t as u64))?;
            Ok(Delivery::Actions { start: s.context.t, actions: p.actions })
        }
    }
}

/// Runs one episode with the planner on its own thread.
pub fn run_episode_wall_clock(
    env: &PlanarEnv,
    spec: &ScenarioSpec,
    experts_for: impl Fn(&PlanarState) -> Result<ExpertSet, ExpertError>,
    controller: &Controller,
    n_iters: usize,
    step_period: Duration,
    seed: u64,
) -> Result<EpisodeRecord, EpisodeError> {
    let mut state = env.reset(spec)?;
    let experts = experts_for(&state)?;
    let n = experts.len();
    let cfg = PlannerConfig { n_iters, ..controller.planner.clone() };
    let fixed = reactive_beta(controller.fixed_beta.as_deref(), n)?;
    let mut posterior = DirichletParams::symmetric(n, controller.prior_concentration)
        .map_err(|e| EpisodeError::Mismatch(e.to_string()))?;
    let mut beta = match controller.kind {
        ControllerKind::ReactiveFixed => fixed,
        _ => posterior.mean(),
    };
    let mut plan_actions: Option<(usize, Vec<Vec2>)> = None;

    let (req_tx, req_rx) = mpsc::channel::<Request>();
    let (res_tx, res_rx) = mpsc::channel::<Result<Delivery, PlannerError>>();
    let planning = controller.kind != ControllerKind::ReactiveFixed;

    let result = thread::scope(|scope| -> Result<EpisodeRecord, EpisodeError> {
        let experts_ref = &experts;
        let cfg_ref = &cfg;
        scope.spawn(move || {
            for req in req_rx {
                if res_tx.send(plan(req, cfg_ref, env, experts_ref, seed)).is_err() {
                    break;
                }
            }
        });

        let mut busy = false;
        let mut safe = true;
        let mut success_at = None;
        let mut evals = Vec::with_capacity(n);
        for t in 0..env.arena.max_steps {
            let tick = Instant::now();
            safe &= !env.in_collision(&state);
            if env.reached_goal(&state) {
                success_at = Some(t);
                break;
            }
            if planning {
                while let Ok(delivery) = res_rx.try_recv() {
                    busy = false;
                    match delivery? {
                        Delivery::Weights(post) => {
                            beta = post.mean();
                            posterior = post;
                        }
                        Delivery::Actions { start, actions } => plan_actions = Some((start, actions)),
                    }
                }
                if !busy {
                    let req = match controller.kind {
                        ControllerKind::Hipbi => Request::Weights(state.clone(), posterior.clone()),
                        _ => {
                            let prev = plan_actions
                                .as_ref()
                                .map(|(start, a)| a[(t - start).min(a.len() - 1)..].to_vec())
                                .unwrap_or_default();
                            Request::Actions(state.clone(), prev)
                        }
                    };
                    busy = req_tx.send(req).is_ok();
                }
            }
            let a = match controller.kind {
                ControllerKind::MpcIcem => match &plan_actions {
                    Some((start, actions)) => actions[(t - start).min(actions.len() - 1)],
                    None => Vec2::zeros(),
                },
                _ => {
                    experts.evaluate_into(&state, &mut evals)?;
                    fused_mean(&evals, beta.as_slice())?
                }
            };
            if !(a.x.is_finite() && a.y.is_finite()) {
                return Err(EpisodeError::NonFiniteAction(t));
            }
            env.step_in_place(&mut state, &a);
            if let Some(rest) = step_period.checked_sub(tick.elapsed()) {
                thread::sleep(rest);
            }
        }
        if success_at.is_none() {
            safe &= !env.in_collision(&state);
        }
        drop(req_tx);
        Ok(EpisodeRecord {
            suc: success_at.is_some(),
            safe,
            l2d: state.goal_distance().unwrap_or(0.0),
            ts: success_at.unwrap_or(env.arena.max_steps),
            arena: [env.arena.width, env.arena.height],
            trace: Vec::new(),
        })
    });
    result
}
