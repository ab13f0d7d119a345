//! Run configuration: a versioned TOML document.
//!
//! Sections: `arena`, `cost`, `scenario`, `experts`, `planner`, `controller`,
//! `mode`, `sweep`. Only `schema_version` is mandatory; everything else
//! falls back to the defaults below. See `configs/*.toml` for annotated profiles.

use std::path::Path;

use hipbi::env::{Arena, BoxLayout, CostWeights, EnvKind, MazeLayout, PlanarEnv, PlanarState, ScenarioSpec};
use hipbi::experts::{AttractorParams, CurlParams, CurlSign, DamperParams, ExpertSet, ExpertSpec, RepulsorParams};
use hipbi::planner::PlannerConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{ControllerKind, ExecutionMode};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub arena: Arena,
    #[serde(default)]
    pub cost: CostWeights,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default = "default_experts")]
    pub experts: Vec<ExpertEntry>,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub env: EnvKind,
    pub box_speed: f64,
    pub n_obstacles: usize,
    pub n_dynamic: usize,
    #[serde(rename = "box")]
    pub box_layout: BoxLayout,
    pub maze: MazeLayout,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::ToyBox,
            box_speed: 10.0,
            n_obstacles: 12,
            n_dynamic: 4,
            box_layout: BoxLayout::default(),
            maze: MazeLayout::default(),
        }
    }
}

/// One entry of the expert list. `repulsor` expands to one expert per
/// obstacle and `curl` to a positive/negative pair that reuses the goal
/// attractor's gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpertEntry {
    Goal {
        position_gain: f64,
        damping_gain: f64,
        soft_norm: f64,
        precision: f64,
    },
    Repulsor {
        repulsion_scale: f64,
        influence_radius: f64,
        far_precision: f64,
        near_precision: f64,
        tangential_ratio: f64,
    },
    Curl {
        curl_scale: f64,
        precision: f64,
    },
    Damper {
        damping_gain: f64,
        precision: f64,
    },
}

fn default_experts() -> Vec<ExpertEntry> {
    vec![
        ExpertEntry::Goal { position_gain: 6.0, damping_gain: 0.3, soft_norm: 20.0, precision: 1.0 },
        ExpertEntry::Curl { curl_scale: 1.0, precision: 1.0 },
        ExpertEntry::Damper { damping_gain: 0.3, precision: 1.0 },
        ExpertEntry::Repulsor {
            repulsion_scale: 40000.0,
            influence_radius: 150.0,
            far_precision: 0.01,
            near_precision: 2.0,
            tangential_ratio: 0.3,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    /// Symmetric prior concentration for HiPBI's first cycle.
    pub prior_concentration: f64,
    /// Reactive weights; uniform over the expanded expert set when absent.
    pub fixed_beta: Option<Vec<f64>>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { kind: ControllerKind::Hipbi, prior_concentration: 1.0, fixed_beta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeConfig {
    pub kind: ModeKind,
    /// Environment steps per planning cycle in async mode.
    pub latency_steps: usize,
    /// CEM iterations per async cycle.
    pub async_n_iters: usize,
    /// Real threads instead of the step-latency model. Not reproducible.
    pub wall_clock: bool,
    /// Wall-clock mode only: environment step period.
    pub step_period_ms: u64,
}

impl Default for ModeConfig {
    fn default() -> Self {
        Self { kind: ModeKind::Sync, latency_steps: 10, async_n_iters: 1, wall_clock: false, step_period_ms: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Sync,
    Async,
}

impl ModeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModeKind::Sync => "sync",
            ModeKind::Async => "async",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub episodes: usize,
    pub seed_base: u64,
    pub controllers: Vec<ControllerKind>,
    pub modes: Vec<ModeKind>,
    pub horizons: Vec<usize>,
    pub speeds: Vec<f64>,
    /// Horizon used by `ablate-speed`.
    pub ablation_horizon: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            seed_base: 0,
            controllers: vec![ControllerKind::ReactiveFixed, ControllerKind::Hipbi, ControllerKind::MpcIcem],
            modes: vec![ModeKind::Sync, ModeKind::Async],
            horizons: vec![25, 50, 75],
            speeds: vec![0.0, 10.0, 20.0, 30.0],
            ablation_horizon: 75,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            arena: Arena::default(),
            cost: CostWeights::default(),
            scenario: ScenarioConfig::default(),
            experts: default_experts(),
            planner: PlannerConfig::default(),
            controller: ControllerConfig::default(),
            mode: ModeConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        let a = &self.arena;
        if !(a.width > 0.0 && a.height > 0.0 && a.dt > 0.0 && a.goal_radius > 0.0 && a.v_max > 0.0) {
            return invalid("arena dimensions, dt, goal_radius and v_max must be positive");
        }
        if a.max_steps == 0 || !(a.particle_radius >= 0.0) {
            return invalid("max_steps must be positive and particle_radius non-negative");
        }
        let c = &self.cost;
        if [c.goal, c.collision, c.proximity, c.control].iter().any(|w| !(*w >= 0.0)) || !(c.proximity_radius > 0.0) {
            return invalid("cost weights must be non-negative and proximity_radius positive");
        }
        ScenarioSpec { box_speed: self.scenario.box_speed, ..self.scenario_spec(0) }
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !self.experts.iter().any(|e| matches!(e, ExpertEntry::Goal { .. })) {
            return invalid("experts need a goal entry");
        }
        // every expert parameter goes through the library's own checks
        self.expand_experts(1).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.planner.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.controller.prior_concentration > 0.0 && self.controller.prior_concentration.is_finite()) {
            return invalid("prior_concentration must be positive");
        }
        if let Some(beta) = &self.controller.fixed_beta {
            if self.scenario.env == EnvKind::ToyBox {
                // the box's circle count is fixed by its layout, so the length is checkable up front
                let env = self.env();
                let state = env.reset(&self.scenario_spec(0)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let n = self.experts_for(&state).map_err(|e| ConfigError::Invalid(e.to_string()))?.len();
                if beta.len() != n {
                    return invalid(format!("fixed_beta has {} entries for {n} experts", beta.len()));
                }
            }
            hipbi::BlendWeights::new(beta.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.mode.latency_steps == 0 || self.mode.async_n_iters == 0 {
            return invalid("latency_steps and async_n_iters must be at least 1");
        }
        if self.sweep.episodes == 0 {
            return invalid("sweep.episodes must be at least 1");
        }
        if self.sweep.horizons.iter().any(|&h| h == 0) || self.sweep.ablation_horizon == 0 {
            return invalid("horizons must be at least 1");
        }
        if self.sweep.speeds.iter().any(|s| !(0.0..=hipbi::env::MAX_BOX_SPEED).contains(s)) {
            return invalid("sweep speeds must lie in [0, 30]");
        }
        Ok(())
    }

    pub fn env(&self) -> PlanarEnv {
        PlanarEnv {
            arena: self.arena,
            cost: self.cost,
            box_layout: self.scenario.box_layout,
            maze_layout: self.scenario.maze,
        }
    }

    pub fn scenario_spec(&self, seed: u64) -> ScenarioSpec {
        let s = &self.scenario;
        ScenarioSpec {
            env_kind: s.env,
            seed,
            n_obstacles: s.n_obstacles,
            n_dynamic: s.n_dynamic,
            box_speed: s.box_speed,
            spawn_region: None,
        }
    }

    pub fn execution_mode(&self, kind: ModeKind) -> ExecutionMode {
        match kind {
            ModeKind::Sync => ExecutionMode::Sync,
            ModeKind::Async => ExecutionMode::Async { latency_steps: self.mode.latency_steps, n_iters: self.mode.async_n_iters },
        }
    }

    fn goal_params(&self) -> Option<AttractorParams> {
        self.experts.iter().find_map(|e| match *e {
            ExpertEntry::Goal { position_gain, damping_gain, soft_norm, precision } => {
                Some(AttractorParams { position_gain, damping_gain, soft_norm, precision })
            }
            _ => None,
        })
    }

    fn expand_experts(&self, n_obstacles: usize) -> Result<ExpertSet, hipbi::experts::ExpertError> {
        let goal = self.goal_params();
        let mut specs = Vec::new();
        for e in &self.experts {
            match *e {
                ExpertEntry::Goal { position_gain, damping_gain, soft_norm, precision } => {
                    specs.push(ExpertSpec::GoalAttractor(AttractorParams { position_gain, damping_gain, soft_norm, precision }))
                }
                ExpertEntry::Repulsor { repulsion_scale, influence_radius, far_precision, near_precision, tangential_ratio } => {
                    let params = RepulsorParams {
                        repulsion_scale,
                        influence_radius,
                        far_precision,
                        near_precision,
                        tangential_ratio,
                        particle_radius: self.arena.particle_radius,
                    };
                    specs.extend((0..n_obstacles).map(|obstacle| ExpertSpec::ObstacleRepulsor { obstacle, params }));
                }
                ExpertEntry::Curl { curl_scale, precision } => {
                    let attractor = goal.ok_or(hipbi::experts::ExpertError::MissingGoal)?;
                    let params = CurlParams { curl_scale, precision, attractor };
                    specs.push(ExpertSpec::Curl { sign: CurlSign::Positive, params });
                    specs.push(ExpertSpec::Curl { sign: CurlSign::Negative, params });
                }
                ExpertEntry::Damper { damping_gain, precision } => {
                    specs.push(ExpertSpec::VelocityDamper(DamperParams { damping_gain, precision }))
                }
            }
        }
        ExpertSet::new(specs)
    }

    /// The expert set for a concrete scenario: one repulsor per obstacle of `state`.
    pub fn experts_for(&self, state: &PlanarState) -> Result<ExpertSet, hipbi::experts::ExpertError> {
        self.expand_experts(state.context.obstacles.len())
    }

    /// Planner settings with the horizon (and optionally iteration count) overridden.
    pub fn planner_with(&self, horizon: usize) -> PlannerConfig {
        PlannerConfig { horizon, ..self.planner.clone() }
    }
}
