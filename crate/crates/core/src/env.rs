//! Planar point-mass environments: the moving toy box and the toy maze.
//!
//! Dynamics are a double integrator with semi-implicit Euler and a speed
//! limit. Obstacles move at constant velocity and reflect off their motion
//! bounds; the toy box is a rigid ring of circles (open at the top) carried
//! by a [`Carrier`] that also carries the goal.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{Bounds, Carrier, Context, Obstacle, State};

pub type Vec2 = Vector2<f64>;
pub type PlanarState = State<f64, 2>;
pub type PlanarObstacle = Obstacle<f64, 2>;

/// Largest toy-box speed the scenario generator accepts (units per step).
pub const MAX_BOX_SPEED: f64 = 30.0;

const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("no collision-free start/goal after {0} attempts")]
    Infeasible(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub goal_radius: f64,
    pub particle_radius: f64,
    pub v_max: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Self {
            width: 1000.0,
            height: 1000.0,
            dt: 1.0,
            max_steps: 500,
            goal_radius: 15.0,
            particle_radius: 5.0,
            v_max: 30.0,
        }
    }
}

impl Arena {
    pub fn bounds(&self) -> Bounds<f64, 2> {
        Bounds::new(Vec2::zeros(), Vec2::new(self.width, self.height))
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(0.5 * self.width, 0.5 * self.height)
    }
}

/// Weights of the per-step cost `c(s, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    /// Multiplies the goal distance normalized by the arena diagonal.
    pub goal: f64,
    pub collision: f64,
    pub proximity: f64,
    /// Clearance below which the proximity penalty is active.
    pub proximity_radius: f64,
    pub control: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { goal: 1.0, collision: 10.0, proximity: 1.0, proximity_radius: 30.0, control: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxLayout {
    /// Outer side length of the box.
    pub width: f64,
    pub wall_thickness: f64,
    /// Spacing of the wall circles along the wall midline.
    pub circle_spacing: f64,
    /// Half range of the box's horizontal travel around the arena centre.
    pub travel: f64,
    /// Horizontal start distance from the arena centre, sampled uniformly.
    /// Keep it above `width / 2 + travel` so the box never sweeps over the start.
    pub start_offset: [f64; 2],
    /// Vertical start offset from the arena centre, sampled uniformly in `[-v, v]`.
    pub start_vertical: f64,
}

impl Default for BoxLayout {
    fn default() -> Self {
        Self {
            width: 300.0,
            wall_thickness: 20.0,
            circle_spacing: 20.0,
            travel: 60.0,
            start_offset: [330.0, 420.0],
            start_vertical: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeLayout {
    pub radius: [f64; 2],
    pub speed: [f64; 2],
    /// Margin of the start/goal strips from the arena's left and right edges.
    pub edge_margin: f64,
    /// Width of the start/goal strips.
    pub strip_width: f64,
}

impl Default for MazeLayout {
    fn default() -> Self {
        Self { radius: [25.0, 45.0], speed: [1.0, 4.0], edge_margin: 100.0, strip_width: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    ToyBox,
    ToyMaze,
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::ToyBox => "toy_box",
            EnvKind::ToyMaze => "toy_maze",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub env_kind: EnvKind,
    pub seed: u64,
    /// Maze obstacle count `m`.
    pub n_obstacles: usize,
    /// How many maze obstacles move.
    pub n_dynamic: usize,
    /// Toy-box speed in units per step, within `[0, 30]`.
    pub box_speed: f64,
    /// Maze spawn area; defaults to the corridor between the start and goal strips.
    pub spawn_region: Option<Bounds<f64, 2>>,
}

impl ScenarioSpec {
    pub fn toy_box(seed: u64, box_speed: f64) -> Self {
        Self { env_kind: EnvKind::ToyBox, seed, n_obstacles: 0, n_dynamic: 0, box_speed, spawn_region: None }
    }

    pub fn toy_maze(seed: u64, n_obstacles: usize, n_dynamic: usize) -> Self {
        Self { env_kind: EnvKind::ToyMaze, seed, n_obstacles, n_dynamic, box_speed: 0.0, spawn_region: None }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=MAX_BOX_SPEED).contains(&self.box_speed) {
            return Err(EnvError::InvalidSpec(format!("box_speed {} outside [0, {MAX_BOX_SPEED}]", self.box_speed)));
        }
        if self.n_dynamic > self.n_obstacles {
            return Err(EnvError::InvalidSpec(format!(
                "n_dynamic {} exceeds n_obstacles {}",
                self.n_dynamic, self.n_obstacles
            )));
        }
        Ok(())
    }
}

/// Environment definition; value-semantic, so planner rollouts work on copies of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarEnv {
    pub arena: Arena,
    pub cost: CostWeights,
    pub box_layout: BoxLayout,
    pub maze_layout: MazeLayout,
}

impl Default for PlanarEnv {
    fn default() -> Self {
        Self {
            arena: Arena::default(),
            cost: CostWeights::default(),
            box_layout: BoxLayout::default(),
            maze_layout: MazeLayout::default(),
        }
    }
}

impl PlanarEnv {
    pub fn reset(&self, spec: &ScenarioSpec) -> Result<PlanarState, EnvError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for _ in 0..MAX_RESAMPLES {
            let state = match spec.env_kind {
                EnvKind::ToyBox => self.sample_box(spec, &mut rng),
                EnvKind::ToyMaze => self.sample_maze(spec, &mut rng),
            };
            let goal = state.context.goal.expect("scenarios always have a goal");
            let mut at_goal = state.clone();
            at_goal.q = goal;
            if !self.in_collision(&state) && !self.in_collision(&at_goal) {
                return Ok(state);
            }
        }
        Err(EnvError::Infeasible(MAX_RESAMPLES))
    }

    fn sample_box(&self, spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> PlanarState {
        let layout = &self.box_layout;
        let center = self.arena.center();
        let motion_bounds = Bounds::new(
            Vec2::new(center.x - layout.travel, center.y),
            Vec2::new(center.x + layout.travel, center.y),
        );
        let anchor = Vec2::new(rng.gen_range(motion_bounds.lo.x..=motion_bounds.hi.x), center.y);
        let direction = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let velocity = Vec2::new(direction * spec.box_speed, 0.0);

        let radius = 0.5 * layout.wall_thickness;
        let inner = 0.5 * layout.width - radius;
        let per_side = (2.0 * inner / layout.circle_spacing).round().max(1.0) as usize;
        let step = 2.0 * inner / per_side as f64;
        let mut offsets = Vec::new();
        // left and right walls, bottom to top
        for side in [-1.0, 1.0] {
            for k in 0..=per_side {
                offsets.push(Vec2::new(side * inner, -inner + k as f64 * step));
            }
        }
        // bottom wall without the corners; the top stays open
        for k in 1..per_side {
            offsets.push(Vec2::new(-inner + k as f64 * step, -inner));
        }
        let obstacles = offsets
            .into_iter()
            .map(|offset| Obstacle {
                center: anchor + offset,
                velocity,
                radius,
                motion_bounds,
                carried_offset: Some(offset),
            })
            .collect();

        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let dx = rng.gen_range(layout.start_offset[0]..=layout.start_offset[1]);
        let dy = rng.gen_range(-layout.start_vertical..=layout.start_vertical);
        let q = Vec2::new(center.x + side * dx, center.y + dy);
        State {
            q,
            qdot: Vec2::zeros(),
            context: Context {
                t: 0,
                goal: Some(anchor),
                obstacles,
                arena: self.arena.bounds(),
                carrier: Some(Carrier { anchor, velocity, motion_bounds, carries_goal: true }),
            },
        }
    }

    fn sample_maze(&self, spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> PlanarState {
        let layout = &self.maze_layout;
        let a = &self.arena;
        let y_range = 0.1 * a.height..=0.9 * a.height;
        let start = Vec2::new(
            rng.gen_range(layout.edge_margin..=layout.edge_margin + layout.strip_width),
            rng.gen_range(y_range.clone()),
        );
        let goal = Vec2::new(
            rng.gen_range(a.width - layout.edge_margin - layout.strip_width..=a.width - layout.edge_margin),
            rng.gen_range(y_range),
        );
        let region = spec.spawn_region.unwrap_or_else(|| {
            let gap = layout.radius[1] + a.particle_radius + 10.0;
            let lo_y = (start.y.min(goal.y) - 150.0).max(0.0);
            let hi_y = (start.y.max(goal.y) + 150.0).min(a.height);
            Bounds::new(Vec2::new(start.x + gap, lo_y), Vec2::new(goal.x - gap, hi_y))
        });
        let obstacles = (0..spec.n_obstacles)
            .map(|i| {
                let center = Vec2::new(
                    rng.gen_range(region.lo.x..=region.hi.x),
                    rng.gen_range(region.lo.y..=region.hi.y),
                );
                let radius = rng.gen_range(layout.radius[0]..=layout.radius[1]);
                let velocity = if i < spec.n_dynamic {
                    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
                    let speed = rng.gen_range(layout.speed[0]..=layout.speed[1]);
                    Vec2::new(heading.cos(), heading.sin()) * speed
                } else {
                    Vec2::zeros()
                };
                Obstacle { center, velocity, radius, motion_bounds: region, carried_offset: None }
            })
            .collect();
        State {
            q: start,
            qdot: Vec2::zeros(),
            context: Context { t: 0, goal: Some(goal), obstacles, arena: a.bounds(), carrier: None },
        }
    }

    /// Advances the state by one step in place.
    pub fn step_in_place(&self, state: &mut PlanarState, a: &Vec2) {
        let dt = self.arena.dt;
        let mut v = state.qdot + a * dt;
        let speed = v.norm();
        if speed > self.arena.v_max {
            v *= self.arena.v_max / speed;
        }
        state.qdot = v;
        state.q += v * dt;
        advance_obstacles(&mut state.context, dt);
        state.context.t += 1;
    }

    pub fn step(&self, state: &PlanarState, a: &Vec2) -> PlanarState {
        let mut next = state.clone();
        self.step_in_place(&mut next, a);
        next
    }

    /// Clearance between the particle and each obstacle surface.
    fn clearance(&self, q: &Vec2, o: &PlanarObstacle) -> f64 {
        (q - o.center).norm() - o.radius - self.arena.particle_radius
    }

    pub fn in_collision(&self, state: &PlanarState) -> bool {
        !state.context.arena.contains(&state.q)
            || state.context.obstacles.iter().any(|o| self.clearance(&state.q, o) <= 0.0)
    }

    pub fn reached_goal(&self, state: &PlanarState) -> bool {
        state.goal_distance().is_some_and(|d| d <= self.arena.goal_radius)
    }

    /// `c = w_goal |q - g| / diag + w_col [collision] + w_prox sum (1 - d_i/r)_+^2 + w_ctrl |a|^2`.
    pub fn cost(&self, state: &PlanarState, a: &Vec2) -> f64 {
        let w = &self.cost;
        let goal_term = state.goal_distance().map_or(0.0, |d| d / self.arena.diagonal());
        let mut collided = !state.context.arena.contains(&state.q);
        let mut proximity = 0.0;
        for o in &state.context.obstacles {
            let d = self.clearance(&state.q, o);
            if d <= 0.0 {
                collided = true;
            }
            let closeness = 1.0 - d.max(0.0) / w.proximity_radius;
            if closeness > 0.0 {
                proximity += closeness * closeness;
            }
        }
        w.goal * goal_term
            + if collided { w.collision } else { 0.0 }
            + w.proximity * proximity
            + w.control * a.norm_squared()
    }
}

fn advance_obstacles(ctx: &mut Context<f64, 2>, dt: f64) {
    if let Some(carrier) = ctx.carrier.as_mut() {
        carrier.anchor += carrier.velocity * dt;
        carrier.motion_bounds.reflect(&mut carrier.anchor, &mut carrier.velocity);
        if carrier.carries_goal {
            ctx.goal = Some(carrier.anchor);
        }
    }
    for o in ctx.obstacles.iter_mut() {
        match (o.carried_offset, ctx.carrier.as_ref()) {
            (Some(offset), Some(carrier)) => {
                o.center = carrier.anchor + offset;
                o.velocity = carrier.velocity;
            }
            _ => {
                o.center += o.velocity * dt;
                o.motion_bounds.reflect(&mut o.center, &mut o.velocity);
            }
        }
    }
}
