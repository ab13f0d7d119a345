//! Blending of Gaussian expert policies with sampling-based inference over
//! the blend weights, plus the planar benchmark environments.
//!
//! The math layer (`experts`, `fusion`, `dirichlet`, `special`) is generic
//! over the scalar type; the environments and planners work in `f64`.

pub mod dirichlet;
pub mod env;
pub mod experts;
pub mod fusion;
pub mod planner;
pub mod seed;
pub mod special;
pub mod state;

pub use dirichlet::DirichletParams;
pub use env::{PlanarEnv, PlanarState, ScenarioSpec, Vec2};
pub use experts::{ExpertSet, ExpertSpec};
pub use fusion::BlendWeights;
pub use planner::{hipbi_plan, mpc_icem_plan, PlannerConfig};

pub type Weights = fusion::BlendWeights<f64>;
pub type Weights32 = fusion::BlendWeights<f32>;
pub type Dirichlet = dirichlet::DirichletParams<f64>;
pub type Dirichlet32 = dirichlet::DirichletParams<f32>;
pub type Eval2 = experts::ExpertEval<f64, 2>;
pub type Eval2f32 = experts::ExpertEval<f32, 2>;
pub type Fused2 = fusion::FusedGaussian<f64, 2>;
pub type Fused2f32 = fusion::FusedGaussian<f32, 2>;
pub type State2 = state::State<f64, 2>;
pub type State2f32 = state::State<f32, 2>;
