//! Particle state and the environment context the experts observe.

use nalgebra::{RealField, SVector};
use serde::{Deserialize, Serialize};

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds<T: RealField + Copy, const D: usize> {
    pub lo: SVector<T, D>,
    pub hi: SVector<T, D>,
}

impl<T: RealField + Copy, const D: usize> Bounds<T, D> {
    pub fn new(lo: SVector<T, D>, hi: SVector<T, D>) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, p: &SVector<T, D>) -> bool {
        (0..D).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    /// Mirrors `p` back inside the box and flips the matching components of `v`.
    pub fn reflect(&self, p: &mut SVector<T, D>, v: &mut SVector<T, D>) {
        let two = T::one() + T::one();
        for i in 0..D {
            if p[i] > self.hi[i] {
                p[i] = two * self.hi[i] - p[i];
                v[i] = -v[i];
            } else if p[i] < self.lo[i] {
                p[i] = two * self.lo[i] - p[i];
                v[i] = -v[i];
            }
        }
    }
}

/// Circular (spherical) obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle<T: RealField + Copy, const D: usize> {
    pub center: SVector<T, D>,
    pub velocity: SVector<T, D>,
    pub radius: T,
    /// Reflection box for free-moving obstacles.
    pub motion_bounds: Bounds<T, D>,
    /// Offset from the carrier anchor when the obstacle is part of a rigid body.
    pub carried_offset: Option<SVector<T, D>>,
}

/// Rigid frame that moves a group of obstacles (and optionally the goal) together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carrier<T: RealField + Copy, const D: usize> {
    pub anchor: SVector<T, D>,
    pub velocity: SVector<T, D>,
    pub motion_bounds: Bounds<T, D>,
    pub carries_goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context<T: RealField + Copy, const D: usize> {
    pub t: usize,
    pub goal: Option<SVector<T, D>>,
    pub obstacles: Vec<Obstacle<T, D>>,
    pub arena: Bounds<T, D>,
    pub carrier: Option<Carrier<T, D>>,
}

/// Position, velocity and environment snapshot at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State<T: RealField + Copy, const D: usize> {
    pub q: SVector<T, D>,
    pub qdot: SVector<T, D>,
    pub context: Context<T, D>,
}

impl<T: RealField + Copy, const D: usize> State<T, D> {
    /// A state with no obstacles, an unbounded arena and the given goal.
    pub fn free(q: SVector<T, D>, qdot: SVector<T, D>, goal: Option<SVector<T, D>>) -> Self {
        let big = nalgebra::convert::<f64, T>(1e12);
        Self {
            q,
            qdot,
            context: Context {
                t: 0,
                goal,
                obstacles: Vec::new(),
                arena: Bounds::new(SVector::repeat(-big), SVector::repeat(big)),
                carrier: None,
            },
        }
    }

    pub fn goal_distance(&self) -> Option<T> {
        self.context.goal.map(|g| (g - self.q).norm())
    }
}
