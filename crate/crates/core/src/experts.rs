//! Reactive expert policies.
//!
//! Each expert reads the current [`State`] and returns a Gaussian over
//! accelerations: the mean is the expert's forcing term and the precision
//! plays the role of its Riemannian metric. Experts are pure functions of
//! `(state, params)`.

use nalgebra::{DMatrix, RealField, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::State;

/// Floor added to precisions that could otherwise lose definiteness.
pub const EPS_SPD: f64 = 1e-6;

/// Smallest admissible surface distance in the repulsor's inverse-square law.
pub const EPS_DIST: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpertError {
    #[error("state context has no goal")]
    MissingGoal,
    #[error("obstacle index {index} out of range ({count} obstacles)")]
    ObstacleIndex { index: usize, count: usize },
    #[error("curl experts need a planar state, got dimension {0}")]
    UnsupportedDimension(usize),
    #[error("invalid expert parameter: {0}")]
    InvalidParam(String),
}

/// One expert's Gaussian policy at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertEval<T: RealField + Copy, const D: usize> {
    pub mu: SVector<T, D>,
    pub lambda: SMatrix<T, D, D>,
}

impl<T: RealField + Copy, const D: usize> ExpertEval<T, D> {
    pub fn new(mu: SVector<T, D>, lambda: SMatrix<T, D, D>) -> Self {
        Self { mu, lambda }
    }

    pub fn isotropic(mu: SVector<T, D>, precision: T) -> Self {
        Self { mu, lambda: SMatrix::identity() * precision }
    }
}

/// Task-space value and Jacobian of a task map at the current configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMapEval<T: RealField + Copy, const X: usize, const Q: usize> {
    pub x: SVector<T, X>,
    pub jacobian: SMatrix<T, X, Q>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttractorParams {
    pub position_gain: f64,
    pub damping_gain: f64,
    /// Offset `c` in the soft normalization `v / (|v| + c)`.
    pub soft_norm: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepulsorParams {
    pub repulsion_scale: f64,
    pub influence_radius: f64,
    /// Precision far from (and outside the influence of) the obstacle.
    pub far_precision: f64,
    /// Extra radial precision reached at contact.
    pub near_precision: f64,
    /// Tangential share of the barrier metric at contact, in `(0, 1]`.
    pub tangential_ratio: f64,
    /// Radius of the controlled particle, subtracted from the clearance.
    #[serde(default)]
    pub particle_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurlParams {
    pub curl_scale: f64,
    pub precision: f64,
    /// Attractor whose mean the curl rotates.
    pub attractor: AttractorParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamperParams {
    pub damping_gain: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    GoalAttractor,
    ObstacleRepulsor,
    CurlPositive,
    CurlNegative,
    VelocityDamper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurlSign {
    Positive,
    Negative,
}

impl CurlSign {
    fn value<T: RealField>(self) -> T {
        match self {
            CurlSign::Positive => T::one(),
            CurlSign::Negative => -T::one(),
        }
    }
}

/// A configured expert. Repulsors carry the index of the obstacle they guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpertSpec {
    GoalAttractor(AttractorParams),
    ObstacleRepulsor { obstacle: usize, params: RepulsorParams },
    Curl { sign: CurlSign, params: CurlParams },
    VelocityDamper(DamperParams),
}

impl ExpertSpec {
    pub fn kind(&self) -> ExpertKind {
        match self {
            ExpertSpec::GoalAttractor(_) => ExpertKind::GoalAttractor,
            ExpertSpec::ObstacleRepulsor { .. } => ExpertKind::ObstacleRepulsor,
            ExpertSpec::Curl { sign: CurlSign::Positive, .. } => ExpertKind::CurlPositive,
            ExpertSpec::Curl { sign: CurlSign::Negative, .. } => ExpertKind::CurlNegative,
            ExpertSpec::VelocityDamper(_) => ExpertKind::VelocityDamper,
        }
    }

    pub fn validate(&self) -> Result<(), ExpertError> {
        fn pos(name: &str, v: f64) -> Result<(), ExpertError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ExpertError::InvalidParam(format!("{name} must be positive, got {v}")))
            }
        }
        fn prec(name: &str, v: f64) -> Result<(), ExpertError> {
            if v >= EPS_SPD && v.is_finite() {
                Ok(())
            } else {
                Err(ExpertError::InvalidParam(format!("{name} must be at least {EPS_SPD}, got {v}")))
            }
        }
        fn attractor(p: &AttractorParams) -> Result<(), ExpertError> {
            pos("position_gain", p.position_gain)?;
            pos("damping_gain", p.damping_gain)?;
            pos("soft_norm", p.soft_norm)?;
            prec("precision", p.precision)
        }
        match self {
            ExpertSpec::GoalAttractor(p) => attractor(p),
            ExpertSpec::ObstacleRepulsor { params: p, .. } => {
                pos("repulsion_scale", p.repulsion_scale)?;
                pos("influence_radius", p.influence_radius)?;
                pos("near_precision", p.near_precision)?;
                prec("far_precision", p.far_precision)?;
                prec("far_precision * tangential_ratio", p.far_precision * p.tangential_ratio)?;
                if !(p.tangential_ratio > 0.0 && p.tangential_ratio <= 1.0) {
                    return Err(ExpertError::InvalidParam(format!(
                        "tangential_ratio must lie in (0, 1], got {}",
                        p.tangential_ratio
                    )));
                }
                if !(p.particle_radius >= 0.0) {
                    return Err(ExpertError::InvalidParam("particle_radius must be >= 0".into()));
                }
                Ok(())
            }
            ExpertSpec::Curl { params: p, .. } => {
                pos("curl_scale", p.curl_scale)?;
                prec("precision", p.precision)?;
                attractor(&p.attractor)
            }
            ExpertSpec::VelocityDamper(p) => {
                pos("damping_gain", p.damping_gain)?;
                prec("precision", p.precision)
            }
        }
    }

    pub fn eval<T: RealField + Copy, const D: usize>(
        &self,
        state: &State<T, D>,
    ) -> Result<ExpertEval<T, D>, ExpertError> {
        match self {
            ExpertSpec::GoalAttractor(p) => eval_goal_attractor(state, p),
            ExpertSpec::ObstacleRepulsor { obstacle, params } => {
                eval_obstacle_repulsor(state, *obstacle, params)
            }
            ExpertSpec::Curl { sign, params } => eval_curl(state, params, *sign),
            ExpertSpec::VelocityDamper(p) => Ok(eval_velocity_damper(state, p)),
        }
    }
}

#[inline]
fn t<T: RealField + Copy>(v: f64) -> T {
    nalgebra::convert(v)
}

fn goal_mean<T: RealField + Copy, const D: usize>(
    state: &State<T, D>,
    p: &AttractorParams,
) -> Result<SVector<T, D>, ExpertError> {
    let goal = state.context.goal.ok_or(ExpertError::MissingGoal)?;
    let err = goal - state.q;
    let soft = err / (err.norm() + t::<T>(p.soft_norm));
    Ok(soft * t::<T>(p.position_gain) - state.qdot * t::<T>(p.damping_gain))
}

/// Soft-normalized PD pull toward the goal: `k_p (g - q)/(|g - q| + c) - k_d qdot`.
pub fn eval_goal_attractor<T: RealField + Copy, const D: usize>(
    state: &State<T, D>,
    p: &AttractorParams,
) -> Result<ExpertEval<T, D>, ExpertError> {
    Ok(ExpertEval::isotropic(goal_mean(state, p)?, t(p.precision)))
}

/// Inverse-square push away from one obstacle with a radial barrier metric.
///
/// Inside the influence radius the precision is `(w_far + w_near g) P` where
/// `g = (1 - dist/r)^2` and `P = n n^T + (1 - g (1 - tangential_ratio)) (I - n n^T)`,
/// so the metric stiffens along the obstacle normal `n` while still letting the
/// particle slide past it.
pub fn eval_obstacle_repulsor<T: RealField + Copy, const D: usize>(
    state: &State<T, D>,
    obstacle: usize,
    p: &RepulsorParams,
) -> Result<ExpertEval<T, D>, ExpertError> {
    let obs = state.context.obstacles.get(obstacle).ok_or(ExpertError::ObstacleIndex {
        index: obstacle,
        count: state.context.obstacles.len(),
    })?;
    let influence = t::<T>(p.influence_radius);
    let far = t::<T>(p.far_precision);
    let dvec = state.q - obs.center;
    let center_dist = dvec.norm();
    let dist = (center_dist - obs.radius - t::<T>(p.particle_radius)).max(t(EPS_DIST));
    if dist >= influence {
        return Ok(ExpertEval::isotropic(SVector::zeros(), far));
    }
    let normal = if center_dist > T::zero() {
        dvec / center_dist
    } else {
        // Sitting on the centre: any direction is as good as another.
        let mut e = SVector::zeros();
        e[0] = T::one();
        e
    };
    let mu = normal * (t::<T>(p.repulsion_scale) / (dist * dist));
    let closeness = T::one() - dist / influence;
    let g = closeness * closeness;
    let radial = normal * normal.transpose();
    let tangential = SMatrix::<T, D, D>::identity() - radial;
    let tangential_weight = T::one() - g * (T::one() - t::<T>(p.tangential_ratio));
    let metric = radial + tangential * tangential_weight;
    let lambda = metric * (far + t::<T>(p.near_precision) * g);
    Ok(ExpertEval::new(mu, symmetrize(lambda)))
}

/// Goal attractor mean rotated by +90 degrees (`sign = +1`) or -90 degrees.
pub fn eval_curl<T: RealField + Copy, const D: usize>(
    state: &State<T, D>,
    p: &CurlParams,
    sign: CurlSign,
) -> Result<ExpertEval<T, D>, ExpertError> {
    if D != 2 {
        return Err(ExpertError::UnsupportedDimension(D));
    }
    let g = goal_mean(state, &p.attractor)?;
    let k = t::<T>(p.curl_scale) * sign.value::<T>();
    let mut mu = SVector::<T, D>::zeros();
    mu[0] = -g[1] * k;
    mu[1] = g[0] * k;
    Ok(ExpertEval::isotropic(mu, t(p.precision)))
}

pub fn eval_velocity_damper<T: RealField + Copy, const D: usize>(
    state: &State<T, D>,
    p: &DamperParams,
) -> ExpertEval<T, D> {
    ExpertEval::isotropic(state.qdot * -t::<T>(p.damping_gain), t(p.precision))
}

/// Maps a task-space expert into configuration space:
/// `mu_q = J^+ mu_x`, `lambda_q = J^T lambda_x J + eps I`.
pub fn pullback<T: RealField + Copy, const X: usize, const Q: usize>(
    task: &ExpertEval<T, X>,
    map: &TaskMapEval<T, X, Q>,
) -> ExpertEval<T, Q> {
    let j = &map.jacobian;
    let dyn_j = DMatrix::from_fn(X, Q, |r, c| j[(r, c)]);
    let pinv = dyn_j
        .pseudo_inverse(T::default_epsilon() * t::<T>(1e3))
        .expect("pseudo-inverse with a non-negative tolerance");
    let pinv = SMatrix::<T, Q, X>::from_fn(|r, c| pinv[(r, c)]);
    let mu = pinv * task.mu;
    let lambda = j.transpose() * task.lambda * j + SMatrix::<T, Q, Q>::identity() * t::<T>(EPS_SPD);
    ExpertEval::new(mu, symmetrize(lambda))
}

fn symmetrize<T: RealField + Copy, const D: usize>(m: SMatrix<T, D, D>) -> SMatrix<T, D, D> {
    (m + m.transpose()) * t::<T>(0.5)
}

/// An ordered expert set; evaluation order fixes the meaning of each blend weight.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpertSet {
    experts: Vec<ExpertSpec>,
}

impl ExpertSet {
    pub fn new(experts: Vec<ExpertSpec>) -> Result<Self, ExpertError> {
        for e in &experts {
            e.validate()?;
        }
        Ok(Self { experts })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn specs(&self) -> &[ExpertSpec] {
        &self.experts
    }

    pub fn kinds(&self) -> Vec<ExpertKind> {
        self.experts.iter().map(ExpertSpec::kind).collect()
    }

    /// Evaluates every expert into `out`, reusing its allocation.
    pub fn evaluate_into<T: RealField + Copy, const D: usize>(
        &self,
        state: &State<T, D>,
        out: &mut Vec<ExpertEval<T, D>>,
    ) -> Result<(), ExpertError> {
        out.clear();
        for e in &self.experts {
            out.push(e.eval(state)?);
        }
        Ok(())
    }

    pub fn evaluate<T: RealField + Copy, const D: usize>(
        &self,
        state: &State<T, D>,
    ) -> Result<Vec<ExpertEval<T, D>>, ExpertError> {
        let mut out = Vec::with_capacity(self.len());
        self.evaluate_into(state, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Bounds, Obstacle};
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix2, Vector2};

    fn attractor() -> AttractorParams {
        AttractorParams { position_gain: 1.0, damping_gain: 0.5, soft_norm: 1.0, precision: 2.0 }
    }

    fn repulsor() -> RepulsorParams {
        RepulsorParams {
            repulsion_scale: 100.0,
            influence_radius: 50.0,
            far_precision: 0.01,
            near_precision: 10.0,
            tangential_ratio: 0.1,
            particle_radius: 0.0,
        }
    }

    fn state_with_obstacle(q: Vector2<f64>) -> State<f64, 2> {
        let mut s = State::free(q, Vector2::zeros(), Some(Vector2::new(100.0, 0.0)));
        s.context.obstacles.push(Obstacle {
            center: Vector2::zeros(),
            velocity: Vector2::zeros(),
            radius: 10.0,
            motion_bounds: Bounds::new(Vector2::repeat(-1e3), Vector2::repeat(1e3)),
            carried_offset: None,
        });
        s
    }

    fn min_eig(m: &Matrix2<f64>) -> f64 {
        m.symmetric_eigenvalues().min()
    }

    #[test]
    fn attractor_fixed_point() {
        let goal = Vector2::new(3.0, -4.0);
        let s = State::free(goal, Vector2::zeros(), Some(goal));
        let e = eval_goal_attractor(&s, &attractor()).unwrap();
        assert_eq!(e.mu, Vector2::zeros());
    }

    #[test]
    fn attractor_hand_value() {
        let p = AttractorParams { position_gain: 1.0, damping_gain: 1.0, soft_norm: 1.0, precision: 1.0 };
        let s = State::free(Vector2::zeros(), Vector2::zeros(), Some(Vector2::new(10.0, 0.0)));
        let e = eval_goal_attractor(&s, &p).unwrap();
        // scalar route: 1 * 10 / (10 + 1)
        let expected = 10.0_f64 / 11.0;
        assert_abs_diff_eq!(e.mu[0], expected, epsilon = 1e-15);
        assert_eq!(e.mu[1], 0.0);
        assert_eq!(e.lambda, Matrix2::identity());
    }

    #[test]
    fn attractor_reflection_symmetry() {
        let goal = Vector2::new(1.0, 2.0);
        let off = Vector2::new(3.5, -1.25);
        let a = State::free(goal + off, Vector2::zeros(), Some(goal));
        let b = State::free(goal - off, Vector2::zeros(), Some(goal));
        let ea = eval_goal_attractor(&a, &attractor()).unwrap();
        let eb = eval_goal_attractor(&b, &attractor()).unwrap();
        assert_abs_diff_eq!(ea.mu, -eb.mu, epsilon = 1e-15);
    }

    #[test]
    fn attractor_requires_goal() {
        let s = State::<f64, 2>::free(Vector2::zeros(), Vector2::zeros(), None);
        assert_eq!(eval_goal_attractor(&s, &attractor()), Err(ExpertError::MissingGoal));
    }

    #[test]
    fn repulsor_far_is_vacuous() {
        let s = state_with_obstacle(Vector2::new(500.0, 0.0));
        let e = eval_obstacle_repulsor(&s, 0, &repulsor()).unwrap();
        assert_eq!(e.mu, Vector2::zeros());
        assert_eq!(e.lambda, Matrix2::identity() * 0.01);
    }

    #[test]
    fn repulsor_points_away() {
        let s = state_with_obstacle(Vector2::new(30.0, 0.0));
        let e = eval_obstacle_repulsor(&s, 0, &repulsor()).unwrap();
        let dvec = s.q - s.context.obstacles[0].center;
        assert!(e.mu.dot(&dvec) > 0.0);
        // Barrier metric is stiffer along the normal.
        assert!(e.lambda[(0, 0)] > e.lambda[(1, 1)]);
        assert!(min_eig(&e.lambda) >= EPS_SPD);
    }

    #[test]
    fn repulsor_inverse_square() {
        for dist in [8.0_f64, 20.0] {
            let near = state_with_obstacle(Vector2::new(10.0 + dist / 2.0, 0.0));
            let far = state_with_obstacle(Vector2::new(10.0 + dist, 0.0));
            let mn = eval_obstacle_repulsor(&near, 0, &repulsor()).unwrap().mu.norm();
            let mf = eval_obstacle_repulsor(&far, 0, &repulsor()).unwrap().mu.norm();
            assert!(mn >= 4.0 * mf * (1.0 - 1e-12), "{mn} vs {mf}");
        }
    }

    #[test]
    fn repulsor_bad_index() {
        let s = state_with_obstacle(Vector2::new(30.0, 0.0));
        assert_eq!(
            eval_obstacle_repulsor(&s, 3, &repulsor()),
            Err(ExpertError::ObstacleIndex { index: 3, count: 1 })
        );
    }

    #[test]
    fn curl_rotates_goal_mean() {
        let p = CurlParams {
            curl_scale: 1.0,
            precision: 1.0,
            attractor: AttractorParams { position_gain: 2.0, damping_gain: 1.0, soft_norm: 1.0, precision: 1.0 },
        };
        // goal mean = 2 * (1, 0) / (1 + 1) = (1, 0)
        let s = State::free(Vector2::zeros(), Vector2::zeros(), Some(Vector2::new(1.0, 0.0)));
        let e = eval_curl(&s, &p, CurlSign::Positive).unwrap();
        assert_abs_diff_eq!(e.mu, Vector2::new(0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn curl_vanishes_at_goal_and_pairs_cancel() {
        let p = CurlParams { curl_scale: 0.7, precision: 1.0, attractor: attractor() };
        let goal = Vector2::new(5.0, 5.0);
        let s = State::free(goal, Vector2::zeros(), Some(goal));
        assert_eq!(eval_curl(&s, &p, CurlSign::Positive).unwrap().mu, Vector2::zeros());
        let s = State::free(Vector2::new(-3.0, 1.0), Vector2::new(0.3, 2.0), Some(goal));
        let a = eval_curl(&s, &p, CurlSign::Positive).unwrap().mu;
        let b = eval_curl(&s, &p, CurlSign::Negative).unwrap().mu;
        assert_eq!(a + b, Vector2::zeros());
    }

    #[test]
    fn curl_rejects_non_planar() {
        let p = CurlParams { curl_scale: 1.0, precision: 1.0, attractor: attractor() };
        let s = State::<f64, 3>::free(nalgebra::Vector3::zeros(), nalgebra::Vector3::zeros(), Some(nalgebra::Vector3::x()));
        assert_eq!(eval_curl(&s, &p, CurlSign::Positive), Err(ExpertError::UnsupportedDimension(3)));
    }

    #[test]
    fn damper_linear_law() {
        let p = DamperParams { damping_gain: 0.5, precision: 1.0 };
        let s = State::<f64, 2>::free(Vector2::zeros(), Vector2::new(2.0, -2.0), None);
        assert_eq!(eval_velocity_damper(&s, &p).mu, Vector2::new(-1.0, 1.0));
        let rest = State::<f64, 2>::free(Vector2::zeros(), Vector2::zeros(), None);
        assert_eq!(eval_velocity_damper(&rest, &p).mu, Vector2::zeros());
        let fast = State::<f64, 2>::free(Vector2::zeros(), Vector2::new(4.0, -4.0), None);
        assert_abs_diff_eq!(
            eval_velocity_damper(&fast, &p).mu.norm(),
            2.0 * eval_velocity_damper(&s, &p).mu.norm(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn pullback_identity_and_diagonal() {
        let task = ExpertEval::new(Vector2::new(2.0, 2.0), Matrix2::new(2.0, 0.5, 0.5, 1.0));
        let id = TaskMapEval { x: Vector2::zeros(), jacobian: Matrix2::identity() };
        let out = pullback(&task, &id);
        assert_abs_diff_eq!(out.mu, task.mu, epsilon = 1e-12);
        assert_abs_diff_eq!(out.lambda, task.lambda + Matrix2::identity() * EPS_SPD, epsilon = 1e-12);

        let twice = TaskMapEval { x: Vector2::zeros(), jacobian: Matrix2::identity() * 2.0 };
        let out = pullback(&task, &twice);
        assert_abs_diff_eq!(out.mu, Vector2::new(1.0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(out.lambda, task.lambda * 4.0 + Matrix2::identity() * EPS_SPD, epsilon = 1e-12);
    }

    #[test]
    fn pullback_rank_deficient_stays_spd() {
        let task = ExpertEval::new(Vector2::new(1.0, -3.0), Matrix2::identity() * 5.0);
        let map = TaskMapEval { x: Vector2::zeros(), jacobian: Matrix2::new(1.0, 2.0, 0.0, 0.0) };
        let out = pullback(&task, &map);
        assert!(out.mu.iter().all(|v: &f64| v.is_finite()));
        assert!(min_eig(&out.lambda) >= EPS_SPD * 0.999);
    }

    #[test]
    fn pullback_between_dimensions() {
        // 1-D task (x coordinate) of a planar configuration.
        let task = ExpertEval::new(nalgebra::Vector1::new(3.0), nalgebra::Matrix1::new(2.0));
        let map = TaskMapEval { x: nalgebra::Vector1::new(0.0), jacobian: nalgebra::RowVector2::new(1.0, 0.0) };
        let out = pullback(&task, &map);
        assert_abs_diff_eq!(out.mu, Vector2::new(3.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(out.lambda[(0, 0)], 2.0 + EPS_SPD, epsilon = 1e-12);
        assert_abs_diff_eq!(out.lambda[(1, 1)], EPS_SPD, epsilon = 1e-15);
    }

    #[test]
    fn validation_rejects_bad_gains() {
        let mut p = attractor();
        p.position_gain = 0.0;
        assert!(ExpertSpec::GoalAttractor(p).validate().is_err());
        let mut r = repulsor();
        r.tangential_ratio = 1.5;
        assert!(ExpertSpec::ObstacleRepulsor { obstacle: 0, params: r }.validate().is_err());
    }
}
