//! Demonstration controllers that drive the simulation pipeline.
//!
//! Planar controllers (`go_to_goal`, `position_swap`, `consensus`,
//! `cyclic_formation`) emit single-integrator commands for each robot's
//! look-ahead point. `waypoint_follow` emits unicycle commands for the
//! wheel-axis pose directly. Every output is saturated before it is returned.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalize_angle, ActuatorLimits, RobotPose, SiCommand, UnicycleCommand, Vec2};

/// Distance at which a waypoint counts as reached (m).
pub const WAYPOINT_TOLERANCE: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("invalid controller parameters: {0}")]
    InvalidParams(String),
    #[error("assignment is not a permutation of 0..{0}")]
    NotAPermutation(usize),
    #[error("controller expects {expected} robots, got {got}")]
    RobotCount { expected: usize, got: usize },
}

fn default_gain() -> f64 {
    1.0
}

fn default_k1() -> f64 {
    1.0
}

fn default_k2() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum AssignmentSpec {
    Named(NamedAssignment),
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedAssignment {
    Identity,
    /// Robot `i` takes the start of robot `(i + N/2) mod N`.
    Antipodal,
}

impl AssignmentSpec {
    pub fn resolve(&self, n: usize) -> Result<Vec<usize>, ControllerError> {
        let a = match self {
            AssignmentSpec::Named(NamedAssignment::Identity) => (0..n).collect(),
            AssignmentSpec::Named(NamedAssignment::Antipodal) => {
                if n % 2 != 0 {
                    return Err(ControllerError::InvalidParams(format!(
                        "antipodal assignment needs an even robot count, got {n}"
                    )));
                }
                (0..n).map(|i| (i + n / 2) % n).collect()
            }
            AssignmentSpec::Explicit(v) => v.clone(),
        };
        check_permutation(&a, n)?;
        Ok(a)
    }
}

fn check_permutation(a: &[usize], n: usize) -> Result<(), ControllerError> {
    if a.len() != n {
        return Err(ControllerError::NotAPermutation(n));
    }
    let mut seen = vec![false; n];
    for &k in a {
        if k >= n || seen[k] {
            return Err(ControllerError::NotAPermutation(n));
        }
        seen[k] = true;
    }
    Ok(())
}

/// Declarative controller description, as found in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    /// Zero command for every robot.
    Hold,
    GoToGoal {
        goals: Vec<[f64; 2]>,
        #[serde(default = "default_gain")]
        gain: f64,
    },
    WaypointFollow {
        /// One route per robot; an empty route holds the robot still.
        routes: Vec<Vec<[f64; 2]>>,
        #[serde(default = "default_k1")]
        k1: f64,
        #[serde(default = "default_k2")]
        k2: f64,
        #[serde(default)]
        looping: bool,
    },
    PositionSwap {
        assignment: AssignmentSpec,
        /// Defaults to the robots' starting positions.
        #[serde(default)]
        targets: Option<Vec<[f64; 2]>>,
        #[serde(default = "default_gain")]
        gain: f64,
    },
    Consensus {
        /// Symmetric non-negative weights; omitted means the complete graph with unit weights.
        #[serde(default)]
        weights: Option<Vec<Vec<f64>>>,
    },
    CyclicFormation {
        radius: f64,
        #[serde(default = "default_gain")]
        rotation_gain: f64,
        #[serde(default = "default_gain")]
        radial_gain: f64,
    },
}

impl ControllerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerSpec::Hold => "hold",
            ControllerSpec::GoToGoal { .. } => "go_to_goal",
            ControllerSpec::WaypointFollow { .. } => "waypoint_follow",
            ControllerSpec::PositionSwap { .. } => "position_swap",
            ControllerSpec::Consensus { .. } => "consensus",
            ControllerSpec::CyclicFormation { .. } => "cyclic_formation",
        }
    }

    /// Extend per-robot parameters for `extra` appended robots that should stay put.
    pub fn extend_for_new_robots(&mut self, start_positions: &[Vec2], extra: &[Vec2]) {
        let n_old = start_positions.len();
        match self {
            ControllerSpec::GoToGoal { goals, .. } => {
                goals.extend(extra.iter().map(|p| [p.x, p.y]));
            }
            ControllerSpec::WaypointFollow { routes, .. } => {
                routes.extend(extra.iter().map(|_| Vec::new()));
            }
            ControllerSpec::PositionSwap {
                assignment,
                targets,
                ..
            } => {
                let resolved = assignment
                    .resolve(n_old)
                    .unwrap_or_else(|_| (0..n_old).collect());
                let mut a = resolved;
                a.extend(n_old..n_old + extra.len());
                *assignment = AssignmentSpec::Explicit(a);
                if let Some(t) = targets {
                    t.extend(extra.iter().map(|p| [p.x, p.y]));
                }
            }
            ControllerSpec::Consensus { weights: Some(w) } => {
                let n = n_old + extra.len();
                for row in w.iter_mut() {
                    row.resize(n, 0.0);
                }
                w.resize(n, vec![0.0; n]);
            }
            ControllerSpec::Hold
            | ControllerSpec::Consensus { weights: None }
            | ControllerSpec::CyclicFormation { .. } => {}
        }
    }
}

/// What a controller asks of the robots for one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Desired {
    Planar(Vec<SiCommand>),
    Unicycle(Vec<UnicycleCommand>),
}

/// Controller memory threaded through successive calls.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    /// Index of the next waypoint on each robot's route.
    pub waypoint_index: Vec<usize>,
}

/// Snapshot of the (possibly noisy) team state given to a controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<'a> {
    pub poses: &'a [RobotPose],
    /// Look-ahead points of `poses`.
    pub points: &'a [Vec2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointGains {
    pub k1: f64,
    pub k2: f64,
}

/// A [`ControllerSpec`] validated and bound to a team size.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    spec: ControllerSpec,
    n: usize,
    alpha_bound: f64,
    limits: ActuatorLimits,
    goals: Vec<Vec2>,
    weights: Vec<Vec<f64>>,
}

impl Controller {
    /// `start_points` are the robots' initial look-ahead points.
    pub fn new(
        spec: ControllerSpec,
        start_points: &[Vec2],
        alpha_bound: f64,
        limits: ActuatorLimits,
    ) -> Result<Self, ControllerError> {
        let n = start_points.len();
        let finite = |v: f64| v.is_finite();
        let mut goals = Vec::new();
        let mut weights = Vec::new();
        match &spec {
            ControllerSpec::Hold => {}
            ControllerSpec::GoToGoal { goals: g, gain } => {
                if g.len() != n {
                    return Err(ControllerError::RobotCount {
                        expected: g.len(),
                        got: n,
                    });
                }
                check_gain("gain", *gain)?;
                goals = to_points(g)?;
            }
            ControllerSpec::WaypointFollow { routes, k1, k2, .. } => {
                if routes.len() != n {
                    return Err(ControllerError::RobotCount {
                        expected: routes.len(),
                        got: n,
                    });
                }
                check_gain("k1", *k1)?;
                check_gain("k2", *k2)?;
                for r in routes {
                    to_points(r)?;
                }
            }
            ControllerSpec::PositionSwap {
                assignment,
                targets,
                gain,
            } => {
                check_gain("gain", *gain)?;
                let a = assignment.resolve(n)?;
                let base = match targets {
                    Some(t) => {
                        if t.len() != n {
                            return Err(ControllerError::RobotCount {
                                expected: t.len(),
                                got: n,
                            });
                        }
                        to_points(t)?
                    }
                    None => start_points.to_vec(),
                };
                goals = a.iter().map(|&k| base[k]).collect();
            }
            ControllerSpec::Consensus { weights: w } => {
                weights = match w {
                    Some(w) => w.clone(),
                    None => (0..n)
                        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
                        .collect(),
                };
                check_weights(&weights, n)?;
            }
            ControllerSpec::CyclicFormation {
                radius,
                rotation_gain,
                radial_gain,
            } => {
                if n < 3 {
                    return Err(ControllerError::InvalidParams(format!(
                        "cyclic formation needs at least 3 robots, got {n}"
                    )));
                }
                if !(finite(*radius) && *radius > 0.0) {
                    return Err(ControllerError::InvalidParams(format!(
                        "radius must be positive, got {radius}"
                    )));
                }
                check_gain("rotation_gain", *rotation_gain)?;
                check_gain("radial_gain", *radial_gain)?;
            }
        }
        Ok(Self {
            spec,
            n,
            alpha_bound,
            limits,
            goals,
            weights,
        })
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    /// Goal points for goal-seeking controllers, empty otherwise.
    pub fn goals(&self) -> &[Vec2] {
        &self.goals
    }

    pub fn initial_state(&self) -> ControllerState {
        ControllerState {
            waypoint_index: vec![0; self.n],
        }
    }

    pub fn command(
        &self,
        obs: &Observation<'_>,
        mut state: ControllerState,
    ) -> Result<(Desired, ControllerState), ControllerError> {
        if obs.points.len() != self.n || obs.poses.len() != self.n {
            return Err(ControllerError::RobotCount {
                expected: self.n,
                got: obs.points.len(),
            });
        }
        let alpha = self.alpha_bound;
        let desired = match &self.spec {
            ControllerSpec::Hold => Desired::Planar(vec![SiCommand::ZERO; self.n]),
            ControllerSpec::GoToGoal { gain, .. } | ControllerSpec::PositionSwap { gain, .. } => {
                Desired::Planar(
                    obs.points
                        .iter()
                        .zip(&self.goals)
                        .map(|(x, g)| go_to_goal(*x, *g, *gain, alpha))
                        .collect(),
                )
            }
            ControllerSpec::WaypointFollow {
                routes,
                k1,
                k2,
                looping,
            } => {
                if state.waypoint_index.len() != self.n {
                    state.waypoint_index = vec![0; self.n];
                }
                let gains = WaypointGains { k1: *k1, k2: *k2 };
                let cmds = obs
                    .poses
                    .iter()
                    .zip(routes)
                    .zip(state.waypoint_index.iter_mut())
                    .map(|((pose, route), idx)| {
                        let route = to_points(route).unwrap_or_default();
                        follow_route(pose, &route, idx, *looping, gains, &self.limits)
                    })
                    .collect();
                Desired::Unicycle(cmds)
            }
            ControllerSpec::Consensus { .. } => {
                Desired::Planar(consensus(obs.points, &self.weights, alpha)?)
            }
            ControllerSpec::CyclicFormation {
                radius,
                rotation_gain,
                radial_gain,
            } => Desired::Planar(cyclic_formation(
                obs.points,
                *radius,
                *rotation_gain,
                *radial_gain,
                alpha,
            )?),
        };
        Ok((desired, state))
    }
}

fn check_gain(name: &str, g: f64) -> Result<(), ControllerError> {
    if g.is_finite() && g > 0.0 {
        Ok(())
    } else {
        Err(ControllerError::InvalidParams(format!(
            "{name} must be positive, got {g}"
        )))
    }
}

fn to_points(v: &[[f64; 2]]) -> Result<Vec<Vec2>, ControllerError> {
    v.iter()
        .map(|p| {
            let q = Vec2::new(p[0], p[1]);
            if q.is_finite() {
                Ok(q)
            } else {
                Err(ControllerError::InvalidParams(format!(
                    "non-finite point {p:?}"
                )))
            }
        })
        .collect()
}

fn check_weights(w: &[Vec<f64>], n: usize) -> Result<(), ControllerError> {
    if w.len() != n || w.iter().any(|r| r.len() != n) {
        return Err(ControllerError::InvalidParams(format!(
            "weight matrix must be {n}x{n}"
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let v = w[i][j];
            if !(v.is_finite() && v >= 0.0) {
                return Err(ControllerError::InvalidParams(format!(
                    "weight ({i}, {j}) must be finite and non-negative"
                )));
            }
            if v != w[j][i] {
                return Err(ControllerError::InvalidParams(format!(
                    "weights must be symmetric, ({i}, {j}) differs"
                )));
            }
        }
    }
    Ok(())
}

/// Proportional pull toward `goal`, scaled so `max(|ux|, |uy|) <= alpha`.
pub fn go_to_goal(x: Vec2, goal: Vec2, gain: f64, alpha: f64) -> SiCommand {
    SiCommand::from_vec(gain * (goal - x)).saturate(alpha)
}

/// Each robot seeks the start of the robot it is assigned to.
pub fn position_swap(
    positions: &[Vec2],
    targets: &[Vec2],
    assignment: &[usize],
    gain: f64,
    alpha: f64,
) -> Result<Vec<SiCommand>, ControllerError> {
    check_permutation(assignment, positions.len())?;
    if targets.len() != positions.len() {
        return Err(ControllerError::RobotCount {
            expected: targets.len(),
            got: positions.len(),
        });
    }
    Ok(positions
        .iter()
        .zip(assignment)
        .map(|(x, &k)| go_to_goal(*x, targets[k], gain, alpha))
        .collect())
}

/// Weighted consensus `u_i = sum_j w_ij (x_j - x_i)`.
pub fn consensus(
    positions: &[Vec2],
    weights: &[Vec<f64>],
    alpha: f64,
) -> Result<Vec<SiCommand>, ControllerError> {
    check_weights(weights, positions.len())?;
    Ok(positions
        .iter()
        .enumerate()
        .map(|(i, xi)| {
            let mut u = Vec2::ZERO;
            for (j, xj) in positions.iter().enumerate() {
                let w = weights[i][j];
                if w != 0.0 {
                    u += w * (*xj - *xi);
                }
            }
            SiCommand::from_vec(u).saturate(alpha)
        })
        .collect())
}

/// Drive the team onto a regular polygon of circumradius `radius` about its
/// centroid, robots in index order counter-clockwise.
///
/// The polygon's rotation is the least-squares fit to the current relative
/// positions, so only positions relative to the centroid matter. The error
/// toward each robot's slot is split into a radial part (gain `radial_gain`)
/// and a tangential part (gain `rotation_gain`).
pub fn cyclic_formation(
    positions: &[Vec2],
    radius: f64,
    rotation_gain: f64,
    radial_gain: f64,
    alpha: f64,
) -> Result<Vec<SiCommand>, ControllerError> {
    let n = positions.len();
    if n < 3 {
        return Err(ControllerError::InvalidParams(format!(
            "cyclic formation needs at least 3 robots, got {n}"
        )));
    }
    let centroid = (1.0 / n as f64) * positions.iter().fold(Vec2::ZERO, |a, p| a + *p);
    let slot = |i: usize| radius * Vec2::from_angle(2.0 * PI * i as f64 / n as f64);
    let (mut c, mut s) = (0.0, 0.0);
    for (i, p) in positions.iter().enumerate() {
        let r = *p - centroid;
        let q = slot(i);
        c += q.dot(r);
        s += q.x * r.y - q.y * r.x;
    }
    let phi = if c == 0.0 && s == 0.0 { 0.0 } else { s.atan2(c) };
    Ok(positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = slot(i);
            let (sp, cp) = phi.sin_cos();
            let target = centroid + Vec2::new(cp * q.x - sp * q.y, sp * q.x + cp * q.y);
            let err = target - *p;
            let r = *p - centroid;
            let rn = r.norm();
            let u = if rn > 1e-12 {
                let radial = (1.0 / rn) * r;
                let tangential = radial.perp();
                radial_gain * err.dot(radial) * radial
                    + rotation_gain * err.dot(tangential) * tangential
            } else {
                radial_gain * err
            };
            SiCommand::from_vec(u).saturate(alpha)
        })
        .collect())
}

/// Polar-coordinate waypoint regulator: `v = k1 e cos(a)`,
/// `w = k2 a + k1 sin(a) cos(a)` with `a` the bearing error.
pub fn waypoint_follow(
    pose: &RobotPose,
    waypoint: Vec2,
    gains: WaypointGains,
    limits: &ActuatorLimits,
) -> UnicycleCommand {
    let delta = waypoint - pose.position();
    let e = delta.norm();
    if e < WAYPOINT_TOLERANCE {
        return UnicycleCommand::ZERO;
    }
    let bearing = normalize_angle(delta.y.atan2(delta.x) - pose.x3);
    let (sa, ca) = bearing.sin_cos();
    UnicycleCommand::new(gains.k1 * e * ca, gains.k2 * bearing + gains.k1 * sa * ca)
        .saturate(limits)
}

/// Advance `idx` past reached waypoints and command toward the current one.
pub fn follow_route(
    pose: &RobotPose,
    route: &[Vec2],
    idx: &mut usize,
    looping: bool,
    gains: WaypointGains,
    limits: &ActuatorLimits,
) -> UnicycleCommand {
    if route.is_empty() {
        return UnicycleCommand::ZERO;
    }
    let mut guard = 0;
    while guard < route.len() {
        if *idx >= route.len() {
            if looping {
                *idx = 0;
            } else {
                return UnicycleCommand::ZERO;
            }
        }
        if pose.position().distance(route[*idx]) < WAYPOINT_TOLERANCE {
            *idx += 1;
            guard += 1;
        } else {
            break;
        }
    }
    if *idx >= route.len() {
        if looping {
            *idx = 0;
        } else {
            return UnicycleCommand::ZERO;
        }
    }
    waypoint_follow(pose, route[*idx], gains, limits)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALPHA: f64 = 0.1;

    #[test]
    fn go_to_goal_examples() {
        let g = Vec2::new(0.2, -0.1);
        assert_eq!(go_to_goal(g, g, 1.0, ALPHA), SiCommand::ZERO);
        let u = go_to_goal(Vec2::ZERO, Vec2::new(0.05, 0.0), 1.0, ALPHA);
        assert_eq!(u, SiCommand::new(0.05, 0.0));
        let u = go_to_goal(Vec2::ZERO, Vec2::new(3.0, 1.0), 1.0, ALPHA);
        assert!((u.as_vec().norm_inf() - ALPHA).abs() < 1e-15);
        assert!((u.uy / u.ux - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn waypoint_examples() {
        let limits = ActuatorLimits::default();
        let gains = WaypointGains { k1: 1.0, k2: 3.0 };
        let pose = RobotPose::new(0.1, 0.2, 0.4);
        assert_eq!(
            waypoint_follow(&pose, Vec2::new(0.1, 0.2), gains, &limits),
            UnicycleCommand::ZERO
        );
        let pose = RobotPose::new(0.0, 0.0, 0.0);
        let c = waypoint_follow(&pose, Vec2::new(0.1, 0.0), gains, &limits);
        assert!(c.v > 0.0);
        assert_eq!(c.w, 0.0);
    }

    #[test]
    fn route_advances_and_stops() {
        let limits = ActuatorLimits::default();
        let gains = WaypointGains { k1: 1.0, k2: 3.0 };
        let route = [Vec2::new(0.0, 0.0), Vec2::new(0.2, 0.0)];
        let mut idx = 0;
        let c = follow_route(&RobotPose::new(0.0, 0.0, 0.0), &route, &mut idx, false, gains, &limits);
        assert_eq!(idx, 1);
        assert!(c.v > 0.0);
        let c = follow_route(&RobotPose::new(0.2, 0.0, 0.0), &route, &mut idx, false, gains, &limits);
        assert_eq!(idx, 2);
        assert_eq!(c, UnicycleCommand::ZERO);
        let mut idx = 1;
        follow_route(&RobotPose::new(0.2, 0.0, 0.0), &route, &mut idx, true, gains, &limits);
        assert_eq!(idx, 0);
    }

    #[test]
    fn consensus_examples() {
        let w = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let p = vec![Vec2::new(0.1, 0.1); 2];
        assert_eq!(consensus(&p, &w, ALPHA).unwrap(), vec![SiCommand::ZERO; 2]);
        let p = vec![Vec2::new(-0.05, 0.0), Vec2::new(0.05, 0.0)];
        let u = consensus(&p, &w, ALPHA).unwrap();
        assert_eq!(u[0], SiCommand::new(0.1, 0.0));
        assert_eq!(u[1], SiCommand::new(-0.1, 0.0));
        // midpoint does not move
        assert_eq!(u[0].ux + u[1].ux, 0.0);
    }

    #[test]
    fn consensus_rejects_asymmetric() {
        let w = vec![vec![0.0, 1.0], vec![0.5, 0.0]];
        assert!(consensus(&[Vec2::ZERO; 2], &w, ALPHA).is_err());
        let w = vec![vec![0.0, -1.0], vec![-1.0, 0.0]];
        assert!(consensus(&[Vec2::ZERO; 2], &w, ALPHA).is_err());
    }

    #[test]
    fn formation_equilibrium() {
        for n in 3..9 {
            let c = Vec2::new(0.1, -0.05);
            let rot = 0.37;
            let pts: Vec<Vec2> = (0..n)
                .map(|i| c + 0.25 * Vec2::from_angle(rot + 2.0 * PI * i as f64 / n as f64))
                .collect();
            let u = cyclic_formation(&pts, 0.25, 1.0, 1.0, ALPHA).unwrap();
            for c in u {
                assert!(c.as_vec().norm() < 1e-6, "n={n}: {c:?}");
            }
        }
    }

    #[test]
    fn formation_needs_three() {
        assert!(cyclic_formation(&[Vec2::ZERO, Vec2::new(1.0, 0.0)], 0.2, 1.0, 1.0, ALPHA).is_err());
    }

    #[test]
    fn swap_examples() {
        let p = vec![Vec2::new(-0.2, 0.0), Vec2::new(0.2, 0.0)];
        let u = position_swap(&p, &p, &[0, 1], 1.0, ALPHA).unwrap();
        assert_eq!(u, vec![SiCommand::ZERO; 2]);
        let u = position_swap(&p, &p, &[1, 0], 1.0, ALPHA).unwrap();
        assert_eq!(u[0], SiCommand::new(0.1, 0.0));
        assert!(matches!(
            position_swap(&p, &p, &[1, 1], 1.0, ALPHA),
            Err(ControllerError::NotAPermutation(2))
        ));
    }

    #[test]
    fn assignments_resolve() {
        let a = AssignmentSpec::Named(NamedAssignment::Antipodal).resolve(4).unwrap();
        assert_eq!(a, vec![2, 3, 0, 1]);
        assert!(AssignmentSpec::Named(NamedAssignment::Antipodal).resolve(3).is_err());
        assert!(AssignmentSpec::Explicit(vec![0, 0]).resolve(2).is_err());
    }

    #[test]
    fn outputs_are_saturated() {
        let pts: Vec<Vec2> = (0..6).map(|i| Vec2::new(i as f64 * 0.3, (i * i) as f64 * 0.1)).collect();
        let u = cyclic_formation(&pts, 0.2, 2.0, 2.0, ALPHA).unwrap();
        let w = vec![vec![5.0; 6]; 6];
        let v = consensus(&pts, &w, ALPHA).unwrap();
        for c in u.iter().chain(&v) {
            assert!(c.is_finite() && c.as_vec().norm_inf() <= ALPHA);
        }
    }
}
