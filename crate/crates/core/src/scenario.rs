//! Declarative scenario description and its validation.
//!
//! Robot positions given here (explicit poses, generators, goals and swap
//! targets) are the robots' body centers, which coincide with the look-ahead
//! points that planar commands act on. Waypoint routes are tracked by the
//! wheel-axis midpoint.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{safety_violations, BarrierParams, FilterMode, Workspace};
use crate::controllers::{Controller, ControllerSpec};
use crate::model::{
    ActuatorLimits, ModelCoefficients, RobotPose, Vec2, DEFAULT_DT, DEFAULT_LOOKAHEAD,
    DEFAULT_MASS, DEFAULT_V_MAX,
};
use crate::sim::{CollisionModel, NoiseModel};
use crate::verification::SafetyThresholds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigViolation {
    pub field: String,
    pub message: String,
    /// Robot indices involved, when the problem is tied to specific robots.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub robots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{} configuration error(s): {}", .violations.len(), summarize(.violations))]
pub struct ConfigErrors {
    pub violations: Vec<ConfigViolation>,
}

fn summarize(v: &[ConfigViolation]) -> String {
    v.iter()
        .map(|c| format!("{}: {}", c.field, c.message))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedHeading {
    Inward,
    Outward,
    /// Counter-clockwise along the circle.
    Tangent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HeadingSpec {
    Angle(f64),
    Named(NamedHeading),
}

impl Default for HeadingSpec {
    fn default() -> Self {
        HeadingSpec::Named(NamedHeading::Inward)
    }
}

fn default_center() -> [f64; 2] {
    [0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case", deny_unknown_fields)]
pub enum RobotLayout {
    /// `[x, y, heading]` per robot.
    Explicit { poses: Vec<[f64; 3]> },
    Circle {
        count: usize,
        radius: f64,
        #[serde(default = "default_center")]
        center: [f64; 2],
        /// Angle of robot 0 on the circle.
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        heading: HeadingSpec,
    },
    Grid {
        rows: usize,
        cols: usize,
        spacing: f64,
        #[serde(default = "default_center")]
        center: [f64; 2],
        #[serde(default)]
        heading: f64,
    },
    /// Uniform random placement with rejection, random headings.
    Random {
        count: usize,
        seed: u64,
        /// Defaults to `ds + 0.02`.
        #[serde(default)]
        min_separation: Option<f64>,
    },
}

impl RobotLayout {
    /// Body centers and headings.
    pub fn generate(&self, ws: &Workspace, params: &BarrierParams) -> Result<Vec<(Vec2, f64)>, String> {
        match self {
            RobotLayout::Explicit { poses } => Ok(poses
                .iter()
                .map(|p| (Vec2::new(p[0], p[1]), p[2]))
                .collect()),
            RobotLayout::Circle {
                count,
                radius,
                center,
                phase,
                heading,
            } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(format!("circle radius must be positive, got {radius}"));
                }
                let c = Vec2::new(center[0], center[1]);
                Ok((0..*count)
                    .map(|i| {
                        let a = phase + 2.0 * PI * i as f64 / *count as f64;
                        let th = match heading {
                            HeadingSpec::Angle(t) => *t,
                            HeadingSpec::Named(NamedHeading::Inward) => a + PI,
                            HeadingSpec::Named(NamedHeading::Outward) => a,
                            HeadingSpec::Named(NamedHeading::Tangent) => a + 0.5 * PI,
                        };
                        (c + *radius * Vec2::from_angle(a), th)
                    })
                    .collect())
            }
            RobotLayout::Grid {
                rows,
                cols,
                spacing,
                center,
                heading,
            } => {
                if !(spacing.is_finite() && *spacing > 0.0) {
                    return Err(format!("grid spacing must be positive, got {spacing}"));
                }
                let c = Vec2::new(center[0], center[1]);
                let x0 = -0.5 * (*cols as f64 - 1.0) * spacing;
                let y0 = -0.5 * (*rows as f64 - 1.0) * spacing;
                Ok((0..*rows)
                    .flat_map(|r| (0..*cols).map(move |k| (r, k)))
                    .map(|(r, k)| {
                        (
                            c + Vec2::new(x0 + k as f64 * spacing, y0 + r as f64 * spacing),
                            *heading,
                        )
                    })
                    .collect())
            }
            RobotLayout::Random {
                count,
                seed,
                min_separation,
            } => {
                let sep = min_separation.unwrap_or(params.ds + 0.02);
                if !(sep.is_finite() && sep > 0.0) {
                    return Err(format!("min_separation must be positive, got {sep}"));
                }
                let m = params.boundary_margin;
                if ws.xmax - ws.xmin <= 2.0 * m || ws.ymax - ws.ymin <= 2.0 * m {
                    return Err("workspace too small for random placement".into());
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut out: Vec<(Vec2, f64)> = Vec::with_capacity(*count);
                let mut attempts = 0usize;
                while out.len() < *count {
                    attempts += 1;
                    if attempts > 200_000 {
                        return Err(format!(
                            "could not place {count} robots with separation {sep} m"
                        ));
                    }
                    let p = Vec2::new(
                        rng.random_range(ws.xmin + m..ws.xmax - m),
                        rng.random_range(ws.ymin + m..ws.ymax - m),
                    );
                    if out.iter().all(|(q, _)| q.distance(p) >= sep) {
                        out.push((p, rng.random_range(-PI..PI)));
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Barrier settings plus the filter mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierConfig {
    pub mode: FilterMode,
    pub ds: f64,
    pub gamma: f64,
    pub alpha_bound: f64,
    pub neighbor_radius: f64,
    pub boundary_margin: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self::from_params(FilterMode::Off, BarrierParams::default())
    }
}

impl BarrierConfig {
    pub fn from_params(mode: FilterMode, p: BarrierParams) -> Self {
        Self {
            mode,
            ds: p.ds,
            gamma: p.gamma,
            alpha_bound: p.alpha_bound,
            neighbor_radius: p.neighbor_radius,
            boundary_margin: p.boundary_margin,
        }
    }

    pub fn params(&self) -> BarrierParams {
        BarrierParams {
            ds: self.ds,
            gamma: self.gamma,
            alpha_bound: self.alpha_bound,
            neighbor_radius: self.neighbor_radius,
            boundary_margin: self.boundary_margin,
        }
    }
}

/// Physical robot parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotModel {
    /// Kinematic scaling applied when integrating; identity by default.
    pub coefficients: ModelCoefficients,
    pub v_max: f64,
    /// Defaults to `2 v_max / lookahead`.
    pub w_max: Option<f64>,
    pub lookahead: f64,
    pub mass: f64,
    /// Contact disc radius; defaults to `ds / 2`.
    pub robot_radius: Option<f64>,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            coefficients: ModelCoefficients::IDENTITY,
            v_max: DEFAULT_V_MAX,
            w_max: None,
            lookahead: DEFAULT_LOOKAHEAD,
            mass: DEFAULT_MASS,
            robot_radius: None,
        }
    }
}

impl RobotModel {
    pub fn limits(&self) -> ActuatorLimits {
        let mut l = ActuatorLimits::with_lookahead(self.v_max, self.lookahead);
        if let Some(w) = self.w_max {
            l.w_max = w;
        }
        l
    }

    pub fn collision(&self, ds: f64) -> CollisionModel {
        CollisionModel {
            robot_radius: self.robot_radius.unwrap_or(0.5 * ds),
            mass: self.mass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory for artifacts, relative to the config file; defaults to the config's directory.
    pub dir: Option<String>,
    pub csv: bool,
    pub jsonl: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            csv: true,
            jsonl: false,
        }
    }
}

fn default_name() -> String {
    "scenario".into()
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Simulated horizon (s).
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub robots: RobotLayout,
    /// Extra simulated robots, `[x, y, heading]` each, appended after `robots`.
    #[serde(default)]
    pub virtual_robots: Vec<[f64; 3]>,
    #[serde(default)]
    pub workspace: Workspace,
    #[serde(default)]
    pub barrier: BarrierConfig,
    pub controller: ControllerSpec,
    /// Absent means a noise-free simulation; verification then uses
    /// [`NoiseModel::gate_default`].
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    pub thresholds: SafetyThresholds,
    #[serde(default)]
    pub model: RobotModel,
    #[serde(default)]
    pub output: OutputConfig,
}

/// One robot of a resolved scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotInit {
    pub pose: RobotPose,
    pub is_virtual: bool,
}

impl ScenarioConfig {
    /// Body centers and headings of every robot, virtual ones last.
    pub fn body_layout(&self) -> Result<Vec<(Vec2, f64, bool)>, String> {
        let mut out: Vec<(Vec2, f64, bool)> = self
            .robots
            .generate(&self.workspace, &self.barrier.params())?
            .into_iter()
            .map(|(p, th)| (p, th, false))
            .collect();
        out.extend(
            self.virtual_robots
                .iter()
                .map(|v| (Vec2::new(v[0], v[1]), v[2], true)),
        );
        Ok(out)
    }

    /// Wheel-axis poses of every robot.
    pub fn initial_robots(&self) -> Result<Vec<RobotInit>, String> {
        let l = self.model.lookahead;
        Ok(self
            .body_layout()?
            .into_iter()
            .map(|(p, th, v)| RobotInit {
                pose: RobotPose::from_lookahead_point(p, th, l),
                is_virtual: v,
            })
            .collect())
    }

    pub fn robot_count(&self) -> usize {
        self.body_layout().map(|b| b.len()).unwrap_or(0)
    }

    pub fn tick_count(&self) -> usize {
        tick_count(self.duration, self.dt)
    }

    pub fn noise_or_zero(&self) -> NoiseModel {
        self.noise.unwrap_or_else(NoiseModel::zero)
    }

    pub fn noise_or_gate_default(&self) -> NoiseModel {
        self.noise.unwrap_or_else(NoiseModel::gate_default)
    }

    /// Check the whole document, reporting every problem found.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut v = Vec::new();
        let mut push = |field: &str, message: String, robots: Vec<usize>| {
            v.push(ConfigViolation {
                field: field.into(),
                message,
                robots,
            })
        };
        if !(self.duration.is_finite() && self.duration > 0.0) {
            push("duration", format!("must be positive, got {}", self.duration), vec![]);
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            push("dt", format!("must be positive, got {}", self.dt), vec![]);
        } else if self.duration.is_finite() && self.dt > self.duration {
            push("dt", format!("{} exceeds duration {}", self.dt, self.duration), vec![]);
        }
        let params = self.barrier.params();
        let params_ok = match params.validate() {
            Ok(()) => true,
            Err(e) => {
                push("barrier", e.to_string(), vec![]);
                false
            }
        };
        let ws_ok = match self.workspace.validate(params.ds) {
            Ok(()) => true,
            Err(e) => {
                push("workspace", e.to_string(), vec![]);
                false
            }
        };
        let m = &self.model;
        if let Err(e) = m.coefficients.validate() {
            push("model.coefficients", e.to_string(), vec![]);
        }
        if let Err(e) = m.limits().validate() {
            push("model", e.to_string(), vec![]);
        } else if params_ok && self.dt.is_finite() && self.dt > 0.0 && self.barrier.mode != FilterMode::Off {
            let margin = crate::sim::envelope_speed_margin(params.alpha_bound, m.lookahead, self.dt);
            if margin >= m.v_max {
                push(
                    "model.v_max",
                    format!(
                        "{} leaves no forward speed after the turning margin {margin:.4} (lower alpha_bound or dt)",
                        m.v_max
                    ),
                    vec![],
                );
            }
        }
        if !(m.mass.is_finite() && m.mass > 0.0) {
            push("model.mass", format!("must be positive, got {}", m.mass), vec![]);
        }
        let col = m.collision(params.ds);
        if !(col.robot_radius.is_finite() && col.robot_radius > 0.0) {
            push(
                "model.robot_radius",
                format!("must be positive, got {}", col.robot_radius),
                vec![],
            );
        } else if 2.0 * col.robot_radius > params.ds {
            push(
                "model.robot_radius",
                format!("2 * {} exceeds ds {}", col.robot_radius, params.ds),
                vec![],
            );
        }
        if let Some(n) = &self.noise {
            if let Err(e) = n.validate() {
                push("noise", e, vec![]);
            }
        }
        if let Err(e) = self.thresholds.validate() {
            push("thresholds", e, vec![]);
        }
        match self.body_layout() {
            Err(e) => push("robots", e, vec![]),
            Ok(bodies) if bodies.is_empty() => push("robots", "no robots defined".into(), vec![]),
            Ok(bodies) => {
                let bad: Vec<usize> = bodies
                    .iter()
                    .enumerate()
                    .filter(|(_, (p, th, _))| !(p.is_finite() && th.is_finite()))
                    .map(|(i, _)| i)
                    .collect();
                if !bad.is_empty() {
                    push("robots", "non-finite pose".into(), bad);
                } else {
                    let pts: Vec<Vec2> = bodies.iter().map(|b| b.0).collect();
                    if params_ok && ws_ok {
                        let (pairs, outside) = safety_violations(&pts, &params, &self.workspace);
                        for (i, j) in pairs {
                            push(
                                "robots",
                                format!(
                                    "robots ({i}, {j}) start {:.4} m apart, closer than ds = {}",
                                    pts[i].distance(pts[j]),
                                    params.ds
                                ),
                                vec![i, j],
                            );
                        }
                        if !outside.is_empty() {
                            push(
                                "robots",
                                format!(
                                    "robots {outside:?} start outside the workspace shrunk by {} m",
                                    params.boundary_margin
                                ),
                                outside,
                            );
                        }
                    }
                    if let Err(e) =
                        Controller::new(self.controller.clone(), &pts, params.alpha_bound, m.limits())
                    {
                        push("controller", e.to_string(), vec![]);
                    }
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors { violations: v })
        }
    }
}

/// Number of logged ticks for a horizon: `ceil(duration / dt)`.
pub fn tick_count(duration: f64, dt: f64) -> usize {
    let r = duration / dt;
    let n = r.round();
    // absorb round-off such as 60 / (1/30) = 1800.0000000000002
    if (r - n).abs() <= 1e-9 * r.max(1.0) {
        n as usize
    } else {
        r.ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("no free spot for virtual robot {0}")]
    NoRoom(usize),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Append `count` virtual robots at free spots of a grid over the workspace.
/// Each new robot holds its position under goal-seeking controllers.
pub fn add_virtual_robots(
    scenario: &ScenarioConfig,
    count: usize,
) -> Result<ScenarioConfig, ScenarioError> {
    if count == 0 {
        return Ok(scenario.clone());
    }
    let bodies = scenario.body_layout().map_err(ScenarioError::Invalid)?;
    let params = scenario.barrier.params();
    let ws = scenario.workspace;
    let clearance = 2.0 * params.ds;
    let step = clearance;
    let m = params.boundary_margin + params.ds;
    let mut taken: Vec<Vec2> = bodies.iter().map(|b| b.0).collect();
    let mut added = Vec::with_capacity(count);
    let mut y = ws.ymin + m;
    'outer: while y <= ws.ymax - m {
        let mut x = ws.xmin + m;
        while x <= ws.xmax - m {
            let p = Vec2::new(x, y);
            if taken.iter().all(|q| q.distance(p) >= clearance) {
                taken.push(p);
                added.push(p);
                if added.len() == count {
                    break 'outer;
                }
            }
            x += step;
        }
        y += step;
    }
    if added.len() < count {
        return Err(ScenarioError::NoRoom(bodies.len() + added.len()));
    }
    add_virtual_robots_at(
        scenario,
        &added.iter().map(|p| [p.x, p.y, 0.0]).collect::<Vec<_>>(),
    )
}

/// Append virtual robots at the given `[x, y, heading]` body poses.
pub fn add_virtual_robots_at(
    scenario: &ScenarioConfig,
    poses: &[[f64; 3]],
) -> Result<ScenarioConfig, ScenarioError> {
    let bodies = scenario.body_layout().map_err(ScenarioError::Invalid)?;
    let starts: Vec<Vec2> = bodies.iter().map(|b| b.0).collect();
    let extra: Vec<Vec2> = poses.iter().map(|p| Vec2::new(p[0], p[1])).collect();
    let mut out = scenario.clone();
    out.controller.extend_for_new_robots(&starts, &extra);
    out.virtual_robots.extend_from_slice(poses);
    Ok(out)
}
