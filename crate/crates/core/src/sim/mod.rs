//! Closed-loop simulation.
//!
//! Each tick observes the (optionally noisy) state, asks the controller for
//! commands, passes them through the safety filter, maps them onto the
//! unicycles, integrates one Euler step, resolves contacts and logs the tick.
//! Robots are discs centered on their look-ahead points, so the points the
//! filter keeps apart are the points that can touch.
//!
//! Planar commands are mapped with [`si_to_uni_step`], which makes one Euler
//! step move the look-ahead point by exactly `dt * u`. With the filter on, the
//! QP also receives each robot's actuator envelope, so filtered commands are
//! never clipped and the discrete barrier condition
//! `h(k+1) >= (1 - gamma dt) h(k)` holds without noise.

mod contact;
mod log;

pub use contact::{resolve_contacts, CollisionModel, ContactOutcome};
pub use log::{
    read_csv, read_jsonl, LogError, LogHeader, LogRow, LogTable, RobotRecord, RunStatus,
    RunSummary, TickRecord, TrajectoryLog, CSV_COLUMNS, LOG_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{safety_violations, CommandEnvelope, FilterMode, SafetyFilter};
use crate::controllers::{Controller, ControllerError, Desired, Observation};
use crate::model::{
    euler_pose, si_to_uni_step, uni_to_si_step, unicycle_derivative, ActuatorLimits,
    RobotPose, SiCommand, UnicycleCommand, Vec2,
};
use crate::scenario::{ConfigErrors, ScenarioConfig};

/// Attempts at drawing a safe perturbed start before falling back to the nominal one.
const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Standard deviation added to the planar pose rates (m/s).
    pub sigma_dynamics: f64,
    /// Standard deviation of the initial position perturbation (m).
    pub sigma_init: f64,
    /// Standard deviation of the position noise seen by the controller (m).
    pub sigma_obs: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::gate_default()
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            sigma_dynamics: 0.0,
            sigma_init: 0.0,
            sigma_obs: 0.0,
            seed: 0,
        }
    }

    /// Noise used by the verification gate when a scenario declares none.
    pub fn gate_default() -> Self {
        Self {
            sigma_dynamics: 0.005,
            sigma_init: 0.01,
            sigma_obs: 0.002,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_dynamics == 0.0 && self.sigma_init == 0.0 && self.sigma_obs == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, s) in [
            ("sigma_dynamics", self.sigma_dynamics),
            ("sigma_init", self.sigma_init),
            ("sigma_obs", self.sigma_obs),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(format!("{name} must be finite and non-negative, got {s}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Init = 0,
    Observation = 1,
    Dynamics = 2,
}

/// Independent generator for one robot and purpose. Streams are addressed by
/// robot index, so adding robots leaves earlier robots' draws untouched.
fn stream(seed: u64, robot: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(robot as u64 * 4 + purpose as u64);
    rng
}

fn gaussian_pair(rng: &mut ChaCha8Rng, sigma: f64) -> Vec2 {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    Vec2::new(sigma * a, sigma * b)
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    InvalidScenario(#[from] ConfigErrors),
}

/// Knobs that vary between runs of the same scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub noise: NoiseModel,
    pub mode: FilterMode,
    pub config_hash: Option<String>,
}

impl RunOptions {
    pub fn for_scenario(s: &ScenarioConfig) -> Self {
        Self {
            noise: s.noise_or_zero(),
            mode: s.barrier.mode,
            config_hash: None,
        }
    }
}

/// Run a scenario with its own noise and filter settings.
pub fn run(scenario: &ScenarioConfig) -> Result<TrajectoryLog, SimError> {
    run_with(scenario, &RunOptions::for_scenario(scenario))
}

pub fn run_with(scenario: &ScenarioConfig, opts: &RunOptions) -> Result<TrajectoryLog, SimError> {
    scenario.validate()?;
    if let Err(e) = opts.noise.validate() {
        return Err(ConfigErrors {
            violations: vec![crate::scenario::ConfigViolation {
                field: "noise".into(),
                message: e,
                robots: vec![],
            }],
        }
        .into());
    }
    // validated above, so these cannot fail
    let robots = scenario.initial_robots().expect("validated layout");
    let params = scenario.barrier.params();
    let ws = scenario.workspace;
    let limits = scenario.model.limits();
    let l = limits.lookahead;
    let coeffs = scenario.model.coefficients;
    let collision = scenario.model.collision(params.ds);
    let dt = scenario.dt;
    let n = robots.len();
    let noise = opts.noise;

    let mut dyn_rng: Vec<ChaCha8Rng> = (0..n).map(|i| stream(noise.seed, i, Purpose::Dynamics)).collect();
    let mut obs_rng: Vec<ChaCha8Rng> =
        (0..n).map(|i| stream(noise.seed, i, Purpose::Observation)).collect();

    let nominal: Vec<RobotPose> = robots.iter().map(|r| r.pose).collect();
    let mut poses = perturbed_start(&nominal, l, noise, &params, &ws);
    let start_points: Vec<Vec2> = nominal.iter().map(|p| p.lookahead_point(l)).collect();
    let controller = Controller::new(
        scenario.controller.clone(),
        &start_points,
        params.alpha_bound,
        limits,
    )
    .expect("validated controller");
    let filter = SafetyFilter {
        params,
        workspace: ws,
        check_start: false,
    };

    let header = LogHeader {
        version: LOG_VERSION.into(),
        scenario: scenario.name.clone(),
        config_hash: opts.config_hash.clone(),
        seed: noise.seed,
        dt,
        robots: n,
        virtual_robots: robots
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_virtual)
            .map(|(i, _)| i)
            .collect(),
        lookahead: l,
        v_max: limits.v_max,
        w_max: limits.w_max,
        mass: collision.mass,
        filter: opts.mode,
    };

    let ticks_total = scenario.tick_count();
    let mut ticks = Vec::with_capacity(ticks_total);
    let mut state = controller.initial_state();
    let mut status = RunStatus::Completed;
    let mut summary = RunSummary {
        min_pair_distance: min_pair_distance(&points(&poses, l)),
        contact_events: 0,
        robot_contact_events: 0,
        wall_contact_events: 0,
        robot_contact_loss: 0.0,
        total_energy_loss: 0.0,
        emergency_stop_ticks: 0,
        final_poses: Vec::new(),
    };

    for k in 0..ticks_total {
        let t = k as f64 * dt;
        let body = points(&poses, l);

        let observed: Vec<RobotPose> = if noise.sigma_obs > 0.0 {
            poses
                .iter()
                .zip(obs_rng.iter_mut())
                .map(|(p, rng)| {
                    let e = gaussian_pair(rng, noise.sigma_obs);
                    RobotPose {
                        x1: p.x1 + e.x,
                        x2: p.x2 + e.y,
                        x3: p.x3,
                    }
                })
                .collect()
        } else {
            poses.clone()
        };
        let observed_points = points(&observed, l);
        let obs = Observation {
            poses: &observed,
            points: &observed_points,
        };
        let (desired, next_state) = match controller.command(&obs, state.clone()) {
            Ok(v) => v,
            Err(e) => {
                status = abort(k, &e);
                break;
            }
        };
        state = next_state;
        let (u_hat, unicycle): (Vec<SiCommand>, Option<Vec<UnicycleCommand>>) = match desired {
            Desired::Planar(u) => (u, None),
            Desired::Unicycle(c) => (
                c.iter()
                    .zip(&poses)
                    .map(|(c, p)| uni_to_si_step(*c, p, l, dt))
                    .collect(),
                Some(c),
            ),
        };
        if let Some(bad) = u_hat.iter().position(|u| !u.is_finite()) {
            status = RunStatus::Aborted {
                tick: k,
                reason: format!("controller produced a non-finite command for robot {bad}"),
            };
            break;
        }

        let envelope = (opts.mode != FilterMode::Off)
            .then(|| actuator_envelope(&poses, &limits, params.alpha_bound, dt));
        let outcome = match filter.filter_with(opts.mode, &body, &u_hat, envelope.as_ref()) {
            Ok(o) => o,
            Err(e) => {
                status = RunStatus::Aborted {
                    tick: k,
                    reason: format!("safety filter failed: {e}"),
                };
                break;
            }
        };
        if outcome.is_emergency_stop() {
            summary.emergency_stop_ticks += 1;
        }
        let u_star = outcome.commands;

        let mut next = Vec::with_capacity(n);
        let mut velocity = Vec::with_capacity(n);
        for i in 0..n {
            let cmd = match &unicycle {
                Some(c) if u_star[i] == u_hat[i] => c[i],
                _ => si_to_uni_step(u_star[i], &poses[i], &limits, dt).expect("validated limits"),
            };
            let mut rate = unicycle_derivative(&poses[i], cmd, &coeffs).expect("finite state");
            if noise.sigma_dynamics > 0.0 {
                let e = gaussian_pair(&mut dyn_rng[i], noise.sigma_dynamics);
                rate.dx1 += e.x;
                rate.dx2 += e.y;
            }
            let cand = euler_pose(&poses[i], &rate, dt);
            velocity.push((1.0 / dt) * (cand.lookahead_point(l) - body[i]));
            next.push(cand);
        }

        let contacts = resolve_contacts(&body, &velocity, dt, &ws, &collision);
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            if contacts.indicators[i] {
                next[i] = RobotPose::from_lookahead_point(contacts.positions[i], next[i].x3, l);
                summary.contact_events += 1;
                summary.robot_contact_events += contacts.robot_contact[i] as usize;
                summary.wall_contact_events += contacts.wall_contact[i] as usize;
                if contacts.robot_contact[i] {
                    summary.robot_contact_loss += contacts.energy_loss[i];
                }
                summary.total_energy_loss += contacts.energy_loss[i];
            }
            records.push(RobotRecord {
                pose: poses[i],
                u_hat: u_hat[i],
                u_star: u_star[i],
                collide: contacts.indicators[i],
                v_before: velocity[i].norm(),
                v_after: contacts.velocities[i].norm(),
                e_loss: contacts.energy_loss[i],
            });
        }
        ticks.push(TickRecord { t, robots: records });
        poses = next;
        if let Some(d) = min_pair_distance(&points(&poses, l)) {
            summary.min_pair_distance = Some(summary.min_pair_distance.map_or(d, |m| m.min(d)));
        }
    }
    summary.final_poses = poses;
    Ok(TrajectoryLog {
        header,
        ticks,
        status,
        summary,
    })
}

/// Speed allowance lost to the step mapping: the forward speed it returns
/// exceeds the along-heading command by at most `dt |u|^2 / l`.
pub fn envelope_speed_margin(alpha_bound: f64, lookahead: f64, dt: f64) -> f64 {
    dt * 2.0 * alpha_bound * alpha_bound / lookahead
}

/// Per-robot rows that keep a planar command, once mapped by
/// [`si_to_uni_step`], within `|v| <= v_max` and `|w| <= w_max`, so the
/// filtered command is executed without clipping.
pub fn actuator_envelope(
    poses: &[RobotPose],
    limits: &ActuatorLimits,
    alpha_bound: f64,
    dt: f64,
) -> CommandEnvelope {
    let l = limits.lookahead;
    let forward = (limits.v_max - envelope_speed_margin(alpha_bound, l, dt)).max(0.0);
    let lateral = l * (dt * limits.w_max).min(0.5 * std::f64::consts::PI).sin() / dt;
    CommandEnvelope {
        rows: poses
            .iter()
            .map(|p| {
                let (s, c) = p.x3.sin_cos();
                vec![
                    [c, s, forward],
                    [-c, -s, limits.v_max],
                    [-s, c, lateral],
                    [s, -c, lateral],
                ]
            })
            .collect(),
    }
}

fn abort(tick: usize, e: &ControllerError) -> RunStatus {
    RunStatus::Aborted {
        tick,
        reason: format!("controller error: {e}"),
    }
}

fn points(poses: &[RobotPose], l: f64) -> Vec<Vec2> {
    poses.iter().map(|p| p.lookahead_point(l)).collect()
}

/// Perturb body centers by `sigma_init`, redrawing until the start is safe.
fn perturbed_start(
    nominal: &[RobotPose],
    l: f64,
    noise: NoiseModel,
    params: &crate::barrier::BarrierParams,
    ws: &crate::barrier::Workspace,
) -> Vec<RobotPose> {
    if noise.sigma_init == 0.0 {
        return nominal.to_vec();
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..nominal.len())
        .map(|i| stream(noise.seed, i, Purpose::Init))
        .collect();
    for _ in 0..INIT_ATTEMPTS {
        let poses: Vec<RobotPose> = nominal
            .iter()
            .zip(rngs.iter_mut())
            .map(|(p, rng)| {
                let e = gaussian_pair(rng, noise.sigma_init);
                RobotPose::from_lookahead_point(p.lookahead_point(l) + e, p.x3, l)
            })
            .collect();
        let (pairs, outside) = safety_violations(&points(&poses, l), params, ws);
        if pairs.is_empty() && outside.is_empty() {
            return poses;
        }
    }
    nominal.to_vec()
}

/// Smallest pairwise distance, `None` with fewer than two points.
pub fn min_pair_distance(points: &[Vec2]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = points[i].distance(points[j]);
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best
}
