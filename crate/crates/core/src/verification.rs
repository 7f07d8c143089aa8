//! Offline Monte Carlo safety gate.
//!
//! Damage is the kinetic energy robots lose in contacts. Per robot,
//! `D_i = sum_k I_i(k) (m/2) (v_before^2 - v_after^2)` with each tick's term
//! clamped at zero, and `D = sum_i D_i`. Scores are `S = 1 - D / D_max` and
//! `s_i = 1 - D_i / d_i,max`. A controller may run unfiltered only when the
//! mean `S` and every mean `s_i` over the rollouts are positive.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::FilterMode;
use crate::scenario::ScenarioConfig;
use crate::sim::{run_with, NoiseModel, RunOptions, RunStatus, SimError, TrajectoryLog};

fn default_runs() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyThresholds {
    /// Allowed total damage over the team (J).
    pub d_max_total: f64,
    /// Allowed damage per robot (J).
    pub d_max_individual: f64,
    #[serde(default = "default_runs")]
    pub runs: usize,
}

impl SafetyThresholds {
    pub fn new(d_max_total: f64, d_max_individual: f64) -> Self {
        Self {
            d_max_total,
            d_max_individual,
            runs: default_runs(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut bad = Vec::new();
        if !(self.d_max_total.is_finite() && self.d_max_total > 0.0) {
            bad.push(format!("d_max_total must be positive, got {}", self.d_max_total));
        }
        if !(self.d_max_individual.is_finite() && self.d_max_individual > 0.0) {
            bad.push(format!(
                "d_max_individual must be positive, got {}",
                self.d_max_individual
            ));
        }
        if self.runs == 0 {
            bad.push("runs must be at least 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad.join("; "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Damage {
    pub total: f64,
    pub per_robot: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub total: f64,
    pub per_robot: Vec<f64>,
}

/// Contact damage accumulated over a log, using the logged speeds and `mass`.
pub fn damage(log: &TrajectoryLog, mass: f64) -> Damage {
    let n = log.header.robots;
    let mut per_robot = vec![0.0; n];
    let half_m = 0.5 * mass;
    for tick in &log.ticks {
        for (d, r) in per_robot.iter_mut().zip(&tick.robots) {
            if r.collide {
                let term = half_m * (r.v_before * r.v_before - r.v_after * r.v_after);
                *d += term.max(0.0);
            }
        }
    }
    Damage {
        total: per_robot.iter().sum(),
        per_robot,
    }
}

pub fn score(damage: &Damage, thresholds: &SafetyThresholds) -> Scores {
    Scores {
        total: 1.0 - damage.total / thresholds.d_max_total,
        per_robot: damage
            .per_robot
            .iter()
            .map(|d| 1.0 - d / thresholds.d_max_individual)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    PassUnfiltered,
    FailRequiresBarriers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    pub damage_total: f64,
    pub damage_individual: Vec<f64>,
    pub score_total: f64,
    pub score_individual: Vec<f64>,
    pub min_pair_distance: Option<f64>,
    pub contact_events: usize,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub version: String,
    pub scenario: String,
    pub config_hash: Option<String>,
    pub master_seed: u64,
    pub filter: FilterMode,
    pub thresholds: SafetyThresholds,
    pub noise: NoiseModel,
    pub runs: Vec<RunReport>,
    pub mean_damage_total: f64,
    pub mean_score_total: f64,
    pub mean_score_individual: Vec<f64>,
    pub worst_score_total: f64,
    pub worst_score_individual: Vec<f64>,
    pub verdict: Verdict,
    pub diagnostics: Vec<String>,
}

/// Seed of rollout `run`, derived from the master seed alone so that adding
/// runs leaves earlier ones unchanged.
pub fn run_seed(master: u64, run: usize) -> u64 {
    let mut z = master.wrapping_add((run as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyOptions {
    /// Filter mode during rollouts; `None` keeps the scenario's own mode.
    pub mode: Option<FilterMode>,
    pub config_hash: Option<String>,
}

pub fn verify(
    scenario: &ScenarioConfig,
    thresholds: &SafetyThresholds,
    noise: &NoiseModel,
) -> Result<SafetyReport, SimError> {
    verify_with(scenario, thresholds, noise, &VerifyOptions::default())
}

pub fn verify_with(
    scenario: &ScenarioConfig,
    thresholds: &SafetyThresholds,
    noise: &NoiseModel,
    opts: &VerifyOptions,
) -> Result<SafetyReport, SimError> {
    scenario.validate()?;
    if let Err(e) = thresholds.validate() {
        return Err(crate::scenario::ConfigErrors {
            violations: vec![crate::scenario::ConfigViolation {
                field: "thresholds".into(),
                message: e,
                robots: vec![],
            }],
        }
        .into());
    }
    let mode = opts.mode.unwrap_or(scenario.barrier.mode);
    let mass = scenario.model.mass;
    let outcomes: Vec<Result<(RunReport, Option<String>), SimError>> = (0..thresholds.runs)
        .into_par_iter()
        .map(|k| {
            let seed = run_seed(noise.seed, k);
            let run_opts = RunOptions {
                noise: noise.with_seed(seed),
                mode,
                config_hash: opts.config_hash.clone(),
            };
            let log = run_with(scenario, &run_opts)?;
            let d = damage(&log, mass);
            let s = score(&d, thresholds);
            let diag = match &log.status {
                RunStatus::Completed => None,
                RunStatus::Aborted { tick, reason } => {
                    Some(format!("run {k} (seed {seed}) aborted at tick {tick}: {reason}"))
                }
            };
            Ok((
                RunReport {
                    run: k,
                    seed,
                    damage_total: d.total,
                    damage_individual: d.per_robot,
                    score_total: s.total,
                    score_individual: s.per_robot,
                    min_pair_distance: log.summary.min_pair_distance,
                    contact_events: log.summary.contact_events,
                    completed: log.is_complete(),
                },
                diag,
            ))
        })
        .collect();

    let mut runs = Vec::with_capacity(outcomes.len());
    let mut diagnostics = Vec::new();
    for o in outcomes {
        let (r, diag) = o?;
        runs.push(r);
        diagnostics.extend(diag);
    }
    Ok(aggregate(scenario, thresholds, noise, mode, opts, runs, diagnostics))
}

fn aggregate(
    scenario: &ScenarioConfig,
    thresholds: &SafetyThresholds,
    noise: &NoiseModel,
    mode: FilterMode,
    opts: &VerifyOptions,
    runs: Vec<RunReport>,
    mut diagnostics: Vec<String>,
) -> SafetyReport {
    let n_runs = runs.len() as f64;
    let n_robots = runs.first().map_or(0, |r| r.score_individual.len());
    let mean_damage_total = runs.iter().map(|r| r.damage_total).sum::<f64>() / n_runs;
    let mean_score_total = runs.iter().map(|r| r.score_total).sum::<f64>() / n_runs;
    let worst_score_total = runs
        .iter()
        .map(|r| r.score_total)
        .fold(f64::INFINITY, f64::min);
    let mut mean_score_individual = vec![0.0; n_robots];
    let mut worst_score_individual = vec![f64::INFINITY; n_robots];
    for r in &runs {
        for (i, s) in r.score_individual.iter().enumerate() {
            mean_score_individual[i] += s;
            worst_score_individual[i] = worst_score_individual[i].min(*s);
        }
    }
    for m in &mut mean_score_individual {
        *m /= n_runs;
    }
    let all_completed = runs.iter().all(|r| r.completed);
    let failing: Vec<usize> = mean_score_individual
        .iter()
        .enumerate()
        .filter(|(_, s)| !(**s > 0.0))
        .map(|(i, _)| i)
        .collect();
    let pass = all_completed && mean_score_total > 0.0 && failing.is_empty();
    if !(mean_score_total > 0.0) {
        diagnostics.push(format!(
            "mean cumulative score {mean_score_total:.6} is not positive"
        ));
    }
    if !failing.is_empty() {
        diagnostics.push(format!(
            "robots {failing:?} have non-positive mean individual scores"
        ));
    }
    SafetyReport {
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: scenario.name.clone(),
        config_hash: opts.config_hash.clone(),
        master_seed: noise.seed,
        filter: mode,
        thresholds: *thresholds,
        noise: *noise,
        runs,
        mean_damage_total,
        mean_score_total,
        mean_score_individual,
        worst_score_total,
        worst_score_individual,
        verdict: if pass {
            Verdict::PassUnfiltered
        } else {
            Verdict::FailRequiresBarriers
        },
        diagnostics,
    }
}

impl SafetyReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::PassUnfiltered
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let verdict = match self.verdict {
            Verdict::PassUnfiltered => "PASS (may run without barriers)",
            Verdict::FailRequiresBarriers => "FAIL (requires barriers)",
        };
        let _ = writeln!(s, "scenario      {}", self.scenario);
        let _ = writeln!(s, "runs          {} (master seed {})", self.runs.len(), self.master_seed);
        let _ = writeln!(
            s,
            "thresholds    D_max {:e} J, d_max {:e} J per robot",
            self.thresholds.d_max_total, self.thresholds.d_max_individual
        );
        let _ = writeln!(s, "mean damage   {:e} J", self.mean_damage_total);
        let _ = writeln!(
            s,
            "score S       mean {:.6}, worst {:.6}",
            self.mean_score_total, self.worst_score_total
        );
        for (i, (m, w)) in self
            .mean_score_individual
            .iter()
            .zip(&self.worst_score_individual)
            .enumerate()
        {
            let _ = writeln!(s, "score s_{i:<4}  mean {m:.6}, worst {w:.6}");
        }
        let _ = writeln!(s, "verdict       {verdict}");
        for d in &self.diagnostics {
            let _ = writeln!(s, "note          {d}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RobotPose, SiCommand};
    use crate::sim::{LogHeader, RobotRecord, RunSummary, TickRecord};

    fn record(collide: bool, vb: f64, va: f64) -> RobotRecord {
        RobotRecord {
            pose: RobotPose::default(),
            u_hat: SiCommand::ZERO,
            u_star: SiCommand::ZERO,
            collide,
            v_before: vb,
            v_after: va,
            e_loss: 0.0,
        }
    }

    fn log_of(ticks: Vec<Vec<RobotRecord>>) -> TrajectoryLog {
        let n = ticks.first().map_or(0, |t| t.len());
        TrajectoryLog {
            header: LogHeader {
                version: "test".into(),
                scenario: "test".into(),
                config_hash: None,
                seed: 0,
                dt: 1.0 / 30.0,
                robots: n,
                virtual_robots: vec![],
                lookahead: 0.05,
                v_max: 0.1,
                w_max: 4.0,
                mass: 0.06,
                filter: FilterMode::Off,
            },
            ticks: ticks
                .into_iter()
                .enumerate()
                .map(|(k, robots)| TickRecord {
                    t: k as f64 / 30.0,
                    robots,
                })
                .collect(),
            status: RunStatus::Completed,
            summary: RunSummary {
                min_pair_distance: None,
                contact_events: 0,
                robot_contact_events: 0,
                wall_contact_events: 0,
                robot_contact_loss: 0.0,
                total_energy_loss: 0.0,
                emergency_stop_ticks: 0,
                final_poses: vec![],
            },
        }
    }

    #[test]
    fn damage_examples() {
        let free = log_of(vec![vec![record(false, 0.1, 0.1); 2]; 3]);
        let d = damage(&free, 0.06);
        assert_eq!(d.total, 0.0);
        assert_eq!(d.per_robot, vec![0.0, 0.0]);

        let one = log_of(vec![vec![record(true, 0.1, 0.0)]]);
        assert!((damage(&one, 0.06).total - 3.0e-4).abs() < 1e-15);

        let pair = log_of(vec![vec![record(true, 0.1, 0.05); 2]]);
        let d = damage(&pair, 0.06);
        for di in &d.per_robot {
            assert!((di - 2.25e-4).abs() < 1e-15);
        }
        assert!((d.total - 4.5e-4).abs() < 1e-15);
    }

    #[test]
    fn speed_gain_is_not_negative_damage() {
        let log = log_of(vec![vec![record(true, 0.0, 0.1)]]);
        assert_eq!(damage(&log, 0.06).total, 0.0);
    }

    #[test]
    fn score_examples() {
        let t = SafetyThresholds::new(1e-3, 1e-3);
        let zero = Damage {
            total: 0.0,
            per_robot: vec![0.0; 3],
        };
        let s = score(&zero, &t);
        assert_eq!(s.total, 1.0);
        assert_eq!(s.per_robot, vec![1.0; 3]);
        let half = Damage {
            total: 5e-4,
            per_robot: vec![5e-4],
        };
        assert_eq!(score(&half, &t).total, 0.5);
        let double = Damage {
            total: 2e-3,
            per_robot: vec![2e-3],
        };
        assert_eq!(score(&double, &t).total, -1.0);
    }

    #[test]
    fn run_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..50).map(|k| run_seed(7, k)).collect();
        let b: Vec<u64> = (0..60).map(|k| run_seed(7, k)).collect();
        assert_eq!(a[..], b[..50]);
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 50);
    }

    #[test]
    fn thresholds_validate() {
        assert!(SafetyThresholds::new(1e-3, 1e-4).validate().is_ok());
        assert!(SafetyThresholds::new(0.0, 1e-4).validate().is_err());
        let mut t = SafetyThresholds::new(1e-3, 1e-4);
        t.runs = 0;
        assert!(t.validate().is_err());
    }
}
