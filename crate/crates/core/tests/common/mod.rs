#![allow(dead_code)]

use swarm_safety::barrier::{FilterMode, Workspace};
use swarm_safety::controllers::{AssignmentSpec, ControllerSpec, NamedAssignment};
use swarm_safety::model::{Vec2, DEFAULT_DT};
use swarm_safety::qp::QpProblem;
use swarm_safety::scenario::{
    BarrierConfig, HeadingSpec, OutputConfig, RobotLayout, RobotModel, ScenarioConfig,
};
use swarm_safety::verification::SafetyThresholds;

pub fn scenario(
    name: &str,
    robots: RobotLayout,
    controller: ControllerSpec,
    mode: FilterMode,
    duration: f64,
) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        duration,
        dt: DEFAULT_DT,
        robots,
        virtual_robots: vec![],
        workspace: Workspace::default(),
        barrier: BarrierConfig {
            mode,
            ..Default::default()
        },
        controller,
        noise: None,
        thresholds: SafetyThresholds::new(2e-4, 1e-4),
        model: RobotModel::default(),
        output: OutputConfig::default(),
    }
}

pub fn explicit(poses: &[[f64; 3]]) -> RobotLayout {
    RobotLayout::Explicit {
        poses: poses.to_vec(),
    }
}

/// `n` robots on a 0.35 m circle driving to the antipodal spot.
pub fn circle_swap(n: usize, mode: FilterMode, duration: f64) -> ScenarioConfig {
    scenario(
        "circle-swap",
        RobotLayout::Circle {
            count: n,
            radius: 0.35,
            center: [0.0, 0.0],
            phase: 0.0,
            heading: HeadingSpec::default(),
        },
        ControllerSpec::PositionSwap {
            assignment: AssignmentSpec::Named(NamedAssignment::Antipodal),
            targets: None,
            gain: 1.0,
        },
        mode,
        duration,
    )
}

/// Two robots facing each other 0.4 m apart, each driving to the other's start.
pub fn head_on(mode: FilterMode, duration: f64) -> ScenarioConfig {
    scenario(
        "head-on",
        explicit(&[[-0.2, 0.0, 0.0], [0.2, 0.0, std::f64::consts::PI]]),
        ControllerSpec::PositionSwap {
            assignment: AssignmentSpec::Explicit(vec![1, 0]),
            targets: None,
            gain: 1.0,
        },
        mode,
        duration,
    )
}

/// Robots parked well apart with a zero controller.
pub fn parked(mode: FilterMode) -> ScenarioConfig {
    scenario(
        "parked",
        explicit(&[[-0.3, 0.0, 0.0], [0.3, 0.0, 1.0], [0.0, 0.3, 2.0]]),
        ControllerSpec::Hold,
        mode,
        5.0,
    )
}

pub fn lookahead_points(log: &swarm_safety::sim::TrajectoryLog, tick: usize) -> Vec<Vec2> {
    let l = log.header.lookahead;
    log.ticks[tick]
        .robots
        .iter()
        .map(|r| r.pose.lookahead_point(l))
        .collect()
}

/// Independent reference for `min |u - d|^2` over `rows` and the box.
///
/// Enumerates active sets by size, projects onto each equality set by
/// solving the Gram system, and returns the first KKT point that is feasible
/// for every original row.
pub fn enumerate_qp(p: &QpProblem) -> Option<Vec<f64>> {
    let dim = p.dim();
    // rows the box already implies cannot change the feasible set
    let mut rows: Vec<(Vec<f64>, f64)> = p
        .rows
        .iter()
        .map(|r| (r.to_dense(dim), r.b))
        .filter(|(a, b)| a.iter().map(|x| x.abs()).sum::<f64>() * p.box_bound > *b)
        .collect();
    for k in 0..dim {
        let mut a = vec![0.0; dim];
        a[k] = 1.0;
        rows.push((a.clone(), p.box_bound));
        a[k] = -1.0;
        rows.push((a, p.box_bound));
    }
    let m = rows.len();
    let feasible = |u: &[f64]| p.max_violation(u) <= 1e-9;
    let mut best: Option<Vec<f64>> = None;
    for size in 0..=dim.min(m) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            if let Some(u) = kkt_point(&p.desired, &rows, &idx) {
                if feasible(&u) {
                    best = Some(u);
                    break;
                }
            }
            if !next_combination(&mut idx, m) {
                break;
            }
        }
        if best.is_some() {
            break;
        }
    }
    best
}

fn next_combination(idx: &mut [usize], m: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < m - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Projection of `d` onto `{a_i u = b_i, i in set}` with nonnegative multipliers.
fn kkt_point(d: &[f64], rows: &[(Vec<f64>, f64)], set: &[usize]) -> Option<Vec<f64>> {
    let k = set.len();
    if k == 0 {
        return Some(d.to_vec());
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    // G lambda = A d - b
    let mut g = vec![vec![0.0; k + 1]; k];
    for (r, &i) in set.iter().enumerate() {
        for (c, &j) in set.iter().enumerate() {
            g[r][c] = dot(&rows[i].0, &rows[j].0);
        }
        g[r][k] = dot(&rows[i].0, d) - rows[i].1;
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&a, &b| g[a][col].abs().total_cmp(&g[b][col].abs()))?;
        if g[piv][col].abs() < 1e-12 {
            return None;
        }
        g.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = g[r][col] / g[col][col];
                for c in col..=k {
                    g[r][c] -= f * g[col][c];
                }
            }
        }
    }
    let lambda: Vec<f64> = (0..k).map(|r| g[r][k] / g[r][r]).collect();
    if lambda.iter().any(|l| *l < -1e-12) {
        return None;
    }
    let mut u = d.to_vec();
    for (l, &i) in lambda.iter().zip(set) {
        for (x, a) in u.iter_mut().zip(&rows[i].0) {
            *x -= l * a;
        }
    }
    Some(u)
}
