mod common;

use common::*;
use swarm_safety::barrier::FilterMode;
use swarm_safety::controllers::{AssignmentSpec, ControllerSpec};
use swarm_safety::model::Vec2;
use swarm_safety::scenario::RobotLayout;
use swarm_safety::sim::{self, NoiseModel, RunStatus, TrajectoryLog};
use swarm_safety::sysid::trajectory_error;

fn final_points(log: &TrajectoryLog) -> Vec<Vec2> {
    let l = log.header.lookahead;
    log.summary
        .final_poses
        .iter()
        .map(|p| p.lookahead_point(l))
        .collect()
}

fn centroid(pts: &[Vec2]) -> Vec2 {
    (1.0 / pts.len() as f64) * pts.iter().fold(Vec2::ZERO, |a, p| a + *p)
}

fn random_start(count: usize, seed: u64) -> RobotLayout {
    RobotLayout::Random {
        count,
        seed,
        min_separation: Some(0.15),
    }
}

#[test]
fn consensus_clusters_without_contact() {
    let s = scenario(
        "rendezvous",
        random_start(6, 3),
        ControllerSpec::Consensus { weights: None },
        FilterMode::Centralized,
        40.0,
    );
    let log = sim::run(&s).unwrap();
    assert_eq!(log.status, RunStatus::Completed);
    let ds = s.barrier.ds;
    assert!(log.summary.min_pair_distance.unwrap() >= ds - 1e-3);
    let start = lookahead_points(&log, 0);
    let end = final_points(&log);
    let spread = |pts: &[Vec2]| {
        let c = centroid(pts);
        pts.iter().map(|p| p.distance(c)).fold(0.0, f64::max)
    };
    // six discs of diameter ds pack within about 1.5 ds of their centroid
    assert!(spread(&end) < 2.0 * ds, "spread {}", spread(&end));
    assert!(spread(&end) < 0.5 * spread(&start));
}

fn formation(n: usize, radius: f64, seed: u64) -> TrajectoryLog {
    let s = scenario(
        "polygon",
        random_start(n, seed),
        ControllerSpec::CyclicFormation {
            radius,
            rotation_gain: 1.0,
            radial_gain: 1.0,
        },
        FilterMode::Centralized,
        60.0,
    );
    let log = sim::run(&s).unwrap();
    assert_eq!(log.status, RunStatus::Completed);
    assert!(log.summary.min_pair_distance.unwrap() >= s.barrier.ds - 1e-3);
    log
}

#[test]
fn hexagon_spacing() {
    let pts = final_points(&formation(6, 0.3, 11));
    let c = centroid(&pts);
    let mut ang: Vec<f64> = pts.iter().map(|p| (p.y - c.y).atan2(p.x - c.x)).collect();
    ang.sort_by(f64::total_cmp);
    for k in 0..6 {
        let next = if k == 5 { ang[0] + std::f64::consts::TAU } else { ang[k + 1] };
        let gap = (next - ang[k]).to_degrees();
        assert!((gap - 60.0).abs() <= 3.0, "gap {k} is {gap} deg");
    }
}

#[test]
fn triangle_sides() {
    let r = 0.25;
    let pts = final_points(&formation(3, r, 5));
    let want = r * 3f64.sqrt();
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        let side = pts[i].distance(pts[j]);
        assert!((side - want).abs() <= 0.02 * want, "side {i}{j} = {side}");
    }
}

#[test]
fn two_robots_swap_along_a_line() {
    // an exactly collinear noise-free swap is a symmetric equilibrium of the
    // filter; the default gate noise breaks the tie as on real hardware
    let mut s = head_on(FilterMode::Centralized, 30.0);
    s.noise = Some(NoiseModel::gate_default().with_seed(1));
    let log = sim::run(&s).unwrap();
    let end = final_points(&log);
    assert!(end[0].distance(Vec2::new(0.2, 0.0)) < 0.01, "{:?}", end[0]);
    assert!(end[1].distance(Vec2::new(-0.2, 0.0)) < 0.01, "{:?}", end[1]);
    assert!(log.summary.min_pair_distance.unwrap() >= s.barrier.ds - 1e-3);
}

#[test]
fn collinear_noise_free_swap_stalls_safely() {
    let s = head_on(FilterMode::Centralized, 30.0);
    let log = sim::run(&s).unwrap();
    let end = final_points(&log);
    assert!(end[0].distance(end[1]) >= s.barrier.ds);
    assert!(end[0].distance(end[1]) < s.barrier.ds + 1e-3);
    assert_eq!(log.summary.contact_events, 0);
}

#[test]
fn ten_robot_swap_reaches_targets() {
    let s = circle_swap(10, FilterMode::Centralized, 60.0);
    let log = sim::run(&s).unwrap();
    assert_eq!(log.summary.contact_events, 0);
    let start = lookahead_points(&log, 0);
    let end = final_points(&log);
    for i in 0..10 {
        let target = start[(i + 5) % 10];
        assert!(end[i].distance(target) < 0.02, "robot {i} at {:?}", end[i]);
    }
}

#[test]
fn identity_swap_at_goals_holds_still() {
    let mut s = circle_swap(4, FilterMode::Centralized, 2.0);
    s.controller = ControllerSpec::PositionSwap {
        assignment: AssignmentSpec::Explicit(vec![0, 1, 2, 3]),
        targets: None,
        gain: 1.0,
    };
    let log = sim::run(&s).unwrap();
    assert!(log.ticks.iter().flat_map(|t| &t.robots).all(|r| r.u_hat.as_vec() == Vec2::ZERO));
}

#[test]
fn rectangular_track_self_error_is_zero() {
    let route = vec![[-0.3, -0.2], [0.3, -0.2], [0.3, 0.2], [-0.3, 0.2]];
    let s = scenario(
        "track",
        explicit(&[[-0.35, -0.2, 0.0]]),
        ControllerSpec::WaypointFollow {
            routes: vec![route],
            k1: 1.0,
            k2: 3.0,
            looping: true,
        },
        FilterMode::Off,
        40.0,
    );
    let log = sim::run(&s).unwrap();
    let path: Vec<Vec2> = log.ticks.iter().map(|t| t.robots[0].pose.position()).collect();
    assert_eq!(trajectory_error(&path, &path).unwrap(), 0.0);
    // the robot actually went around: it visits every corner
    for c in [[0.3, -0.2], [0.3, 0.2], [-0.3, 0.2]] {
        let near = path
            .iter()
            .map(|p| p.distance(Vec2::new(c[0], c[1])))
            .fold(f64::INFINITY, f64::min);
        assert!(near < 0.03, "closest approach to {c:?} is {near}");
    }
}
