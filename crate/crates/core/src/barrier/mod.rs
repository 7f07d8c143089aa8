//! Safety barrier certificates for single-integrator swarms.
//!
//! For robots `i != j` at planar positions `x_i`, the pairwise barrier
//! `h_ij = |x_i - x_j|^2 - ds^2` is kept non-negative by requiring
//!
//! ```text
//!     -2 (x_i - x_j)' u_i + 2 (x_i - x_j)' u_j <= gamma * h_ij
//! ```
//!
//! and each robot keeps off the workspace walls with four affine barriers of
//! the form `x_i1 - xmin - margin >= 0`. The filter returns the command
//! closest to the requested one that satisfies every row and the per-axis
//! speed bound.
//!
//! Positions handed to this module are the points the single-integrator
//! commands act on; for unicycles that is the look-ahead point.

mod bench;
mod neighbors;

pub use bench::{
    benchmark_certificates, dense_random_state, saturated_random_state, BenchmarkRow,
    BENCH_DENSITY,
};
pub use neighbors::{neighbor_lists, neighbor_pairs};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{SiCommand, Vec2};
use crate::qp::{self, QpError, QpProblem, QpRow, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error("invalid barrier parameters: {0}")]
    InvalidParams(String),
    #[error("unsafe start: pairs closer than ds {pairs:?}, robots outside workspace {outside:?}")]
    UnsafeStart {
        pairs: Vec<(usize, usize)>,
        outside: Vec<usize>,
    },
    #[error("expected {expected} commands, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierParams {
    /// Minimum allowed distance between robots (m).
    pub ds: f64,
    /// Barrier decay rate (1/s).
    pub gamma: f64,
    /// Per-axis speed bound on filtered commands (m/s).
    pub alpha_bound: f64,
    /// Pairs farther apart than this get no constraint; `inf` keeps every pair.
    pub neighbor_radius: f64,
    /// Clearance kept between robot positions and the walls (m).
    pub boundary_margin: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self {
            ds: 0.08,
            gamma: 1.0,
            alpha_bound: 0.1,
            neighbor_radius: 0.20,
            boundary_margin: 0.04,
        }
    }
}

impl BarrierParams {
    pub fn validate(&self) -> Result<(), BarrierError> {
        let mut bad = Vec::new();
        if !(self.ds > 0.0 && self.ds.is_finite()) {
            bad.push(format!("ds must be positive, got {}", self.ds));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            bad.push(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.alpha_bound > 0.0 && self.alpha_bound.is_finite()) {
            bad.push(format!("alpha_bound must be positive, got {}", self.alpha_bound));
        }
        if !(self.neighbor_radius >= self.ds) {
            bad.push(format!(
                "neighbor_radius {} must be at least ds {}",
                self.neighbor_radius, self.ds
            ));
        }
        if !(self.boundary_margin >= 0.0 && self.boundary_margin.is_finite()) {
            bad.push(format!(
                "boundary_margin must be non-negative, got {}",
                self.boundary_margin
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(BarrierError::InvalidParams(bad.join("; ")))
        }
    }
}

/// Axis-aligned rectangular arena (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Default for Workspace {
    /// 1.30 m x 0.90 m centered on the origin.
    fn default() -> Self {
        Self {
            xmin: -0.65,
            xmax: 0.65,
            ymin: -0.45,
            ymax: 0.45,
        }
    }
}

impl Workspace {
    pub fn validate(&self, ds: f64) -> Result<(), BarrierError> {
        let finite = [self.xmin, self.xmax, self.ymin, self.ymax]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.xmax - self.xmin <= 2.0 * ds || self.ymax - self.ymin <= 2.0 * ds {
            return Err(BarrierError::InvalidParams(format!(
                "workspace {self:?} must be finite and wider than 2 ds in both axes"
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    /// Barrier values for the four walls, in [`Face`] order.
    pub fn boundary_h(&self, p: Vec2, margin: f64) -> [f64; 4] {
        [
            p.x - self.xmin - margin,
            self.xmax - margin - p.x,
            p.y - self.ymin - margin,
            self.ymax - margin - p.y,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    Left,
    Right,
    Bottom,
    Top,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::Left, Face::Right, Face::Bottom, Face::Top];

    /// Coefficients on `(u_x, u_y)` of the row `a' u_i <= gamma * h`.
    fn block(self) -> (f64, f64) {
        match self {
            Face::Left => (-1.0, 0.0),
            Face::Right => (1.0, 0.0),
            Face::Bottom => (0.0, -1.0),
            Face::Top => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Pairwise { i: usize, j: usize },
    Boundary { i: usize, face: Face },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub row: QpRow,
    pub kind: RowKind,
}

/// Linear rows over the stacked command `[u_1x, u_1y, ..., u_Nx, u_Ny]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub robots: usize,
    pub rows: Vec<ConstraintRow>,
}

impl ConstraintSet {
    pub fn dim(&self) -> usize {
        2 * self.robots
    }

    pub fn pairwise_count(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Pairwise { .. }))
            .count()
    }

    pub fn boundary_count(&self) -> usize {
        self.rows.len() - self.pairwise_count()
    }

    /// Largest `a' u - b` over all rows.
    pub fn max_violation(&self, u: &[SiCommand]) -> f64 {
        let flat = stack(u);
        self.rows
            .iter()
            .map(|r| r.row.violation(&flat))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_problem(&self, desired: &[SiCommand], alpha_bound: f64) -> QpProblem {
        QpProblem::new(
            stack(desired),
            self.rows.iter().map(|r| r.row.clone()).collect(),
            alpha_bound,
        )
    }
}

pub fn h_pairwise(xi: Vec2, xj: Vec2, ds: f64) -> f64 {
    (xi - xj).norm_squared() - ds * ds
}

pub fn stack(cmds: &[SiCommand]) -> Vec<f64> {
    cmds.iter().flat_map(|c| [c.ux, c.uy]).collect()
}

pub fn unstack(u: &[f64]) -> Vec<SiCommand> {
    u.chunks_exact(2)
        .map(|c| SiCommand::new(c[0], c[1]))
        .collect()
}

/// Pairs closer than `ds` and robots outside the margin-shrunk workspace.
pub fn safety_violations(
    positions: &[Vec2],
    params: &BarrierParams,
    ws: &Workspace,
) -> (Vec<(usize, usize)>, Vec<usize>) {
    let pairs = neighbor_pairs(positions, params.ds)
        .into_iter()
        .filter(|&(i, j)| h_pairwise(positions[i], positions[j], params.ds) < 0.0)
        .collect();
    let outside = positions
        .iter()
        .enumerate()
        .filter(|(_, p)| ws.boundary_h(**p, params.boundary_margin).iter().any(|h| *h < 0.0))
        .map(|(i, _)| i)
        .collect();
    (pairs, outside)
}

/// Assemble the certificate rows, rejecting states that already violate a barrier.
pub fn build_constraints(
    positions: &[Vec2],
    params: &BarrierParams,
    ws: &Workspace,
) -> Result<ConstraintSet, BarrierError> {
    params.validate()?;
    ws.validate(params.ds)?;
    let (pairs, outside) = safety_violations(positions, params, ws);
    if !pairs.is_empty() || !outside.is_empty() {
        return Err(BarrierError::UnsafeStart { pairs, outside });
    }
    Ok(build_constraints_unchecked(positions, params, ws))
}

/// Assemble the rows without the safe-state check. Violated barriers give
/// rows with negative `b`, which push the state back toward the safe set.
pub fn build_constraints_unchecked(
    positions: &[Vec2],
    params: &BarrierParams,
    ws: &Workspace,
) -> ConstraintSet {
    let pairs = neighbor_pairs(positions, params.neighbor_radius);
    let mut rows = Vec::with_capacity(pairs.len() + 4 * positions.len());
    for (i, j) in pairs {
        let d = positions[i] - positions[j];
        let h = h_pairwise(positions[i], positions[j], params.ds);
        rows.push(ConstraintRow {
            row: QpRow::new(
                vec![
                    (2 * i, -2.0 * d.x),
                    (2 * i + 1, -2.0 * d.y),
                    (2 * j, 2.0 * d.x),
                    (2 * j + 1, 2.0 * d.y),
                ],
                params.gamma * h,
            ),
            kind: RowKind::Pairwise { i, j },
        });
    }
    for (i, p) in positions.iter().enumerate() {
        let hs = ws.boundary_h(*p, params.boundary_margin);
        for (face, h) in Face::ALL.into_iter().zip(hs) {
            rows.push(ConstraintRow {
                row: boundary_row(face, 2 * i, params.gamma * h),
                kind: RowKind::Boundary { i, face },
            });
        }
    }
    ConstraintSet {
        robots: positions.len(),
        rows,
    }
}

fn boundary_row(face: Face, offset: usize, b: f64) -> QpRow {
    let (ax, ay) = face.block();
    let coeffs = [(offset, ax), (offset + 1, ay)]
        .into_iter()
        .filter(|(_, v)| *v != 0.0)
        .collect();
    QpRow::new(coeffs, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    #[default]
    Off,
    Centralized,
    Decentralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub commands: Vec<SiCommand>,
    /// Robots whose command was replaced by zero because no safe command was found.
    pub stopped: Vec<usize>,
    /// Largest number of pairwise rows in any single QP.
    pub max_pairwise_rows: usize,
    pub diagnostic: Option<String>,
}

impl FilterOutcome {
    pub fn is_emergency_stop(&self) -> bool {
        !self.stopped.is_empty()
    }
}

/// Extra rows `a . u_i <= b` per robot, stored as `[ax, ay, b]`. The simulator
/// uses them to keep filtered commands inside each unicycle's actuator limits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommandEnvelope {
    pub rows: Vec<Vec<[f64; 3]>>,
}

impl CommandEnvelope {
    fn agent_rows(&self, i: usize, offset: usize) -> impl Iterator<Item = QpRow> + '_ {
        self.rows
            .get(i)
            .into_iter()
            .flatten()
            .map(move |r| QpRow::new(vec![(offset, r[0]), (offset + 1, r[1])], r[2]))
    }
}

/// Barrier filter bound to one arena and parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyFilter {
    pub params: BarrierParams,
    pub workspace: Workspace,
    /// Reject states that already violate a barrier instead of filtering them.
    pub check_start: bool,
}

impl SafetyFilter {
    pub fn new(params: BarrierParams, workspace: Workspace) -> Result<Self, BarrierError> {
        params.validate()?;
        workspace.validate(params.ds)?;
        Ok(Self {
            params,
            workspace,
            check_start: true,
        })
    }

    pub fn filter(
        &self,
        mode: FilterMode,
        positions: &[Vec2],
        desired: &[SiCommand],
    ) -> Result<FilterOutcome, BarrierError> {
        self.filter_with(mode, positions, desired, None)
    }

    /// [`Self::filter`] with additional per-robot rows.
    pub fn filter_with(
        &self,
        mode: FilterMode,
        positions: &[Vec2],
        desired: &[SiCommand],
        envelope: Option<&CommandEnvelope>,
    ) -> Result<FilterOutcome, BarrierError> {
        match mode {
            FilterMode::Off => Ok(FilterOutcome {
                commands: desired.to_vec(),
                stopped: Vec::new(),
                max_pairwise_rows: 0,
                diagnostic: None,
            }),
            FilterMode::Centralized => self.centralized_with(positions, desired, envelope),
            FilterMode::Decentralized => self.decentralized_with(positions, desired, envelope),
        }
    }

    fn constraints(&self, positions: &[Vec2]) -> Result<ConstraintSet, BarrierError> {
        if self.check_start {
            build_constraints(positions, &self.params, &self.workspace)
        } else {
            Ok(build_constraints_unchecked(
                positions,
                &self.params,
                &self.workspace,
            ))
        }
    }

    pub fn centralized(
        &self,
        positions: &[Vec2],
        desired: &[SiCommand],
    ) -> Result<FilterOutcome, BarrierError> {
        self.centralized_with(positions, desired, None)
    }

    fn centralized_with(
        &self,
        positions: &[Vec2],
        desired: &[SiCommand],
        envelope: Option<&CommandEnvelope>,
    ) -> Result<FilterOutcome, BarrierError> {
        check_len(positions, desired)?;
        let set = self.constraints(positions)?;
        let mut problem = set.to_problem(desired, self.params.alpha_bound);
        if let Some(env) = envelope {
            for i in 0..positions.len() {
                problem.rows.extend(env.agent_rows(i, 2 * i));
            }
        }
        let sol = qp::solve(&problem)?;
        let max_pairwise_rows = set.pairwise_count();
        Ok(match sol.status {
            QpStatus::Optimal => FilterOutcome {
                commands: unstack(&sol.u_star),
                stopped: Vec::new(),
                max_pairwise_rows,
                diagnostic: None,
            },
            status => FilterOutcome {
                commands: vec![SiCommand::ZERO; desired.len()],
                stopped: (0..desired.len()).collect(),
                max_pairwise_rows,
                diagnostic: Some(format!(
                    "centralized certificate QP returned {status:?} after {} sweeps; all robots stopped",
                    sol.iterations
                )),
            },
        })
    }

    /// One two-variable QP per robot over its neighbors, each robot taking half
    /// of every pairwise margin.
    pub fn decentralized(
        &self,
        positions: &[Vec2],
        desired: &[SiCommand],
    ) -> Result<FilterOutcome, BarrierError> {
        self.decentralized_with(positions, desired, None)
    }

    fn decentralized_with(
        &self,
        positions: &[Vec2],
        desired: &[SiCommand],
        envelope: Option<&CommandEnvelope>,
    ) -> Result<FilterOutcome, BarrierError> {
        check_len(positions, desired)?;
        if self.check_start {
            let (pairs, outside) = safety_violations(positions, &self.params, &self.workspace);
            if !pairs.is_empty() || !outside.is_empty() {
                return Err(BarrierError::UnsafeStart { pairs, outside });
            }
        }
        let lists = neighbor_lists(positions, self.params.neighbor_radius);
        let mut commands = Vec::with_capacity(desired.len());
        let mut stopped = Vec::new();
        let mut max_pairwise_rows = 0;
        for (i, neighbors) in lists.iter().enumerate() {
            let mut problem = self.agent_problem(positions, i, neighbors, desired[i]);
            if let Some(env) = envelope {
                problem.rows.extend(env.agent_rows(i, 0));
            }
            max_pairwise_rows = max_pairwise_rows.max(neighbors.len());
            let sol = qp::solve(&problem)?;
            if sol.status == QpStatus::Optimal {
                commands.push(SiCommand::new(sol.u_star[0], sol.u_star[1]));
            } else {
                commands.push(SiCommand::ZERO);
                stopped.push(i);
            }
        }
        let diagnostic = (!stopped.is_empty())
            .then(|| format!("no safe command for robots {stopped:?}; stopped"));
        Ok(FilterOutcome {
            commands,
            stopped,
            max_pairwise_rows,
            diagnostic,
        })
    }

    /// The QP agent `i` solves in decentralized mode.
    pub fn agent_problem(
        &self,
        positions: &[Vec2],
        i: usize,
        neighbors: &[usize],
        desired: SiCommand,
    ) -> QpProblem {
        let p = &self.params;
        let mut rows = Vec::with_capacity(neighbors.len() + 4);
        for &j in neighbors {
            let d = positions[i] - positions[j];
            let h = h_pairwise(positions[i], positions[j], p.ds);
            rows.push(QpRow::new(
                vec![(0, -2.0 * d.x), (1, -2.0 * d.y)],
                0.5 * p.gamma * h,
            ));
        }
        let hs = self.workspace.boundary_h(positions[i], p.boundary_margin);
        for (face, h) in Face::ALL.into_iter().zip(hs) {
            rows.push(boundary_row(face, 0, p.gamma * h));
        }
        QpProblem::new(vec![desired.ux, desired.uy], rows, p.alpha_bound)
    }
}

fn check_len(positions: &[Vec2], desired: &[SiCommand]) -> Result<(), BarrierError> {
    if positions.len() != desired.len() {
        return Err(BarrierError::LengthMismatch {
            expected: positions.len(),
            got: desired.len(),
        });
    }
    Ok(())
}

pub fn filter_centralized(
    positions: &[Vec2],
    desired: &[SiCommand],
    params: &BarrierParams,
    ws: &Workspace,
) -> Result<FilterOutcome, BarrierError> {
    SafetyFilter::new(*params, *ws)?.centralized(positions, desired)
}

pub fn filter_decentralized(
    positions: &[Vec2],
    desired: &[SiCommand],
    params: &BarrierParams,
    ws: &Workspace,
) -> Result<FilterOutcome, BarrierError> {
    SafetyFilter::new(*params, *ws)?.decentralized(positions, desired)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::solve_oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> BarrierParams {
        BarrierParams::default()
    }

    #[test]
    fn h_examples() {
        let p = Vec2::new(0.3, -0.2);
        assert_eq!(h_pairwise(p, p, 0.08), -0.0064);
        assert!(h_pairwise(Vec2::ZERO, Vec2::new(0.08, 0.0), 0.08).abs() < 1e-18);
        assert!((h_pairwise(Vec2::ZERO, Vec2::new(0.1, 0.0), 0.08) - 0.0036).abs() < 1e-15);
    }

    #[test]
    fn single_robot_structure() {
        let set = build_constraints(&[Vec2::ZERO], &params(), &Workspace::default()).unwrap();
        assert_eq!(set.pairwise_count(), 0);
        assert_eq!(set.boundary_count(), 4);
        let left = &set.rows[0];
        assert_eq!(left.kind, RowKind::Boundary { i: 0, face: Face::Left });
        assert_eq!(left.row.coeffs, vec![(0, -1.0)]);
        assert!((left.row.b - (0.65 - 0.04)).abs() < 1e-15);
    }

    #[test]
    fn pairwise_row_by_hand() {
        let pos = [Vec2::new(0.0, 0.0), Vec2::new(0.1, 0.0)];
        let set = build_constraints(&pos, &params(), &Workspace::default()).unwrap();
        let row = &set.rows[0];
        assert_eq!(row.kind, RowKind::Pairwise { i: 0, j: 1 });
        let a = row.row.to_dense(4);
        assert!((a[0] - 0.2).abs() < 1e-15 && a[1] == 0.0);
        assert!((a[2] + 0.2).abs() < 1e-15 && a[3] == 0.0);
        assert!((row.row.b - 0.0036).abs() < 1e-15);
    }

    #[test]
    fn distant_pairs_are_pruned() {
        let pos = [Vec2::new(-0.2, 0.0), Vec2::new(0.1, 0.0)];
        let set = build_constraints(&pos, &params(), &Workspace::default()).unwrap();
        assert_eq!(set.pairwise_count(), 0);
        let all = BarrierParams {
            neighbor_radius: f64::INFINITY,
            ..params()
        };
        let set = build_constraints(&pos, &all, &Workspace::default()).unwrap();
        assert_eq!(set.pairwise_count(), 1);
    }

    #[test]
    fn unsafe_start_names_offenders() {
        let pos = [Vec2::new(0.0, 0.0), Vec2::new(0.05, 0.0), Vec2::new(0.64, 0.0)];
        match build_constraints(&pos, &params(), &Workspace::default()) {
            Err(BarrierError::UnsafeStart { pairs, outside }) => {
                assert_eq!(pairs, vec![(0, 1)]);
                assert_eq!(outside, vec![2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn far_apart_is_untouched() {
        let pos = [Vec2::new(-0.3, 0.0), Vec2::new(0.3, 0.0)];
        let desired = [SiCommand::new(0.05, 0.02), SiCommand::new(-0.1, 0.0)];
        let out = filter_centralized(&pos, &desired, &params(), &Workspace::default()).unwrap();
        assert_eq!(out.commands, desired);
        let out = filter_decentralized(&pos, &desired, &params(), &Workspace::default()).unwrap();
        assert_eq!(out.commands, desired);
    }

    #[test]
    fn head_on_at_safety_distance_stops_both() {
        let pos = [Vec2::new(-0.04, 0.0), Vec2::new(0.04, 0.0)];
        let desired = [SiCommand::new(0.1, 0.0), SiCommand::new(-0.1, 0.0)];
        for out in [
            filter_centralized(&pos, &desired, &params(), &Workspace::default()).unwrap(),
            filter_decentralized(&pos, &desired, &params(), &Workspace::default()).unwrap(),
        ] {
            for c in &out.commands {
                assert!(c.as_vec().norm() < 1e-12, "{:?}", out.commands);
            }
        }
    }

    #[test]
    fn boundary_keeps_tangential_motion() {
        // robot exactly on the left margin heading out at 45 degrees
        let ws = Workspace::default();
        let pos = [Vec2::new(ws.xmin + 0.04, 0.0)];
        let desired = [SiCommand::new(-0.07, 0.07)];
        let out = filter_centralized(&pos, &desired, &params(), &ws).unwrap();
        assert!(out.commands[0].ux.abs() < 1e-12);
        assert!((out.commands[0].uy - 0.07).abs() < 1e-12);
    }

    #[test]
    fn centralized_matches_oracle_small() {
        let pos = [Vec2::new(0.0, 0.0), Vec2::new(0.09, 0.0), Vec2::new(0.04, 0.085)];
        let desired = [
            SiCommand::new(0.1, 0.05),
            SiCommand::new(-0.1, 0.02),
            SiCommand::new(0.0, -0.1),
        ];
        let set = build_constraints(&pos, &params(), &Workspace::default()).unwrap();
        // 3 pairs + 12 boundary + 12 box faces exceeds the oracle cap; drop the walls
        let mut pairwise_only = set.clone();
        pairwise_only.rows.retain(|r| matches!(r.kind, RowKind::Pairwise { .. }));
        let problem = pairwise_only.to_problem(&desired, 0.1);
        let o = solve_oracle(&problem).unwrap();
        let s = qp::solve(&problem).unwrap();
        let diff: f64 = o.u_star.iter().zip(&s.u_star).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(diff.sqrt() < 1e-9);
    }

    #[test]
    fn length_mismatch() {
        let r = filter_centralized(&[Vec2::ZERO], &[], &params(), &Workspace::default());
        assert!(matches!(r, Err(BarrierError::LengthMismatch { .. })));
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, min_sep: f64) -> Vec<Vec2> {
        let mut pts: Vec<Vec2> = Vec::new();
        while pts.len() < n {
            let p = Vec2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            if pts.iter().all(|q| q.distance(p) >= min_sep) {
                pts.push(p);
            }
        }
        pts
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn decentralized_satisfies_centralized_rows(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..12);
            let pos = random_state(&mut rng, n, 0.081);
            let desired: Vec<SiCommand> = (0..n)
                .map(|_| SiCommand::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
                .collect();
            let ws = Workspace::default();
            let out = filter_decentralized(&pos, &desired, &params(), &ws).unwrap();
            let set = build_constraints(&pos, &params(), &ws).unwrap();
            prop_assert!(out.stopped.is_empty());
            prop_assert!(set.max_violation(&out.commands) <= 1e-8);
        }

        #[test]
        fn row_count_bounds(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..15);
            let pos = random_state(&mut rng, n, 0.081);
            let all = BarrierParams { neighbor_radius: f64::INFINITY, ..params() };
            let ws = Workspace::default();
            let pruned = build_constraints(&pos, &params(), &ws).unwrap();
            let full = build_constraints(&pos, &all, &ws).unwrap();
            prop_assert!(pruned.pairwise_count() <= n * (n - 1) / 2);
            prop_assert_eq!(full.pairwise_count(), n * (n - 1) / 2);
        }
    }
}
