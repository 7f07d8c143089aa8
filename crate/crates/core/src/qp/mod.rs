//! Euclidean projection onto a polytope intersected with a box.
//!
//! Solves
//!
//! ```text
//!     minimize    ||u - u_hat||^2
//!     subject to  a_r' u <= b_r        for every row r
//!                 |u_k| <= box_bound   for every coordinate k
//! ```
//!
//! with Hildreth's dual coordinate ascent. The Hessian is the identity, so
//! each dual coordinate update is a closed-form projection onto one
//! half-space. Every few sweeps the rows with positive multipliers are used
//! as a working set for an equality-constrained KKT solve; when that point
//! passes the optimality check it is returned directly.
//!
//! The box is appended internally as `2 * dim` half-space rows.

mod oracle;

pub use oracle::{solve_oracle, ORACLE_MAX_DIM, ORACLE_MAX_ROWS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility tolerance reported solutions are held to.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("problem too large for the enumeration oracle: dim {dim}, rows {rows}")]
    TooLarge { dim: usize, rows: usize },
}

/// One inequality `a' u <= b`, with `a` stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub b: f64,
}

impl QpRow {
    pub fn new(coeffs: Vec<(usize, f64)>, b: f64) -> Self {
        Self { coeffs, b }
    }

    /// Build from a dense coefficient vector, dropping exact zeros.
    pub fn from_dense(a: &[f64], b: f64) -> Self {
        let coeffs = a
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        Self { coeffs, b }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut a = vec![0.0; dim];
        for &(i, v) in &self.coeffs {
            a[i] += v;
        }
        a
    }

    pub fn dot(&self, u: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, v)| v * u[i]).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.coeffs.iter().map(|&(_, v)| v * v).sum()
    }

    /// `a' u - b`; positive means violated.
    pub fn violation(&self, u: &[f64]) -> f64 {
        self.dot(u) - self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub desired: Vec<f64>,
    pub rows: Vec<QpRow>,
    pub box_bound: f64,
}

impl QpProblem {
    pub fn new(desired: Vec<f64>, rows: Vec<QpRow>, box_bound: f64) -> Self {
        Self {
            desired,
            rows,
            box_bound,
        }
    }

    pub fn dim(&self) -> usize {
        self.desired.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        if !(self.box_bound > 0.0 && self.box_bound.is_finite()) {
            return Err(QpError::InvalidProblem(format!(
                "box bound must be positive, got {}",
                self.box_bound
            )));
        }
        if let Some(k) = self.desired.iter().position(|v| !v.is_finite()) {
            return Err(QpError::InvalidProblem(format!(
                "desired[{k}] is not finite"
            )));
        }
        let dim = self.dim();
        for (r, row) in self.rows.iter().enumerate() {
            if !row.b.is_finite() {
                return Err(QpError::InvalidProblem(format!("row {r}: b not finite")));
            }
            for &(i, v) in &row.coeffs {
                if i >= dim {
                    return Err(QpError::InvalidProblem(format!(
                        "row {r}: index {i} outside dimension {dim}"
                    )));
                }
                if !v.is_finite() {
                    return Err(QpError::InvalidProblem(format!(
                        "row {r}: coefficient {i} not finite"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest violation over user rows and box faces.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        let rows = self
            .rows
            .iter()
            .map(|r| r.violation(u))
            .fold(f64::NEG_INFINITY, f64::max);
        let boxed = u
            .iter()
            .map(|v| v.abs() - self.box_bound)
            .fold(f64::NEG_INFINITY, f64::max);
        rows.max(boxed)
    }

    /// User rows followed by the box faces `+e_k <= bound`, `-e_k <= bound`.
    pub(crate) fn all_rows(&self) -> Vec<QpRow> {
        let mut rows = self.rows.clone();
        for k in 0..self.dim() {
            rows.push(QpRow::new(vec![(k, 1.0)], self.box_bound));
            rows.push(QpRow::new(vec![(k, -1.0)], self.box_bound));
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub u_star: Vec<f64>,
    pub status: QpStatus,
    /// Indices into `QpProblem::rows` with a positive multiplier (box faces excluded).
    pub active_rows: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Stop when no dual update moves `u` by more than this.
    pub step_tolerance: f64,
    pub feasibility_tolerance: f64,
    /// Sweeps between working-set polish attempts.
    pub polish_interval: usize,
    /// Overrides the default cap of `10 * (rows + dim)` sweeps.
    pub max_sweeps: Option<usize>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            step_tolerance: 1e-10,
            feasibility_tolerance: FEASIBILITY_TOLERANCE,
            polish_interval: 4,
            max_sweeps: None,
        }
    }
}

/// Solve with default settings.
pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    solve_with(problem, &SolverSettings::default())
}

pub fn solve_with(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let dim = problem.dim();
    let n_user = problem.rows.len();

    if problem.max_violation(&problem.desired) <= 0.0 {
        return Ok(QpSolution {
            u_star: problem.desired.clone(),
            status: QpStatus::Optimal,
            active_rows: Vec::new(),
            iterations: 0,
        });
    }

    let rows = problem.all_rows();
    let norms: Vec<f64> = rows.iter().map(QpRow::norm_squared).collect();
    // a zero row reads 0 <= b
    if rows.iter().zip(&norms).any(|(r, n)| *n == 0.0 && r.b < 0.0) {
        return Ok(infeasible(problem, 0));
    }
    let a_desired: Vec<f64> = rows.iter().map(|r| r.dot(&problem.desired)).collect();
    let objective_bound: f64 = 0.5
        * problem
            .desired
            .iter()
            .map(|v| (v.abs() + problem.box_bound).powi(2))
            .sum::<f64>();

    let max_sweeps = settings
        .max_sweeps
        .unwrap_or(10 * (rows.len() + dim))
        .max(1);
    let mut u = problem.desired.clone();
    let mut lambda = vec![0.0; rows.len()];

    for sweep in 1..=max_sweeps {
        let mut max_step: f64 = 0.0;
        for (r, row) in rows.iter().enumerate() {
            if norms[r] == 0.0 {
                continue;
            }
            let g = row.violation(&u);
            let new = (lambda[r] + g / norms[r]).max(0.0);
            let delta = new - lambda[r];
            if delta != 0.0 {
                for &(i, v) in &row.coeffs {
                    u[i] -= delta * v;
                }
                lambda[r] = new;
                max_step = max_step.max(delta.abs() * norms[r].sqrt());
            }
        }

        let converged = max_step < settings.step_tolerance;
        if converged || sweep % settings.polish_interval == 0 || sweep == 1 {
            if let Some((u_polished, active)) =
                polish(problem, &rows, &lambda, settings.feasibility_tolerance)
            {
                return Ok(QpSolution {
                    u_star: u_polished,
                    status: QpStatus::Optimal,
                    active_rows: active.into_iter().filter(|r| *r < n_user).collect(),
                    iterations: sweep,
                });
            }
        }

        let violation = rows
            .iter()
            .map(|r| r.violation(&u))
            .fold(f64::NEG_INFINITY, f64::max);
        if converged && violation <= settings.feasibility_tolerance {
            let active = (0..n_user).filter(|r| lambda[*r] > 0.0).collect();
            return Ok(QpSolution {
                u_star: u,
                status: QpStatus::Optimal,
                active_rows: active,
                iterations: sweep,
            });
        }

        // weak duality: any feasible point lies in the box
        let dual: f64 = lambda
            .iter()
            .zip(rows.iter().zip(&a_desired))
            .map(|(l, (row, ad))| l * (ad - row.b))
            .sum::<f64>()
            - 0.5
                * u.iter()
                    .zip(&problem.desired)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
        if dual > objective_bound * (1.0 + 1e-9) + 1e-12 {
            return Ok(infeasible(problem, sweep));
        }

    }

    let active = (0..n_user).filter(|r| lambda[*r] > 0.0).collect();
    Ok(QpSolution {
        u_star: u,
        status: QpStatus::IterationLimit,
        active_rows: active,
        iterations: max_sweeps,
    })
}

fn infeasible(problem: &QpProblem, iterations: usize) -> QpSolution {
    QpSolution {
        u_star: vec![0.0; problem.dim()],
        status: QpStatus::Infeasible,
        active_rows: Vec::new(),
        iterations,
    }
}

/// Equality-constrained projection onto the working set suggested by the
/// current multipliers, refined by a few drop/add passes.
fn polish(
    problem: &QpProblem,
    rows: &[QpRow],
    lambda: &[f64],
    feas_tol: f64,
) -> Option<(Vec<f64>, Vec<usize>)> {
    let mut working: Vec<usize> = (0..rows.len()).filter(|r| lambda[*r] > 0.0).collect();
    working.sort_by(|a, b| lambda[*b].total_cmp(&lambda[*a]).then(a.cmp(b)));

    let mut visited: Vec<Vec<usize>> = Vec::new();
    for _ in 0..(2 * rows.len()).max(8) {
        let (selected, mu) = project_on_working_set(problem, rows, &working)?;
        let mut key = selected.clone();
        key.sort_unstable();
        if visited.contains(&key) {
            return None;
        }
        visited.push(key);
        let mut u = problem.desired.clone();
        for (r, m) in selected.iter().zip(&mu) {
            for &(i, v) in &rows[*r].coeffs {
                u[i] -= m * v;
            }
        }

        let (neg_pos, neg_val) = mu
            .iter()
            .enumerate()
            .fold((usize::MAX, 0.0), |acc, (k, m)| if *m < acc.1 { (k, *m) } else { acc });
        if neg_val < -1e-12 {
            let drop = selected[neg_pos];
            working.retain(|r| *r != drop);
            continue;
        }

        let (worst, worst_val) = rows
            .iter()
            .enumerate()
            .map(|(r, row)| (r, row.violation(&u)))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| {
                if x.1 > acc.1 {
                    x
                } else {
                    acc
                }
            });
        if worst_val > feas_tol {
            // a violated row goes to the front so the factorization keeps it
            working.retain(|r| *r != worst);
            working.insert(0, worst);
            continue;
        }

        let active = selected
            .iter()
            .zip(&mu)
            .filter(|(_, m)| **m > 0.0)
            .map(|(r, _)| *r)
            .collect();
        return Some((u, active));
    }
    None
}

/// Solve `G mu = A_W u_hat - b_W` by incremental Cholesky, skipping rows that
/// are linearly dependent on the ones already accepted.
fn project_on_working_set(
    problem: &QpProblem,
    rows: &[QpRow],
    working: &[usize],
) -> Option<(Vec<usize>, Vec<f64>)> {
    let dim = problem.dim();
    let mut selected: Vec<usize> = Vec::with_capacity(working.len().min(dim));
    // lower-triangular factor, row-major by accepted index
    let mut factor: Vec<Vec<f64>> = Vec::new();
    let mut dense = vec![0.0; dim];

    for &r in working {
        if selected.len() == dim {
            break;
        }
        for &(i, v) in &rows[r].coeffs {
            dense[i] += v;
        }
        let diag = rows[r].norm_squared();
        let mut l_row: Vec<f64> = Vec::with_capacity(selected.len() + 1);
        for (k, &s) in selected.iter().enumerate() {
            let g = rows[s].dot(&dense);
            let partial: f64 = (0..k).map(|j| l_row[j] * factor[k][j]).sum();
            l_row.push((g - partial) / factor[k][k]);
        }
        let d = diag - l_row.iter().map(|x| x * x).sum::<f64>();
        for &(i, _) in &rows[r].coeffs {
            dense[i] = 0.0;
        }
        if d <= 1e-12 * diag {
            continue;
        }
        l_row.push(d.sqrt());
        factor.push(l_row);
        selected.push(r);
    }
    if selected.is_empty() {
        return None;
    }

    let n = selected.len();
    let mut y: Vec<f64> = selected
        .iter()
        .map(|&r| rows[r].dot(&problem.desired) - rows[r].b)
        .collect();
    for k in 0..n {
        let s: f64 = (0..k).map(|j| factor[k][j] * y[j]).sum();
        y[k] = (y[k] - s) / factor[k][k];
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| factor[j][k] * y[j]).sum();
        y[k] = (y[k] - s) / factor[k][k];
    }
    if y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((selected, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn unconstrained_inside_box_is_identity() {
        let p = QpProblem::new(vec![0.05, -0.02], vec![], 0.1);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.u_star, p.desired);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn box_clipping() {
        let p = QpProblem::new(vec![0.2, 0.0], vec![], 0.1);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(norm_diff(&s.u_star, &[0.1, 0.0]) < 1e-12);
    }

    #[test]
    fn head_on_pair_at_safety_distance() {
        let row = QpRow::from_dense(&[0.16, 0.0, -0.16, 0.0], 0.0);
        let p = QpProblem::new(vec![0.1, 0.0, -0.1, 0.0], vec![row], 0.1);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(norm_diff(&s.u_star, &[0.0; 4]) < 1e-12, "{:?}", s.u_star);
        assert_eq!(s.active_rows, vec![0]);
        let o = solve_oracle(&p).unwrap();
        assert!(norm_diff(&s.u_star, &o.u_star) < 1e-9);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let rows = vec![
            QpRow::from_dense(&[1.0], -1.0),
            QpRow::from_dense(&[-1.0], -1.0),
        ];
        let p = QpProblem::new(vec![0.0], rows, 0.1);
        assert_eq!(solve(&p).unwrap().status, QpStatus::Infeasible);
        assert_eq!(solve_oracle(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn rows_outside_box_are_infeasible() {
        // feasible on its own, but not inside the box
        let p = QpProblem::new(vec![0.0, 0.0], vec![QpRow::from_dense(&[1.0, 1.0], -0.5)], 0.1);
        assert_eq!(solve(&p).unwrap().status, QpStatus::Infeasible);
        assert_eq!(solve_oracle(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_malformed_problems() {
        let p = QpProblem::new(vec![0.0], vec![QpRow::new(vec![(3, 1.0)], 0.0)], 0.1);
        assert!(matches!(solve(&p), Err(QpError::InvalidProblem(_))));
        let p = QpProblem::new(vec![0.0], vec![], 0.0);
        assert!(matches!(solve(&p), Err(QpError::InvalidProblem(_))));
        let p = QpProblem::new(vec![f64::NAN], vec![], 0.1);
        assert!(matches!(solve(&p), Err(QpError::InvalidProblem(_))));
    }

    #[test]
    fn degenerate_parallel_rows() {
        // boundary-style row parallel to a box face, both active
        let rows = vec![
            QpRow::from_dense(&[1.0, 0.0], 0.1),
            QpRow::from_dense(&[2.0, 0.0], 0.2),
            QpRow::from_dense(&[1.0, 1.0], 0.1),
        ];
        let p = QpProblem::new(vec![0.3, 0.3], rows, 0.1);
        let s = solve(&p).unwrap();
        let o = solve_oracle(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(norm_diff(&s.u_star, &o.u_star) < 1e-9, "{:?} vs {:?}", s.u_star, o.u_star);
    }

    fn random_feasible(rng: &mut ChaCha8Rng) -> QpProblem {
        let dim = 2 * rng.random_range(1..=4usize);
        let max_rows = ORACLE_MAX_ROWS - 2 * dim;
        let n_rows = rng.random_range(0..=max_rows.min(6));
        let box_bound = 0.1;
        let anchor: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.09..0.09)).collect();
        let rows = (0..n_rows)
            .map(|_| {
                let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let slack = rng.random_range(0.0..0.02);
                let b = a.iter().zip(&anchor).map(|(x, y)| x * y).sum::<f64>() + slack;
                QpRow::from_dense(&a, b)
            })
            .collect();
        let desired = (0..dim).map(|_| rng.random_range(-0.3..0.3)).collect();
        QpProblem::new(desired, rows, box_bound)
    }

    #[test]
    fn matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let p = random_feasible(&mut rng);
            let s = solve(&p).unwrap();
            let o = solve_oracle(&p).unwrap();
            assert_eq!(s.status, QpStatus::Optimal);
            assert_eq!(o.status, QpStatus::Optimal);
            assert!(norm_diff(&s.u_star, &o.u_star) < 1e-6, "{p:?}");
            assert!(p.max_violation(&s.u_star) <= FEASIBILITY_TOLERANCE);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn projection_is_nonexpansive(seed in any::<u64>(), shift in prop::collection::vec(-0.2f64..0.2, 8)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_feasible(&mut rng);
            let mut q = p.clone();
            for (d, s) in q.desired.iter_mut().zip(&shift) {
                *d += s;
            }
            let a = solve(&p).unwrap().u_star;
            let b = solve(&q).unwrap().u_star;
            prop_assert!(norm_diff(&a, &b) <= norm_diff(&p.desired, &q.desired) + 1e-9);
        }

        #[test]
        fn row_order_does_not_matter(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_feasible(&mut rng);
            let mut q = p.clone();
            q.rows.reverse();
            let a = solve(&p).unwrap().u_star;
            let b = solve(&q).unwrap().u_star;
            prop_assert!(norm_diff(&a, &b) <= 1e-8);
        }

        #[test]
        fn feasible_desired_is_returned_exactly(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = random_feasible(&mut rng);
            // move every row far enough out that u_hat is strictly feasible
            let desired: Vec<f64> = p.desired.iter().map(|v| v.clamp(-0.1, 0.1)).collect();
            for row in &mut p.rows {
                row.b = row.b.max(row.dot(&desired) + 1e-6);
            }
            p.desired = desired;
            let s = solve(&p).unwrap();
            prop_assert_eq!(s.u_star, p.desired);
        }
    }
}
