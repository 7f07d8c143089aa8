//! Brute-force reference solver used to check [`super::solve`].
//!
//! Enumerates candidate active sets in order of increasing size, solves the
//! equality-constrained projection for each with Gaussian elimination, and
//! stops at the first candidate that satisfies the KKT conditions. For a
//! strictly convex objective that point is the unique minimizer.

use super::{QpError, QpProblem, QpRow, QpSolution, QpStatus};

pub const ORACLE_MAX_DIM: usize = 8;
/// Cap on user rows plus the `2 * dim` box faces.
pub const ORACLE_MAX_ROWS: usize = 20;

const FEAS_TOL: f64 = 1e-9;
const MULT_TOL: f64 = 1e-12;

pub fn solve_oracle(problem: &QpProblem) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let dim = problem.dim();
    let rows = problem.all_rows();
    if dim > ORACLE_MAX_DIM || rows.len() > ORACLE_MAX_ROWS {
        return Err(QpError::TooLarge {
            dim,
            rows: rows.len(),
        });
    }
    let dense: Vec<Vec<f64>> = rows.iter().map(|r| r.to_dense(dim)).collect();
    let n_user = problem.rows.len();

    let mut subset: Vec<usize> = Vec::with_capacity(dim);
    for size in 0..=dim.min(rows.len()) {
        if let Some((u, active)) =
            search(problem, &rows, &dense, n_user, size, 0, &mut subset)
        {
            return Ok(QpSolution {
                u_star: u,
                status: QpStatus::Optimal,
                active_rows: active.into_iter().filter(|r| *r < n_user).collect(),
                iterations: 0,
            });
        }
    }
    Ok(QpSolution {
        u_star: vec![0.0; dim],
        status: QpStatus::Infeasible,
        active_rows: Vec::new(),
        iterations: 0,
    })
}

fn search(
    problem: &QpProblem,
    rows: &[QpRow],
    dense: &[Vec<f64>],
    n_user: usize,
    size: usize,
    start: usize,
    subset: &mut Vec<usize>,
) -> Option<(Vec<f64>, Vec<usize>)> {
    if subset.len() == size {
        return check_candidate(problem, rows, dense, subset);
    }
    for r in start..rows.len() {
        // opposite faces of the same box coordinate cannot both be active
        if r >= n_user && (r - n_user) % 2 == 1 && subset.last() == Some(&(r - 1)) {
            continue;
        }
        subset.push(r);
        let found = search(problem, rows, dense, n_user, size, r + 1, subset);
        subset.pop();
        if found.is_some() {
            return found;
        }
    }
    None
}

fn check_candidate(
    problem: &QpProblem,
    rows: &[QpRow],
    dense: &[Vec<f64>],
    subset: &[usize],
) -> Option<(Vec<f64>, Vec<usize>)> {
    let k = subset.len();
    let mut u = problem.desired.clone();
    if k > 0 {
        let mut gram = vec![vec![0.0; k + 1]; k];
        for (i, &ri) in subset.iter().enumerate() {
            for (j, &rj) in subset.iter().enumerate() {
                gram[i][j] = dense[ri].iter().zip(&dense[rj]).map(|(a, b)| a * b).sum();
            }
            let a_u: f64 = dense[ri].iter().zip(&problem.desired).map(|(a, b)| a * b).sum();
            gram[i][k] = a_u - rows[ri].b;
        }
        let mu = gauss_solve(gram)?;
        if mu.iter().any(|m| *m < -MULT_TOL) {
            return None;
        }
        for (m, &r) in mu.iter().zip(subset) {
            for (ui, ai) in u.iter_mut().zip(&dense[r]) {
                *ui -= m * ai;
            }
        }
    }
    let feasible = rows.iter().all(|r| r.violation(&u) <= FEAS_TOL);
    feasible.then(|| (u, subset.to_vec()))
}

/// Gaussian elimination with partial pivoting on an augmented `k x (k+1)` matrix.
fn gauss_solve(mut m: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let k = m.len();
    let scale = m
        .iter()
        .flat_map(|r| r[..k].iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    for col in 0..k {
        let pivot = (col..k).max_by(|a, b| m[*a][col].abs().total_cmp(&m[*b][col].abs()))?;
        if m[pivot][col].abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        m.swap(col, pivot);
        for r in col + 1..k {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..=k {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][k] - s) / m[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_large_problems() {
        let p = QpProblem::new(vec![0.0; 10], vec![], 0.1);
        assert!(matches!(solve_oracle(&p), Err(QpError::TooLarge { .. })));
        let rows = vec![QpRow::from_dense(&[1.0, 0.0], 1.0); 17];
        let p = QpProblem::new(vec![0.0; 2], rows, 0.1);
        assert!(matches!(solve_oracle(&p), Err(QpError::TooLarge { .. })));
    }

    #[test]
    fn single_half_space_projection() {
        // project (0.05, 0.05) onto x + y <= 0 -> (0, 0)
        let p = QpProblem::new(vec![0.05, 0.05], vec![QpRow::from_dense(&[1.0, 1.0], 0.0)], 0.1);
        let s = solve_oracle(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.u_star.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(s.active_rows, vec![0]);
    }

    #[test]
    fn box_corner() {
        let p = QpProblem::new(vec![0.3, -0.4], vec![], 0.1);
        let s = solve_oracle(&p).unwrap();
        assert!((s.u_star[0] - 0.1).abs() < 1e-15 && (s.u_star[1] + 0.1).abs() < 1e-15);
    }
}
