//! Identification of the simulation-hardware gap.
//!
//! [`fit_coefficients`] finds per-axis scalings `a_k` minimizing
//! `|observed_k - a_k * model_k|^2`, where model rates come from the nominal
//! unicycle and observed rates from forward differences of tracked poses.
//! [`trajectory_error`] averages, over the real samples, the distance to the
//! nearest point of the simulated path. It is deliberately asymmetric: the
//! minimum runs over simulated time and the mean over real time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    normalize_angle, si_to_uni_step, unicycle_derivative, ActuatorLimits, ModelCoefficients,
    RobotPose, Vec2,
};
use crate::sim::LogTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SysIdError {
    #[error("degenerate data: model rates on axis {axis} have zero energy")]
    Degenerate { axis: usize },
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("empty trajectory: {0}")]
    Empty(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDataset {
    /// Nominal pose rates `(v cos th, v sin th, w)` per sample.
    pub model_rates: Vec<[f64; 3]>,
    /// Differenced observed pose rates per sample.
    pub observed_rates: Vec<[f64; 3]>,
}

impl RegressionDataset {
    pub fn new(model_rates: Vec<[f64; 3]>, observed_rates: Vec<[f64; 3]>) -> Result<Self, SysIdError> {
        let d = Self {
            model_rates,
            observed_rates,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.model_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_rates.is_empty()
    }

    pub fn validate(&self) -> Result<(), SysIdError> {
        if self.model_rates.len() != self.observed_rates.len() {
            return Err(SysIdError::InvalidData(format!(
                "{} model rates but {} observed rates",
                self.model_rates.len(),
                self.observed_rates.len()
            )));
        }
        if self.model_rates.len() < 2 {
            return Err(SysIdError::InvalidData(format!(
                "need at least 2 samples, got {}",
                self.model_rates.len()
            )));
        }
        let finite = |rows: &[[f64; 3]]| rows.iter().flatten().all(|v| v.is_finite());
        if !finite(&self.model_rates) || !finite(&self.observed_rates) {
            return Err(SysIdError::InvalidData("non-finite rate".into()));
        }
        Ok(())
    }

    pub fn extend(&mut self, other: RegressionDataset) {
        self.model_rates.extend(other.model_rates);
        self.observed_rates.extend(other.observed_rates);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Number of samples used.
    pub d: usize,
    /// Root-mean-square residual per axis.
    pub residuals: [f64; 3],
}

impl FitResult {
    pub fn coefficients(&self) -> ModelCoefficients {
        ModelCoefficients {
            a1: self.alpha1,
            a2: self.alpha2,
            a3: self.alpha3,
        }
    }
}

pub fn fit_coefficients(data: &RegressionDataset) -> Result<FitResult, SysIdError> {
    data.validate()?;
    let mut alpha = [0.0; 3];
    let mut residuals = [0.0; 3];
    for axis in 0..3 {
        let (mut mm, mut mo) = (0.0, 0.0);
        for (m, o) in data.model_rates.iter().zip(&data.observed_rates) {
            mm += m[axis] * m[axis];
            mo += m[axis] * o[axis];
        }
        if mm == 0.0 {
            return Err(SysIdError::Degenerate { axis: axis + 1 });
        }
        alpha[axis] = mo / mm;
        let sse: f64 = data
            .model_rates
            .iter()
            .zip(&data.observed_rates)
            .map(|(m, o)| (o[axis] - alpha[axis] * m[axis]).powi(2))
            .sum();
        residuals[axis] = (sse / data.len() as f64).sqrt();
    }
    Ok(FitResult {
        alpha1: alpha[0],
        alpha2: alpha[1],
        alpha3: alpha[2],
        d: data.len(),
        residuals,
    })
}

/// Forward-difference pose rates; heading steps take the shortest way
/// around the circle. Returns one fewer rate than poses.
pub fn rate_observations(poses: &[RobotPose], dt: f64) -> Vec<[f64; 3]> {
    poses
        .windows(2)
        .map(|w| {
            [
                (w[1].x1 - w[0].x1) / dt,
                (w[1].x2 - w[0].x2) / dt,
                normalize_angle(w[1].x3 - w[0].x3) / dt,
            ]
        })
        .collect()
}

/// Regression samples from a trajectory log.
///
/// The executed unicycle command is recovered from the logged filtered
/// command. Transitions that start in a contact tick are skipped, since
/// contact resolution moves robots off the kinematic model.
pub fn dataset_from_log(table: &LogTable) -> Result<RegressionDataset, SysIdError> {
    let dt = table
        .header_f64("dt")
        .ok_or_else(|| SysIdError::InvalidData("header lacks dt".into()))?;
    let lookahead = table
        .header_f64("lookahead")
        .ok_or_else(|| SysIdError::InvalidData("header lacks lookahead".into()))?;
    let mut limits = ActuatorLimits::default();
    limits.lookahead = lookahead;
    if let Some(v) = table.header_f64("v_max") {
        limits.v_max = v;
    }
    limits.w_max = table
        .header_f64("w_max")
        .unwrap_or(2.0 * limits.v_max / lookahead);
    limits
        .validate()
        .map_err(|e| SysIdError::InvalidData(e.to_string()))?;

    let mut model_rates = Vec::new();
    let mut observed_rates = Vec::new();
    for rows in table.by_robot().values() {
        let poses: Vec<RobotPose> = rows.iter().map(|r| r.pose()).collect();
        let observed = rate_observations(&poses, dt);
        for (k, obs) in observed.into_iter().enumerate() {
            let r = &rows[k];
            if r.collide != 0 {
                continue;
            }
            let pose = r.pose();
            let cmd = si_to_uni_step(r.u_star(), &pose, &limits, dt)
                .map_err(|e| SysIdError::InvalidData(e.to_string()))?;
            let rate = unicycle_derivative(&pose, cmd, &ModelCoefficients::IDENTITY)
                .map_err(|e| SysIdError::InvalidData(e.to_string()))?;
            model_rates.push(rate.as_array());
            observed_rates.push(obs);
        }
    }
    RegressionDataset::new(model_rates, observed_rates)
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let ends = p.distance(a).min(p.distance(b));
    if len2 == 0.0 {
        return ends;
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    ends.min(p.distance(a + t * ab))
}

/// Mean over `real` samples of the distance to the polyline through `sim`.
pub fn trajectory_error(sim: &[Vec2], real: &[Vec2]) -> Result<f64, SysIdError> {
    if sim.is_empty() {
        return Err(SysIdError::Empty("simulated"));
    }
    if real.is_empty() {
        return Err(SysIdError::Empty("real"));
    }
    let total: f64 = real
        .iter()
        .map(|p| {
            if sim.len() == 1 {
                return p.distance(sim[0]);
            }
            sim.windows(2)
                .map(|w| point_segment_distance(*p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / real.len() as f64)
}
