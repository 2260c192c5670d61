//! Trial scoring: resampled pointwise MSE against the expert, normalized so a flat line
//! through the canvas center scores 0.

use corgi_core::traj::{resample_uniform, Role, Task, TrajError, Trajectory};

use crate::{CoachError, Result};

pub const SCORE_POINTS: usize = 600;

/// Horizontal segment across the unit canvas at mid-height.
pub fn flat_line(points: usize) -> Vec<Vec<f64>> {
    (0..points).map(|i| vec![i as f64 / (points - 1) as f64, 0.5]).collect()
}

pub fn flat_line_trajectory(domain: &str) -> Trajectory {
    Trajectory::new("flat-line", Task::Drawing, domain, Role::Student, flat_line(SCORE_POINTS))
        .expect("flat line is a valid drawing")
}

fn resampled(t: &Trajectory) -> Result<Vec<Vec<f64>>> {
    if t.width() != 2 {
        return Err(CoachError::Validation(format!("{} has width {}, drawings have width 2", t.id, t.width())));
    }
    Ok(resample_uniform(t, SCORE_POINTS)?.steps)
}

/// Mean over all coordinates of the squared difference.
pub fn mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (sum, n) = a
        .iter()
        .zip(b)
        .flat_map(|(p, q)| p.iter().zip(q))
        .fold((0.0, 0usize), |(s, n), (x, y)| (s + (x - y) * (x - y), n + 1));
    sum / n as f64
}

/// The expert resampled once, with its flat-line reference error.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNormalizer {
    expert: Vec<Vec<f64>>,
    m_ref: f64,
}

impl ScoreNormalizer {
    pub fn new(expert: &Trajectory) -> Result<Self> {
        let expert_points = resampled(expert)?;
        let m_ref = mse(&flat_line(SCORE_POINTS), &expert_points);
        if !(m_ref > 0.0) {
            return Err(CoachError::Traj(TrajError::DegenerateTrajectory(expert.id.clone())));
        }
        Ok(Self { expert: expert_points, m_ref })
    }

    pub fn m_ref(&self) -> f64 {
        self.m_ref
    }

    pub fn score(&self, student: &Trajectory) -> Result<f64> {
        let m = mse(&resampled(student)?, &self.expert);
        Ok(100.0 * (1.0 - m / self.m_ref).max(0.0))
    }
}

/// Score in `[0, 100]`; 100 means identical after resampling.
pub fn compute_score(student: &Trajectory, expert: &Trajectory) -> Result<f64> {
    ScoreNormalizer::new(expert)?.score(student)
}
