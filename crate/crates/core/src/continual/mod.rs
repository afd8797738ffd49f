//! Continual learning: co-natural (Fisher-preconditioned) updates, a rolling
//! Fisher, EWC, reservoir replay and forgetting metrics.

mod engine;
mod fisher;
mod replay;
mod tasks;

use serde::{Deserialize, Serialize};

pub use engine::{accuracy, continual_train, ContinualConfig, ContinualMethod, ContinualOutcome, HeadMode, TaskData};
pub use fisher::{
    conatural_delta, conatural_raw, ewc_loss, fisher_renormalize, residual_check, rolling_fisher_update, FisherState,
    FISHER_EPSILON,
};
pub use replay::{er_step, reservoir_add, ReplayMemory};
pub use tasks::{
    gen_rotated_tasks, two_task_data, two_task_logistic_trajectory, RotatedTaskSpec, Trajectory, TrajectoryPoint, TwoTaskConfig,
};

use crate::error::{contract, Result};

/// `accuracy_matrix[task][checkpoint]`, one checkpoint per finished task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualMetrics {
    pub accuracy_matrix: Vec<Vec<f64>>,
    pub task_order: Vec<usize>,
}

impl ContinualMetrics {
    pub fn num_checkpoints(&self) -> usize {
        self.accuracy_matrix.first().map_or(0, Vec::len)
    }

    /// Mean over all tasks but the last of their forgetting at the final checkpoint.
    pub fn final_forgetting(&self) -> Result<f64> {
        let t = self.num_checkpoints();
        let k = self.accuracy_matrix.len();
        if k < 2 || t < 2 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for task in 0..k - 1 {
            total += forgetting(self, task, t - 1)?;
        }
        Ok(total / (k - 1) as f64)
    }

    /// Mean accuracy over all tasks at the final checkpoint.
    pub fn average_accuracy(&self) -> f64 {
        let k = self.accuracy_matrix.len();
        if k == 0 {
            return 0.0;
        }
        self.accuracy_matrix.iter().map(|row| row.last().copied().unwrap_or(0.0)).sum::<f64>() / k as f64
    }
}

/// `max_{τ<t} A[task][τ] − A[task][t]`.
pub fn forgetting(metrics: &ContinualMetrics, task: usize, t: usize) -> Result<f64> {
    if t == 0 {
        return Err(contract("forgetting needs a previous checkpoint (t >= 1)"));
    }
    let row = metrics.accuracy_matrix.get(task).ok_or_else(|| contract(format!("no history for task {task}")))?;
    if t >= row.len() {
        return Err(contract(format!("checkpoint {t} not recorded")));
    }
    let best = row[..t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((best - row[t]).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: Vec<Vec<f64>>) -> ContinualMetrics {
        let n = rows.len();
        ContinualMetrics { accuracy_matrix: rows, task_order: (0..n).collect() }
    }

    #[test]
    fn forgetting_examples() {
        let h = m(vec![vec![0.9, 0.8, 0.85]]);
        assert!((forgetting(&h, 0, 2).unwrap() - 0.05).abs() < 1e-12);
        assert!(forgetting(&h, 0, 0).is_err());
        let up = m(vec![vec![0.1, 0.5, 0.7]]);
        assert_eq!(forgetting(&up, 0, 2).unwrap(), 0.0);
    }

    #[test]
    fn single_task_has_no_forgetting() {
        assert_eq!(m(vec![vec![0.7]]).final_forgetting().unwrap(), 0.0);
    }
}
