use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::engine::{add_noise, TaskData};
use super::fisher::{conatural_delta, fisher_renormalize, rolling_fisher_update, FisherState};
use crate::datasets::GroupedDataset;
use crate::diffcore::{grad_params, losses, Example, LossKind, ModelSpec, ModelState};
use crate::error::{contract, Result};
use crate::scalar::{mean, Scalar};
use crate::seeding::derive_seed;

/// Binary tasks whose classes are separated along a different random
/// direction each time: `x ~ N(±separation·uₜ, I)`, after which feature `j`
/// is multiplied by `feature_decay^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedTaskSpec {
    pub num_tasks: usize,
    pub train_per_task: usize,
    pub test_per_task: usize,
    pub dim: usize,
    pub separation: f64,
    pub feature_decay: f64,
    pub seed: u64,
}

impl Default for RotatedTaskSpec {
    fn default() -> Self {
        Self { num_tasks: 5, train_per_task: 400, test_per_task: 400, dim: 10, separation: 2.0, feature_decay: 0.5, seed: 0 }
    }
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn gaussian_binary<T: Scalar>(n: usize, center: &[f64], scale: f64, id0: u64, rng: &mut ChaCha8Rng) -> Result<GroupedDataset<T>> {
    let examples = (0..n)
        .map(|i| {
            let label = i % 2;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let x = center
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::lit(sign * c + scale * z)
                })
                .collect();
            Example::dense(x, label, Some(label), id0 + i as u64)
        })
        .collect();
    GroupedDataset::new(examples, vec!["class0".into(), "class1".into()], 2)
}

fn rescale<T: Scalar>(mut data: GroupedDataset<T>, scales: &[f64]) -> Result<GroupedDataset<T>> {
    for e in &mut data.examples {
        if let crate::diffcore::Input::Dense(x) = &mut e.input {
            for (v, &s) in x.iter_mut().zip(scales) {
                *v = *v * T::lit(s);
            }
        }
    }
    Ok(data)
}

pub fn gen_rotated_tasks<T: Scalar>(spec: &RotatedTaskSpec) -> Result<Vec<TaskData<T>>> {
    if spec.num_tasks == 0 || spec.dim == 0 || spec.train_per_task == 0 || spec.test_per_task == 0 {
        return Err(contract("rotated tasks need positive counts and dimension"));
    }
    if !(spec.feature_decay > 0.0 && spec.feature_decay <= 1.0) {
        return Err(contract("feature_decay must lie in (0, 1]"));
    }
    let scales: Vec<f64> = (0..spec.dim).map(|j| spec.feature_decay.powi(j as i32)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.num_tasks)
        .map(|t| {
            let u: Vec<f64> = unit_vector(spec.dim, &mut rng).into_iter().map(|x| x * spec.separation).collect();
            let base = (t as u64) * 1_000_000;
            Ok(TaskData {
                train: rescale(gaussian_binary(spec.train_per_task, &u, 1.0, base, &mut rng)?, &scales)?,
                test: rescale(gaussian_binary(spec.test_per_task, &u, 1.0, base + 500_000, &mut rng)?, &scales)?,
            })
        })
        .collect()
}

/// Settings for the two-task 2-D logistic regression demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoTaskConfig {
    pub points_per_task: usize,
    pub t1_steps: usize,
    pub t2_steps: usize,
    pub lr: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub grad_noise: f64,
    pub fisher_samples: usize,
    pub seed: u64,
}

impl Default for TwoTaskConfig {
    fn default() -> Self {
        Self {
            points_per_task: 200,
            t1_steps: 300,
            t2_steps: 300,
            lr: 0.5,
            alpha: 1e-3,
            gamma: 0.9,
            grad_noise: 0.1,
            fisher_samples: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub params: Vec<f64>,
    pub t1_loss: f64,
    pub t2_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub final_t1_loss: f64,
    pub final_t2_loss: f64,
}

/// Binary data on the line through the origin along `dir`: `x = (±1 + scale·z)·dir`.
fn line_binary<T: Scalar>(n: usize, dir: &[f64], scale: f64, id0: u64, rng: &mut ChaCha8Rng) -> Result<GroupedDataset<T>> {
    let examples = (0..n)
        .map(|i| {
            let label = i % 2;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let z: f64 = StandardNormal.sample(rng);
            let x = dir.iter().map(|&d| T::lit((sign + scale * z) * d)).collect();
            Example::dense(x, label, Some(label), id0 + i as u64)
        })
        .collect();
    GroupedDataset::new(examples, vec!["class0".into(), "class1".into()], 2)
}

/// The two tasks, each supported on a line: T1 on the first axis (it only
/// constrains `w₁`), T2 on the anti-diagonal (it only constrains `w₁ + w₂`).
/// Solutions of T2 that keep `w₁` also keep solving T1.
pub fn two_task_data<T: Scalar>(points_per_task: usize, seed: u64) -> Result<(GroupedDataset<T>, GroupedDataset<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t1 = line_binary(points_per_task, &[1.0, 0.0], 0.6, 0, &mut rng)?;
    let t2 = line_binary(points_per_task, &[-1.0, -1.0], 0.5, 1_000_000, &mut rng)?;
    Ok((t1, t2))
}

/// Full-batch logistic regression on T1, then on T2 with seeded gradient
/// noise, either plainly or with the co-natural preconditioner built from
/// T1's Fisher. Both variants see identical data, initialization and noise.
pub fn two_task_logistic_trajectory<T: Scalar>(config: &TwoTaskConfig, conatural: bool) -> Result<Trajectory> {
    let (t1, t2) = two_task_data::<T>(config.points_per_task, config.seed)?;
    let spec = ModelSpec::linear(2, 2);
    let mut model = ModelState::<T>::init(spec, derive_seed(config.seed, 7))?;
    let lr = T::lit(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 8));
    let mut points = Vec::with_capacity(config.t1_steps + config.t2_steps + 1);
    let record = |step: usize, m: &ModelState<T>, points: &mut Vec<TrajectoryPoint>| -> Result<()> {
        points.push(TrajectoryPoint {
            step,
            params: m.params().iter().map(|p| p.as_f64()).collect(),
            t1_loss: mean(&losses(m, &t1.examples, LossKind::Nll)?).as_f64(),
            t2_loss: mean(&losses(m, &t2.examples, LossKind::Nll)?).as_f64(),
        });
        Ok(())
    };
    record(0, &model, &mut points)?;
    let w1 = vec![T::one() / T::from_usize_lossy(t1.len()); t1.len()];
    for s in 0..config.t1_steps {
        let g = grad_params(&model, &t1.examples, &w1)?;
        model.apply_update(&g.values, -lr);
        record(s + 1, &model, &mut points)?;
    }
    let mut fisher = FisherState::new(model.num_params(), T::lit(config.gamma), T::lit(config.alpha))?;
    let f = crate::diffcore::fisher_diag(&model, &t1, config.fisher_samples, derive_seed(config.seed, 9))?;
    fisher = rolling_fisher_update(fisher, &fisher_renormalize(&f).0)?;
    let w2 = vec![T::one() / T::from_usize_lossy(t2.len()); t2.len()];
    for s in 0..config.t2_steps {
        let mut g = grad_params(&model, &t2.examples, &w2)?.values;
        add_noise(&mut g, config.grad_noise, &mut rng);
        let step: Vec<T> = if conatural { conatural_delta(&g, &fisher, lr)? } else { g.iter().map(|&x| -lr * x).collect() };
        model.apply_update(&step, T::one());
        record(config.t1_steps + s + 1, &model, &mut points)?;
    }
    let last = points.last().expect("at least the initial point");
    Ok(Trajectory { final_t1_loss: last.t1_loss, final_t2_loss: last.t2_loss, points })
}
