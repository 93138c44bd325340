//! Non-continual reference models built from the same random backbone.
//!
//! Each baseline fits one closed-form ridge head per layer and is scored
//! through the same softmax ensemble as the recursive learners. Unlike the
//! continual learners, baselines are allowed to know where tasks begin and end.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::EvalSet;
use crate::linalg;
use crate::rvfl::{fuse_probabilities, softmax_rows, Backbone, EnsembleMode};
use crate::stream::{LabeledDataset, Task};

/// Rows per feature-extraction chunk when accumulating Gram matrices.
const FIT_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Ridge on the whole stream at once.
    Offline,
    /// One ridge expert per task, each scored only on its own task.
    Separate,
    /// Ridge refit on each task alone; only the last fit survives.
    FineTune,
    /// Ridge on the first task, then frozen.
    NonIncremental,
}

/// Closed-form ridge heads, one per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeHeads {
    thetas: Vec<Array2<f64>>,
}

impl RidgeHeads {
    /// Fits on `rows` of `data`. Gram matrices are accumulated chunk by chunk,
    /// so the full design matrix is never materialised.
    pub fn fit(backbone: &Backbone, data: &LabeledDataset, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("baseline fit needs at least one row"));
        }
        let cfg = &backbone.config;
        let dim = cfg.feature_dim();
        let mut grams = vec![Array2::<f64>::zeros((dim, dim)); cfg.layers];
        let mut cross = vec![Array2::<f64>::zeros((dim, data.classes)); cfg.layers];
        for chunk in rows.chunks(FIT_CHUNK) {
            let x = data.x.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.y[i]).collect();
            let y = crate::stream::one_hot(&labels, data.classes);
            for (l, d) in backbone.features(x.view())?.into_iter().enumerate() {
                ndarray::linalg::general_mat_mul(1.0, &d.t(), &d, 1.0, &mut grams[l]);
                ndarray::linalg::general_mat_mul(1.0, &d.t(), &y, 1.0, &mut cross[l]);
            }
        }
        let thetas = grams
            .into_iter()
            .zip(cross)
            .enumerate()
            .map(|(l, (mut g, c))| {
                let lambda = cfg.lambda_for(l);
                for i in 0..dim {
                    g[[i, i]] += lambda;
                }
                linalg::solve_symmetric(g.view(), c.view()).map_err(|e| e.at_layer(l))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RidgeHeads { thetas })
    }

    pub fn thetas(&self) -> &[Array2<f64>] {
        &self.thetas
    }

    /// Per-layer softmax outputs for precomputed design matrices.
    pub fn probabilities(&self, features: &[Array2<f64>]) -> Vec<Array2<f64>> {
        features
            .iter()
            .zip(&self.thetas)
            .map(|(d, theta)| softmax_rows(d.dot(theta).view()))
            .collect()
    }

    pub fn predict(&self, features: &[Array2<f64>], mode: EnsembleMode) -> Result<Array2<f64>> {
        fuse_probabilities(&self.probabilities(features), mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub kind: BaselineKind,
    /// Accuracy on each task's test rows.
    pub per_task: Vec<f64>,
    /// Mean of `per_task`.
    pub acc: f64,
    /// Accuracy on the whole test set; absent for per-task experts.
    pub acc_full: Option<f64>,
}

/// Fits and scores one baseline. `tasks` must be the stream's task list.
pub fn fit_baseline(
    kind: BaselineKind,
    train: &LabeledDataset,
    tasks: Option<&[Task]>,
    backbone: &Backbone,
    eval: &EvalSet,
    mode: EnsembleMode,
) -> Result<BaselineRecord> {
    let tasks = tasks
        .filter(|t| !t.is_empty())
        .ok_or_else(|| Error::contract("baselines need the task annotations"))?;
    if eval.task_rows.len() != tasks.len() {
        return Err(Error::contract("evaluation set and stream disagree on task count"));
    }

    let single = |rows: Vec<usize>| -> Result<BaselineRecord> {
        let heads = RidgeHeads::fit(backbone, train, &rows)?;
        let pred = heads.predict(&eval.features, mode)?;
        let per_task = eval.per_task_accuracy(pred.view())?;
        Ok(BaselineRecord {
            kind,
            acc: mean(&per_task),
            per_task,
            acc_full: Some(eval.accuracy(pred.view())?),
        })
    };

    match kind {
        BaselineKind::Offline => single(tasks.iter().flat_map(|t| t.rows.iter().copied()).collect()),
        BaselineKind::FineTune => single(tasks[tasks.len() - 1].rows.clone()),
        BaselineKind::NonIncremental => single(tasks[0].rows.clone()),
        BaselineKind::Separate => {
            let mut per_task = Vec::with_capacity(tasks.len());
            for (q, task) in tasks.iter().enumerate() {
                let heads = RidgeHeads::fit(backbone, train, &task.rows)?;
                let pred = heads.predict(&eval.features, mode)?;
                per_task.push(eval.accuracy_on(pred.view(), &eval.task_rows[q])?);
            }
            Ok(BaselineRecord {
                kind,
                acc: mean(&per_task),
                per_task,
                acc_full: None,
            })
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
