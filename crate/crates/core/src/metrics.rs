//! Continual-learning scores and per-batch traces.
//!
//! All functions here are pure.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::AdaptiveKTrace;
use crate::rvfl::argmax_row;

/// Task-wise accuracies. `entry(i, j)` is the accuracy on task `j` after
/// learning task `i` (zero-based). Entries above the diagonal are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    r: Vec<Vec<Option<f64>>>,
    independent: Vec<Option<f64>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        AccuracyMatrix {
            r: vec![vec![None; tasks]; tasks],
            independent: vec![None; tasks],
        }
    }

    /// Builds from a dense lower-triangular table (`rows[i]` has at least `i+1` entries).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = AccuracyMatrix::new(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() < i + 1 || row.len() > rows.len() {
                return Err(Error::contract(format!("row {i} has {} entries", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v)?;
            }
        }
        Ok(m)
    }

    pub fn tasks(&self) -> usize {
        self.r.len()
    }

    pub fn set(&mut self, after: usize, task: usize, acc: f64) -> Result<()> {
        check_unit(acc)?;
        let q = self.tasks();
        if after >= q || task >= q {
            return Err(Error::contract(format!("entry ({after}, {task}) outside {q}x{q}")));
        }
        self.r[after][task] = Some(acc);
        Ok(())
    }

    pub fn get(&self, after: usize, task: usize) -> Option<f64> {
        self.r.get(after).and_then(|row| row.get(task)).copied().flatten()
    }

    pub fn set_independent(&mut self, task: usize, acc: f64) -> Result<()> {
        check_unit(acc)?;
        let slot = self
            .independent
            .get_mut(task)
            .ok_or_else(|| Error::contract(format!("task {task} out of range")))?;
        *slot = Some(acc);
        Ok(())
    }

    pub fn independent(&self, task: usize) -> Option<f64> {
        self.independent.get(task).copied().flatten()
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.r
    }

    fn require(&self, after: usize, task: usize) -> Result<f64> {
        self.get(after, task)
            .ok_or_else(|| Error::contract(format!("accuracy entry ({after}, {task}) is undefined")))
    }
}

fn check_unit(acc: f64) -> Result<()> {
    if (0.0..=1.0).contains(&acc) {
        Ok(())
    } else {
        Err(Error::contract(format!("accuracy {acc} outside [0, 1]")))
    }
}

/// Mean of the final row.
pub fn compute_acc(r: &AccuracyMatrix) -> Result<f64> {
    let q = r.tasks();
    if q == 0 {
        return Err(Error::contract("accuracy matrix is empty"));
    }
    let mut sum = 0.0;
    for j in 0..q {
        sum += r.require(q - 1, j)?;
    }
    Ok(sum / q as f64)
}

/// Mean change of each earlier task between first learning it and the end.
pub fn compute_bwt(r: &AccuracyMatrix) -> Result<f64> {
    let q = r.tasks();
    if q < 2 {
        return Err(Error::contract("backward transfer needs at least two tasks"));
    }
    let mut sum = 0.0;
    for j in 0..q - 1 {
        sum += r.require(q - 1, j)? - r.require(j, j)?;
    }
    Ok(sum / (q - 1) as f64)
}

/// Mean gap to the independent experts on tasks 2..Q.
pub fn compute_fwt(r: &AccuracyMatrix) -> Result<f64> {
    let q = r.tasks();
    if q < 2 {
        return Err(Error::contract("forward transfer needs at least two tasks"));
    }
    let mut sum = 0.0;
    for j in 1..q {
        let ind = r
            .independent(j)
            .ok_or_else(|| Error::contract(format!("independent accuracy for task {j} is missing")))?;
        sum += r.require(j, j)? - ind;
    }
    Ok(sum / (q - 1) as f64)
}

fn check_shapes(a: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
    if a.dim() != y.dim() {
        return Err(Error::contract(format!(
            "prediction shape {:?} differs from target shape {:?}",
            a.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Fraction of rows whose argmax matches the target's; ties go to the lowest class.
pub fn immediate_accuracy(pred: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    check_shapes(pred, y)?;
    if y.nrows() == 0 {
        return Err(Error::contract("empty test set"));
    }
    let hits = pred
        .rows()
        .into_iter()
        .zip(y.rows())
        .filter(|(p, t)| argmax_row(*p) == argmax_row(*t))
        .count();
    Ok(hits as f64 / y.nrows() as f64)
}

fn summed(probs: &[Array2<f64>], y: ArrayView2<f64>) -> Result<Array2<f64>> {
    if probs.is_empty() {
        return Err(Error::contract("need at least one learner output"));
    }
    let mut sum = Array2::<f64>::zeros(y.dim());
    for p in probs {
        check_shapes(p.view(), y)?;
        sum += p;
    }
    Ok(sum)
}

/// `|| (sum_l P_l - L Y) / (L n) ||_F^2` with `n` test rows.
pub fn immediate_regret(probs: &[Array2<f64>], y: ArrayView2<f64>) -> Result<f64> {
    let sum = summed(probs, y)?;
    let l = probs.len() as f64;
    let scale = l * y.nrows().max(1) as f64;
    let mut acc = 0.0;
    Zip::from(&sum).and(&y).for_each(|&s, &t| {
        let e = (s - l * t) / scale;
        acc += e * e;
    });
    Ok(acc)
}

/// Mean over rows of `sum_j Y ln(L Y / sum_l P_l)`, with `0 ln 0 = 0`.
/// A probability sum that underflowed to zero is floored at the smallest
/// positive double so the result stays finite.
pub fn immediate_kl(probs: &[Array2<f64>], y: ArrayView2<f64>) -> Result<f64> {
    let sum = summed(probs, y)?;
    if y.nrows() == 0 {
        return Err(Error::contract("empty test set"));
    }
    let l = probs.len() as f64;
    let mut acc = 0.0;
    Zip::from(&sum).and(&y).for_each(|&s, &t| {
        if t > 0.0 {
            acc += t * (l * t / s.max(f64::MIN_POSITIVE)).ln();
        }
    });
    Ok(acc / y.nrows() as f64)
}

/// One evaluation point of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Zero-based batch index after which the evaluation ran.
    pub t: usize,
    pub acc_seen: f64,
    pub acc_full: f64,
    pub regret: f64,
    pub cum_regret: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSeries {
    pub points: Vec<TracePoint>,
    pub k: AdaptiveKTrace,
}

impl TraceSeries {
    pub fn new(layers: usize) -> Self {
        TraceSeries {
            points: Vec::new(),
            k: AdaptiveKTrace::new(layers),
        }
    }

    /// Appends a point; cumulative regret continues from the previous one.
    pub fn push(&mut self, t: usize, acc_seen: f64, acc_full: f64, regret: f64, kl: f64) {
        let cum_regret = self.cumulative_regret() + regret;
        self.points.push(TracePoint {
            t,
            acc_seen,
            acc_full,
            regret,
            cum_regret,
            kl,
        });
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.cum_regret)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Checks the series invariants: finite entries, accuracies in `[0, 1]`,
    /// nondecreasing cumulative regret.
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for p in &self.points {
            let vals = [p.acc_seen, p.acc_full, p.regret, p.cum_regret, p.kl];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("non-finite trace entry").at_batch(p.t));
            }
            check_unit(p.acc_seen)?;
            check_unit(p.acc_full)?;
            if p.cum_regret < prev {
                return Err(Error::contract(format!("cumulative regret decreased at batch {}", p.t)));
            }
            prev = p.cum_regret;
        }
        Ok(())
    }
}
